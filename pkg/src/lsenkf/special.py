"""Cylindrical Bessel, Hankel and modified Bessel functions of low order.

Only what the forward kernel and the Matern covariance need:

* ``J0, Y0, J1, Y1`` via the ascending series for small arguments and the
  Hankel asymptotic expansion for large ones,
* ``K0, K1`` via the ascending series for ``x <= 2`` and the Steed/Temme
  continued fraction above, plus ``K_{1/2}`` in closed form.

All routines accept scalars or numpy arrays and return the same shape.
"""

import math

import numpy as np

EULER_GAMMA = 0.57721566490153286061

# Crossover between ascending series and asymptotic expansion for J/Y.
# Series rounding grows like e^x * eps, asymptotic truncation like e^{-2x};
# both are below 1e-10 (relative to |H|) on [11.5, 14].
JY_CROSSOVER = 13.0

_SERIES_TERMS = 60
_ASYMPTOTIC_TERMS = 40
_K_CROSSOVER = 2.0


def _as_positive_array(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if np.any(arr <= 0.0):
        raise ValueError(f"{name} must be strictly positive")
    return arr


def _series_jy(x, order):
    """Ascending series for (J_n, Y_n), n in {0, 1}."""
    q = 0.25 * x * x
    term = np.ones_like(x) if order == 0 else 0.5 * x
    j_sum = np.zeros_like(x)
    y_sum = np.zeros_like(x)
    harmonic = 0.0  # H_k
    harmonic_next = 1.0  # H_{k+1}
    for k in range(_SERIES_TERMS):
        j_sum += term
        if order == 0:
            # Y0 tail: sum (-1)^{k+1} H_k (x^2/4)^k / (k!)^2
            y_sum -= harmonic * term
        else:
            # Y1 tail: sum (-1)^k (psi(k+1) + psi(k+2)) (x/2)^{2k+1} / (k!(k+1)!)
            y_sum += (harmonic + harmonic_next - 2.0 * EULER_GAMMA) * term
        denom = (k + 1) * (k + 1 + order)
        term = -term * q / denom
        harmonic = harmonic_next
        harmonic_next += 1.0 / (k + 2)
    log_term = np.log(0.5 * x) + EULER_GAMMA
    if order == 0:
        y = (2.0 / math.pi) * (log_term * j_sum + y_sum)
    else:
        y = (-2.0 / (math.pi * x) + (2.0 / math.pi) * np.log(0.5 * x) * j_sum
             - y_sum / math.pi)
    return j_sum, y


def _asymptotic_pq(x, order):
    """Hankel's P and Q with truncation at the smallest term."""
    mu = 4.0 * order * order
    p = np.ones_like(x)
    q = np.zeros_like(x)
    term = np.ones_like(x)
    last = np.full_like(x, np.inf)
    active = np.ones(x.shape, dtype=bool)
    for k in range(1, 2 * _ASYMPTOTIC_TERMS):
        term = term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        mag = np.abs(term)
        active &= mag < last
        last = np.where(active, mag, last)
        contrib = np.where(active, term, 0.0)
        # a_k / x^k enters P (even k) or Q (odd k) with sign (-1)^{floor(k/2)}
        sign = -1.0 if (k // 2) % 2 else 1.0
        if k % 2 == 0:
            p += sign * contrib
        else:
            q += sign * contrib
        if not active.any():
            break
    return p, q


def _asymptotic_jy(x, order):
    p, q = _asymptotic_pq(x, order)
    chi = x - (0.5 * order + 0.25) * math.pi
    amp = np.sqrt(2.0 / (math.pi * x))
    c, s = np.cos(chi), np.sin(chi)
    return amp * (p * c - q * s), amp * (p * s + q * c)


def bessel_jy(order, x):
    """Return ``(J_n(x), Y_n(x))`` for ``n`` in {0, 1} and ``x > 0``."""
    if order not in (0, 1):
        raise ValueError(f"unsupported order {order!r}; only 0 and 1")
    arr = _as_positive_array(x)
    flat = np.atleast_1d(arr).ravel()
    j = np.empty_like(flat)
    y = np.empty_like(flat)
    small = flat <= JY_CROSSOVER
    if small.any():
        j[small], y[small] = _series_jy(flat[small], order)
    if (~small).any():
        j[~small], y[~small] = _asymptotic_jy(flat[~small], order)
    j = j.reshape(arr.shape)
    y = y.reshape(arr.shape)
    if arr.ndim == 0:
        return float(j), float(y)
    return j, y


def hankel_h0_first_kind(x):
    """Hankel function of the first kind and order zero, ``J0(x) + i Y0(x)``.

    Parameters
    ----------
    x : float or ndarray
        Strictly positive real argument(s).

    Returns
    -------
    complex or ndarray of complex
    """
    j, y = bessel_jy(0, x)
    if np.ndim(j) == 0:
        return complex(j, y)
    return j + 1j * y


def _hankel_branches(x, order=0):
    """Both J/Y branches at ``x``; used to check agreement in the overlap."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    js, ys = _series_jy(arr, order)
    ja, ya = _asymptotic_jy(arr, order)
    return js + 1j * ys, ja + 1j * ya


def _series_k01(x):
    q = 0.25 * x * x
    t0 = np.ones_like(x)  # (x^2/4)^k / (k!)^2
    t1 = np.ones_like(x)  # (x^2/4)^k / (k!(k+1)!)
    i0 = np.zeros_like(x)
    i1 = np.zeros_like(x)
    k0_tail = np.zeros_like(x)
    k1_tail = np.zeros_like(x)
    harmonic = 0.0
    harmonic_next = 1.0
    for k in range(30):
        i0 += t0
        i1 += t1
        k0_tail += harmonic * t0
        k1_tail += (harmonic + harmonic_next - 2.0 * EULER_GAMMA) * t1
        t0 = t0 * q / ((k + 1) * (k + 1))
        t1 = t1 * q / ((k + 1) * (k + 2))
        harmonic = harmonic_next
        harmonic_next += 1.0 / (k + 2)
    log_half = np.log(0.5 * x)
    k0 = -(log_half + EULER_GAMMA) * i0 + k0_tail
    i1 = 0.5 * x * i1
    k1 = 1.0 / x + log_half * i1 - 0.25 * x * k1_tail
    return k0, k1


def _steed_k01(x):
    """Steed's continued fraction (CF2) for K0 and K1, accurate for x >= 2."""
    k0 = np.empty_like(x)
    k1 = np.empty_like(x)
    for idx, xv in enumerate(x):
        b = 2.0 * (1.0 + xv)
        d = 1.0 / b
        h = delh = d
        q1, q2 = 0.0, 1.0
        a1 = 0.25
        q = c = a1
        a = -a1
        s = 1.0 + q * delh
        for i in range(2, 10000):
            a -= 2 * (i - 1)
            c = -a * c / i
            qnew = (q1 - b * q2) / a
            q1, q2 = q2, qnew
            q += c * qnew
            b += 2.0
            d = 1.0 / (b + a * d)
            delh = (b * d - 1.0) * delh
            h += delh
            dels = q * delh
            s += dels
            if abs(dels / s) < 1e-16:
                break
        else:  # pragma: no cover
            raise RuntimeError(f"K continued fraction did not converge at x={xv}")
        h = a1 * h
        kmu = math.sqrt(math.pi / (2.0 * xv)) * math.exp(-xv) / s
        k0[idx] = kmu
        k1[idx] = kmu * (xv + 0.5 - h) / xv
    return k0, k1


def _k01(x):
    flat = np.atleast_1d(x).ravel()
    k0 = np.empty_like(flat)
    k1 = np.empty_like(flat)
    small = flat <= _K_CROSSOVER
    if small.any():
        k0[small], k1[small] = _series_k01(flat[small])
    if (~small).any():
        k0[~small], k1[~small] = _steed_k01(flat[~small])
    return k0.reshape(np.shape(x)), k1.reshape(np.shape(x))


def bessel_k(order, x):
    """Modified Bessel function of the second kind ``K_order(x)``.

    Supported orders are 0.5 (closed form) and the integers 0 and 1; integer
    and half-integer orders up to 5 follow by the stable upward recurrence
    ``K_{v+1} = K_{v-1} + (2 v / x) K_v`` so that Matern covariances with
    ``nu`` in {1, 3, 5} can be evaluated.
    """
    order = float(order)
    twice = 2.0 * order
    if order < 0 or order > 5 or twice != round(twice):
        raise ValueError(f"unsupported order {order!r}")
    arr = _as_positive_array(x)
    if round(twice) % 2:
        # half-integer: K_{1/2} = K_{-1/2} = sqrt(pi/(2x)) e^{-x}
        prev = np.sqrt(math.pi / (2.0 * arr)) * np.exp(-arr)
        cur = prev.copy()
        v = 0.5
    else:
        prev, cur = _k01(arr)
        v = 1.0
        if order == 0.0:
            cur = prev
            v = order
    while v < order:
        prev, cur = cur, prev + (2.0 * v / arr) * cur
        v += 1.0
    if arr.ndim == 0:
        return float(cur)
    return cur
