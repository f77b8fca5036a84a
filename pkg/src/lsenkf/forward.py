"""Multi-frequency observation map built from the Hankel-kernel potential.

For receiver ``x_j`` and wave number ``k`` the pressure is
``A(k) * int_D f(y) H0(k |x_j - y|) dy``.  ``f`` is a P1 nodal field on the
inversion mesh; the integral is evaluated with a triangle quadrature rule so
each frequency gives a dense ``N x n`` complex matrix.

Filter algebra works on the *real-stacked* form of the data: a complex
vector ``b`` of length ``N*M`` is represented as ``[Re b; Im b]``.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
import csv
import math

import numpy as np
import scipy.sparse as sp

from .special import hankel_h0_first_kind


@dataclass(frozen=True, eq=False)
class WaveNumberGrid:
    frequencies_hz: np.ndarray
    sound_speed_c0: float
    wave_numbers: np.ndarray
    amplitude: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.wave_numbers, dtype=float)
        if k.ndim != 1 or k.size == 0:
            raise ValueError("need at least one wave number")
        if np.any(k <= 0) or np.any(np.diff(k) <= 0):
            raise ValueError("wave numbers must be positive and strictly increasing")
        if len(self.frequencies_hz) != k.size or len(self.amplitude) != k.size:
            raise ValueError("frequency, wave number and amplitude lists differ in length")

    @property
    def count(self):
        return len(self.wave_numbers)


def make_wave_grid(f_min=50.0, f_max=10_000.0, count=10, c0=343.0,
                   units="hz", amplitude=None):
    """Log-spaced wave numbers between ``f_min`` and ``f_max``.

    ``units="hz"`` reads the range as frequencies and converts with
    ``k = 2 pi f / c0``; ``units="wavenumber"`` takes the range as raw wave
    numbers (``frequencies_hz`` is then back-computed for reference).
    """
    if count < 1:
        raise ValueError("count must be positive")
    if not 0 < f_min <= f_max:
        raise ValueError("need 0 < f_min <= f_max")
    if count > 1 and f_min == f_max:
        raise ValueError("f_min == f_max with several frequencies")
    values = np.geomspace(f_min, f_max, count) if count > 1 else np.array([float(f_min)])
    if units == "hz":
        freqs = values
        k = 2.0 * math.pi * values / c0
    elif units == "wavenumber":
        k = values
        freqs = values * c0 / (2.0 * math.pi)
    else:
        raise ValueError(f"unknown units {units!r}")
    amp = np.ones(count) if amplitude is None else np.asarray(amplitude, dtype=float)
    return WaveNumberGrid(freqs, float(c0), k, amp)


@dataclass(frozen=True, eq=False)
class StackedForwardOperator:
    """Per-frequency complex matrices ``H_k`` of shape (N, n)."""

    per_k: tuple
    wave_numbers: np.ndarray

    def __post_init__(self):
        shapes = {h.shape for h in self.per_k}
        if len(shapes) != 1:
            raise ValueError("inconsistent per-frequency shapes")
        if len(self.per_k) != len(self.wave_numbers):
            raise ValueError("one matrix per wave number required")

    @property
    def receiver_count(self):
        return self.per_k[0].shape[0]

    @property
    def n_nodes(self):
        return self.per_k[0].shape[1]

    @property
    def n_frequencies(self):
        return len(self.per_k)

    @property
    def total_rows(self):
        return self.receiver_count * self.n_frequencies

    @property
    def data_dim(self):
        """Dimension of the real-stacked data space, ``2 N M``."""
        return 2 * self.total_rows

    @cached_property
    def matrix(self):
        return np.vstack(self.per_k)

    @cached_property
    def real_matrix(self):
        """``[Re H; Im H]``, shape (2NM, n)."""
        h = self.matrix
        return np.vstack([h.real, h.imag])


def _check_rows(op, f):
    f = np.asarray(f)
    if f.shape[0] != op.n_nodes:
        raise ValueError(f"field has {f.shape[0]} rows, operator expects {op.n_nodes}")
    return f


def stack_real(b):
    b = np.asarray(b)
    return np.concatenate([b.real, b.imag], axis=0)


def unstack_real(v):
    v = np.asarray(v, dtype=float)
    half = v.shape[0] // 2
    return v[:half] + 1j * v[half:]


def _quadrature_matrix(mesh, quad):
    """Sparse (m*q, n) matrix: quadrature weight * area * hat value."""
    m, q = mesh.n_elements, len(quad.weights)
    vals = (mesh.areas[:, None, None] * quad.weights[None, :, None]
            * quad.barycentric_points[None, :, :])  # (m, q, 3)
    rows = np.repeat(np.arange(m * q), 3)
    cols = np.repeat(mesh.elements, q, axis=0).ravel()
    return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(m * q, mesh.n_nodes))


def assemble_forward(mesh, receivers, kgrid, quad, workers=1):
    """Dense per-frequency observation matrices.

    Row ``j`` of ``H_k`` applied to nodal ``f`` equals
    ``sum_T sum_q w_q |T| A(k) H0(k |x_j - y_q|) f_h(y_q)``.
    Frequencies are assembled independently; ``workers > 1`` runs them on a
    thread pool without changing the result.
    """
    if mesh.n_elements == 0:
        raise ValueError("empty mesh")
    pts = quad.physical_points(mesh).reshape(-1, 2)
    diff = receivers.points[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    node_dist = np.sqrt(((receivers.points[:, None, :] - mesh.nodes[None]) ** 2).sum(axis=2))
    if node_dist.min() <= 0.0 or dist.min() <= 0.0:
        raise ValueError("receiver coincides with the source mesh")
    receivers.check_outside_disk(mesh.radius)
    bt = _quadrature_matrix(mesh, quad).T.tocsr()  # (n, m*q)

    def one(idx):
        kern = hankel_h0_first_kind(kgrid.wave_numbers[idx] * dist)
        return kgrid.amplitude[idx] * np.asarray((bt @ kern.T).T)

    indices = range(kgrid.count)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_k = list(pool.map(one, indices))
    else:
        per_k = [one(i) for i in indices]
    return StackedForwardOperator(tuple(per_k), np.array(kgrid.wave_numbers, dtype=float))


def apply_forward(op, f):
    """``H f`` stacked frequency-major. ``f`` may hold fields as columns."""
    f = _check_rows(op, f)
    return op.matrix @ f


def apply_adjoint(op, residual):
    """``Re(sum_m H_m^* r_m)`` as a real nodal field."""
    residual = np.asarray(residual)
    if residual.shape[0] != op.total_rows:
        raise ValueError(f"residual has {residual.shape[0]} rows, expected {op.total_rows}")
    return (op.matrix.conj().T @ residual).real


@dataclass(frozen=True)
class NoiseModel:
    """Additive Gaussian noise, std ``delta`` on real and imaginary parts."""

    delta: float

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError("delta must be non-negative")

    def covariance_diag(self, data_dim):
        return np.full(data_dim, self.delta ** 2)


def generate_data(op_fine, f_true, noise, seed):
    """Noisy synthetic data ``H f_true + eta``; deterministic given ``seed``."""
    clean = apply_forward(op_fine, f_true)
    if noise.delta == 0.0:
        return clean
    rng = np.random.default_rng(seed)
    eta = rng.standard_normal(2 * clean.shape[0])
    return clean + noise.delta * unstack_real(eta)


def write_observations(b, n_receivers, path):
    b = np.asarray(b)
    if b.shape[0] % n_receivers:
        raise ValueError("data length is not a multiple of the receiver count")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["freq_index", "receiver_index", "re", "im"])
        for row, val in enumerate(b.tolist()):
            m, j = divmod(row, n_receivers)
            w.writerow([m, j, repr(val.real), repr(val.imag)])


def read_observations(path):
    """Return ``(b, n_receivers)`` from a file written by :func:`write_observations`."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"no observations in {path}")
    keys = [(int(r["freq_index"]), int(r["receiver_index"])) for r in rows]
    if keys != sorted(keys):
        raise ValueError("observation rows are not in lexicographic order")
    n_receivers = max(k[1] for k in keys) + 1
    n_freq = max(k[0] for k in keys) + 1
    if len(rows) != n_freq * n_receivers:
        raise ValueError("incomplete observation table")
    b = np.array([complex(float(r["re"]), float(r["im"])) for r in rows])
    return b, n_receivers
