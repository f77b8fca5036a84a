"""Level-set map and explicit Hamilton-Jacobi evolution on a triangle mesh.

Fields are nodal numpy arrays.  Every routine also accepts a 2-D array whose
columns are independent fields (one per ensemble particle).
"""

from dataclasses import dataclass
import logging

import numpy as np

from .mesh import element_gradients

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ThresholdSpec:
    """Cut levels ``c_1 < ... < c_{n-1}`` and phase values ``w_1..w_n``.

    Phase ``l`` is ``c_{l-1} <= phi < c_l`` with ``c_0 = -inf``, ``c_n = +inf``.
    """

    cut_levels: tuple = (0.0,)
    phase_values: tuple = (0.0, 1.0)

    def __post_init__(self):
        cuts = np.asarray(self.cut_levels, dtype=float)
        w = np.asarray(self.phase_values, dtype=float)
        if cuts.ndim != 1 or cuts.size < 1:
            raise ValueError("at least one cut level (two phases) required")
        if np.any(np.diff(cuts) <= 0) or not np.all(np.isfinite(cuts)):
            raise ValueError("cut levels must be finite and strictly increasing")
        if w.size != cuts.size + 1:
            raise ValueError("need exactly one more phase value than cut levels")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("phase values must be finite and non-negative")

    @property
    def max_value(self):
        return max(self.phase_values)


@dataclass(frozen=True)
class HJConfig:
    time_step: float = 0.1
    gradient_floor: float = 0.0
    cfl_clamp: bool = True
    reinitialize: bool = False

    def __post_init__(self):
        if not self.time_step > 0:
            raise ValueError("time_step must be positive")
        if self.gradient_floor < 0:
            raise ValueError("gradient_floor must be non-negative")


def phase_index(phi, spec):
    """0-based phase of every node."""
    return np.searchsorted(np.asarray(spec.cut_levels, dtype=float), phi, side="right")


def level_set_map(phi, spec):
    phi = np.asarray(phi, dtype=float)
    return np.asarray(spec.phase_values, dtype=float)[phase_index(phi, spec)]


def velocity_field(op, f, b):
    """Adjoint-residual speed ``Re H^*(H f - b)``.

    ``b`` is the complex observation vector; with ``f`` of shape (n, J) the
    same ``b`` is used for every column.
    """
    f = np.asarray(f, dtype=float)
    if f.shape[0] != op.n_nodes:
        raise ValueError("field length does not match the operator")
    b = np.asarray(b)
    if b.shape[0] != op.total_rows:
        raise ValueError("data length does not match the operator")
    r = op.real_matrix
    b_s = np.concatenate([b.real, b.imag])
    resid = r @ f
    resid -= b_s if f.ndim == 1 else b_s[:, None]
    return r.T @ resid


def gradient_magnitude(mesh, phi):
    """Area-weighted nodal average of the element-wise ``|grad phi|``."""
    phi = np.asarray(phi, dtype=float)
    gx, gy = element_gradients(mesh, phi)
    return mesh.element_to_node_average @ np.hypot(gx, gy)


def hj_step(mesh, phi, velocity, cfg=HJConfig()):
    """One forward-Euler step ``phi - dt * v * |grad phi|``.

    With ``cfg.cfl_clamp`` the speed of each column is scaled down, if needed,
    so that no node moves by more than the mesh size in one step.
    """
    phi = np.asarray(phi, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    if velocity.shape != phi.shape:
        raise ValueError(f"velocity shape {velocity.shape} != phi shape {phi.shape}")
    grad = gradient_magnitude(mesh, phi)
    if cfg.gradient_floor > 0:
        grad = np.maximum(grad, cfg.gradient_floor)
    speed = velocity * grad
    if cfg.cfl_clamp:
        peak = np.abs(speed).max(axis=0) * cfg.time_step
        limit = mesh.mesh_size_h
        scale = np.where(peak > limit, limit / np.where(peak > 0, peak, 1.0), 1.0)
        if np.any(scale < 1.0):
            log.debug("CFL clamp factor(s): %s", np.round(np.atleast_1d(scale)[scale < 1.0], 6))
            speed = speed * scale
    out = phi - cfg.time_step * speed
    if cfg.reinitialize:
        out = reinitialize(mesh, out)
    return out


def evolve(mesh, op, phi0, b, spec, cfg=HJConfig(), steps=1):
    """Apply ``steps`` times: ``f = G(phi)``, speed from the residual, HJ step."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    phi = np.array(phi0, dtype=float, copy=True)
    for _ in range(steps):
        f = level_set_map(phi, spec)
        v = velocity_field(op, f, b)
        phi = hj_step(mesh, phi, v, cfg)
    return phi


def _zero_segments(mesh, phi):
    """Line segments of the zero level set of the linear interpolant."""
    vals = phi[mesh.elements]
    pts = mesh.nodes[mesh.elements]
    segs = []
    for e in np.flatnonzero((vals.min(axis=1) < 0) & (vals.max(axis=1) >= 0)):
        cross = []
        for i in range(3):
            j = (i + 1) % 3
            a, c = vals[e, i], vals[e, j]
            if (a < 0) != (c < 0):
                t = a / (a - c)
                cross.append(pts[e, i] + t * (pts[e, j] - pts[e, i]))
        if len(cross) >= 2:
            segs.append((cross[0], cross[1]))
    return np.array(segs).reshape(-1, 2, 2)


def _reinit_one(mesh, phi):
    segs = _zero_segments(mesh, phi)
    if segs.shape[0] == 0:
        return phi.copy()
    p = mesh.nodes[:, None, :]
    a = segs[None, :, 0, :]
    d = segs[None, :, 1, :] - a
    len2 = np.maximum((d ** 2).sum(axis=2), 1e-300)
    t = np.clip(((p - a) * d).sum(axis=2) / len2, 0.0, 1.0)
    dist = np.sqrt(((a + t[..., None] * d - p) ** 2).sum(axis=2)).min(axis=1)
    return np.where(phi < 0, -dist, dist)


def reinitialize(mesh, phi):
    """Replace ``phi`` by the signed distance to its zero level set.

    Sign is kept node-wise; the interface (linear interpolant) is unchanged.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        return _reinit_one(mesh, phi)
    return np.column_stack([_reinit_one(mesh, phi[:, j]) for j in range(phi.shape[1])])
