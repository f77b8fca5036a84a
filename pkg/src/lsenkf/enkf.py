"""Ensemble Kalman filters over level-set particles.

``alg1`` filters the augmented state ``[phi, f]`` and updates both parts with
the component form of the Kalman minimiser; ``alg2`` filters ``[phi, b]``
where ``b`` is the predicted data of each particle.  Empirical covariances
use the divisor ``J`` and are never formed explicitly: every update goes
through the anomaly matrices and one ``2NM x 2NM`` data-space solve.

Particle arrays are column-major: ``phi`` has shape (n_nodes, J).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging

import numpy as np
from scipy import linalg

from .forward import NoiseModel, stack_real
from .levelset import HJConfig, ThresholdSpec, evolve, level_set_map
from .metrics import compute_metrics
from .prior import MaternSampler, PriorSpec, assemble_fem

log = logging.getLogger(__name__)

ALGORITHMS = ("alg1", "alg2")
ESTIMATES = ("mean_phi", "mean_f")


class FilterError(RuntimeError):
    """Numerical failure inside the filter (e.g. singular data-space system)."""


@dataclass(frozen=True)
class FilterConfig:
    ensemble_size: int = 1000
    max_iterations: int = 100
    discrepancy_tau: float = 1.2
    algorithm: str = "alg1"
    alg1_estimate: str = "mean_phi"
    perturb_observations: bool = False
    chunk_size: int = 64
    workers: int = 1

    def __post_init__(self):
        if self.ensemble_size < 2:
            raise ValueError("ensemble_size must be at least 2")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if self.discrepancy_tau < 1:
            raise ValueError("discrepancy_tau must be >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.alg1_estimate not in ESTIMATES:
            raise ValueError(f"alg1_estimate must be one of {ESTIMATES}")
        if self.chunk_size < 1 or self.workers < 1:
            raise ValueError("chunk_size and workers must be positive")


@dataclass
class Ensemble:
    """``phi`` (n, J) plus either ``f`` (n, J) or real-stacked ``b`` (2NM, J)."""

    phi: np.ndarray
    f: np.ndarray = None
    b: np.ndarray = None

    def __post_init__(self):
        if self.phi.ndim != 2 or self.phi.shape[1] < 2:
            raise ValueError("ensemble needs at least two particles as columns")
        for other in (self.f, self.b):
            if other is not None and other.shape[1] != self.phi.shape[1]:
                raise ValueError("particle counts differ between components")

    @property
    def size(self):
        return self.phi.shape[1]


@dataclass
class EnsembleStats:
    mean_phi: np.ndarray
    anom_phi: np.ndarray
    mean_obs: np.ndarray
    anom_obs: np.ndarray
    kind: str  # "f" or "b"

    @property
    def size(self):
        return self.anom_phi.shape[1]

    def cov(self, left, right):
        """Dense ``(1/J) A_left A_right^T``; for checks on small problems only."""
        pick = {"phi": self.anom_phi, self.kind: self.anom_obs}
        return pick[left] @ pick[right].T / self.size


def ensemble_stats(ensemble):
    if ensemble.size < 2:
        raise ValueError("need at least two particles")
    other, kind = (ensemble.f, "f") if ensemble.f is not None else (ensemble.b, "b")
    if other is None:
        raise ValueError("ensemble has neither f nor b particles")
    mean_phi = ensemble.phi.mean(axis=1)
    mean_o = other.mean(axis=1)
    return EnsembleStats(mean_phi, ensemble.phi - mean_phi[:, None],
                         mean_o, other - mean_o[:, None], kind)


def _chunks(count, size):
    return [slice(i, min(i + size, count)) for i in range(0, count, size)]


def _map_chunks(fn, count, cfg):
    # fixed chunk boundaries: results do not depend on the worker count
    parts = _chunks(count, cfg.chunk_size)
    if cfg.workers > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            out = list(pool.map(fn, parts))
    else:
        out = [fn(s) for s in parts]
    return np.concatenate(out, axis=1)


def predict_phi(ensemble, mesh, op, b, spec, hj_cfg, cfg=FilterConfig()):
    """One level-set evolution step for every particle."""
    phi = ensemble.phi
    return _map_chunks(lambda s: evolve(mesh, op, phi[:, s], b, spec, hj_cfg, 1),
                       ensemble.size, cfg)


def predict_alg1(ensemble, mesh, op, b, spec, hj_cfg=HJConfig(), cfg=FilterConfig()):
    phi_hat = predict_phi(ensemble, mesh, op, b, spec, hj_cfg, cfg)
    return Ensemble(phi_hat, f=level_set_map(phi_hat, spec))


def predict_alg2(ensemble, mesh, op, b, spec, hj_cfg=HJConfig(), cfg=FilterConfig()):
    phi_hat = predict_phi(ensemble, mesh, op, b, spec, hj_cfg, cfg)
    return Ensemble(phi_hat, b=op.real_matrix @ level_set_map(phi_hat, spec))


def _data_columns(b_data, noise, count, rng):
    b_s = stack_real(b_data) if np.iscomplexobj(b_data) else np.asarray(b_data, dtype=float)
    cols = np.repeat(b_s[:, None], count, axis=1)
    if rng is not None and noise.delta > 0:
        cols = cols + noise.delta * rng.standard_normal(cols.shape)
    return cols


def _gain_coefficients(obs_anom, innovations, delta):
    """``(1/J) Y^T (Y Y^T / J + delta^2 I)^{-1} D`` with ``Y`` the predicted-data
    anomalies; returns the (J, J) coefficients multiplying state anomalies."""
    count = obs_anom.shape[1]
    system = obs_anom @ obs_anom.T / count
    system[np.diag_indices_from(system)] += delta ** 2
    try:
        factor = linalg.cho_factor(system, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise FilterError(
            "data-space covariance is singular; use a positive noise level") from exc
    return obs_anom.T @ linalg.cho_solve(factor, innovations) / count


def analysis_alg1(stats, predicted, op, b_data, noise, rng=None):
    """Update ``phi`` and ``f`` of every particle.

    ``phi_j += Xi_phif H^T (H Xi_ff H^T + Gamma)^{-1} (b - H f_j)`` and the
    same with ``Xi_ff`` for ``f_j``, the data-space (Woodbury) form of the
    ``f`` minimiser.  ``rng`` enables perturbed observations.
    """
    if stats.kind != "f":
        raise ValueError("alg1 analysis needs (phi, f) statistics")
    h = op.real_matrix
    obs_anom = h @ stats.anom_obs
    innov = _data_columns(b_data, noise, predicted.size, rng) - h @ predicted.f
    coeff = _gain_coefficients(obs_anom, innov, noise.delta)
    return Ensemble(predicted.phi + stats.anom_phi @ coeff,
                    f=predicted.f + stats.anom_obs @ coeff)


def analysis_alg2(stats, predicted, b_data, noise, rng=None):
    """``phi_j += Xi_phib (Xi_bb + Gamma)^{-1} (b - b_j)``."""
    if stats.kind != "b":
        raise ValueError("alg2 analysis needs (phi, b) statistics")
    innov = _data_columns(b_data, noise, predicted.size, rng) - predicted.b
    coeff = _gain_coefficients(stats.anom_obs, innov, noise.delta)
    return Ensemble(predicted.phi + stats.anom_phi @ coeff, b=predicted.b)


def stopping_rule(misfit, noise, data_dim, config):
    """Discrepancy principle ``misfit <= tau * delta * sqrt(data_dim)`` (inclusive)."""
    if misfit < 0:
        raise ValueError("misfit must be non-negative")
    return misfit <= config.discrepancy_tau * noise.delta * np.sqrt(data_dim)


@dataclass(frozen=True, eq=False)
class InversionProblem:
    """Everything the filter needs on the inversion mesh.

    ``gamma_floor`` bounds the noise level used in the Kalman gain from below
    so that noise-free data (``delta = 0``) still gives a solvable update.
    """

    mesh: object
    op: object
    data: np.ndarray
    noise: NoiseModel
    threshold: ThresholdSpec = ThresholdSpec()
    prior: PriorSpec = PriorSpec()
    hj: HJConfig = HJConfig()
    gamma_floor: float = 0.0
    prior_noise: str = "consistent"

    @property
    def filter_noise(self):
        return NoiseModel(max(self.noise.delta, self.gamma_floor))


@dataclass
class IterationRecord:
    iteration: int
    misfit: float
    variant: str
    l2_error: float = None


@dataclass
class ReconstructionResult:
    phi: np.ndarray
    estimates: dict
    primary: str
    log: list = field(default_factory=list)
    iterations: int = 0
    stopped_early: bool = False
    metrics: dict = None
    ensemble: Ensemble = None

    @property
    def f(self):
        return self.estimates[self.primary]

    def misfits(self, variant=None):
        variant = variant or self.primary
        return [r.misfit for r in self.log if r.variant == variant]


def _estimates(ensemble, spec, algorithm):
    phi = ensemble.phi.mean(axis=1)
    est = {"mean_phi": level_set_map(phi, spec)}
    if algorithm == "alg1":
        est["mean_f"] = ensemble.f.mean(axis=1)
    return phi, est


def initial_ensemble(problem, config, seed):
    ops = assemble_fem(problem.mesh)
    sampler = MaternSampler(problem.mesh, ops, problem.prior, problem.prior_noise)
    phi0 = sampler.sample_ensemble(seed, config.ensemble_size)
    if config.algorithm == "alg1":
        return Ensemble(phi0, f=level_set_map(phi0, problem.threshold))
    return Ensemble(phi0, b=problem.op.real_matrix @ level_set_map(phi0, problem.threshold))


def run_filter(config, problem, seed, f_true=None):
    """Run ``alg1`` or ``alg2`` from a prior ensemble until the discrepancy
    principle holds or ``config.max_iterations`` is reached.

    The iteration log holds the prior estimate as iteration 0.  ``f_true``
    (on the inversion mesh) only feeds the error column of the log and the
    final metrics.
    """
    mesh, op, spec = problem.mesh, problem.op, problem.threshold
    b = np.asarray(problem.data)
    b_s = stack_real(b)
    weights = mesh.lumped_areas
    primary = config.alg1_estimate if config.algorithm == "alg1" else "mean_phi"
    gain_noise = problem.filter_noise

    ens = initial_ensemble(problem, config, seed)
    result = ReconstructionResult(None, {}, primary)

    def record(it, ensemble):
        phi, est = _estimates(ensemble, spec, config.algorithm)
        for name, f_est in est.items():
            misfit = float(np.linalg.norm(op.real_matrix @ f_est - b_s))
            err = None
            if f_true is not None:
                err = compute_metrics(f_est, f_true, weights, spec)["relative_l2_error"]
            result.log.append(IterationRecord(it, misfit, name, err))
        result.phi, result.estimates = phi, est
        return result.log[-len(est) + list(est).index(primary)].misfit

    misfit = record(0, ens)
    stopped = stopping_rule(misfit, problem.noise, op.data_dim, config)
    it = 0
    while not stopped and it < config.max_iterations:
        it += 1
        rng = np.random.default_rng([seed, it]) if config.perturb_observations else None
        if config.algorithm == "alg1":
            pred = predict_alg1(ens, mesh, op, b, spec, problem.hj, config)
            ens = analysis_alg1(ensemble_stats(pred), pred, op, b, gain_noise, rng)
        else:
            pred = predict_alg2(ens, mesh, op, b, spec, problem.hj, config)
            ens = analysis_alg2(ensemble_stats(pred), pred, b, gain_noise, rng)
        misfit = record(it, ens)
        log.info("iteration %d: misfit %.6g", it, misfit)
        stopped = stopping_rule(misfit, problem.noise, op.data_dim, config)

    result.iterations = it
    result.stopped_early = bool(stopped)
    result.ensemble = ens
    if f_true is not None:
        result.metrics = {name: compute_metrics(f_est, f_true, weights, spec)
                          for name, f_est in result.estimates.items()}
    return result
