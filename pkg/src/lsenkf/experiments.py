"""Phantoms, raster output and the end-to-end experiment pipeline."""

from contextlib import contextmanager
from dataclasses import dataclass, fields, replace
import logging
import math
import os
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import io
from .enkf import FilterConfig, InversionProblem, run_filter
from .forward import (NoiseModel, assemble_forward, generate_data, make_wave_grid,
                      read_observations, write_observations)
from .levelset import HJConfig, ThresholdSpec
from .mesh import build_disk_mesh, square_receivers, triangle_quadrature, write_mesh
from .metrics import compute_metrics
from .prior import PriorSpec

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "LSENKF_OUTPUT_DIR"
PHANTOM_KINDS = ("single_disk", "two_disks", "taichi")
_BOUNDARY_TOL = 1e-9


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name):
    log.info("stage: %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


# --------------------------------------------------------------------------
# phantoms

@dataclass(frozen=True)
class Phantom:
    """Ground-truth source support.

    ``single_disk`` and ``two_disks`` use ``centers``/``radii`` directly.
    ``taichi`` uses ``centers[0]`` and ``radii[0]`` as the enclosing disk.
    """

    kind: str
    centers: tuple
    radii: tuple
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in PHANTOM_KINDS:
            raise ValueError(f"phantom kind must be one of {PHANTOM_KINDS}")
        need = 2 if self.kind == "two_disks" else 1
        if len(self.centers) != need or len(self.radii) != need:
            raise ValueError(f"{self.kind} needs {need} center(s) and radius/radii")
        if any(r <= 0 for r in self.radii):
            raise ValueError("phantom radii must be positive")
        if not self.amplitude > 0:
            raise ValueError("phantom amplitude must be positive")

    def check_inside(self, radius):
        for (cx, cy), r in zip(self.centers, self.radii):
            if math.hypot(cx, cy) + r > 0.95 * radius:
                raise ValueError("phantom must stay inside the disk with a 5% margin")

    def signed_distance(self, pts):
        """Negative inside, positive outside; exact for disks, a valid
        min/max composition of disk distances for ``taichi``."""
        pts = np.asarray(pts, dtype=float)
        if self.kind == "taichi":
            return _taichi(pts, self.centers[0], self.radii[0])
        return np.min([_disk(pts, c, r) for c, r in zip(self.centers, self.radii)], axis=0)

    def membership(self, pts):
        """Nodal weight in {0, 0.5, 1}; 0.5 marks points on the region edge."""
        sd = self.signed_distance(pts)
        tol = _BOUNDARY_TOL * min(self.radii)
        return np.where(np.abs(sd) <= tol, 0.5, (sd < 0).astype(float))


def _disk(pts, center, r):
    return np.hypot(pts[:, 0] - center[0], pts[:, 1] - center[1]) - r


def _taichi(pts, center, big_r):
    # dark = (left half-disk | upper half-size disk) minus lower half-size disk,
    # then add the dark eye (lower) and remove the light eye (upper)
    cx, cy = center
    half, eye = big_r / 2, big_r / 8
    left = np.maximum(_disk(pts, center, big_r), pts[:, 0] - cx)
    dark = np.minimum(left, _disk(pts, (cx, cy + half), half))
    dark = np.maximum(dark, -_disk(pts, (cx, cy - half), half))
    dark = np.minimum(dark, _disk(pts, (cx, cy - half), eye))
    return np.maximum(dark, -_disk(pts, (cx, cy + half), eye))


DEFAULT_PHANTOMS = {
    "single_disk": (((0.1, 0.1),), (0.45,)),
    "two_disks": (((-0.4, 0.0), (0.4, 0.0)), (0.25, 0.25)),
    "taichi": (((0.0, 0.0),), (0.5,)),
}


def default_phantom(kind, amplitude=1.0):
    centers, radii = DEFAULT_PHANTOMS[kind]
    return Phantom(kind, centers, radii, amplitude)


def rasterize_phantom(phantom, mesh):
    """Nodal source field: ``w`` inside, 0 outside, ``w/2`` on a disk edge."""
    phantom.check_inside(mesh.radius)
    return phantom.amplitude * phantom.membership(mesh.nodes)


# --------------------------------------------------------------------------
# rasters

def _locate(mesh, px, py, wanted):
    """Element index and barycentric coordinates for each pixel centre.

    Pixels outside every triangle (between a boundary chord and the circle)
    fall back to the nearest element by centroid, with clipped coordinates.
    """
    n_px = px.size
    owner = np.full(n_px, -1)
    bary = np.zeros((n_px, 3))
    res = int(round(math.sqrt(n_px)))
    x0, step = px.min(), (px.max() - px.min()) / max(res - 1, 1)
    tri = mesh.nodes[mesh.elements]
    two_a = 2.0 * mesh.signed_areas
    pxg = px.reshape(res, res)
    pyg = py.reshape(res, res)
    y0 = pyg.max()
    for e in range(mesh.n_elements):
        t = tri[e]
        c0 = max(int(math.floor((t[:, 0].min() - x0) / step)), 0)
        c1 = min(int(math.ceil((t[:, 0].max() - x0) / step)), res - 1)
        r0 = max(int(math.floor((y0 - t[:, 1].max()) / step)), 0)
        r1 = min(int(math.ceil((y0 - t[:, 1].min()) / step)), res - 1)
        if c1 < c0 or r1 < r0:
            continue
        sx = pxg[r0:r1 + 1, c0:c1 + 1].ravel()
        sy = pyg[r0:r1 + 1, c0:c1 + 1].ravel()
        lam = np.empty((sx.size, 3))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            lam[:, i] = ((t[j, 0] - sx) * (t[k, 1] - sy) - (t[k, 0] - sx) * (t[j, 1] - sy)) / two_a[e]
        hit = np.all(lam >= -1e-12, axis=1)
        if not hit.any():
            continue
        rr, cc = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
        flat = (rr.ravel() * res + cc.ravel())[hit]
        fresh = owner[flat] < 0
        owner[flat[fresh]] = e
        bary[flat[fresh]] = lam[hit][fresh]
    missing = np.flatnonzero((owner < 0) & wanted)
    if missing.size:
        _, near = cKDTree(mesh.centroids).query(np.column_stack([px[missing], py[missing]]))
        for p, e in zip(missing, near):
            t = tri[e]
            lam = np.empty(3)
            for i in range(3):
                j, k = (i + 1) % 3, (i + 2) % 3
                lam[i] = ((t[j, 0] - px[p]) * (t[k, 1] - py[p])
                          - (t[k, 0] - px[p]) * (t[j, 1] - py[p])) / two_a[e]
            lam = np.clip(lam, 0.0, None)
            owner[p] = e
            bary[p] = lam / lam.sum()
    return owner, bary


def sample_on_grid(field, mesh, resolution):
    """Linear interpolant of ``field`` at pixel centres over the bounding
    square; returns ``(values, inside_disk)``, each (res, res), row 0 on top."""
    if resolution < 16:
        raise ValueError("resolution must be at least 16")
    field = np.asarray(field, dtype=float)
    r = mesh.radius
    centres = -r + (np.arange(resolution) + 0.5) * (2.0 * r / resolution)
    px, py = np.meshgrid(centres, centres[::-1])
    inside = np.hypot(px, py) <= r
    vals = np.zeros(px.shape)
    flat_inside = inside.ravel()
    owner, bary = _locate(mesh, px.ravel(), py.ravel(), flat_inside)
    nodal = field[mesh.elements[owner[flat_inside]]]
    vals[inside] = (nodal * bary[flat_inside]).sum(axis=1)
    return vals, inside


def render_pgm(field, mesh, resolution=128):
    """8-bit grey image of ``field``: min-max scaled inside the disk, 0 outside.

    The grey range spans the nodal minimum and maximum (the interpolant never
    leaves it), so a constant field gives uniform mid-grey (128) exactly.
    """
    vals, inside = sample_on_grid(field, mesh, resolution)
    img = np.zeros(vals.shape, dtype=int)
    lo, hi = float(np.min(field)), float(np.max(field))
    if hi > lo:
        scaled = np.clip((vals[inside] - lo) / (hi - lo), 0.0, 1.0)
        img[inside] = np.rint(scaled * 255).astype(int)
    else:
        img[inside] = 128
    return img


# --------------------------------------------------------------------------
# configuration

def _floats(text):
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    """One experiment. Every field maps to a ``key=value`` line of the same name."""

    output_dir: str = "output"
    seed: int = 0
    disk_radius: float = 1.0
    fine_h: float = 0.05
    coarse_h: float = 0.1
    receiver_half_side: float = 2.0
    receivers_per_side: int = 7
    freq_min: float = 50.0
    freq_max: float = 10_000.0
    freq_count: int = 10
    freq_units: str = "hz"
    c0: float = 343.0
    quad_order: int = 2
    delta: float = 0.01
    gamma_floor: float = 1e-4
    prior_nu: float = 1.0
    prior_length: float = 0.2
    prior_variance: float = 1.0
    prior_noise: str = "consistent"
    ensemble_size: int = 1000
    max_iterations: int = 100
    tau: float = 1.2
    algorithm: str = "alg1"
    alg1_estimate: str = "mean_phi"
    perturb_observations: bool = False
    time_step: float = 0.1
    cfl_clamp: bool = True
    reinitialize: bool = False
    phantom: str = "single_disk"
    phantom_centers: tuple = ()
    phantom_radii: tuple = ()
    phantom_amplitude: float = 1.0
    pgm_resolution: int = 128
    workers: int = 1
    data_file: str = ""

    def validate(self):
        if self.delta < 0:
            raise ConfigError("delta must be non-negative")
        for name in ("receivers_per_side", "freq_count", "ensemble_size",
                     "pgm_resolution", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("disk_radius", "fine_h", "coarse_h", "receiver_half_side",
                     "c0", "time_step"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.receiver_half_side <= self.disk_radius:
            raise ConfigError("receiver square must enclose the disk")
        if self.phantom not in PHANTOM_KINDS:
            raise ConfigError(f"phantom must be one of {PHANTOM_KINDS}")
        if self.freq_units not in ("hz", "wavenumber"):
            raise ConfigError("freq_units must be 'hz' or 'wavenumber'")
        try:
            self.filter_config()
            self.make_phantom()
            if self.prior_spec().solve_power < 1:
                raise ValueError("prior_nu out of range")
            HJConfig(self.time_step, cfl_clamp=self.cfl_clamp, reinitialize=self.reinitialize)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def filter_config(self):
        return FilterConfig(self.ensemble_size, self.max_iterations, self.tau,
                            self.algorithm, self.alg1_estimate,
                            self.perturb_observations, workers=self.workers)

    def prior_spec(self):
        return PriorSpec(self.prior_nu, self.prior_length, self.prior_variance)

    def threshold(self):
        return ThresholdSpec((0.0,), (0.0, self.phantom_amplitude))

    def make_phantom(self):
        centers, radii = DEFAULT_PHANTOMS[self.phantom]
        if self.phantom_centers:
            vals = self.phantom_centers
            if len(vals) % 2:
                raise ValueError("phantom_centers needs x,y pairs")
            centers = tuple(zip(vals[0::2], vals[1::2]))
        if self.phantom_radii:
            radii = self.phantom_radii
        return Phantom(self.phantom, tuple(centers), tuple(radii), self.phantom_amplitude)

    def to_items(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            out[f.name] = v
        return out


_CONVERTERS = {int: int, float: float, str: str, bool: _bool, tuple: _floats}


def load_config(path, env=None):
    """Read a ``key=value`` config; ``$LSENKF_OUTPUT_DIR`` overrides ``output_dir``."""
    env = os.environ if env is None else env
    try:
        raw = io.read_key_values(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    types = {f.name: type(f.default) for f in fields(RunConfig)}
    values = {}
    for key, text in raw.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = _CONVERTERS[types[key]](text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    cfg = RunConfig(**values)
    if env.get(OUTPUT_DIR_ENV):
        cfg = replace(cfg, output_dir=env[OUTPUT_DIR_ENV])
    return cfg.validate()


# --------------------------------------------------------------------------
# pipeline

@dataclass
class Setup:
    fine: object
    coarse: object
    receivers: object
    kgrid: object
    quad: object


def build_setup(cfg):
    with stage("mesh"):
        fine = build_disk_mesh(cfg.disk_radius, cfg.fine_h)
        coarse = build_disk_mesh(cfg.disk_radius, cfg.coarse_h)
        receivers = square_receivers(cfg.receiver_half_side, cfg.receivers_per_side)
        kgrid = make_wave_grid(cfg.freq_min, cfg.freq_max, cfg.freq_count, cfg.c0, cfg.freq_units)
        quad = triangle_quadrature(cfg.quad_order)
    return Setup(fine, coarse, receivers, kgrid, quad)


def write_meshes(cfg, setup):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_mesh(setup.fine, out / "mesh_fine.txt")
    write_mesh(setup.coarse, out / "mesh_coarse.txt")


def generate(cfg, setup):
    """Synthetic data on the fine mesh; writes data.csv, truth files."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with stage("phantom"):
        f_true = rasterize_phantom(cfg.make_phantom(), setup.fine)
    with stage("assemble forward (fine mesh)"):
        op_fine = assemble_forward(setup.fine, setup.receivers, setup.kgrid, setup.quad,
                                   workers=cfg.workers)
    with stage("data generation"):
        b = generate_data(op_fine, f_true, NoiseModel(cfg.delta), cfg.seed)
    with stage("write data"):
        write_observations(b, setup.receivers.count, out / "data.csv")
        io.write_nodal_csv(out / "truth_fine.csv", setup.fine, f_true)
        io.write_pgm(out / "truth.pgm", render_pgm(f_true, setup.fine, cfg.pgm_resolution))
    return b


def invert(cfg, setup, b=None):
    """Filter on the coarse mesh from data.csv (or ``b``); writes estimates."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if b is None:
        with stage("read data"):
            b, n_rec = read_observations(Path(cfg.data_file) if cfg.data_file else out / "data.csv")
            if n_rec != setup.receivers.count or b.size != n_rec * setup.kgrid.count:
                raise ValueError("data shape does not match receivers/frequencies in config")
    with stage("assemble forward (inversion mesh)"):
        op = assemble_forward(setup.coarse, setup.receivers, setup.kgrid, setup.quad,
                              workers=cfg.workers)
    with stage("metrics reference"):
        # truth on the inversion mesh is used for metrics only
        f_ref = rasterize_phantom(cfg.make_phantom(), setup.coarse)
    problem = InversionProblem(
        setup.coarse, op, b, NoiseModel(cfg.delta), cfg.threshold(), cfg.prior_spec(),
        HJConfig(cfg.time_step, cfl_clamp=cfg.cfl_clamp, reinitialize=cfg.reinitialize),
        gamma_floor=cfg.gamma_floor, prior_noise=cfg.prior_noise)
    with stage("filter"):
        result = run_filter(cfg.filter_config(), problem, cfg.seed, f_true=f_ref)
    with stage("write results"):
        io.write_iteration_log(out / "iterations.csv", result.log)
        io.write_nodal_csv(out / "phi_estimate.csv", setup.coarse, result.phi)
        for name, f_est in result.estimates.items():
            io.write_nodal_csv(out / f"f_estimate_{name}.csv", setup.coarse, f_est)
            io.write_pgm(out / f"estimate_{name}.pgm",
                         render_pgm(f_est, setup.coarse, cfg.pgm_resolution))
        write_metrics(out / "metrics.txt", result)
    return result


def write_metrics(path, result):
    items = {}
    primary = result.misfits()
    items["iterations"] = result.iterations
    items["stopped_by_discrepancy"] = "true" if result.stopped_early else "false"
    items["primary_estimate"] = result.primary
    items["initial_misfit"] = float(primary[0])
    items["final_misfit"] = float(primary[-1])
    prior_err = [r.l2_error for r in result.log if r.iteration == 0 and r.variant == result.primary]
    if prior_err and prior_err[0] is not None:
        items["prior_relative_l2_error"] = float(prior_err[0])
    for name, m in (result.metrics or {}).items():
        items[f"{name}.relative_l2_error"] = float(m["relative_l2_error"])
        items[f"{name}.jaccard"] = float(m["jaccard"])
    io.write_key_values(path, items)


def metrics_from_files(cfg, setup):
    """Recompute metrics from the estimate CSVs already in the output dir."""
    out = Path(cfg.output_dir)
    f_ref = rasterize_phantom(cfg.make_phantom(), setup.coarse)
    spec = cfg.threshold()
    res = {}
    for path in sorted(out.glob("f_estimate_*.csv")):
        xy, vals = io.read_nodal_csv(path)
        if not np.array_equal(xy, setup.coarse.nodes):
            raise ValueError(f"{path.name} was not written on the configured inversion mesh")
        name = path.stem[len("f_estimate_"):]
        res[name] = compute_metrics(vals, f_ref, setup.coarse.lumped_areas, spec)
    if not res:
        raise ValueError(f"no f_estimate_*.csv files in {out}")
    return res


def write_config_echo(cfg):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    items = cfg.to_items()
    items.pop("output_dir")  # keep outputs independent of where they are written
    io.write_key_values(out / "config.txt", items)


def run_experiment(cfg):
    """End to end: meshes, data on the fine mesh, filter on the coarse mesh."""
    write_config_echo(cfg)
    setup = build_setup(cfg)
    write_meshes(cfg, setup)
    b = generate(cfg, setup)
    return invert(cfg, setup, b)
