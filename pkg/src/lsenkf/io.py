"""Plain-text file formats shared by the CLI: nodal CSV, iteration log,
key=value files and ASCII PGM rasters."""

import csv
from pathlib import Path

import numpy as np


def write_nodal_csv(path, mesh, values):
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.n_nodes,):
        raise ValueError("field length does not match the mesh")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_index", "x", "y", "value"])
        for i, ((x, y), v) in enumerate(zip(mesh.nodes.tolist(), values.tolist())):
            w.writerow([i, repr(x), repr(y), repr(v)])


def read_nodal_csv(path):
    """Return ``(xy, values)`` with rows ordered by node index."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    idx = [int(r["node_index"]) for r in rows]
    if idx != list(range(len(rows))):
        raise ValueError(f"{path}: node indices are not 0..n-1 in order")
    xy = np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2)
    vals = np.array([float(r["value"]) for r in rows])
    return xy, vals


def write_iteration_log(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "misfit", "est_variant", "l2_error_vs_truth"])
        for r in records:
            err = "" if r.l2_error is None else repr(float(r.l2_error))
            w.writerow([r.iteration, repr(float(r.misfit)), r.variant, err])


def read_iteration_log(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {
            "iter": int(r["iter"]),
            "misfit": float(r["misfit"]),
            "est_variant": r["est_variant"],
            "l2_error_vs_truth": float(r["l2_error_vs_truth"]) if r["l2_error_vs_truth"] else None,
        }
        for r in rows
    ]


def write_key_values(path, items):
    lines = []
    for key, val in items.items():
        if isinstance(val, float):
            val = repr(val)
        lines.append(f"{key}={val}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_key_values(path):
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = val.strip()
    return out


def pgm_text(image, maxval=255):
    image = np.asarray(image)
    h, w = image.shape
    lines = ["P2", f"{w} {h}", str(maxval)]
    lines += [" ".join(str(int(v)) for v in row) for row in image]
    return "\n".join(lines) + "\n"


def write_pgm(path, image):
    Path(path).write_text(pgm_text(image))


def read_pgm(path):
    tokens = Path(path).read_text().split()
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not an ASCII PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array([int(t) for t in tokens[4:4 + w * h]])
    if data.size != w * h or data.max(initial=0) > maxval:
        raise ValueError(f"{path}: malformed pixel data")
    return data.reshape(h, w)
