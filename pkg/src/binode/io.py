"""File formats: model JSON, numeric CSVs, atomic writes and input hashing."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .model import BinodeModel, FixedTerm, ProcessSurface, StoichiometricLayer
from .nnp import Nnp, NnpSpec
from .odeint import Trajectory

MODEL_FORMAT = 1
FLOAT_FMT = ".17g"


def atomic_write(path, data: str | bytes):
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def blob_hash(data: bytes) -> str:
    """sha1 of a git blob object holding ``data``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _fmt(v):
    return format(float(v), FLOAT_FMT)


def _dumps(obj):
    # json writes floats with repr, the shortest string that round-trips exactly
    return json.dumps(obj, indent=1, sort_keys=False) + "\n"


# models ----------------------------------------------------------------

def nnp_to_dict(net: Nnp):
    return {"spec": net.spec.to_dict(), "params": net.params.tolist(), "seed": net.seed}


def nnp_from_dict(d) -> Nnp:
    return Nnp.from_params(NnpSpec.from_dict(d["spec"]), np.array(d["params"], dtype=float), d.get("seed"))


def model_to_dict(model: BinodeModel):
    return {
        "format": MODEL_FORMAT,
        "name": model.name,
        "state_names": list(model.state_names),
        "units": list(model.units),
        "fixed_term": None if model.fixed is None else model.fixed.to_dict(),
        "processes": [nnp_to_dict(net) for net in model.processes],
        "stoich": model.stoich.to_dict(),
        "domain": None if model.domain is None else model.domain.tolist(),
    }


def model_from_dict(d) -> BinodeModel:
    version = d.get("format")
    if version != MODEL_FORMAT:
        raise ValueError(f"unsupported model format {version!r} (expected {MODEL_FORMAT})")
    stoich = StoichiometricLayer.from_dict(d["stoich"])
    n = stoich.shape[0]
    fixed = None if d.get("fixed_term") is None else FixedTerm.from_dict(d["fixed_term"], n)
    domain = None if d.get("domain") is None else np.array(d["domain"], dtype=float)
    return BinodeModel([nnp_from_dict(p) for p in d["processes"]], stoich, fixed,
                       tuple(d.get("state_names", ())), tuple(d.get("units", ())), d.get("name", "binode"), domain)


def dumps_model(model: BinodeModel) -> str:
    return _dumps(model_to_dict(model))


def save_model(path, model: BinodeModel):
    atomic_write(path, dumps_model(model))


def load_model(path) -> BinodeModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_nnp(path, net: Nnp):
    atomic_write(path, _dumps({"format": MODEL_FORMAT, **nnp_to_dict(net)}))


def load_nnp(path) -> Nnp:
    with open(path) as fh:
        return nnp_from_dict(json.load(fh))


def save_json(path, obj):
    atomic_write(path, _dumps(obj))


# csv -------------------------------------------------------------------

def _csv_text(header, rows, comments=()):
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, (int, np.integer)) else _fmt(v) for v in row])
    return buf.getvalue()


def read_csv(path):
    """Return (header, float array, comment lines) for a numeric CSV."""
    comments, lines = [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                comments.append(line[1:].strip())
            elif line.strip():
                lines.append(line)
    rows = list(csv.reader(lines))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(rows[0]))
    return rows[0], data, comments


def trajectory_csv(traj: Trajectory) -> str:
    return _csv_text(["t", *traj.names], np.column_stack([traj.times, traj.states]))


def write_trajectory(path, traj: Trajectory):
    atomic_write(path, trajectory_csv(traj))


def read_trajectory(path) -> Trajectory:
    header, data, _ = read_csv(path)
    if not header or header[0] != "t":
        raise ValueError(f"{path}: first column must be 't'")
    return Trajectory(data[:, 0], data[:, 1:], tuple(header[1:]))


def loss_csv(history) -> str:
    return _csv_text(["epoch", "loss"], ((i, v) for i, v in enumerate(history)))


def write_loss(path, history):
    atomic_write(path, loss_csv(history))


def sweep_csv(result) -> str:
    cells = sorted(result.cells, key=lambda c: (c.layers, c.width))
    return _csv_text(["layers", "width", "best_loss", "mean_runtime_s"],
                     ((c.layers, c.width, c.best_loss, c.mean_runtime_s) for c in cells))


def write_sweep(path, result):
    atomic_write(path, sweep_csv(result))


def surface_csv(surface: ProcessSurface, reference=None) -> str:
    # positional column names; the state coordinates they stand for go in a comment
    axes = ["x"] if len(surface.axes) == 1 else ["x1", "x2"]
    fixed = ", ".join(f"x{i + 1}={_fmt(v)}" for i, v in enumerate(surface.fixed) if i not in surface.axes)
    comments = [
        f"process={surface.process + 1} weight=W[{surface.state + 1},{surface.process + 1}]={_fmt(surface.weight)}",
        "axes: " + ",".join(f"x{a + 1}" for a in surface.axes),
        f"fixed: {fixed or 'none'}",
    ]
    cols = [surface.axis_values(), surface.values.reshape(-1, 1)]
    header = axes + ["value"]
    if reference is not None:
        cols.append(np.asarray(reference, dtype=float)[:, None])
        header.append("reference")
    return _csv_text(header, np.hstack(cols), comments)


def write_surface(path, surface: ProcessSurface, reference=None):
    atomic_write(path, surface_csv(surface, reference))
