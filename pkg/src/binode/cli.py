"""Command-line entry point: ``binode simulate|train|surface|sweep|fit-surface``.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence, 4 I/O error.
The default output directory is taken from ``BINODE_OUT`` (else ./binode-out).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, io, kernels
from .config import load_config
from .errors import ConfigError, DivergenceError
from .model import BUILDERS, extract_surface
from .nnp import NnpSpec, fit_surface, init
from .odeint import IntegratorConfig, Trajectory, integrate
from .ratelaws import TARGETS, RateLaw, eval_law, sample_dataset
from .refmodels import REFERENCE_TERMS, SYSTEMS, generate_training_set, reference_term, system_setup
from .training import run_sweep, train

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
OUT_ENV = "BINODE_OUT"

log = logging.getLogger("binode")


def _out_dir(args, cfg_out=None) -> Path:
    return Path(args.out or cfg_out or os.environ.get(OUT_ENV) or "binode-out")


def _floats(text, what):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}", what) from None


# commands --------------------------------------------------------------

def cmd_simulate(args) -> int:
    out = _out_dir(args)
    if args.system in SYSTEMS:
        setup = system_setup(args.system)
        name, field, x0s = args.system, setup.field, setup.initial_states
        t0, t1, dt = setup.t0, setup.t1, setup.dt
        names, units = setup.state_names, setup.units
    elif Path(args.system).is_file():
        model = io.load_model(args.system)
        name, field = model.name, model.vector_field
        if args.x0 is not None:
            x0s = [_floats(args.x0, "x0")]
        elif model.name in SYSTEMS:
            x0s = system_setup(model.name).initial_states
        else:
            raise ConfigError("a model file needs --x0", "x0")
        base = system_setup(model.name) if model.name in SYSTEMS else None
        t0, t1, dt = 0.0, base.t1 if base else 10.0, base.dt if base else 0.05
        names, units = model.state_names, model.units
    else:
        raise ConfigError(f"unknown system {args.system!r}; expected one of {', '.join(SYSTEMS)} or a model file",
                          "system")
    dt = args.dt or dt
    t1 = args.t1 or t1
    for i, x0 in enumerate(x0s):
        traj = integrate(field, np.array(x0, dtype=float), t0, t1, IntegratorConfig(dt))
        traj = Trajectory(traj.times, traj.states, names, units)
        path = out / f"{name}_traj{i}.csv"
        io.write_trajectory(path, traj)
        final = ", ".join(f"{v:.6g}" for v in traj.states[-1])
        print(f"{path}: t=[{t0:g}, {traj.times[-1]:g}] dt={dt:g} steps={len(traj) - 1} final=({final})")
    return EXIT_OK


def _apply_overrides(cfg, args):
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
        if "seed" in cfg.model:
            cfg.model["seed"] = args.seed
    if getattr(args, "dt", None):
        changes["dt"] = args.dt
    if getattr(args, "horizon", None):
        changes["horizon"] = args.horizon
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    if changes:
        try:
            cfg.train = replace(cfg.train, **changes)
        except ValueError as exc:
            raise ConfigError(str(exc), "train") from None
    return cfg


def _report_base(cfg, data_text=""):
    return {
        "version": __version__,
        "backend": kernels.backend_name(),
        "config": cfg.source,
        "train": cfg.train.to_dict(),
        "input_hash": {"config": io.blob_hash(cfg.text.encode()), "data": io.blob_hash(data_text.encode())},
    }


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config, "train"), args)
    out = _out_dir(args, cfg.out)
    data = generate_training_set(cfg.system, **({"obs_every": cfg.data["obs_every"]} if cfg.data else {}))
    data_text = "".join(io.trajectory_csv(tr) for tr in data)
    for i, tr in enumerate(data):
        io.write_trajectory(out / f"{cfg.system}_traj{i}.csv", tr)
    model = BUILDERS[cfg.system](seed=cfg.model["seed"], layers=cfg.model["layers"], width=cfg.model["width"])
    report = _report_base(cfg, data_text)
    report["system"] = cfg.system

    def progress(epoch, value):
        if args.verbose and epoch % 500 == 0:
            print(f"epoch {epoch}: loss {value:.6g}", file=sys.stderr)

    try:
        res = train(model, data, cfg.train, callback=progress)
    except DivergenceError as exc:
        io.save_model(out / "model.json", exc.model)
        io.write_loss(out / "loss.csv", exc.history)
        report.update(status="diverged", iteration=exc.iteration, epochs=len(exc.history))
        io.save_json(out / "report.json", report)
        print(f"error: training diverged at epoch {exc.iteration}; partial results in {out}", file=sys.stderr)
        return EXIT_DIVERGED
    io.save_model(out / "model.json", res.model)
    io.write_loss(out / "loss.csv", res.history)
    report.update(status="ok", final_loss=res.history[-1] if res.history else None, best_loss=res.best_loss,
                  best_epoch=res.best_epoch, epochs=res.epochs, wall_time_s=res.wall_time,
                  rejected_steps=res.rejected_steps,
                  model_hash=io.blob_hash((out / "model.json").read_bytes()))
    io.save_json(out / "report.json", report)
    print(f"{cfg.system}: best loss {res.best_loss:.6g} at epoch {res.best_epoch} "
          f"({res.epochs} epochs, {res.wall_time:.1f} s) -> {out}")
    return EXIT_OK


def _reference_values(spec, surface, points):
    if spec in REFERENCE_TERMS:
        return reference_term(spec, points)
    if spec in TARGETS:
        return TARGETS[spec](surface.axis_values())
    try:
        d = json.loads(spec)
        law = RateLaw(d["law"], d.get("params", {}))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"reference must be a term name, target name or rate-law JSON ({exc})",
                          "reference") from None
    return eval_law(law, surface.axis_values())


def cmd_surface(args) -> int:
    model = io.load_model(args.model)
    axes = [int(a) - 1 for a in args.axes.split(",")]
    if args.lo is not None and args.hi is not None:
        lo, hi = _floats(args.lo, "lo"), _floats(args.hi, "hi")
    elif model.domain is not None:
        lo, hi = [model.domain[0][a] for a in axes], [model.domain[1][a] for a in axes]
    else:
        raise ConfigError("no trained domain stored; pass --lo and --hi", "lo")
    if len(lo) != len(axes) or len(hi) != len(axes):
        raise ConfigError("--lo/--hi need one value per axis", "lo")
    grids = [np.linspace(a, b, args.points) if args.points > 1 else np.array([a]) for a, b in zip(lo, hi)]
    fixed = np.zeros(model.n)
    for item in args.fixed or []:
        key, _, val = item.partition("=")
        if not key.startswith("x") or not val:
            raise ConfigError(f"--fixed expects xI=value, got {item!r}", "fixed")
        fixed[int(key[1:]) - 1] = float(val)
    try:
        surface = extract_surface(model, args.process - 1, axes, grids, fixed,
                                  None if args.state is None else args.state - 1)
    except ValueError as exc:
        raise ConfigError(str(exc), "process") from None
    reference = None
    if args.reference:
        reference = _reference_values(args.reference, surface, surface.points())
    out = Path(args.output) if args.output else _out_dir(args) / f"surface_p{args.process}.csv"
    io.write_surface(out, surface, reference)
    print(f"{out}: {surface.values.size} points, W[{surface.state + 1},{surface.process + 1}]={surface.weight:.6g}")
    if reference is not None:
        diff = surface.values.ravel() - reference
        rms = float(np.sqrt(np.mean(diff**2)))
        scale = float(np.sqrt(np.mean(reference**2)))
        print(f"rms deviation {rms:.6g} (relative {rms / scale if scale > 0 else float('nan'):.4g})")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(load_config(args.config, "sweep"), args)
    out = _out_dir(args, cfg.out)
    seed = cfg.model.get("seed", 0) if args.seed is None else args.seed
    t0 = time.perf_counter()
    res = run_sweep(cfg.target, cfg.grid["max_layers"], cfg.grid["max_width"], cfg.grid["restarts"],
                    cfg.dataset["count"], cfg.train, seed=seed, jobs=args.jobs,
                    hidden=cfg.model["hidden_activation"], output=cfg.model["output_activation"],
                    data_seed=cfg.dataset["seed"])
    wall = time.perf_counter() - t0
    io.write_sweep(out / "sweep.csv", res)
    report = _report_base(cfg)
    report.update(target=res.target, wall_time_s=wall,
                  failures=sum(c.failures for c in res.cells))
    io.save_json(out / "sweep_report.json", report)
    table = res.loss_table()
    print(f"{res.target}: {len(res.cells)} cells x {cfg.grid['restarts']} restarts in {wall:.1f} s -> {out}")
    print("best loss (rows: layers, columns: width)")
    for L, row in enumerate(table, start=1):
        print(f"{L:2d} " + " ".join(f"{v:9.2e}" for v in row))
    return EXIT_OK


def cmd_fit_surface(args) -> int:
    cfg = _apply_overrides(load_config(args.config, "fit_surface"), args)
    out = _out_dir(args, cfg.out)
    target = cfg.target
    X, y = sample_dataset(target, target.lo, target.hi, cfg.dataset["count"], cfg.dataset["seed"])
    spec = NnpSpec((True,) * target.dim, cfg.model["layers"], cfg.model["width"],
                   cfg.model["hidden_activation"], cfg.model["output_activation"])
    seed = cfg.model["seed"]
    t0 = time.perf_counter()
    report = _report_base(cfg)
    report["target"] = target.name
    try:
        res = fit_surface(init(spec, seed), X, y, cfg.train)
    except DivergenceError as exc:
        io.write_loss(out / "loss.csv", exc.history)
        report.update(status="diverged", iteration=exc.iteration)
        io.save_json(out / "report.json", report)
        print(f"error: fit diverged at iteration {exc.iteration}", file=sys.stderr)
        return EXIT_DIVERGED
    wall = time.perf_counter() - t0
    io.save_nnp(out / "nnp.json", res.nnp)
    io.write_loss(out / "loss.csv", res.history)
    report.update(status="ok", best_loss=res.loss, best_iteration=res.best_iteration, wall_time_s=wall)
    io.save_json(out / "report.json", report)
    print(f"{target.name}: {spec.hidden_layers}x{spec.hidden_width} best loss {res.loss:.6g} "
          f"at iteration {res.best_iteration} ({wall:.1f} s) -> {out}")
    return EXIT_OK


# parser ----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./binode-out)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="binode", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="integrate a reference system or a saved model")
    s.add_argument("system", help=f"one of {', '.join(SYSTEMS)}, or a model JSON file")
    s.add_argument("--dt", type=float)
    s.add_argument("--t1", type=float, help="end time")
    s.add_argument("--x0", help="initial state for a model file, comma separated")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", parents=[common], help="fit a BINODE to reference trajectories")
    t.add_argument("--config", required=True, help="config file, or the name of a shipped config")
    t.add_argument("--dt", type=float, help="integration step")
    t.add_argument("--horizon", type=int, help="rollout horizon H (observation steps)")
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("surface", parents=[common], help="sample a learned contribution w*NNP on a grid")
    f.add_argument("model")
    f.add_argument("--process", type=int, required=True, help="process index (1-based)")
    f.add_argument("--state", type=int, help="row of W to use (1-based; default first connected row)")
    f.add_argument("--axes", default="1,2", help="one or two 1-based state indices")
    f.add_argument("--points", type=int, default=25, help="grid points per axis")
    f.add_argument("--lo", help="lower grid bounds per axis (default: trained domain)")
    f.add_argument("--hi", help="upper grid bounds per axis")
    f.add_argument("--fixed", nargs="*", help="values of the other coordinates, e.g. x3=5")
    f.add_argument("--reference", help="reference term, target name, or rate-law JSON for comparison")
    f.add_argument("-o", "--output", help="CSV path (default <out>/surface_p<process>.csv)")
    f.set_defaults(func=cmd_surface)

    w = sub.add_parser("sweep", parents=[common], help="depth x width approximation sweep")
    w.add_argument("--config", required=True)
    w.add_argument("--jobs", type=int, default=1, help="worker processes")
    w.set_defaults(func=cmd_sweep)

    g = sub.add_parser("fit-surface", parents=[common], help="fit one NNP to a rate law or target")
    g.add_argument("--config", required=True)
    g.set_defaults(func=cmd_fit_surface)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if getattr(args, "points", 1) < 1:
        print("error: --points must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
