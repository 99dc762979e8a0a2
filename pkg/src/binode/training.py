"""Rollout-based trajectory fitting and the depth x width approximation sweep."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .autodiff import Tape, backward, lift
from .errors import DivergenceError, NonFiniteGradient
from .model import BinodeModel
from .nnp import NnpSpec, fit_surface, init
from .odeint import rollout
from .optim import AdamState, adam_step
from .ratelaws import TARGETS, RateLaw, Target, sample_dataset

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig", "Segments", "sample_segments", "all_segments", "loss", "loss_and_grad",
    "loss_on_tape", "adam_step", "AdamState", "train", "TrainResult", "SweepCell", "SweepResult",
    "run_sweep",
]


@dataclass
class TrainConfig:
    batch_size: int = 20
    horizon: int = 4
    dt: float | None = None  # integration step; None means the data spacing
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 5000
    seed: int = 0
    batch_additions: dict = field(default_factory=dict)  # epoch -> extra segments
    select_every: int = 25  # full-data loss check for best-iterate selection; 0 = use batch loss

    def __post_init__(self):
        self.batch_additions = {int(k): int(v) for k, v in dict(self.batch_additions).items()}
        self.validate()

    def validate(self):
        if self.batch_size < 1 or self.horizon < 1:
            raise ValueError("batch_size and horizon must be >= 1")
        if not 1e-6 <= self.lr <= 1.0:
            raise ValueError("lr must lie in [1e-6, 1]")
        if self.lr < 1e-4 or self.lr > 1e-1:
            log.warning("lr=%g is outside the commonly used range [1e-4, 1e-1]", self.lr)
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.eps > 0.0):
            raise ValueError("invalid Adam constants")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if any(v < 0 for v in self.batch_additions.values()):
            raise ValueError("batch additions must be nonnegative")

    def to_dict(self):
        d = asdict(self)
        d["batch_additions"] = {str(k): v for k, v in sorted(self.batch_additions.items())}
        return d


class Segments(NamedTuple):
    x0: np.ndarray  # (B, n)
    t0: np.ndarray  # (B,)
    targets: np.ndarray  # (B, H, n)
    traj: np.ndarray  # source trajectory index per segment
    start: np.ndarray  # start index per segment


def _check_lengths(trajectories, H):
    if not trajectories:
        raise ValueError("no trajectories given")
    for i, tr in enumerate(trajectories):
        if len(tr) < H + 1:
            raise ValueError(f"trajectory {i} has {len(tr)} points; horizon {H} needs at least {H + 1}")


def _gather(trajectories, which, starts, H):
    x0 = np.stack([trajectories[i].states[s] for i, s in zip(which, starts)])
    t0 = np.array([trajectories[i].times[s] for i, s in zip(which, starts)])
    targets = np.stack([trajectories[i].states[s + 1:s + 1 + H] for i, s in zip(which, starts)])
    return Segments(x0, t0, targets, np.asarray(which), np.asarray(starts))


def sample_segments(trajectories, B: int, H: int, seed) -> Segments:
    """B segments drawn uniformly with replacement over all (trajectory, start) pairs."""
    _check_lengths(trajectories, H)
    pool = [(i, s) for i, tr in enumerate(trajectories) for s in range(len(tr) - H)]
    rng = np.random.default_rng(seed)
    pick = rng.integers(0, len(pool), size=B)
    which = [pool[j][0] for j in pick]
    starts = [pool[j][1] for j in pick]
    return _gather(trajectories, which, starts, H)


def all_segments(trajectories, H: int) -> Segments:
    _check_lengths(trajectories, H)
    pool = [(i, s) for i, tr in enumerate(trajectories) for s in range(len(tr) - H)]
    return _gather(trajectories, [p[0] for p in pool], [p[1] for p in pool], H)


def substeps(spacing: float, dt: float) -> int:
    """Integration steps per observation interval; spacing must be a multiple of dt."""
    m = int(round(spacing / dt))
    if m < 1 or abs(m * dt - spacing) > 1e-9 * max(1.0, abs(spacing)):
        raise ValueError(f"observation spacing {spacing} is not an integer multiple of dt={dt}")
    return m


def _data_spacing(trajectories):
    spacings = {round(tr.spacing, 12) for tr in trajectories}
    if len(spacings) != 1:
        raise ValueError("all trajectories must share one observation spacing")
    return trajectories[0].spacing


def loss_and_grad(model: BinodeModel, segments: Segments, dt: float, m: int = 1, backend=None):
    """Rollout loss and its gradient, aligned with ``model.get_params()``."""
    pk = model.pack()
    val, gtheta, gw = kernels.get_backend(backend).rollout_loss_grad(
        *pk, segments.x0, segments.t0, segments.targets, int(m), float(dt))
    grad = np.concatenate([gtheta, model.stoich.raw_grad(gw).ravel()])
    return float(val), grad


def loss(model: BinodeModel, segments: Segments, dt: float, m: int = 1, backend=None) -> float:
    """Mean over segments and horizon steps of the squared state error."""
    B, H, _ = segments.targets.shape
    pk = model.pack()
    states = kernels.get_backend(backend).rollout(*pk, segments.x0, segments.t0, H * int(m), float(dt))
    pred = states[:, m::m]
    return float(np.sum((pred - segments.targets) ** 2)) / (B * H)


def loss_on_tape(model: BinodeModel, segments: Segments, dt: float, m: int = 1):
    """Record the loss on a fresh tape; returns (loss Var, tape, gradient)."""
    tape = Tape()
    params = model.lift_params(tape)
    B, H, n = segments.targets.shape
    total = lift(0.0, tape=tape)
    for b in range(B):
        states = rollout(model, segments.x0[b], float(segments.t0[b]), H * m, dt, tape=tape, param_vars=params)
        for h in range(H):
            x = states[(h + 1) * m - 1]
            for i in range(n):
                d = x[i] - float(segments.targets[b, h, i])
                total = total + d * d
    out = total / float(B * H)
    return out, tape, backward(tape, out)


@dataclass
class TrainResult:
    model: BinodeModel
    history: list
    best_loss: float
    best_epoch: int
    epochs: int
    wall_time: float
    rejected_steps: int = 0


def train(model: BinodeModel, trajectories, cfg: TrainConfig, callback=None) -> TrainResult:
    """Adam on the rollout loss with per-epoch resampled segments.

    Works on a copy of ``model``. The returned model carries the parameters
    with the lowest selection loss: the loss over all segments, checked every
    ``cfg.select_every`` epochs (or the batch loss when that is 0).
    """
    cfg.validate()
    start = time.perf_counter()
    model = model.copy()
    spacing = _data_spacing(trajectories)
    dt = spacing if cfg.dt is None else cfg.dt
    m = substeps(spacing, dt)
    H = cfg.horizon
    _check_lengths(trajectories, H)
    full = all_segments(trajectories, H) if cfg.select_every else None

    params = model.get_params()
    trainable = model.trainable_mask()
    state = AdamState.zeros(params.size)
    history = []
    best_params, best_loss, best_epoch = params.copy(), math.inf, 0
    B = cfg.batch_size
    rejected = 0

    def select(epoch, value):
        nonlocal best_params, best_loss, best_epoch
        if math.isfinite(value) and value < best_loss:
            best_params, best_loss, best_epoch = params.copy(), value, epoch

    for epoch in range(cfg.epochs + 1):
        model.set_params(params)
        if full is not None and (epoch % cfg.select_every == 0 or epoch == cfg.epochs):
            try:
                select(epoch, loss(model, full, dt, m))
            except FloatingPointError:
                pass
        if epoch == cfg.epochs:
            break
        B += cfg.batch_additions.get(epoch, 0)
        segs = sample_segments(trajectories, B, H, seed=(cfg.seed, epoch))
        val, grad = loss_and_grad(model, segs, dt, m)
        if not math.isfinite(val):
            model.set_params(best_params)
            err = DivergenceError(epoch, history)
            err.model = model
            raise err
        history.append(val)
        if full is None:
            select(epoch, val)
        if callback is not None:
            callback(epoch, val)
        try:
            params, state = adam_step(params, grad, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, trainable)
        except NonFiniteGradient as exc:
            rejected += 1
            log.warning("epoch %d: step rejected (%s)", epoch, exc)

    model.set_params(best_params)
    states = np.concatenate([tr.states for tr in trajectories])
    model.domain = np.stack([states.min(axis=0), states.max(axis=0)])
    return TrainResult(model, history, float(best_loss), best_epoch, cfg.epochs,
                       time.perf_counter() - start, rejected)


# approximation sweep ---------------------------------------------------

@dataclass
class SweepCell:
    layers: int
    width: int
    best_loss: float
    mean_runtime_s: float
    losses: list = field(default_factory=list)
    failures: int = 0


@dataclass
class SweepResult:
    target: str
    cells: list

    def cell(self, layers, width):
        for c in self.cells:
            if c.layers == layers and c.width == width:
                return c
        raise KeyError((layers, width))

    def loss_table(self):
        L = max(c.layers for c in self.cells)
        W = max(c.width for c in self.cells)
        table = np.full((L, W), np.nan)
        for c in self.cells:
            table[c.layers - 1, c.width - 1] = c.best_loss
        return table


def _resolve_target(target):
    if isinstance(target, str):
        if target not in TARGETS:
            raise KeyError(f"unknown target {target!r}; known: {sorted(TARGETS)}")
        return TARGETS[target]
    return target


def _run_restart(task):
    target, layers, width, restart, X, y, cfg, seed, hidden, out_act = task
    spec = NnpSpec((True,) * X.shape[1], layers, width, hidden, out_act)
    net = init(spec, seed)
    t0 = time.perf_counter()
    try:
        res = fit_surface(net, X, y, cfg)
        value = res.loss
    except FloatingPointError:
        value = math.nan
    return layers, width, restart, value, time.perf_counter() - t0


def restart_seed(seed, layers, width, restart):
    return int(np.random.SeedSequence([seed, layers, width, restart]).generate_state(1)[0])


def run_sweep(target, max_layers=7, max_width=7, restarts=100, count=None, cfg: TrainConfig | None = None,
              seed=0, jobs=1, lo=None, hi=None, hidden="elu", output="identity", data_seed=None) -> SweepResult:
    """Train ``restarts`` networks per (layers, width) cell on one target.

    ``target`` is a key of :data:`binode.ratelaws.TARGETS`, a Target, or a
    RateLaw (then ``lo``/``hi`` give the sampling box). Default sample count
    is 1000 for 1-D and 5000 for 2-D targets.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    cfg = cfg or TrainConfig(epochs=2000)
    target = _resolve_target(target)
    if isinstance(target, RateLaw):
        name = target.id
        if lo is None or hi is None:
            raise ValueError("a RateLaw target needs an explicit sampling box")
        fn = target
    else:
        name = target.name
        fn = target
        lo = target.lo if lo is None else lo
        hi = target.hi if hi is None else hi
    dim = len(np.atleast_1d(lo))
    count = (1000 if dim == 1 else 5000) if count is None else count
    X, y = sample_dataset(fn, lo, hi, count, seed if data_seed is None else data_seed)

    tasks = [(name, L, W, r, X, y, cfg, restart_seed(seed, L, W, r), hidden, output)
             for L in range(1, max_layers + 1) for W in range(1, max_width + 1) for r in range(restarts)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_restart, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_run_restart(t) for t in tasks]

    cells = []
    for L in range(1, max_layers + 1):
        for W in range(1, max_width + 1):
            rows = sorted((r for r in results if r[0] == L and r[1] == W), key=lambda r: r[2])
            losses = [r[3] for r in rows]
            finite = [v for v in losses if math.isfinite(v)]
            cells.append(SweepCell(L, W, min(finite) if finite else math.nan,
                                   float(np.mean([r[4] for r in rows])), losses, len(losses) - len(finite)))
    return SweepResult(name, cells)
