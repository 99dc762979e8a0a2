"""BINODE composition: process networks mapped to derivatives by a masked linear layer."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .autodiff import apply, lift
from .kernels import FIXED_CODES
from .nnp import Nnp, NnpSpec, forward_vars, init
from .odeint import Trajectory, n_steps
from .errors import IntegrationError
from .refmodels import PkParams, UltradianParams

SIGN_CODES = {"free": 0, "nonnegative": 1, "nonpositive": -1}
SIGN_NAMES = {v: k for k, v in SIGN_CODES.items()}


@dataclass
class StoichiometricLayer:
    """Output layer W without bias.

    Stored values are raw; the effective weight is ``raw`` for free entries,
    ``+raw**2`` / ``-raw**2`` for sign-constrained ones, and exactly 0 where
    ``mask`` is False.
    """

    raw: np.ndarray
    mask: np.ndarray
    sign: np.ndarray
    trainable: np.ndarray

    def __post_init__(self):
        self.raw = np.array(self.raw, dtype=float)
        self.mask = np.array(self.mask, dtype=bool)
        self.sign = np.array(self.sign, dtype=np.int64)
        self.trainable = np.array(self.trainable, dtype=bool)
        shapes = {self.raw.shape, self.mask.shape, self.sign.shape, self.trainable.shape}
        if len(shapes) != 1 or self.raw.ndim != 2:
            raise ValueError("raw, mask, sign and trainable must share one 2-D shape")
        if not np.all(np.isin(self.sign, (-1, 0, 1))):
            raise ValueError("sign codes must be -1, 0 or 1")
        self.raw[~self.mask] = 0.0

    @property
    def shape(self):
        return self.raw.shape

    def effective(self):
        eff = np.where(self.sign == 0, self.raw, self.sign * (self.raw * self.raw))
        return np.where(self.mask, eff, 0.0)

    def raw_grad(self, g_eff):
        """Chain a gradient w.r.t. effective weights back to raw values."""
        d = np.where(self.sign == 0, 1.0, 2.0 * self.sign * self.raw)
        return np.where(self.mask, g_eff * d, 0.0)

    def learnable(self):
        return self.mask & self.trainable

    def scale_column(self, j, c):
        """Multiply the effective weights of column j by c > 0."""
        if not c > 0:
            raise ValueError("scale must be positive")
        col = self.raw[:, j]
        self.raw[:, j] = np.where(self.sign[:, j] == 0, col * c, col * math.sqrt(c))

    def copy(self):
        return StoichiometricLayer(self.raw.copy(), self.mask.copy(), self.sign.copy(), self.trainable.copy())

    def to_dict(self):
        return {
            "raw": self.raw.tolist(),
            "mask": self.mask.tolist(),
            "sign": [[SIGN_NAMES[int(s)] for s in row] for row in self.sign],
            "trainable": self.trainable.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        sign = [[SIGN_CODES[s] for s in row] for row in d["sign"]]
        return cls(np.array(d["raw"], dtype=float), d["mask"], sign, d["trainable"])


def init_stoich(mask, sign=None, trainable=None, rng=None, fixed_value=None):
    """Masked entries 0; free entries U(-0.5, 0.5); sign-constrained raw U(0, 1).

    With ``fixed_value`` given, every unmasked entry is set to that value
    instead (used for non-trainable identity couplings).
    """
    mask = np.array(mask, dtype=bool)
    sign = np.zeros(mask.shape, dtype=np.int64) if sign is None else np.array(sign, dtype=np.int64)
    trainable = np.ones(mask.shape, dtype=bool) if trainable is None else np.array(trainable, dtype=bool)
    rng = np.random.default_rng(0) if rng is None else rng
    if fixed_value is not None:
        raw = np.where(mask, float(fixed_value), 0.0)
    else:
        free = rng.uniform(-0.5, 0.5, size=mask.shape)
        signed = rng.uniform(0.0, 1.0, size=mask.shape)
        raw = np.where(mask, np.where(sign == 0, free, signed), 0.0)
    return StoichiometricLayer(raw, mask, sign, trainable)


@dataclass
class FixedTerm:
    """Closed-form additive terms of a hybrid model.

    kind "linear": ``A @ x`` with ``params`` the n*n matrix (row-major).
    kind "ultradian": glucose-insulin terms with ``params`` from
    :meth:`UltradianParams.to_array` (adds f1 to dx1/dt and the full
    right-hand sides of x3-x6, including the meal input).
    """

    kind: str
    params: np.ndarray
    n: int

    def __post_init__(self):
        if self.kind not in FIXED_CODES or self.kind == "none":
            raise ValueError(f"unknown fixed term kind {self.kind!r}")
        self.params = np.asarray(self.params, dtype=float).ravel()
        if self.kind == "linear" and self.params.size != self.n * self.n:
            raise ValueError("linear fixed term needs an n x n matrix")
        if self.kind == "ultradian" and self.n != 6:
            raise ValueError("ultradian fixed term needs n = 6")

    def evaluate(self, X, t=0.0):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros_like(X)
        kernels.numpy_backend._fixed_eval(FIXED_CODES[self.kind], self.params, X, t, out)
        return out

    def add_vars(self, x, t, out):
        """Add the terms to the Var list ``out`` (recorded on x's tape)."""
        tape = x[0].tape
        if self.kind == "linear":
            A = self.params.reshape(self.n, self.n)
            for i in range(self.n):
                acc = lift(0.0, tape=tape)
                for j in range(self.n):
                    acc = acc + lift(A[i, j], tape=tape) * x[j]
                out[i] = out[i] + acc
            return out
        p = UltradianParams.from_array(self.params)

        def sigmoid(z):
            if z.value >= 0.0:
                return 1.0 / (1.0 + apply("exp", -z))
            e = apply("exp", z)
            return e / (1.0 + e)

        f1 = p.R_m * sigmoid(x[2] / (p.V3 * p.C1) - p.a1)
        f2 = p.U_b * (1.0 - apply("exp", -x[2] / (p.C2 * p.V3)))
        s = p.kappa * x[1]
        if s.value > 0.0:
            sb = apply("exp", p.beta * apply("ln", s))
            switch = sb / (1.0 + sb)
        else:
            switch = lift(0.0, tape=tape)
        f3 = (p.U_0 + p.U_m * switch) / (p.C3 * p.V3)
        f4 = p.R_g * sigmoid(-p.alpha * (x[5] / (p.C5 * p.V1) - 1.0))
        meal = kernels.numpy_backend._meal_input(self.params, t)
        out[0] = out[0] + f1
        out[2] = out[2] + ((((f4 + float(meal)) - f2) - f3 * x[2]))
        out[3] = out[3] + (x[0] - x[3]) / p.t_d
        out[4] = out[4] + (x[3] - x[4]) / p.t_d
        out[5] = out[5] + (x[4] - x[5]) / p.t_d
        return out

    def to_dict(self):
        return {"kind": self.kind, "params": self.params.tolist()}

    @classmethod
    def from_dict(cls, d, n):
        return cls(d["kind"], np.array(d["params"], dtype=float), n)


class Packed(NamedTuple):
    arch: np.ndarray
    in_idx: np.ndarray
    in_scale: np.ndarray
    mono: np.ndarray
    theta: np.ndarray
    w_eff: np.ndarray
    fkind: int
    fpar: np.ndarray


@dataclass
class BinodeModel:
    processes: list
    stoich: StoichiometricLayer
    fixed: FixedTerm | None = None
    state_names: tuple = ()
    units: tuple = ()
    name: str = "binode"
    domain: np.ndarray | None = None  # (2, n) box covered by training data

    def __post_init__(self):
        n, k = self.stoich.shape
        if len(self.processes) != k:
            raise ValueError(f"W has {k} columns but {len(self.processes)} processes were given")
        for p, net in enumerate(self.processes):
            if net.spec.state_dim != n:
                raise ValueError(f"process {p} input mask has length {net.spec.state_dim}, expected {n}")
        if self.fixed is not None and self.fixed.n != n:
            raise ValueError("fixed term dimension mismatch")
        if not self.state_names:
            self.state_names = tuple(f"x{i + 1}" for i in range(n))
        if not self.units:
            self.units = ("",) * n
        self.state_names, self.units = tuple(self.state_names), tuple(self.units)

    @property
    def n(self):
        return self.stoich.shape[0]

    @property
    def k(self):
        return self.stoich.shape[1]

    # flat parameters: all network params in process order, then W raw row-major
    @property
    def n_net_params(self):
        return sum(net.spec.n_params for net in self.processes)

    def get_params(self):
        return np.concatenate([net.params for net in self.processes] + [self.stoich.raw.ravel()])

    def set_params(self, flat):
        flat = np.asarray(flat, dtype=float)
        expected = self.n_net_params + self.n * self.k
        if flat.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got {flat.shape}")
        p = 0
        for net in self.processes:
            net.set_params(flat[p:p + net.spec.n_params])
            p += net.spec.n_params
        raw = flat[p:].reshape(self.n, self.k).copy()
        raw[~self.stoich.mask] = 0.0
        self.stoich.raw = raw

    def trainable_mask(self):
        return np.concatenate([np.ones(self.n_net_params, dtype=bool), self.stoich.learnable().ravel()])

    def copy(self):
        return BinodeModel([net.copy() for net in self.processes], self.stoich.copy(),
                           None if self.fixed is None else FixedTerm(self.fixed.kind, self.fixed.params.copy(), self.n),
                           self.state_names, self.units, self.name,
                           None if self.domain is None else self.domain.copy())

    def pack(self) -> Packed:
        arch, idx, scale, mono = [], [], [], []
        t_off = i_off = 0
        for net in self.processes:
            arch.append(net.arch_row(t_off, i_off))
            idx.append(net.spec.input_indices)
            scale.append(net.scales())
            mono.append(net.mono_flags())
            t_off += net.spec.n_params
            i_off += net.spec.input_dim
        theta = np.concatenate([net.params for net in self.processes])
        fkind = 0 if self.fixed is None else FIXED_CODES[self.fixed.kind]
        fpar = np.zeros(0) if self.fixed is None else self.fixed.params
        return Packed(np.array(arch, dtype=np.int64), np.concatenate(idx).astype(np.int64),
                      np.concatenate(scale), np.concatenate(mono).astype(np.int64),
                      theta, self.stoich.effective(), fkind, fpar)

    # evaluation ----------------------------------------------------------
    def vector_field(self, x, t=0.0, backend=None):
        """dX/dt = W V(x) + fixed(x, t) for one state (n,) or a batch (B, n)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.n:
            raise ValueError(f"state has dimension {X.shape[1]}, expected {self.n}")
        out = kernels.get_backend(backend).field(*self.pack()[:8], X, float(t))
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite vector field value")
        return out[0] if single else out

    __call__ = vector_field

    def process_rates(self, X, backend=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        pk = self.pack()
        return kernels.get_backend(backend).process_rates(pk.arch, pk.in_idx, pk.in_scale, pk.mono, pk.theta, X)

    def contribution(self, process, state, X):
        """Signed contribution W[state, process] * NNP_process(X)."""
        w = self.stoich.effective()[state, process]
        return w * self.process_rates(X)[:, process]

    def lift_params(self, tape):
        return [lift(v, tape=tape, param=True) for v in self.get_params()]

    def vector_field_vars(self, x, t, param_vars):
        """Tape-recorded vector field; same accumulation order as the kernels."""
        tape = x[0].tape
        p = 0
        rates = []
        for net in self.processes:
            rates.append(forward_vars(net, x, param_vars[p:p + net.spec.n_params]))
            p += net.spec.n_params
        raw = param_vars[p:]
        out = []
        for i in range(self.n):
            acc = lift(0.0, tape=tape)
            for j in range(self.k):
                r = raw[i * self.k + j]
                if not self.stoich.mask[i, j]:
                    w = lift(0.0, tape=tape)
                elif self.stoich.sign[i, j] == 0:
                    w = r
                elif self.stoich.sign[i, j] > 0:
                    w = r * r
                else:
                    w = -(r * r)
                acc = acc + w * rates[j]
            out.append(acc)
        if self.fixed is not None:
            out = self.fixed.add_vars(x, t, out)
        return out

    def simulate(self, x0, t0, t1, dt, backend=None) -> Trajectory:
        """RK4 trajectory from x0 over [t0, t1] (fast kernel path)."""
        steps = n_steps(t0, t1, dt)
        pk = self.pack()
        X0 = np.atleast_2d(np.asarray(x0, dtype=float))
        states = kernels.get_backend(backend).rollout(*pk, X0, np.array([float(t0)]), steps, float(dt))[0]
        bad = ~np.all(np.isfinite(states), axis=1)
        if bad.any():
            s = int(np.argmax(bad))
            raise IntegrationError(s, states[s - 1].copy())
        return Trajectory(t0 + dt * np.arange(steps + 1), states, self.state_names, self.units)


# builders --------------------------------------------------------------

def _net(mask, seed, layers, width, out_act="softplus", hidden="elu", scale=None, monotone=None):
    spec = NnpSpec(tuple(mask), layers, width, hidden, out_act, monotone, scale)
    return init(spec, seed)


def build_monod_binode(seed=0, layers=5, width=5) -> BinodeModel:
    """Biomass growth NNP_1(x1, x2) and decay NNP_2(x1); W = [[w11, w12], [w21, 0]]."""
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=2)
    procs = [_net((True, True), int(seeds[0]), layers, width), _net((True, False), int(seeds[1]), layers, width)]
    W = init_stoich([[True, True], [True, False]], rng=rng)
    return BinodeModel(procs, W, None, ("x1", "x2"), ("kg/m^3", "kg/m^3"), "monod")


def build_lv_binode(seed=0, layers=5, width=5) -> BinodeModel:
    """Prey growth NNP_1(x1), predator decay NNP_2(x2), predation NNP_3(x1, x2)."""
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=3)
    procs = [_net((True, False), int(seeds[0]), layers, width),
             _net((False, True), int(seeds[1]), layers, width),
             _net((True, True), int(seeds[2]), layers, width)]
    W = init_stoich([[True, False, True], [False, True, True]], rng=rng)
    return BinodeModel(procs, W, None, ("x1", "x2"), ("", ""), "lv")


def build_pk_binode(seed=0, layers=5, width=5, params: PkParams | None = None) -> BinodeModel:
    """dx1/dt = w NNP(x1, x2, x3); x2, x3 equations fixed."""
    p = PkParams() if params is None else params
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=1)
    procs = [_net((True, True, True), int(seeds[0]), layers, width, out_act="identity")]
    W = init_stoich([[True], [False], [False]], rng=rng)
    A = np.array([[0.0, 0.0, 0.0], [0.0, -p.k_x2, 0.0], [p.k_x1, 0.0, 0.0]])
    return BinodeModel(procs, W, FixedTerm("linear", A, 3), ("x1", "x2", "x3"), ("ug", "ug", "ug"), "pk")


ULTRADIAN_SCALES = (100.0, 100.0, 1e4)


def build_ultradian_binode(seed=0, layers=5, width=5, params: UltradianParams | None = None) -> BinodeModel:
    """dx1/dt = f1(x3) + NNP_1, dx2/dt = NNP_2, both on (x1, x2, x3); rest fixed."""
    p = UltradianParams() if params is None else params
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=2)
    mask = (True, True, True, False, False, False)
    procs = [_net(mask, int(s), layers, width, out_act="identity", scale=ULTRADIAN_SCALES) for s in seeds]
    wmask = np.zeros((6, 2), dtype=bool)
    wmask[0, 0] = wmask[1, 1] = True
    W = init_stoich(wmask, trainable=np.zeros((6, 2), dtype=bool), fixed_value=1.0)
    return BinodeModel(procs, W, FixedTerm("ultradian", p.to_array(), 6),
                       ("x1", "x2", "x3", "x4", "x5", "x6"),
                       ("uU/mL", "uU/mL", "mg", "uU/mL", "uU/mL", "uU/mL"), "ultradian")


def build_ssystem_binode(n: int, seed=0, layers=5, width=5) -> BinodeModel:
    """Neural S-system: per state one production (+) and one degradation (-) process."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=2 * n)
    procs = [_net((True,) * n, int(s), layers, width) for s in seeds]
    mask = np.zeros((n, 2 * n), dtype=bool)
    sign = np.zeros((n, 2 * n), dtype=np.int64)
    for i in range(n):
        mask[i, 2 * i] = mask[i, 2 * i + 1] = True
        sign[i, 2 * i], sign[i, 2 * i + 1] = 1, -1
    W = init_stoich(mask, sign, rng=rng)
    return BinodeModel(procs, W, None, tuple(f"x{i + 1}" for i in range(n)), (), "ssystem")


BUILDERS = {
    "monod": build_monod_binode,
    "lv": build_lv_binode,
    "pk": build_pk_binode,
    "ultradian": build_ultradian_binode,
}


# process surfaces ------------------------------------------------------

@dataclass
class ProcessSurface:
    process: int
    state: int
    weight: float
    axes: tuple
    grids: list
    fixed: np.ndarray
    values: np.ndarray  # shape = tuple(len(g) for g in grids), row-major

    def points(self):
        return surface_points(self.grids, self.axes, self.fixed)

    def axis_values(self):
        """(N, len(axes)) coordinates matching ``values.ravel()``."""
        mesh = np.meshgrid(*self.grids, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def surface_points(grids, axes, fixed):
    mesh = np.meshgrid(*grids, indexing="ij")
    pts = np.tile(np.asarray(fixed, dtype=float), (mesh[0].size, 1))
    for a, m in zip(axes, mesh):
        pts[:, a] = m.ravel()
    return pts


def _default_state(model, process):
    rows = np.flatnonzero(model.stoich.mask[:, process])
    if rows.size == 0:
        raise ValueError(f"process {process} has no output connection")
    return int(rows[0])


def extract_surface(model: BinodeModel, process: int, axes, grids, fixed=None, state=None) -> ProcessSurface:
    """Evaluate W[state, process] * NNP_process over a 1-2 axis grid.

    ``grids`` holds one strictly increasing 1-D array per axis; coordinates
    not on an axis take their value from ``fixed`` (default zeros).
    """
    axes = tuple(int(a) for a in axes)
    if not 1 <= len(axes) <= 2 or len(set(axes)) != len(axes):
        raise ValueError("surfaces take one or two distinct axes")
    if any(a < 0 or a >= model.n for a in axes):
        raise ValueError(f"axis index out of range for n = {model.n}")
    if not 0 <= process < model.k:
        raise ValueError(f"process index {process} out of range (k = {model.k})")
    grids = [np.asarray(g, dtype=float) for g in grids]
    if len(grids) != len(axes):
        raise ValueError("one grid per axis required")
    for g in grids:
        if g.ndim != 1 or g.size < 1 or not np.all(np.isfinite(g)) or np.any(np.diff(g) <= 0):
            raise ValueError("grids must be finite and strictly increasing")
    fixed = np.zeros(model.n) if fixed is None else np.asarray(fixed, dtype=float)
    state = _default_state(model, process) if state is None else int(state)
    if model.domain is not None:
        lo, hi = model.domain
        for a, g in zip(axes, grids):
            if g[0] < lo[a] or g[-1] > hi[a]:
                warnings.warn(f"surface grid on axis {a} leaves the trained domain [{lo[a]}, {hi[a]}]",
                              stacklevel=2)
    pts = surface_points(grids, axes, fixed)
    w = float(model.stoich.effective()[state, process])
    values = (w * model.process_rates(pts)[:, process]).reshape([g.size for g in grids])
    return ProcessSurface(process, state, w, axes, grids, fixed, values)
