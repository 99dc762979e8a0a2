"""Reference simulators and training-data generators for the four benchmark systems."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .odeint import IntegratorConfig, Trajectory, integrate

SYSTEMS = ("monod", "lv", "pk", "ultradian")


@dataclass(frozen=True)
class MonodParams:
    mu_max: float = 0.86  # 1/h
    K_x2: float = 0.0138  # kg/m^3
    Y: float = 1.28
    k_d: float = 3e-2  # 1/h

    def __post_init__(self):
        _check_positive(self)


@dataclass(frozen=True)
class LvParams:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        _check_positive(self)


@dataclass(frozen=True)
class PkParams:
    k_x1: float = 0.15  # 1/h
    k_x2: float = 0.72  # 1/h

    def __post_init__(self):
        _check_positive(self)


@dataclass(frozen=True)
class UltradianParams:
    V1: float = 3.0
    V2: float = 11.0
    V3: float = 10.0
    E: float = 0.2
    t1: float = 6.0
    t2: float = 100.0
    t_d: float = 12.0
    k: float = 0.0083
    R_m: float = 209.0
    a1: float = 6.6
    C1: float = 300.0
    C2: float = 144.0
    C3: float = 100.0
    C4: float = 80.0
    C5: float = 26.0
    U_b: float = 72.0
    U_0: float = 4.0
    U_m: float = 90.0
    R_g: float = 180.0
    alpha: float = 7.5
    beta: float = 1.772
    meals: tuple = ((300.0, 60.0), (650.0, 40.0), (1100.0, 50.0))

    def __post_init__(self):
        object.__setattr__(self, "meals", tuple((float(t), float(q)) for t, q in self.meals))
        for f in fields(self):
            if f.name != "meals" and not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive")
        times = [t for t, _ in self.meals]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("meal times must be strictly increasing")

    @property
    def kappa(self):
        return (1.0 / self.C4) * (1.0 / self.V2 + 1.0 / (self.E * self.t2))

    def to_array(self):
        """Flat layout consumed by the fixed-term kernels."""
        scalars = [getattr(self, f.name) for f in fields(self) if f.name != "meals"]
        meals = [v for pair in self.meals for v in pair]
        return np.array(scalars + [float(len(self.meals))] + meals)

    @classmethod
    def from_array(cls, arr):
        names = [f.name for f in fields(cls) if f.name != "meals"]
        kw = dict(zip(names, (float(v) for v in arr[:21])))
        n = int(arr[21])
        kw["meals"] = tuple((float(arr[22 + 2 * j]), float(arr[23 + 2 * j])) for j in range(n))
        return cls(**kw)


def _check_positive(p):
    for f in fields(p):
        if not getattr(p, f.name) > 0:
            raise ValueError(f"{f.name} must be positive")


# vector fields ---------------------------------------------------------

def monod_growth(p: MonodParams, x2):
    denom = x2 + p.K_x2
    return np.where(denom != 0.0, p.mu_max * x2 / np.where(denom != 0.0, denom, 1.0), 0.0)


def monod_field(p: MonodParams, x, t=0.0):
    x1, x2 = x[..., 0], x[..., 1]
    mu = monod_growth(p, x2)
    return np.stack([mu * x1 - p.k_d * x1, -(1.0 / p.Y) * mu * x1], axis=-1)


def lv_field(p: LvParams, x, t=0.0):
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([p.alpha * x1 - p.beta * x1 * x2, p.gamma * x1 * x2 - p.delta * x2], axis=-1)


def lv_first_integral(p: LvParams, x):
    x1, x2 = x[..., 0], x[..., 1]
    return p.gamma * x1 - p.delta * np.log(x1) + p.beta * x2 - p.alpha * np.log(x2)


def pk_field(p: PkParams, x, t=0.0):
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([p.k_x2 * x2 - p.k_x1 * x1, -p.k_x2 * x2, p.k_x1 * x1], axis=-1)


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def ultradian_f(p: UltradianParams, x1, x2):
    return -p.E * (x1 / p.V1 - x2 / p.V2) - x1 / p.t1


def ultradian_g(p: UltradianParams, x1, x2):
    return p.E * (x1 / p.V1 - x2 / p.V2) - x2 / p.t2


def ultradian_f1(p, x3):
    # R_m / (1 + exp(-x3/(V3 C1) + a1))
    return p.R_m * _sigmoid(x3 / (p.V3 * p.C1) - p.a1)


def ultradian_f2(p, x3):
    return p.U_b * (-np.expm1(-x3 / (p.C2 * p.V3)))


def ultradian_f3(p, x2):
    s = p.kappa * np.asarray(x2, dtype=float)
    pos = s > 0.0
    sb = np.exp(p.beta * np.log(np.where(pos, s, 1.0)))
    switch = np.where(pos, sb / (1.0 + sb), 0.0)  # 1 / (1 + s^-beta)
    return (p.U_0 + p.U_m * switch) / (p.C3 * p.V3)


def ultradian_f4(p, x6):
    return p.R_g * _sigmoid(-p.alpha * (x6 / (p.C5 * p.V1) - 1.0))


def meal_input(p: UltradianParams, t):
    total = 0.0
    for ti, qi in p.meals:
        if ti <= t:
            total += qi * p.k * np.exp(-p.k * (t - ti))
    return total


def ultradian_field(p: UltradianParams, x, t=0.0):
    x1, x2, x3, x4, x5, x6 = (x[..., i] for i in range(6))
    return np.stack([
        ultradian_f1(p, x3) + ultradian_f(p, x1, x2),
        ultradian_g(p, x1, x2),
        ultradian_f4(p, x6) + meal_input(p, t) - ultradian_f2(p, x3) - ultradian_f3(p, x2) * x3,
        (x1 - x4) / p.t_d,
        (x4 - x5) / p.t_d,
        (x5 - x6) / p.t_d,
    ], axis=-1)


# benchmark definitions -------------------------------------------------

@dataclass(frozen=True)
class SystemSetup:
    name: str
    params: object
    initial_states: tuple
    t1: float
    dt: float
    obs_every: int
    state_names: tuple
    units: tuple
    t0: float = 0.0

    def field(self, x, t=0.0):
        return FIELDS[self.name](self.params, x, t)


FIELDS = {"monod": monod_field, "lv": lv_field, "pk": pk_field, "ultradian": ultradian_field}


def system_setup(system: str, **overrides) -> SystemSetup:
    if system == "monod":
        base = SystemSetup("monod", MonodParams(), ((0.005, 0.1), (0.005, 0.3), (0.005, 0.5)),
                           12.0, 0.05, 4, ("x1", "x2"), ("kg/m^3", "kg/m^3"))
    elif system == "lv":
        base = SystemSetup("lv", LvParams(), ((1.6, 0.4), (0.5, 1.5), (1.7, 1.7)),
                           12.0, 0.05, 4, ("x1", "x2"), ("", ""))
    elif system == "pk":
        base = SystemSetup("pk", PkParams(), ((0.0, 0.1, 0.0),), 10.0, 0.05, 2,
                           ("x1", "x2", "x3"), ("ug", "ug", "ug"))
    elif system == "ultradian":
        base = SystemSetup("ultradian", UltradianParams(), ((36.0, 44.0, 11000.0, 0.0, 0.0, 0.0),),
                           1800.0, 1.0, 10, ("x1", "x2", "x3", "x4", "x5", "x6"),
                           ("uU/mL", "uU/mL", "mg", "uU/mL", "uU/mL", "uU/mL"))
    else:
        raise KeyError(f"unknown system {system!r}; expected one of {SYSTEMS}")
    if overrides:
        base = replace(base, **overrides)
    return base


def reference_trajectories(system: str, **overrides) -> list[Trajectory]:
    """Full-resolution reference trajectories on the integration grid."""
    setup = system_setup(system, **overrides)
    cfg = IntegratorConfig(dt=setup.dt)
    out = []
    for x0 in setup.initial_states:
        traj = integrate(setup.field, np.array(x0, dtype=float), setup.t0, setup.t1, cfg)
        out.append(Trajectory(traj.times, traj.states, setup.state_names, setup.units))
    return out


def generate_training_set(system: str, obs_every: int | None = None, **overrides) -> list[Trajectory]:
    """Observations: every ``obs_every``-th grid point of the reference trajectories."""
    setup = system_setup(system, **overrides)
    k = setup.obs_every if obs_every is None else int(obs_every)
    if k < 1:
        raise ValueError("obs_every must be >= 1")
    return [tr.subsample(k) for tr in reference_trajectories(system, **overrides)]


# signed process contributions, for comparing learned surfaces -----------

def _monod_growth_term(x):
    return monod_growth(MonodParams(), x[:, 1]) * x[:, 0]


REFERENCE_TERMS = {
    "monod.growth": _monod_growth_term,
    "monod.uptake": lambda x: -_monod_growth_term(x) / MonodParams().Y,
    "monod.decay": lambda x: -MonodParams().k_d * x[:, 0],
    "lv.prey_growth": lambda x: x[:, 0],
    "lv.predator_decay": lambda x: -x[:, 1],
    "lv.predation_prey": lambda x: -x[:, 0] * x[:, 1],
    "lv.predation_predator": lambda x: x[:, 0] * x[:, 1],
    "pk.x1": lambda x: PkParams().k_x2 * x[:, 1] - PkParams().k_x1 * x[:, 0],
    "ultradian.f": lambda x: ultradian_f(UltradianParams(), x[:, 0], x[:, 1]),
    "ultradian.g": lambda x: ultradian_g(UltradianParams(), x[:, 0], x[:, 1]),
}


def reference_term(name: str, states):
    """Evaluate a named reference contribution at full-state rows."""
    if name not in REFERENCE_TERMS:
        raise KeyError(f"unknown reference term {name!r}; known: {sorted(REFERENCE_TERMS)}")
    return REFERENCE_TERMS[name](np.atleast_2d(np.asarray(states, dtype=float)))
