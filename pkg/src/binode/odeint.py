"""Fixed-step explicit integration (RK4 or Euler) with an optional autodiff tape."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, lift
from .errors import IntegrationError

METHODS = ("rk4", "euler")


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    method: str = "rk4"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), n)
    names: tuple = ()
    units: tuple = ()

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError("one state row per time point required")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory states must be finite")
        n = self.states.shape[1]
        if not self.names:
            self.names = tuple(f"x{i + 1}" for i in range(n))
        if not self.units:
            self.units = ("",) * n
        self.names, self.units = tuple(self.names), tuple(self.units)

    @property
    def n(self):
        return self.states.shape[1]

    def __len__(self):
        return self.times.shape[0]

    def subsample(self, every: int) -> "Trajectory":
        return Trajectory(self.times[::every].copy(), self.states[::every].copy(), self.names, self.units)

    @property
    def spacing(self):
        """Common time spacing; raises if the grid is not uniform."""
        d = np.diff(self.times)
        if d.size == 0:
            raise ValueError("trajectory has a single point")
        if not np.allclose(d, d[0], rtol=1e-9, atol=0.0):
            raise ValueError("trajectory is not uniformly sampled")
        return float(d[0])


def n_steps(t0, t1, dt):
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    steps = int(round((t1 - t0) / dt))
    if steps < 1:
        raise ValueError("interval shorter than half a step")
    return steps


def rk4_step(field, x, t, dt):
    half = 0.5 * dt
    k1 = field(x, t)
    k2 = field(x + half * k1, t + half)
    k3 = field(x + half * k2, t + half)
    k4 = field(x + dt * k3, t + dt)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def euler_step(field, x, t, dt):
    return x + dt * field(x, t)


def integrate(field, x0, t0: float, t1: float, cfg: IntegratorConfig) -> Trajectory:
    """Integrate dx/dt = field(x, t) on the grid t0 + s*dt, s = 0..N.

    N is (t1 - t0)/dt rounded to the nearest integer. Both endpoints are
    included in the returned trajectory.
    """
    steps = n_steps(t0, t1, cfg.dt)
    step = rk4_step if cfg.method == "rk4" else euler_step
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise IntegrationError(0, x, "non-finite initial state")
    out = np.empty((steps + 1, x.size))
    out[0] = x
    for s in range(steps):
        x = step(field, x, t0 + s * cfg.dt, cfg.dt)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(s + 1, out[s].copy())
        out[s + 1] = x
    times = t0 + cfg.dt * np.arange(steps + 1)
    return Trajectory(times, out)


def _rk4_step_vars(field, x, t, dt, tape):
    half = lift(0.5 * dt, tape=tape)
    c = lift(dt / 6.0, tape=tape)
    h = lift(dt, tape=tape)
    two = lift(2.0, tape=tape)
    k1 = field(x, t)
    k2 = field([xi + half * ki for xi, ki in zip(x, k1)], t + 0.5 * dt)
    k3 = field([xi + half * ki for xi, ki in zip(x, k2)], t + 0.5 * dt)
    k4 = field([xi + h * ki for xi, ki in zip(x, k3)], t + dt)
    return [xi + c * (((a + two * b) + two * cc) + d) for xi, a, b, cc, d in zip(x, k1, k2, k3, k4)]


def rollout(model, x0, t0: float, H: int, dt: float, tape: Tape | None = None, param_vars=None):
    """Predicted states at t0 + h*dt for h = 1..H.

    Without a tape this is plain RK4 (same arithmetic as :func:`integrate`) and
    returns an (H, n) array. With a tape, every operation is recorded and a
    list of H state lists of :class:`Var` is returned; ``param_vars`` are the
    lifted model parameters (created with ``model.lift_params(tape)`` if None).
    """
    if H < 1:
        raise ValueError("H must be >= 1")
    if tape is None:
        traj = integrate(model.vector_field, x0, t0, t0 + H * dt, IntegratorConfig(dt))
        return traj.states[1:]
    if param_vars is None:
        param_vars = model.lift_params(tape)

    def field(xv, t):
        return model.vector_field_vars(xv, t, param_vars)

    x = [lift(v, tape=tape) for v in np.asarray(x0, dtype=float)]
    out = []
    for s in range(H):
        x = _rk4_step_vars(field, x, t0 + s * dt, dt, tape)
        if not all(np.isfinite(v.value) for v in x):
            raise IntegrationError(s + 1, np.array([v.value for v in out[-1]]) if out else np.asarray(x0))
        out.append(x)
    return out
