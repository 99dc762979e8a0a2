"""Error measures used to compare trained models with reference systems."""
import numpy as np


def trajectory_nrmse(model, reference, dt=None, backend=None):
    """Per-state RMSE of a free-running simulation, divided by the reference range.

    The model is integrated from the reference's first state over the
    reference time grid (step ``dt``, default the grid spacing).
    """
    dt = reference.spacing if dt is None else dt
    sim = model.simulate(reference.states[0], reference.times[0], reference.times[-1], dt, backend=backend)
    every = int(round(reference.spacing / dt))
    pred = sim.states[::every]
    rmse = np.sqrt(np.mean((pred - reference.states) ** 2, axis=0))
    span = np.ptp(reference.states, axis=0)
    return np.where(span > 0, rmse / np.where(span > 0, span, 1.0), rmse)


def relative_rms(values, reference, remove_offset=False):
    """RMS(values - reference) / RMS(reference).

    With ``remove_offset`` the mean difference is subtracted first, which
    compares shapes up to an additive constant.
    """
    d = np.asarray(values, dtype=float).ravel() - np.asarray(reference, dtype=float).ravel()
    if remove_offset:
        d = d - d.mean()
    scale = np.sqrt(np.mean(np.asarray(reference, dtype=float) ** 2))
    return float(np.sqrt(np.mean(d**2)) / scale)


def box_grid(lo, hi, points):
    """Full-state grid over the box [lo, hi] with ``points`` per axis (row-major)."""
    axes = [np.linspace(a, b, points) if b > a else np.array([a]) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def mean_abs_partials(model, process, state, X, rel_step=1e-6):
    """Mean |d(w * NNP)/dx_j| over rows of X for every coordinate j (central differences)."""
    X = np.asarray(X, dtype=float)
    span = np.ptp(X, axis=0)
    out = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        h = rel_step * max(span[j], 1e-3)
        e = np.zeros(X.shape[1])
        e[j] = h
        up = model.contribution(process, state, X + e)
        down = model.contribution(process, state, X - e)
        out[j] = np.mean(np.abs(up - down)) / (2.0 * h)
    return out


def returns_near_start(times, states, period_window, tol=0.1):
    """True if the trajectory comes back within ``tol`` (relative norm) of its
    first state at some time inside ``period_window`` = (t_lo, t_hi)."""
    x0 = states[0]
    sel = (times >= period_window[0]) & (times <= period_window[1])
    if not np.any(sel):
        return False
    dist = np.linalg.norm(states[sel] - x0, axis=1) / np.linalg.norm(x0)
    return bool(dist.min() < tol)
