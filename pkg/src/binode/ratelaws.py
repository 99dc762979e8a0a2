"""Closed-form process rate laws and the explicit approximation targets."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LAW_IDS = (
    "michaelis_menten", "random_bibi", "power_law", "lin_log", "convenience",
    "gene_transcription", "mass_action", "competitive_product_inhibition", "haldane",
    "hill", "reversible_hill", "saturable_cooperative", "monod", "holling1", "holling2",
)

# scalar parameters per law; list-valued ones are declared in _LIST_PARAMS
_SCALAR_PARAMS = {
    "michaelis_menten": ("V_max", "K_m"),
    "random_bibi": ("V_max", "K_i_A", "K_m_B", "K_i_B", "K_i_P", "K_i_Q", "K_m_P"),
    "power_law": ("alpha",),
    "lin_log": ("e_rel",),
    "convenience": ("V_max",),
    "gene_transcription": ("k_t", "n"),
    "mass_action": ("alpha",),
    "competitive_product_inhibition": ("V_max", "K_m", "K_m_P"),
    "haldane": ("V_max", "K_m", "K_i"),
    "hill": ("V_max", "K_m", "h"),
    "reversible_hill": ("V_max", "K_m_S", "K_m_P", "h"),
    "saturable_cooperative": ("V",),
    "monod": ("mu_max", "K_m"),
    "holling1": ("a", "T_s"),
    "holling2": ("a", "T_t", "b"),
}

_LIST_PARAMS = {
    "power_law": ("g",),
    "lin_log": ("epsilon",),
    "convenience": ("K_m_S", "alpha_S", "K_m_P", "beta_P", "k_A", "k_I"),
    "gene_transcription": ("k_a", "k_r"),
    "mass_action": ("n_i",),
    "saturable_cooperative": ("K", "n_i"),
}

_FIXED_ARITY = {
    "michaelis_menten": 1, "random_bibi": 4, "competitive_product_inhibition": 2, "haldane": 1,
    "hill": 1, "reversible_hill": 2, "monod": 2, "holling1": 2, "holling2": 2,
}


@dataclass(frozen=True)
class RateLaw:
    id: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.id not in LAW_IDS:
            raise ValueError(f"unknown rate law {self.id!r}")
        params = {}
        for name in _SCALAR_PARAMS[self.id]:
            if name not in self.params:
                raise ValueError(f"{self.id}: missing parameter {name!r}")
            v = float(self.params[name])
            if not math.isfinite(v):
                raise ValueError(f"{self.id}: parameter {name!r} is not finite")
            params[name] = v
        for name in _LIST_PARAMS.get(self.id, ()):
            vals = tuple(float(v) for v in self.params.get(name, ()))
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{self.id}: parameter {name!r} is not finite")
            params[name] = vals
        extra = set(self.params) - set(params)
        if extra:
            raise ValueError(f"{self.id}: unknown parameters {sorted(extra)}")
        object.__setattr__(self, "params", params)
        if self.id == "convenience":
            p = params
            if len(p["K_m_S"]) != len(p["alpha_S"]) or len(p["K_m_P"]) != len(p["beta_P"]):
                raise ValueError("convenience: each substrate/product needs a K_m and an exponent")
        if self.id == "saturable_cooperative" and len(params["K"]) != len(params["n_i"]):
            raise ValueError("saturable_cooperative: K and n_i must have equal length")
        if self.arity < 1:
            raise ValueError(f"{self.id}: law has no inputs")

    @property
    def arity(self):
        if self.id in _FIXED_ARITY:
            return _FIXED_ARITY[self.id]
        p = self.params
        if self.id == "power_law":
            return len(p["g"])
        if self.id == "mass_action":
            return len(p["n_i"])
        if self.id == "lin_log":
            return len(p["epsilon"])
        if self.id == "saturable_cooperative":
            return len(p["K"])
        if self.id == "gene_transcription":
            return len(p["k_a"]) + len(p["k_r"])
        return len(p["K_m_S"]) + len(p["K_m_P"]) + len(p["k_A"]) + len(p["k_I"])

    def __call__(self, inputs):
        return eval_law(self, inputs)


def power_law(alpha, g, inputs):
    """alpha * prod x_i^g_i."""
    x = np.asarray(inputs, dtype=float)
    g = np.asarray(g, dtype=float)
    if x.shape[-1] != g.size:
        raise ValueError("one kinetic order per input required")
    if np.any((x == 0.0) & (g < 0.0)):
        raise ValueError("zero raised to a negative power")
    if np.any((x < 0.0) & (g != np.round(g))):
        raise ValueError("negative input with non-integer kinetic order")
    return alpha * np.prod(x**g, axis=-1)


def _cols(x, k):
    return [x[..., i] for i in range(k)]


def eval_law(law: RateLaw, inputs):
    """Exact value of ``law`` at ``inputs`` (shape (arity,) or (N, arity)).

    random_bibi also accepts two inputs (A, B) with products P = Q = 0.
    """
    x = np.asarray(inputs, dtype=float)
    p = law.params
    lid = law.id
    if lid == "random_bibi" and x.shape[-1] == 2:
        x = np.concatenate([x, np.zeros(x.shape[:-1] + (2,))], axis=-1)
    if x.shape[-1] != law.arity:
        raise ValueError(f"{lid} takes {law.arity} inputs, got {x.shape[-1]}")
    if lid == "lin_log":
        if np.any(x <= 0.0):
            raise ValueError("lin_log needs positive metabolite ratios")
        eps = np.asarray(p["epsilon"])
        return p["e_rel"] * (1.0 + np.sum(eps * np.log(x), axis=-1))
    if lid in ("power_law", "mass_action"):
        orders = p["g"] if lid == "power_law" else p["n_i"]
        return power_law(p["alpha"], orders, x)
    if np.any(x < 0.0):
        raise ValueError(f"{lid} needs nonnegative concentrations")

    if lid == "michaelis_menten":
        (S,) = _cols(x, 1)
        return p["V_max"] * S / (S + p["K_m"])
    if lid == "random_bibi":
        A, B, P, Q = _cols(x, 4)
        a, b = A / p["K_i_A"], B / p["K_m_B"]
        den = 1.0 + a + B / p["K_i_B"] + P / p["K_i_P"] + Q / p["K_i_Q"] + a * b + (P / p["K_m_P"]) * (Q / p["K_i_Q"])
        return p["V_max"] * a * b / den
    if lid == "convenience":
        nS, nP, nA = len(p["K_m_S"]), len(p["K_m_P"]), len(p["k_A"])
        S = x[..., :nS] / np.asarray(p["K_m_S"])
        P = x[..., nS:nS + nP] / np.asarray(p["K_m_P"])
        A = x[..., nS + nP:nS + nP + nA]
        I = x[..., nS + nP + nA:]
        num = p["V_max"] * np.prod(S ** np.asarray(p["alpha_S"]), axis=-1)
        den_s = np.ones(x.shape[:-1])
        for i, a in enumerate(p["alpha_S"]):
            den_s = den_s * sum(S[..., i] ** m for m in range(int(a) + 1))
        den_p = np.ones(x.shape[:-1])
        for j, b in enumerate(p["beta_P"]):
            den_p = den_p * sum(P[..., j] ** m for m in range(int(b) + 1))
        act = np.prod(A / (np.asarray(p["k_A"]) + A), axis=-1) if nA else 1.0
        inh = np.prod(np.asarray(p["k_I"]) / (np.asarray(p["k_I"]) + I), axis=-1) if len(p["k_I"]) else 1.0
        return num / (den_s + den_p) * act * inh
    if lid == "gene_transcription":
        na = len(p["k_a"])
        C_a, C_r = x[..., :na], x[..., na:]
        up = 1.0 + np.sum(np.asarray(p["k_a"]) * C_a, axis=-1)
        down = 1.0 + np.sum(np.asarray(p["k_r"]) * C_r, axis=-1)
        return p["k_t"] * p["n"] * up / down
    if lid == "competitive_product_inhibition":
        S, P = _cols(x, 2)
        return p["V_max"] * S / (S + p["K_m"] * (1.0 + P / p["K_m_P"]))
    if lid == "haldane":
        (S,) = _cols(x, 1)
        return p["V_max"] * S / (S * (1.0 + S / p["K_i"]) + p["K_m"])
    if lid == "hill":
        (S,) = _cols(x, 1)
        Sh = S ** p["h"]
        return p["V_max"] * Sh / (Sh + p["K_m"] ** p["h"])
    if lid == "reversible_hill":
        S, P = _cols(x, 2)
        s, q = S / p["K_m_S"], P / p["K_m_P"]
        return p["V_max"] * s * (s + q) ** (p["h"] - 1.0) / (1.0 + (s + q) ** p["h"])
    if lid == "saturable_cooperative":
        n_i = np.asarray(p["n_i"])
        xn = x**n_i
        return p["V"] * np.prod(xn / (np.asarray(p["K"]) + xn), axis=-1)
    if lid == "monod":
        S, X = _cols(x, 2)
        return p["mu_max"] * S / (S + p["K_m"]) * X
    if lid == "holling1":
        X, P = _cols(x, 2)
        return p["a"] * p["T_s"] * X * P
    if lid == "holling2":
        X, P = _cols(x, 2)
        return p["a"] * p["T_t"] * X / (1.0 + p["a"] * p["b"] * X) * P
    raise ValueError(f"unhandled law {lid!r}")  # pragma: no cover


# explicit approximation targets --------------------------------------

@dataclass(frozen=True)
class Target:
    """A named target function with its sampling box."""

    name: str
    fn: object
    lo: tuple
    hi: tuple

    @property
    def dim(self):
        return len(self.lo)

    def __call__(self, X):
        return self.fn(np.atleast_2d(np.asarray(X, dtype=float)))


def _law_target(law):
    return lambda X: eval_law(law, X)


HALDANE_1D = RateLaw("haldane", {"V_max": 1.0, "K_m": 0.5, "K_i": 1.0})
HILL3_1D = RateLaw("hill", {"V_max": 1.0, "K_m": 0.5, "h": 3.0})
HILL6_1D = RateLaw("hill", {"V_max": 1.0, "K_m": 0.5, "h": 6.0})
# x1 x2 / (1.35 + 0.9 x1 + 1.5 x2 + x1 x2) written in random bi-bi form with P = Q = 0
BISUBSTRATE_MM = RateLaw("random_bibi", {"V_max": 1.0, "K_i_A": 1.5, "K_m_B": 0.9, "K_i_B": 0.9,
                                         "K_i_P": 1.0, "K_i_Q": 1.0, "K_m_P": 1.0})

TARGETS = {
    "haldane": Target("haldane", _law_target(HALDANE_1D), (0.0,), (2.0,)),
    "hill3": Target("hill3", _law_target(HILL3_1D), (0.0,), (2.0,)),
    "hill6": Target("hill6", _law_target(HILL6_1D), (0.0,), (2.0,)),
    "bisubstrate_mm": Target("bisubstrate_mm",
                             lambda X: X[:, 0] * X[:, 1] / (1.35 + 0.9 * X[:, 0] + 1.5 * X[:, 1] + X[:, 0] * X[:, 1]),
                             (0.0, 0.0), (2.0, 2.0)),
    "monod_2d": Target("monod_2d", lambda X: X[:, 0] * X[:, 1] / (2.0 + X[:, 1]), (0.0, 0.0), (2.0, 2.0)),
    "gene_transcription_2d": Target("gene_transcription_2d",
                                    lambda X: (1.0 + X[:, 1]) / (1.0 + 0.25 * X[:, 0]), (0.0, 0.0), (2.0, 2.0)),
}


def sample_dataset(law, lo, hi, count: int, seed: int):
    """Uniform samples over the box [lo, hi]; returns (inputs (count, d), targets (count,)).

    ``law`` is a RateLaw, a Target, or any callable on (N, d) arrays.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if count < 1:
        raise ValueError("count must be >= 1")
    if lo.shape != hi.shape or np.any(hi < lo) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("degenerate sampling box")
    rng = np.random.default_rng(seed)
    X = lo + (hi - lo) * rng.random((count, lo.size))
    fn = (lambda Z: eval_law(law, Z)) if isinstance(law, RateLaw) else law
    y = np.asarray(fn(X), dtype=float).reshape(count)
    return X, y
