"""Neural network processes: small masked feedforward nets with scalar output."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .autodiff import Var, apply, lift
from .errors import DivergenceError
from .kernels import ACT_CODES
from .optim import AdamState, adam_step

HIDDEN_ACTIVATIONS = ("elu", "relu")
OUTPUT_ACTIVATIONS = ("softplus", "relu", "identity")


@dataclass(frozen=True)
class NnpSpec:
    """Architecture of one process network.

    ``input_mask`` runs over the full system state; ``monotone`` and
    ``input_scale`` run over the selected inputs only. Inputs are divided by
    ``input_scale`` before the first layer.
    """

    input_mask: tuple
    hidden_layers: int = 5
    hidden_width: int = 5
    hidden_activation: str = "elu"
    output_activation: str = "softplus"
    monotone: tuple | None = None
    input_scale: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "input_mask", tuple(bool(m) for m in self.input_mask))
        if self.monotone is not None:
            object.__setattr__(self, "monotone", tuple(bool(m) for m in self.monotone))
        if self.input_scale is not None:
            object.__setattr__(self, "input_scale", tuple(float(s) for s in self.input_scale))
        self.validate()

    def validate(self):
        if self.input_dim < 1:
            raise ValueError("input_mask selects no inputs")
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValueError("need at least one hidden layer of width >= 1")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden_activation must be one of {HIDDEN_ACTIVATIONS}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")
        if self.monotone is not None and len(self.monotone) != self.input_dim:
            raise ValueError("monotone must have one flag per selected input")
        if self.input_scale is not None:
            if len(self.input_scale) != self.input_dim:
                raise ValueError("input_scale must have one entry per selected input")
            if any(not (s > 0.0 and math.isfinite(s)) for s in self.input_scale):
                raise ValueError("input_scale entries must be positive and finite")

    @property
    def input_dim(self):
        return sum(self.input_mask)

    @property
    def state_dim(self):
        return len(self.input_mask)

    @property
    def input_indices(self):
        return np.flatnonzero(self.input_mask)

    @property
    def layer_sizes(self):
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [1]

    @property
    def n_params(self):
        sizes = self.layer_sizes
        return sum(sizes[i + 1] * sizes[i] + sizes[i + 1] for i in range(len(sizes) - 1))

    @property
    def any_monotone(self):
        return self.monotone is not None and any(self.monotone)

    def to_dict(self):
        return {
            "input_mask": list(self.input_mask),
            "hidden_layers": self.hidden_layers,
            "hidden_width": self.hidden_width,
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "monotone": None if self.monotone is None else list(self.monotone),
            "input_scale": None if self.input_scale is None else list(self.input_scale),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_mask=tuple(d["input_mask"]),
            hidden_layers=int(d["hidden_layers"]),
            hidden_width=int(d["hidden_width"]),
            hidden_activation=d.get("hidden_activation", "elu"),
            output_activation=d.get("output_activation", "softplus"),
            monotone=None if d.get("monotone") is None else tuple(d["monotone"]),
            input_scale=None if d.get("input_scale") is None else tuple(d["input_scale"]),
        )


@dataclass
class Nnp:
    spec: NnpSpec
    weights: list  # per layer, shape (fan_out, fan_in)
    biases: list
    seed: int | None = None

    @property
    def params(self):
        """Flat parameter vector: per layer, row-major weights then biases."""
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_params(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.spec.n_params,):
            raise ValueError(f"expected {self.spec.n_params} parameters, got {flat.shape}")
        sizes = self.spec.layer_sizes
        p = 0
        weights, biases = [], []
        for i in range(len(sizes) - 1):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            weights.append(flat[p:p + fan_out * fan_in].reshape(fan_out, fan_in).copy())
            p += fan_out * fan_in
            biases.append(flat[p:p + fan_out].copy())
            p += fan_out
        self.weights, self.biases = weights, biases

    @classmethod
    def from_params(cls, spec, flat, seed=None):
        net = cls(spec, [], [], seed)
        net.set_params(flat)
        return net

    def copy(self):
        return Nnp(self.spec, [W.copy() for W in self.weights], [b.copy() for b in self.biases], self.seed)

    def effective_weights(self):
        """Weights as used in evaluation (monotone entries squared)."""
        out = []
        for layer, W in enumerate(self.weights):
            if layer == 0 and self.spec.monotone is not None:
                sq = np.array(self.spec.monotone)[None, :]
                out.append(np.where(sq, W * W, W))
            elif layer > 0 and self.spec.any_monotone:
                out.append(W * W)
            else:
                out.append(W.copy())
        return out

    # kernel layout for a single network
    def arch_row(self, theta_off=0, in_off=0):
        s = self.spec
        return np.array([s.input_dim, s.hidden_layers, s.hidden_width,
                         ACT_CODES[s.hidden_activation], ACT_CODES[s.output_activation],
                         theta_off, in_off, int(s.any_monotone)], dtype=np.int64)

    def mono_flags(self):
        if self.spec.monotone is None:
            return np.zeros(self.spec.input_dim, dtype=np.int64)
        return np.array(self.spec.monotone, dtype=np.int64)

    def scales(self):
        if self.spec.input_scale is None:
            return np.ones(self.spec.input_dim)
        return np.array(self.spec.input_scale)

    def network_inputs(self, X):
        """Select and scale the masked coordinates of full states X (N, n)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.spec.state_dim:
            raise ValueError(f"state has dimension {X.shape[1]}, expected {self.spec.state_dim}")
        return X[:, self.spec.input_indices] / self.scales()

    def __call__(self, state):
        return forward(self, state)


def init(spec: NnpSpec, seed: int) -> Nnp:
    """Draw every layer's weights and biases from U(-d^-1/2, d^-1/2), d = fan-in."""
    spec.validate()
    rng = np.random.default_rng(seed)
    sizes = spec.layer_sizes
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        bound = sizes[i] ** -0.5
        weights.append(rng.uniform(-bound, bound, size=(sizes[i + 1], sizes[i])))
        biases.append(rng.uniform(-bound, bound, size=sizes[i + 1]))
    return Nnp(spec, weights, biases, seed)


def forward_batch(nnp: Nnp, X) -> np.ndarray:
    """Process rates for a batch of full states X of shape (N, n)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != nnp.spec.state_dim:
        raise ValueError(f"state has dimension {X.shape[1]}, expected {nnp.spec.state_dim}")
    backend = kernels.get_backend()
    arch = nnp.arch_row()[None, :]
    idx = nnp.spec.input_indices.astype(np.int64)
    return backend.process_rates(arch, idx, nnp.scales(), nnp.mono_flags(), nnp.params, X)[:, 0]


def forward(nnp: Nnp, state) -> float:
    state = np.asarray(state, dtype=float)
    if state.ndim != 1:
        raise ValueError("forward takes a single state vector; use forward_batch for batches")
    return float(forward_batch(nnp, state[None, :])[0])


_ACT_OPS = {"elu": "elu", "relu": "relu", "softplus": "softplus"}


def forward_vars(nnp: Nnp, state_vars, param_vars) -> Var:
    """Record the forward pass on a tape. ``param_vars`` follows ``nnp.params``."""
    spec = nnp.spec
    h = [state_vars[i] / lift(s, tape=state_vars[i].tape) if s != 1.0 else state_vars[i]
         for i, s in zip(spec.input_indices, nnp.scales())]
    sizes = spec.layer_sizes
    p = 0
    for layer in range(len(sizes) - 1):
        fan_in, fan_out = sizes[layer], sizes[layer + 1]
        last = layer == len(sizes) - 2
        act = spec.output_activation if last else spec.hidden_activation
        nxt = []
        for o in range(fan_out):
            acc = param_vars[p + fan_out * fan_in + o]
            for i in range(fan_in):
                w = param_vars[p + o * fan_in + i]
                squared = (layer == 0 and spec.monotone is not None and spec.monotone[i]) or (
                    layer > 0 and spec.any_monotone)
                if squared:
                    w = w * w
                acc = acc + w * h[i]
            nxt.append(acc if act == "identity" else apply(_ACT_OPS[act], acc))
        h = nxt
        p += fan_out * fan_in + fan_out
    return h[0]


@dataclass
class FitResult:
    nnp: Nnp
    loss: float
    history: list = field(default_factory=list)
    best_iteration: int = 0


def fit_surface(nnp: Nnp, inputs, targets, train) -> FitResult:
    """Full-batch Adam on mean squared error; returns the best iterate.

    ``inputs`` are full state vectors (N, n); ``train`` supplies ``lr``,
    ``beta1``, ``beta2``, ``eps`` and ``epochs`` (iterations).
    """
    X = nnp.network_inputs(inputs)
    y = np.asarray(targets, dtype=float).ravel()
    if X.shape[0] == 0 or y.shape[0] != X.shape[0]:
        raise ValueError("need a nonempty set of (input, target) pairs")
    backend = kernels.get_backend()
    arch = nnp.arch_row()
    mono = nnp.mono_flags()
    theta = nnp.params
    state = AdamState.zeros(theta.size)
    best_theta, best_loss, best_it = theta.copy(), math.inf, 0
    history = []
    for it in range(int(train.epochs) + 1):
        loss, grad = backend.mlp_loss_grad(theta, arch, mono, X, y)
        if not math.isfinite(loss):
            raise DivergenceError(it, history)
        history.append(loss)
        if loss < best_loss:
            best_theta, best_loss, best_it = theta.copy(), loss, it
        if it == int(train.epochs):
            break
        theta, state = adam_step(theta, grad, state, train.lr, train.beta1, train.beta2, train.eps)
    return FitResult(Nnp.from_params(nnp.spec, best_theta, nnp.seed), float(best_loss), history, best_it)
