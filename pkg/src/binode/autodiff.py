"""Scalar reverse-mode automatic differentiation.

A :class:`Tape` records every :class:`Var` created while it is active, in
creation order, so the node list is already a topological order. The tape is
rebuilt for every forward pass.

This engine is deliberately scalar and simple. It is the reference used to
check the batched gradient kernels in :mod:`binode.kernels`, and it is what
:func:`binode.odeint.rollout` records into when handed a tape.
"""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "EvaluationError",
    "Var",
    "Tape",
    "lift",
    "apply",
    "backward",
    "OPS",
    "softplus",
    "softplus_grad",
    "elu",
    "elu_grad",
]


class EvaluationError(ValueError):
    """Raised when an operation is evaluated outside its domain."""

    def __init__(self, message: str, node_id: int | None = None):
        super().__init__(f"{message} (node {node_id})")
        self.node_id = node_id


# scalar activations shared with the kernels; thresholds keep exp() finite
def softplus(x: float) -> float:
    if x > 30.0:
        return x
    if x < -30.0:
        return math.exp(x)
    return math.log1p(math.exp(x))


def softplus_grad(x: float) -> float:
    if x > 30.0:
        return 1.0
    if x < -30.0:
        return math.exp(x)
    return 1.0 / (1.0 + math.exp(-x))


def elu(x: float) -> float:
    return x if x >= 0.0 else math.expm1(x)


def elu_grad(x: float) -> float:
    return 1.0 if x >= 0.0 else math.exp(x)


class Var:
    """A node of the computation graph."""

    __slots__ = ("value", "adjoint", "op", "parents", "partials", "id", "tape", "is_param")

    def __init__(self, value, op="leaf", parents=(), partials=(), tape=None, is_param=False):
        self.value = float(value)
        self.adjoint = 0.0
        self.op = op
        self.parents = tuple(parents)
        self.partials = tuple(partials)
        self.tape = tape
        self.is_param = is_param
        self.id = tape._register(self) if tape is not None else -1

    def __repr__(self):
        return f"Var(value={self.value!r}, adjoint={self.adjoint!r}, op={self.op!r})"

    # operator sugar; plain numbers are lifted as constants on the same tape
    def _coerce(self, other):
        if isinstance(other, Var):
            return other
        return lift(other, tape=self.tape)

    def __add__(self, other):
        return apply("add", self, self._coerce(other))

    def __radd__(self, other):
        return apply("add", self._coerce(other), self)

    def __sub__(self, other):
        return apply("sub", self, self._coerce(other))

    def __rsub__(self, other):
        return apply("sub", self._coerce(other), self)

    def __mul__(self, other):
        return apply("mul", self, self._coerce(other))

    def __rmul__(self, other):
        return apply("mul", self._coerce(other), self)

    def __truediv__(self, other):
        return apply("div", self, self._coerce(other))

    def __rtruediv__(self, other):
        return apply("div", self._coerce(other), self)

    def __neg__(self):
        return apply("neg", self)

    def __pow__(self, other):
        return apply("pow", self, self._coerce(other))


class Tape:
    """Ordered node storage plus the index set of free parameters."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.params: list[Var] = []

    def __len__(self):
        return len(self.nodes)

    def _register(self, var: Var) -> int:
        self.nodes.append(var)
        if var.is_param:
            self.params.append(var)
        return len(self.nodes) - 1

    def zero_adjoints(self):
        for node in self.nodes:
            node.adjoint = 0.0


def lift(value, tape: Tape | None = None, param: bool = False) -> Var:
    """Create a leaf node. ``param=True`` marks it as a free parameter."""
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"cannot lift non-finite value {value!r}")
    return Var(value, "leaf", tape=tape, is_param=param)


def _arity(op):
    return 1 if op in ("exp", "ln", "neg", "relu", "elu", "softplus") else 2


def _evaluate(op, vals, node_id):
    """Return (value, local partials) for ``op`` at ``vals``."""
    if op == "add":
        a, b = vals
        return a + b, (1.0, 1.0)
    if op == "sub":
        a, b = vals
        return a - b, (1.0, -1.0)
    if op == "mul":
        a, b = vals
        return a * b, (b, a)
    if op == "div":
        a, b = vals
        if b == 0.0:
            raise EvaluationError("division by zero", node_id)
        return a / b, (1.0 / b, -a / (b * b))
    if op == "neg":
        return -vals[0], (-1.0,)
    if op == "exp":
        y = math.exp(vals[0])
        return y, (y,)
    if op == "ln":
        a = vals[0]
        if a <= 0.0:
            raise EvaluationError(f"ln of non-positive value {a!r}", node_id)
        return math.log(a), (1.0 / a,)
    if op == "pow":
        a, b = vals
        if a == 0.0 and b < 0.0:
            raise EvaluationError("zero raised to a negative power", node_id)
        if a < 0.0 and b != int(b):
            raise EvaluationError("negative base with non-integer exponent", node_id)
        y = a**b
        da = b * a ** (b - 1.0) if b != 0.0 else 0.0
        db = y * math.log(a) if a > 0.0 else 0.0
        return y, (da, db)
    if op == "relu":
        a = vals[0]
        return (a if a > 0.0 else 0.0), ((1.0 if a > 0.0 else 0.0),)
    if op == "elu":
        a = vals[0]
        return elu(a), (elu_grad(a),)
    if op == "softplus":
        a = vals[0]
        return softplus(a), (softplus_grad(a),)
    raise ValueError(f"unknown op {op!r}")


OPS = ("add", "mul", "sub", "div", "exp", "ln", "pow", "neg", "relu", "elu", "softplus")


def apply(op: str, *args: Var) -> Var:
    """Evaluate ``op`` on ``args`` and record the node on their tape."""
    if op not in OPS:
        raise ValueError(f"unknown op {op!r}")
    if len(args) != _arity(op):
        raise ValueError(f"{op} takes {_arity(op)} argument(s), got {len(args)}")
    tape = next((a.tape for a in args if a.tape is not None), None)
    node_id = len(tape) if tape is not None else -1
    value, partials = _evaluate(op, [a.value for a in args], node_id)
    return Var(value, op, parents=args, partials=partials, tape=tape)


def backward(tape: Tape, output: Var, seed: float = 1.0) -> np.ndarray:
    """Accumulate d(output)/d(node) into every adjoint on ``tape``.

    Returns the gradient with respect to the tape's parameters, in the order
    they were lifted. Adjoints are reset first, so repeated calls agree.
    """
    if output.tape is not tape or output.id < 0 or tape.nodes[output.id] is not output:
        raise ValueError("output is not a node of this tape")
    tape.zero_adjoints()
    output.adjoint = seed
    for node in reversed(tape.nodes[: output.id + 1]):
        adj = node.adjoint
        if adj == 0.0:
            continue
        for parent, partial in zip(node.parents, node.partials):
            parent.adjoint += adj * partial
    return np.array([p.adjoint for p in tape.params])


# helpers for building graphs from sequences of Vars
def vsum(terms: Sequence[Var]) -> Var:
    """Left-to-right sum, matching the accumulation order of the kernels."""
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc


def lift_all(values: Iterable[float], tape: Tape, param: bool = False) -> list[Var]:
    return [lift(v, tape=tape, param=param) for v in values]
