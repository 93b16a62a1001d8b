"""Small differentiable models with hand-written backprop.

Two architectures are provided: the one-layer linear network used for the
GD/OGD comparison (summed half squared error, so that the gradient is
exactly ``(W - W_star) X X^T``) and a two-layer MLP with GeLU activation and
bias vectors, trained with averaged MSE or softmax cross-entropy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigurationError, InvalidInputError, StaleCacheError

PARAM_KINDS = ("matrix", "vector", "scalar")
_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


@dataclass
class Param:
    kind: str
    value: np.ndarray
    grad: np.ndarray | None = None


class ParamSet:
    """Named parameters, each tagged ``matrix``, ``vector`` or ``scalar``.

    Writes go through :meth:`set_value`, which bumps :attr:`version` so that
    forward caches built from older values are detected as stale.
    """

    def __init__(self, entries: dict[str, Param] | None = None):
        self._entries: dict[str, Param] = {}
        self.version = 0
        for name, p in (entries or {}).items():
            self.add(name, p.kind, p.value)

    def add(self, name: str, kind: str, value) -> None:
        if kind not in PARAM_KINDS:
            raise ConfigurationError(f"parameter {name!r} has unknown kind {kind!r}")
        arr = np.array(value, dtype=np.float64)
        expected_ndim = {"matrix": 2, "vector": 1, "scalar": 0}[kind]
        if arr.ndim != expected_ndim:
            raise InvalidInputError(f"{kind} parameter {name!r} must have ndim {expected_ndim}")
        self._entries[name] = Param(kind, arr, np.zeros_like(arr))
        self.version += 1

    def __getitem__(self, name: str) -> Param:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def value(self, name: str) -> np.ndarray:
        return self._entries[name].value

    def grad(self, name: str) -> np.ndarray:
        return self._entries[name].grad

    def set_value(self, name: str, value) -> None:
        p = self._entries[name]
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != p.value.shape:
            raise InvalidInputError(
                f"shape mismatch for {name!r}: {arr.shape} != {p.value.shape}"
            )
        p.value = arr.copy()
        self.version += 1

    def set_grad(self, name: str, grad) -> None:
        p = self._entries[name]
        g = np.asarray(grad, dtype=np.float64)
        if g.shape != p.value.shape:
            raise InvalidInputError(f"gradient shape mismatch for {name!r}")
        p.grad = g

    def grads(self) -> dict[str, np.ndarray]:
        return {k: p.grad for k, p in self._entries.items()}

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, p in self._entries.items():
            out.add(name, p.kind, p.value)
            out._entries[name].grad = None if p.grad is None else p.grad.copy()
        return out


@dataclass
class Batch:
    """Inputs of shape (b, d_in) with regression targets (b, d_out) or int labels (b,).

    ``scale`` multiplies summed losses so a minibatch gradient is an unbiased
    estimate of the full-set gradient (n_train / b); averaged losses ignore it.
    """

    inputs: np.ndarray
    targets: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets)
        if self.inputs.ndim != 2:
            raise InvalidInputError("batch inputs must be 2-D")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise InvalidInputError("inputs and targets must have the same number of rows")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class ModelSpec:
    architecture: str = "mlp"  # "linear" or "mlp"
    d_in: int = 20
    d_out: int = 20
    hidden: int = 100
    activation: str = "gelu"
    loss: str = "mse"

    def __post_init__(self):
        if self.architecture not in ("linear", "mlp"):
            raise ConfigurationError(f"unknown architecture {self.architecture!r}")
        if self.activation not in ("gelu", "identity"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.loss not in ("mse", "cross_entropy"):
            raise ConfigurationError(f"unknown loss {self.loss!r}")
        if min(self.d_in, self.d_out, self.hidden) < 1:
            raise ConfigurationError("model dimensions must be positive")
        if self.architecture == "linear" and self.loss != "mse":
            raise ConfigurationError("the linear network is trained with squared error only")

    def build(self) -> "LinearNet | MLP":
        if self.architecture == "linear":
            return LinearNet(self.d_in, self.d_out)
        return MLP(self.d_in, self.hidden, self.d_out, self.activation, self.loss)


@dataclass
class Cache:
    version: int
    params_id: int
    data: dict = field(default_factory=dict)


def gelu(x):
    """Tanh-approximated GeLU."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + np.tanh(_GELU_K * (x + _GELU_C * (x * x * x))))


def gelu_prime(x):
    x = np.asarray(x, dtype=np.float64)
    th = np.tanh(_GELU_K * (x + _GELU_C * (x * x * x)))
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * _GELU_K * (1.0 + 3.0 * _GELU_C * x * x)


def cross_entropy(logits, labels):
    """Batch-averaged softmax cross-entropy and its gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim != 1 or y.shape[0] != z.shape[0]:
        raise InvalidInputError("labels must be a vector with one entry per row of logits")
    if np.any(y < 0) or np.any(y >= z.shape[1]):
        raise InvalidInputError("label out of range")
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.sum(np.exp(shifted), axis=1))
    b = z.shape[0]
    loss = float(np.mean(lse - shifted[np.arange(b), y]))
    probs = np.exp(shifted - lse[:, None])
    probs[np.arange(b), y] -= 1.0
    return loss, probs / b


class LinearNet:
    """``f(x) = W x`` with loss ``0.5 * scale * sum_j ||W x_j - y_j||^2``."""

    spec_name = "linear"

    def __init__(self, d_in: int, d_out: int):
        self.d_in = d_in
        self.d_out = d_out

    def init_params(self, rng: np.random.Generator | None = None, scale: float = 0.0) -> ParamSet:
        ps = ParamSet()
        w = np.zeros((self.d_out, self.d_in))
        if rng is not None and scale > 0.0:
            w = scale * rng.standard_normal((self.d_out, self.d_in))
        ps.add("W", "matrix", w)
        return ps

    def _check(self, params: ParamSet, batch: Batch):
        if "W" not in params or params.value("W").shape != (self.d_out, self.d_in):
            raise InvalidInputError("linear model expects a (d_out, d_in) matrix 'W'")
        if batch.inputs.shape[1] != self.d_in:
            raise InvalidInputError(f"expected inputs with {self.d_in} columns")
        if batch.targets.ndim != 2 or batch.targets.shape[1] != self.d_out:
            raise InvalidInputError(f"expected targets with {self.d_out} columns")

    def forward(self, params: ParamSet, batch: Batch):
        self._check(params, batch)
        resid = batch.inputs @ params.value("W").T - batch.targets
        loss = 0.5 * batch.scale * float(np.sum(resid * resid))
        return loss, Cache(params.version, id(params), {"resid": resid, "batch": batch})

    def backward(self, params: ParamSet, cache: Cache) -> None:
        _check_cache(params, cache)
        b = cache.data["batch"]
        params.set_grad("W", b.scale * (cache.data["resid"].T @ b.inputs))


class MLP:
    """Two-layer perceptron ``W2 act(W1 x + b1) + b2``."""

    spec_name = "mlp"

    def __init__(self, d_in: int, hidden: int, d_out: int, activation: str = "gelu", loss: str = "mse"):
        self.d_in = d_in
        self.hidden = hidden
        self.d_out = d_out
        self.activation = activation
        self.loss = loss

    def init_params(self, rng: np.random.Generator) -> ParamSet:
        # uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual dense-layer default
        ps = ParamSet()
        lim1 = 1.0 / math.sqrt(self.d_in)
        lim2 = 1.0 / math.sqrt(self.hidden)
        ps.add("W1", "matrix", rng.uniform(-lim1, lim1, (self.hidden, self.d_in)))
        ps.add("b1", "vector", rng.uniform(-lim1, lim1, self.hidden))
        ps.add("W2", "matrix", rng.uniform(-lim2, lim2, (self.d_out, self.hidden)))
        ps.add("b2", "vector", rng.uniform(-lim2, lim2, self.d_out))
        return ps

    def _act(self, z):
        return gelu(z) if self.activation == "gelu" else z

    def _act_prime(self, z):
        return gelu_prime(z) if self.activation == "gelu" else np.ones_like(z)

    def predict(self, params: ParamSet, inputs) -> np.ndarray:
        z1 = np.asarray(inputs) @ params.value("W1").T + params.value("b1")
        return self._act(z1) @ params.value("W2").T + params.value("b2")

    def forward(self, params: ParamSet, batch: Batch):
        for name, shape in (
            ("W1", (self.hidden, self.d_in)),
            ("b1", (self.hidden,)),
            ("W2", (self.d_out, self.hidden)),
            ("b2", (self.d_out,)),
        ):
            if name not in params or params.value(name).shape != shape:
                raise InvalidInputError(f"MLP parameter {name!r} missing or not of shape {shape}")
        if batch.inputs.shape[1] != self.d_in:
            raise InvalidInputError(f"expected inputs with {self.d_in} columns")
        z1 = batch.inputs @ params.value("W1").T + params.value("b1")
        h = self._act(z1)
        out = h @ params.value("W2").T + params.value("b2")
        if self.loss == "mse":
            if batch.targets.shape != out.shape:
                raise InvalidInputError("targets shape does not match model output")
            diff = out - batch.targets
            loss = float(np.mean(diff * diff))
            dout = 2.0 * diff / diff.size
        else:
            loss, dout = cross_entropy(out, batch.targets)
        data = {"x": batch.inputs, "z1": z1, "h": h, "dout": dout}
        return loss, Cache(params.version, id(params), data)

    def backward(self, params: ParamSet, cache: Cache) -> None:
        _check_cache(params, cache)
        d = cache.data
        dout = d["dout"]
        params.set_grad("W2", dout.T @ d["h"])
        params.set_grad("b2", dout.sum(axis=0))
        dz1 = (dout @ params.value("W2")) * self._act_prime(d["z1"])
        params.set_grad("W1", dz1.T @ d["x"])
        params.set_grad("b1", dz1.sum(axis=0))


def _check_cache(params: ParamSet, cache: Cache) -> None:
    if cache.params_id != id(params) or cache.version != params.version:
        raise StaleCacheError("forward cache does not belong to the current parameter values")


def forward(model, params: ParamSet, batch: Batch):
    loss, cache = model.forward(params, batch)
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    return loss, cache


def backward(model, params: ParamSet, cache: Cache) -> None:
    model.backward(params, cache)


def loss_and_grad(model, params: ParamSet, batch: Batch) -> float:
    """Forward and backward in one call; gradients land in ``params``."""
    loss, cache = model.forward(params, batch)
    model.backward(params, cache)
    return loss


def _loss_at(model, params: ParamSet, batch: Batch) -> float:
    return model.forward(params, batch)[0]


def finite_difference_entry(model, params: ParamSet, batch: Batch, name: str, index, h: float = 1e-6) -> float:
    """Central difference for one coordinate, step ``h * (1 + |theta|)``."""
    if h <= 0:
        raise InvalidInputError("h must be positive")
    probe = params.copy()
    base = probe.value(name).copy()
    theta = float(base[index])
    step = h * (1.0 + abs(theta))
    plus = base.copy()
    plus[index] = theta + step
    minus = base.copy()
    minus[index] = theta - step
    probe.set_value(name, plus)
    lp = _loss_at(model, probe, batch)
    probe.set_value(name, minus)
    lm = _loss_at(model, probe, batch)
    return (lp - lm) / (plus[index] - minus[index])


def finite_difference_gradient(model, params: ParamSet, batch: Batch, h: float = 1e-6) -> dict[str, np.ndarray]:
    """Central-difference gradient for every coordinate of every parameter."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p.value)
        for index in np.ndindex(p.value.shape):
            g[index] = finite_difference_entry(model, params, batch, name, index, h)
        out[name] = g
    return out
