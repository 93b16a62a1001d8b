"""Optimizers for matrix parameters and their vector-parameter companions.

The step functions are pure in the parameter (they return a new array) and
mutate only the optimizer state passed to them. AdaGO differs from Muon in a
single scalar per parameter, the clamped accumulator ``v_sq``, which turns
the constant learning rate into

    alpha_t = max(eps, eta * min(||G_t||, gamma) / v_t),
    v_t^2   = v_{t-1}^2 + min(||G_t||^2, gamma^2).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import linalg
from .errors import ConfigurationError, InvalidInputError
from .models import ParamSet

NORMS = ("frobenius", "spectral", "nuclear")
OPTIMIZERS = ("gd", "ogd", "adam", "adagrad_norm", "muon", "adago", "hybrid_muon", "hybrid_adago")


@dataclass
class OptimizerConfig:
    eta: float = 1e-2
    mu: float = 0.95
    gamma: float = 1e3
    epsilon: float = 1e-6
    v0: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    ns_iters: int = 0
    norm: str = "frobenius"
    # learning rate of the Adam half of a hybrid optimizer; None falls back to eta
    adam_eta: float | None = None

    def __post_init__(self):
        for name in ("eta", "gamma", "v0", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        # epsilon = 0 is allowed only to probe the eta branch in isolation
        if not self.epsilon >= 0:
            raise ConfigurationError("epsilon must be nonnegative")
        if not 0.0 <= self.mu < 1.0:
            raise ConfigurationError("mu must lie in [0, 1)")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1)")
        if self.ns_iters < 0:
            raise ConfigurationError("ns_iters must be nonnegative")
        if self.norm not in NORMS:
            raise ConfigurationError(f"norm must be one of {NORMS}")
        if self.adam_eta is not None and not self.adam_eta > 0:
            raise ConfigurationError("adam_eta must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdaGOState:
    momentum: np.ndarray
    v_sq: float
    step_count: int = 0

    @classmethod
    def init(cls, shape, cfg: OptimizerConfig) -> "AdaGOState":
        return cls(np.zeros(shape), cfg.v0**2)


@dataclass
class MuonState:
    momentum: np.ndarray
    step_count: int = 0

    @classmethod
    def init(cls, shape, cfg: OptimizerConfig | None = None) -> "MuonState":
        return cls(np.zeros(shape))


@dataclass
class AdamState:
    m1: np.ndarray
    m2: np.ndarray
    step_count: int = 0

    @classmethod
    def init(cls, shape, cfg: OptimizerConfig | None = None) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class AdagradNormState:
    v_sq: float
    step_count: int = 0

    @classmethod
    def init(cls, shape, cfg: OptimizerConfig) -> "AdagradNormState":
        return cls(cfg.v0**2)


@dataclass
class StepReport:
    stepsize: float
    grad_norm_f: float
    update_norm_f: float
    v_after: float = math.nan
    clamped: bool = False
    floored: bool = False


class Stepsize(NamedTuple):
    alpha: float
    v_new_sq: float
    clamped: bool
    floored: bool


def _check_shapes(a: np.ndarray, b: np.ndarray, what: str = "gradient") -> None:
    if a.shape != b.shape:
        raise InvalidInputError(f"{what} shape {b.shape} does not match parameter shape {a.shape}")


def _as_2d(x: np.ndarray) -> np.ndarray:
    # vectors and scalars are treated as single-column matrices
    return x.reshape(-1, 1) if x.ndim < 2 else x


def matrix_norm(g: np.ndarray, kind: str = "frobenius") -> float:
    g2 = _as_2d(np.asarray(g, dtype=np.float64))
    if kind == "frobenius":
        return linalg.frobenius_norm(g2)
    if kind == "spectral":
        return linalg.spectral_norm(g2)
    if kind == "nuclear":
        return linalg.nuclear_norm(g2)
    raise ConfigurationError(f"unknown norm {kind!r}")


def _orth(m: np.ndarray, ns_iters: int) -> np.ndarray:
    return linalg.orthogonalize(_as_2d(m), ns_iters).reshape(m.shape)


def momentum_update(state_momentum, grad, mu: float) -> np.ndarray:
    """``mu * M + (1 - mu) * G``."""
    m = np.asarray(state_momentum, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    _check_shapes(m, g)
    if not 0.0 <= mu < 1.0:
        raise InvalidInputError("mu must lie in [0, 1)")
    return mu * m + (1.0 - mu) * g


def adago_stepsize(grad_norm: float, v_prev_sq: float, cfg: OptimizerConfig) -> Stepsize:
    clipped = min(grad_norm, cfg.gamma)
    v_new_sq = v_prev_sq + min(grad_norm * grad_norm, cfg.gamma * cfg.gamma)
    adaptive = cfg.eta * clipped / math.sqrt(v_new_sq)
    floored = cfg.epsilon >= adaptive
    return Stepsize(max(cfg.epsilon, adaptive), v_new_sq, grad_norm > cfg.gamma, floored)


def adago_step(param, grad, state: AdaGOState, cfg: OptimizerConfig):
    """One AdaGO iteration; returns ``(new_param, StepReport)`` and updates ``state``."""
    p = np.asarray(param, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    _check_shapes(p, g)
    _check_shapes(p, state.momentum, "momentum")
    state.momentum = momentum_update(state.momentum, g, cfg.mu)
    gnorm = matrix_norm(g, cfg.norm)
    step = adago_stepsize(gnorm, state.v_sq, cfg)
    state.v_sq = step.v_new_sq
    state.step_count += 1
    gnorm_f = gnorm if cfg.norm == "frobenius" else matrix_norm(g, "frobenius")
    if not np.any(state.momentum):
        # Orth(0) is undefined; a zero momentum buffer is a fixed point
        return p.copy(), StepReport(cfg.epsilon, gnorm_f, 0.0, math.sqrt(state.v_sq), step.clamped, True)
    update = step.alpha * _orth(state.momentum, cfg.ns_iters)
    report = StepReport(
        stepsize=step.alpha,
        grad_norm_f=gnorm_f,
        update_norm_f=linalg.frobenius_norm(_as_2d(update)),
        v_after=math.sqrt(state.v_sq),
        clamped=step.clamped,
        floored=step.floored,
    )
    return p - update, report


def muon_step(param, grad, state: MuonState, cfg: OptimizerConfig):
    """One Muon iteration with constant stepsize ``cfg.eta``."""
    p = np.asarray(param, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    _check_shapes(p, g)
    _check_shapes(p, state.momentum, "momentum")
    state.momentum = momentum_update(state.momentum, g, cfg.mu)
    state.step_count += 1
    gnorm_f = linalg.frobenius_norm(_as_2d(g))
    if not np.any(state.momentum):
        return p.copy(), StepReport(cfg.eta, gnorm_f, 0.0)
    update = cfg.eta * _orth(state.momentum, cfg.ns_iters)
    return p - update, StepReport(cfg.eta, gnorm_f, linalg.frobenius_norm(_as_2d(update)))


def gd_step(param, grad, eta: float) -> np.ndarray:
    p = np.asarray(param, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    _check_shapes(p, g)
    return p - eta * g


def ogd_step(param, grad, eta: float, ns_iters: int = 0) -> np.ndarray:
    """``param - eta * Orth(grad)``; a zero gradient leaves the parameter unchanged."""
    p = np.asarray(param, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    _check_shapes(p, g)
    if not np.any(g):
        return p.copy()
    return p - eta * _orth(g, ns_iters)


def adam_step(param, grad, state: AdamState, cfg: OptimizerConfig, eta: float | None = None) -> np.ndarray:
    """Bias-corrected Adam; ``eta`` overrides ``cfg.eta`` when given."""
    p = np.asarray(param, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    _check_shapes(p, g)
    lr = cfg.eta if eta is None else eta
    state.step_count += 1
    t = state.step_count
    state.m1 = cfg.beta1 * state.m1 + (1.0 - cfg.beta1) * g
    state.m2 = cfg.beta2 * state.m2 + (1.0 - cfg.beta2) * g * g
    m_hat = state.m1 / (1.0 - cfg.beta1**t)
    v_hat = state.m2 / (1.0 - cfg.beta2**t)
    return p - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def adagrad_norm_step(param, grad, state: AdagradNormState, cfg: OptimizerConfig) -> np.ndarray:
    p = np.asarray(param, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    _check_shapes(p, g)
    state.v_sq += float(np.sum(g * g))
    state.step_count += 1
    return p - cfg.eta * g / math.sqrt(state.v_sq)


def _grad_norm_f(g) -> float:
    return float(np.sqrt(np.sum(np.square(g))))


def hybrid_step(params: ParamSet, states: dict, cfg: OptimizerConfig, matrix_rule: str = "adago") -> dict[str, StepReport]:
    """Route matrices to Muon/AdaGO and vectors/scalars to Adam.

    Gradients are read from ``params``; values are updated in place and the
    per-parameter states are created lazily in ``states``.
    """
    if matrix_rule not in ("muon", "adago"):
        raise ConfigurationError("matrix_rule must be 'muon' or 'adago'")
    adam_eta = cfg.adam_eta if cfg.adam_eta is not None else cfg.eta
    reports = {}
    for name, p in params.items():
        if p.kind not in ("matrix", "vector", "scalar"):
            raise ConfigurationError(f"parameter {name!r} is not tagged matrix/vector/scalar")
        if p.grad is None:
            raise ConfigurationError(f"parameter {name!r} has no gradient")
        if p.kind == "matrix":
            if matrix_rule == "adago":
                st = states.setdefault(name, AdaGOState.init(p.value.shape, cfg))
                new, rep = adago_step(p.value, p.grad, st, cfg)
            else:
                st = states.setdefault(name, MuonState.init(p.value.shape))
                new, rep = muon_step(p.value, p.grad, st, cfg)
        else:
            st = states.setdefault(name, AdamState.init(p.value.shape))
            new = adam_step(p.value, p.grad, st, cfg, eta=adam_eta)
            rep = StepReport(adam_eta, _grad_norm_f(p.grad), _grad_norm_f(new - p.value))
        params.set_value(name, new)
        reports[name] = rep
    return reports


@dataclass
class Optimizer:
    """Uniform driver used by the harness: ``step(params)`` updates in place.

    ``gd``, ``ogd``, ``adam``, ``adagrad_norm``, ``muon`` and ``adago`` apply
    one rule to every parameter (vectors become single-column matrices for
    the orthogonalized rules); the ``hybrid_*`` names defer to
    :func:`hybrid_step`.
    """

    name: str
    cfg: OptimizerConfig
    states: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in OPTIMIZERS:
            raise ConfigurationError(f"unknown optimizer {self.name!r}; expected one of {OPTIMIZERS}")

    def step(self, params: ParamSet) -> dict[str, StepReport]:
        if self.name.startswith("hybrid_"):
            return hybrid_step(params, self.states, self.cfg, self.name.split("_", 1)[1])
        cfg = self.cfg
        reports = {}
        for name, p in params.items():
            g = p.grad
            if g is None:
                raise ConfigurationError(f"parameter {name!r} has no gradient")
            gn = _grad_norm_f(g)
            if self.name == "gd":
                new = gd_step(p.value, g, cfg.eta)
                rep = StepReport(cfg.eta, gn, _grad_norm_f(new - p.value))
            elif self.name == "ogd":
                new = ogd_step(p.value, g, cfg.eta, cfg.ns_iters)
                rep = StepReport(cfg.eta, gn, _grad_norm_f(new - p.value))
            elif self.name == "adam":
                st = self.states.setdefault(name, AdamState.init(p.value.shape))
                new = adam_step(p.value, g, st, cfg)
                rep = StepReport(cfg.eta, gn, _grad_norm_f(new - p.value))
            elif self.name == "adagrad_norm":
                st = self.states.setdefault(name, AdagradNormState.init(p.value.shape, cfg))
                new = adagrad_norm_step(p.value, g, st, cfg)
                v = math.sqrt(st.v_sq)
                rep = StepReport(cfg.eta / v, gn, _grad_norm_f(new - p.value), v)
            elif self.name == "muon":
                st = self.states.setdefault(name, MuonState.init(p.value.shape))
                new, rep = muon_step(p.value, g, st, cfg)
            else:
                st = self.states.setdefault(name, AdaGOState.init(p.value.shape, cfg))
                new, rep = adago_step(p.value, g, st, cfg)
            params.set_value(name, new)
            reports[name] = rep
        return reports

    def uses_adago(self, params: ParamSet, name: str) -> bool:
        if self.name == "adago":
            return True
        return self.name == "hybrid_adago" and params[name].kind == "matrix"
