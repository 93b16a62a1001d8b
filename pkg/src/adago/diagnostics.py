"""Checks of the analytical claims behind AdaGO on live runs.

Covers the log-sum lemma behind the accumulator bound, the spectral-norm
descent lemma, the GD/OGD contraction factors of the linear network,
empirical convergence-rate exponents, and minibatch noise variance.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import linalg, models
from .data import BatchSchedule, SplitDataset, minibatch_sampler
from .errors import DegenerateInputError, InvalidInputError
from .models import Batch, ParamSet

SCHEMA_VERSION = 1

TRAJECTORY_COLUMNS = (
    "schema_version",
    "seed",
    "t",
    "train_loss",
    "test_loss",
    "grad_norm_f",
    "grad_norm_nuclear",
    "stepsize",
    "v",
    "clamped",
    "floored",
    "wall_time",
)
PARAM_COLUMNS = (
    "schema_version",
    "seed",
    "t",
    "param",
    "stepsize",
    "grad_norm_f",
    "update_norm_f",
    "v",
    "clamped",
    "floored",
)


@dataclass
class StepRecord:
    t: int
    train_loss: float
    test_loss: float = math.nan
    grad_norm_f: float = math.nan
    grad_norm_nuclear: float = math.nan
    stepsize: float = math.nan
    v: float = math.nan
    clamped: bool = False
    floored: bool = False
    wall_time: float = 0.0
    # per-parameter StepReport objects, keyed by parameter name
    params: dict = field(default_factory=dict)


@dataclass
class Trajectory:
    """Logged steps of one run.

    ``grad_norm_nuclear`` is the summed nuclear norm of the matrix-parameter
    gradients at the iterate the step started from; ``stepsize``/``v``/flags
    mirror the first matrix parameter, and the full per-parameter telemetry
    is kept in ``StepRecord.params``.
    """

    records: list[StepRecord] = field(default_factory=list)
    seed: int = 0
    label: str = ""

    def append(self, rec: StepRecord) -> None:
        if self.records and rec.t <= self.records[-1].t:
            raise InvalidInputError("trajectory steps must be strictly increasing")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def param_series(self, name: str, attr: str) -> np.ndarray:
        return np.array([getattr(r.params[name], attr) for r in self.records if name in r.params])

    def param_names(self) -> list[str]:
        return list(self.records[0].params) if self.records else []

    def to_csv(self, path, param_path=None) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRAJECTORY_COLUMNS)
            for r in self.records:
                w.writerow([
                    SCHEMA_VERSION, self.seed, r.t, _fmt(r.train_loss), _fmt(r.test_loss),
                    _fmt(r.grad_norm_f), _fmt(r.grad_norm_nuclear), _fmt(r.stepsize), _fmt(r.v),
                    int(r.clamped), int(r.floored), f"{r.wall_time:.6f}",
                ])
        if param_path is not None:
            with Path(param_path).open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(PARAM_COLUMNS)
                for r in self.records:
                    for name, rep in r.params.items():
                        w.writerow([
                            SCHEMA_VERSION, self.seed, r.t, name, _fmt(rep.stepsize),
                            _fmt(rep.grad_norm_f), _fmt(rep.update_norm_f), _fmt(rep.v_after),
                            int(rep.clamped), int(rep.floored),
                        ])

    @classmethod
    def from_csv(cls, path, param_path=None) -> "Trajectory":
        from .optim import StepReport

        traj = cls(label=Path(path).stem)
        with Path(path).open(newline="") as fh:
            for row in csv.DictReader(fh):
                if int(row["schema_version"]) != SCHEMA_VERSION:
                    raise InvalidInputError(f"unsupported trajectory schema {row['schema_version']}")
                traj.seed = int(row["seed"])
                traj.append(StepRecord(
                    t=int(row["t"]),
                    train_loss=float(row["train_loss"]),
                    test_loss=float(row["test_loss"]),
                    grad_norm_f=float(row["grad_norm_f"]),
                    grad_norm_nuclear=float(row["grad_norm_nuclear"]),
                    stepsize=float(row["stepsize"]),
                    v=float(row["v"]),
                    clamped=bool(int(row["clamped"])),
                    floored=bool(int(row["floored"])),
                    wall_time=float(row["wall_time"]),
                ))
        if param_path is not None:
            by_t = {r.t: r for r in traj.records}
            with Path(param_path).open(newline="") as fh:
                for row in csv.DictReader(fh):
                    by_t[int(row["t"])].params[row["param"]] = StepReport(
                        float(row["stepsize"]), float(row["grad_norm_f"]),
                        float(row["update_norm_f"]), float(row["v"]),
                        bool(int(row["clamped"])), bool(int(row["floored"])),
                    )
        return traj


def _fmt(x: float) -> str:
    return repr(float(x))


class BoundCheck(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    window: tuple[int, int]


def log_sum_bound_check(a) -> BoundCheck:
    """``sum_t a_t / S_t <= ln(S_T / a_1) + 1`` for nonnegative ``a`` with ``a_1 > 0``."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1 or a.size == 0 or not a[0] > 0 or np.any(a < 0) or not np.all(np.isfinite(a)):
        raise InvalidInputError("need a finite nonnegative sequence with a_1 > 0")
    s = np.cumsum(a)
    lhs = float(np.sum(a / s))
    rhs = math.log(s[-1] / a[0]) + 1.0
    return BoundCheck(lhs, rhs, lhs <= rhs + 1e-12)


def accumulator_log_sum(traj: Trajectory, param: str, gamma: float, v0: float) -> tuple[BoundCheck, float]:
    """Log-sum check on AdaGO telemetry with ``a_0 = v0^2``, ``a_t = min(|G_t|^2, gamma^2)``.

    Returns the lemma check on the full sequence and the closed-form bound
    ``ln(gamma^2 T / v0^2) + 1`` for ``sum_{t>=1} a_t / v_t^2``.
    """
    g = traj.param_series(param, "grad_norm_f")
    a = np.minimum(g * g, gamma * gamma)
    seq = np.concatenate([[v0 * v0], a])
    check = log_sum_bound_check(seq)
    return check, math.log(gamma * gamma * len(a) / (v0 * v0)) + 1.0


def accumulator_ratio_sum(traj: Trajectory, param: str, gamma: float) -> float:
    """``sum_t min(|G_t|^2, gamma^2) / v_t^2`` from the logged ``v_t``."""
    g = traj.param_series(param, "grad_norm_f")
    v = traj.param_series(param, "v_after")
    return float(np.sum(np.minimum(g * g, gamma * gamma) / (v * v)))


def param_spectral_norm(direction: dict) -> float:
    """Norm on a parameter tuple: the largest per-block spectral norm.

    Its dual is the sum of per-block nuclear norms, matching the
    nuclear/spectral pairing of the smoothness assumption.
    """
    out = 0.0
    for d in direction.values():
        d = np.asarray(d, dtype=np.float64)
        if d.ndim < 2:
            out = max(out, float(np.linalg.norm(d)))
        else:
            out = max(out, linalg.spectral_norm(d))
    return out


def param_nuclear_norm(grads: dict) -> float:
    out = 0.0
    for g in grads.values():
        g = np.asarray(g, dtype=np.float64)
        out += float(np.linalg.norm(g)) if g.ndim < 2 else linalg.nuclear_norm(g)
    return out


def _shifted(params: ParamSet, direction: dict, step: float) -> ParamSet:
    out = params.copy()
    for name, d in direction.items():
        out.set_value(name, params.value(name) + step * np.asarray(d))
    return out


def _grads_at(model, params: ParamSet, batch: Batch) -> tuple[float, dict]:
    p = params.copy()
    loss = models.loss_and_grad(model, p, batch)
    return loss, {k: v.copy() for k, v in p.grads().items()}


def estimate_lipschitz(model, params: ParamSet, batch: Batch, n_pairs: int = 200, radius: float = 1.0, seed: int = 0) -> float:
    """Largest sampled ratio ``||grad(a) - grad(b)||_* / ||a - b||_2`` near ``params``."""
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_pairs):
        da = {k: radius * rng.standard_normal(p.value.shape) for k, p in params.items()}
        db = {k: radius * rng.standard_normal(p.value.shape) for k, p in params.items()}
        _, ga = _grads_at(model, _shifted(params, da, 1.0), batch)
        _, gb = _grads_at(model, _shifted(params, db, 1.0), batch)
        num = param_nuclear_norm({k: ga[k] - gb[k] for k in ga})
        den = param_spectral_norm({k: da[k] - db[k] for k in da})
        if den > 0:
            best = max(best, num / den)
    return best


def descent_lemma_check(model, params: ParamSet, batch: Batch, direction: dict, step: float, lipschitz: float) -> BoundCheck:
    """``L(p + s d) <= L(p) + s <grad, d> + (L/2) s^2 ||d||_2^2``."""
    loss0, g = _grads_at(model, params, batch)
    loss1 = models.forward(model, _shifted(params, direction, step), batch)[0]
    inner = sum(float(np.sum(g[k] * np.asarray(d))) for k, d in direction.items())
    dn = param_spectral_norm(direction)
    rhs = loss0 + step * inner + 0.5 * lipschitz * (step * dn) ** 2
    return BoundCheck(loss1, rhs, loss1 <= rhs + 1e-12 * max(1.0, abs(rhs)))


def contraction_factor_gd(x, eta: float) -> float:
    """``||I - eta X X^T||_2`` for the (d, J) input matrix ``X``."""
    x = linalg.as_matrix(x, "X")
    return linalg.spectral_norm(np.eye(x.shape[0]) - eta * (x @ x.T))


def ogd_preconditioner(grad) -> np.ndarray:
    """``P = V S V^T + ||G||_2 (I - V V^T)`` so that ``Orth(G) = G P^{-1}``."""
    g = linalg.as_matrix(grad, "gradient")
    if not np.any(g):
        raise DegenerateInputError("the preconditioner needs a nonzero gradient")
    res = linalg.svd_reduced(g)
    v = res.v
    d = g.shape[1]
    return (v * res.sigma) @ v.T + res.sigma[0] * (np.eye(d) - v @ v.T)


def contraction_factor_ogd(x, grad_at_w, eta: float) -> float:
    x = linalg.as_matrix(x, "X")
    p = ogd_preconditioner(grad_at_w)
    return linalg.spectral_norm(np.eye(x.shape[0]) - eta * (x @ x.T) @ np.linalg.inv(p))


def fit_power_law(ts, values, window: tuple[int, int] | None = None) -> RateFit:
    """Least-squares slope of ``ln value`` against ``ln t``."""
    ts = np.asarray(ts, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    ok = vals > 0
    if not np.all(ok):
        warnings.warn(f"dropping {int(np.sum(~ok))} nonpositive metric values from the rate fit")
        ts, vals = ts[ok], vals[ok]
    if ts.size < 2:
        raise InvalidInputError("need at least two positive points for a rate fit")
    lx, ly = np.log(ts), np.log(vals)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    win = window or (int(ts[0]), int(ts[-1]))
    return RateFit(float(slope), float(intercept), r2, win)


def stationarity_curve(traj: Trajectory, metric: str = "avg_nuclear_grad") -> tuple[np.ndarray, np.ndarray]:
    """Prefix metric ``(1/T) sum_{t<=T} ||grad||_*`` (or the running minimum) for every T."""
    t = traj.column("t")
    if t.size == 0 or not np.array_equal(t, np.arange(1, t.size + 1)):
        raise InvalidInputError("rate metrics need a trajectory logged at every step from t=1")
    g = traj.column("grad_norm_nuclear")
    if metric == "avg_nuclear_grad":
        return t, np.cumsum(g) / t
    if metric == "min_nuclear_grad":
        return t, np.minimum.accumulate(g)
    raise InvalidInputError(f"unknown metric {metric!r}")


def rate_slope_fit(traj: Trajectory, metric: str = "avg_nuclear_grad", window: tuple[int, int] | None = None, n_points: int = 20) -> RateFit:
    t, vals = stationarity_curve(traj, metric)
    lo, hi = window or (1, int(t[-1]))
    if lo < 1 or hi > t[-1] or hi <= lo:
        raise InvalidInputError("window must lie within the trajectory")
    pts = np.unique(np.round(np.geomspace(lo, hi, n_points)).astype(int))
    if pts.size < 10:
        raise InvalidInputError("rate fit window needs at least 10 distinct points")
    return fit_power_law(pts, vals[pts - 1], (lo, hi))


def full_gradient(model, params: ParamSet, batch: Batch) -> dict:
    return _grads_at(model, params, batch)[1]


def noise_variance_samples(model, params: ParamSet, dataset: SplitDataset, b: int, n_draws: int, seed: int) -> np.ndarray:
    """Draws of ``||G_b - grad L||_F^2`` over independent minibatches of size ``b``."""
    n = len(dataset.train)
    if not 1 <= b <= n:
        raise InvalidInputError("batch size must lie in [1, n_train]")
    full = full_gradient(model, params, Batch(dataset.train.inputs, dataset.train.targets))
    sched = BatchSchedule("constant", b)
    out = np.empty(n_draws)
    for i in range(n_draws):
        g = full_gradient(model, params, minibatch_sampler(dataset, sched, seed, i + 1))
        out[i] = sum(float(np.sum((g[k] - full[k]) ** 2)) for k in full)
    return out


def noise_variance_estimate(model, params: ParamSet, dataset: SplitDataset, b: int, n_draws: int = 200, seed: int = 0) -> float:
    return float(np.mean(noise_variance_samples(model, params, dataset, b, n_draws, seed)))
