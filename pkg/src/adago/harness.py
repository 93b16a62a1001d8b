"""Experiment runner: scenarios, training loops, grid search and presets.

Every run is a pure function of its :class:`ExperimentConfig`. Seeds select
the dataset draw, the initialization and the minibatch stream; the summary
CSV carries no timing information, so rerunning a config reproduces it byte
for byte on the same platform.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data, linalg, models
from .data import BatchSchedule, DatasetSpec
from .diagnostics import SCHEMA_VERSION, StepRecord, Trajectory
from .errors import ConfigurationError
from .models import Batch, ModelSpec
from .optim import OPTIMIZERS, Optimizer, OptimizerConfig

log = logging.getLogger(__name__)

OUT_ENV = "ADAGO_OUT"
DIVERGENCE_LOSS = 1e12
SCENARIOS = (
    "linear_appendix_a",
    "grf_regression",
    "blob_classification",
    "theorem1_sweep",
    "theorem2_sweep",
    "theorem3_sweep",
)

# best learning rates reported for the regression and classification tasks
TUNED = {
    "regression": {
        "adam": {"eta": 1e-2},
        "muon": {"eta": 5e-3},
        "adago": {"eta": 0.5, "epsilon": 5e-3},
    },
    "classification": {
        "adam": {"eta": 3e-4},
        "muon": {"eta": 2e-3},
        "adago": {"eta": 5e-2, "epsilon": 5e-4},
    },
}

SUMMARY_COLUMNS = (
    "schema_version", "scenario", "optimizer", "eta", "mu", "epsilon", "gamma", "v0",
    "ns_iters", "adam_eta", "batch", "steps", "seeds", "n_ok", "n_diverged",
    "final_train_loss_mean", "final_train_loss_std", "final_test_loss_mean",
    "final_test_loss_std", "best",
)


@dataclass
class ExperimentConfig:
    scenario: str = "grf_regression"
    optimizer: str = "hybrid_adago"
    opt: OptimizerConfig = field(default_factory=OptimizerConfig)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    steps: int = 1000
    seeds: tuple[int, ...] = (0,)
    batch: BatchSchedule = field(default_factory=BatchSchedule)
    log_every: int = 1
    out: str | None = None
    # evaluate the full-batch gradient at every logged step for rate metrics
    full_grad_metrics: bool = False
    # draw a fresh dataset per seed (dataset.seed + seed) instead of sharing one
    vary_data: bool = True
    init_scale: float = 0.0  # linear network only; 0 starts from W = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.steps < 1:
            raise ConfigurationError("steps must be at least 1")
        if len(self.seeds) < 1:
            raise ConfigurationError("at least one seed is required")
        if self.log_every < 1:
            raise ConfigurationError("log_every must be positive")
        self.seeds = tuple(int(s) for s in self.seeds)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["batch"] = str(self.batch)
        d["seeds"] = list(self.seeds)
        return d


@dataclass
class SummaryRow:
    scenario: str
    optimizer: str
    opt: OptimizerConfig
    batch: str
    steps: int
    seeds: tuple[int, ...]
    final_train: dict[int, float]
    final_test: dict[int, float]
    diverged: list[int]
    best: bool = False

    def _stats(self, values: dict[int, float]) -> tuple[float, float]:
        ok = [values[s] for s in self.seeds if s not in self.diverged and s in values]
        if not ok:
            return math.nan, math.nan
        return float(np.mean(ok)), float(np.std(ok))

    @property
    def n_ok(self) -> int:
        return len(self.seeds) - len(self.diverged)

    @property
    def train_mean(self) -> float:
        return self._stats(self.final_train)[0]

    @property
    def test_mean(self) -> float:
        return self._stats(self.final_test)[0]

    def as_row(self) -> list[str]:
        tr_m, tr_s = self._stats(self.final_train)
        te_m, te_s = self._stats(self.final_test)
        o = self.opt
        return [
            str(SCHEMA_VERSION), self.scenario, self.optimizer, repr(o.eta), repr(o.mu),
            repr(o.epsilon), repr(o.gamma), repr(o.v0), str(o.ns_iters),
            "" if o.adam_eta is None else repr(o.adam_eta), self.batch, str(self.steps),
            " ".join(map(str, self.seeds)), str(self.n_ok), str(len(self.diverged)),
            repr(tr_m), repr(tr_s), repr(te_m), repr(te_s), str(int(self.best)),
        ]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trajectories: dict[int, Trajectory]
    summary: SummaryRow


def default_output_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def scenario_config(scenario: str, optimizer: str = "hybrid_adago", full_shape: bool = False, **overrides) -> ExperimentConfig:
    """Desk-scale defaults for each scenario; keyword overrides replace fields.

    ``full_shape`` switches the regression task to 10 000 samples with
    50-dimensional inputs and outputs.
    """
    if scenario in ("linear_appendix_a", "theorem1_sweep", "theorem2_sweep", "theorem3_sweep"):
        # J = 200 training samples, d = 20 inputs, 10 outputs
        ds = DatasetSpec("linear_regression", n_samples=250, d_in=20, d_out=10, test_fraction=0.2)
        base = ExperimentConfig(
            scenario=scenario, optimizer=optimizer, dataset=ds,
            model=ModelSpec("linear", 20, 10), batch=BatchSchedule("full"), steps=1000,
            opt=OptimizerConfig(eta=0.1, mu=0.0),
        )
    elif scenario == "grf_regression":
        n, d = (10_000, 50) if full_shape else (2000, 20)
        ds = DatasetSpec("grf_regression", n_samples=n, d_in=d, d_out=d, test_fraction=0.1)
        opt = _tuned_opt(optimizer, "regression")
        base = ExperimentConfig(
            scenario=scenario, optimizer=optimizer, dataset=ds,
            model=ModelSpec("mlp", d, d, 100, "gelu", "mse"),
            batch=BatchSchedule("constant", 128), steps=1000, opt=opt,
        )
    elif scenario == "blob_classification":
        ds = DatasetSpec("gaussian_blobs", n_samples=2000, d_in=20, d_out=10, test_fraction=0.1)
        base = ExperimentConfig(
            scenario=scenario, optimizer=optimizer, dataset=ds,
            model=ModelSpec("mlp", 20, 10, 100, "gelu", "cross_entropy"),
            batch=BatchSchedule("constant", 128), steps=epochs_to_steps(20, ds.n_train, 128),
            opt=_tuned_opt(optimizer, "classification"),
        )
    else:
        raise ConfigurationError(f"unknown scenario {scenario!r}")
    return replace(base, **overrides)


def _tuned_opt(optimizer: str, task: str) -> OptimizerConfig:
    t1 = TUNED[task]
    kind = optimizer.replace("hybrid_", "")
    hp = dict(t1.get(kind, {"eta": t1["adam"]["eta"]}))
    return OptimizerConfig(mu=0.95, beta1=0.9, beta2=0.95, adam_eta=t1["adam"]["eta"], **hp)


def epochs_to_steps(epochs: int, n_train: int, batch_size: int) -> int:
    return epochs * math.ceil(n_train / batch_size)


def _build(cfg: ExperimentConfig, seed: int):
    spec = replace(cfg.dataset, seed=cfg.dataset.seed + seed) if cfg.vary_data else cfg.dataset
    dataset = data.generate(spec)
    model = cfg.model.build()
    init_rng = data.stream(spec.seed, data.INIT_STREAM, seed)
    if cfg.model.architecture == "linear":
        params = model.init_params(init_rng, cfg.init_scale)
    else:
        params = model.init_params(init_rng)
    return dataset, model, params


def _nuclear_sum(params, grads: dict) -> float:
    return sum(linalg.nuclear_norm(grads[n]) if params[n].kind == "matrix" else 0.0 for n in grads)


def _eval_loss(model, params, batch: Batch) -> float:
    return model.forward(params, batch)[0]


def run_seed(cfg: ExperimentConfig, seed: int) -> tuple[Trajectory, bool]:
    """Train one seed; returns the trajectory and whether the run diverged."""
    dataset, model, params = _build(cfg, seed)
    opt = Optimizer(cfg.optimizer, cfg.opt)
    train_full = Batch(dataset.train.inputs, dataset.train.targets)
    traj = Trajectory(seed=seed, label=cfg.optimizer)
    tracked = next((n for n, p in params.items() if p.kind == "matrix"), next(iter(params)))
    start = time.perf_counter()
    full_batch = isinstance(cfg.batch, BatchSchedule) and cfg.batch.kind == "full"
    for t in range(1, cfg.steps + 1):
        logging_step = t % cfg.log_every == 0 or t == cfg.steps
        batch = data.minibatch_sampler(dataset, cfg.batch, seed, t)
        with np.errstate(over="ignore", invalid="ignore"):
            loss = models.loss_and_grad(model, params, batch)
        if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
            log.warning("seed %d diverged at step %d (loss=%r)", seed, t, loss)
            return traj, True
        grads = params.grads()
        nuc = math.nan
        if logging_step:
            if cfg.full_grad_metrics and not full_batch:
                probe = params.copy()
                models.loss_and_grad(model, probe, train_full)
                nuc = _nuclear_sum(params, probe.grads())
            else:
                nuc = _nuclear_sum(params, grads)
            gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        reports = opt.step(params)
        if not logging_step:
            continue
        with np.errstate(over="ignore", invalid="ignore"):
            train_loss = _eval_loss(model, params, train_full)
            test_loss = _eval_loss(model, params, dataset.test)
        if not math.isfinite(train_loss) or train_loss > DIVERGENCE_LOSS:
            log.warning("seed %d diverged after step %d", seed, t)
            return traj, True
        rep = reports[tracked]
        traj.append(StepRecord(
            t=t, train_loss=train_loss, test_loss=test_loss, grad_norm_f=gnorm,
            grad_norm_nuclear=nuc, stepsize=rep.stepsize, v=rep.v_after,
            clamped=rep.clamped, floored=rep.floored,
            wall_time=time.perf_counter() - start, params=reports,
        ))
    check_trajectory_invariants(traj, cfg, opt, params)
    return traj, False


def check_trajectory_invariants(traj: Trajectory, cfg: ExperimentConfig, opt: Optimizer, params) -> None:
    """Re-assert the AdaGO stepsize floor and accumulator monotonicity post-run."""
    eps, gamma = cfg.opt.epsilon, cfg.opt.gamma
    for name in traj.param_names():
        if not opt.uses_adago(params, name):
            continue
        alpha = traj.param_series(name, "stepsize")
        v = traj.param_series(name, "v_after")
        t = np.array([r.t for r in traj.records if name in r.params])
        if np.any(alpha < eps):
            raise AssertionError(f"{name}: stepsize fell below epsilon")
        if np.any(np.diff(v) < 0):
            raise AssertionError(f"{name}: accumulator decreased")
        v_sq = np.concatenate([[cfg.opt.v0**2], v * v])
        t_full = np.concatenate([[0], t])
        consecutive = np.diff(t_full) == 1
        # v is logged, not v^2, so squaring it back costs a few ulps of v_t^2
        slack = gamma * gamma * 1e-12 + 8 * np.finfo(float).eps * v_sq[1:]
        if np.any((np.diff(v_sq) - slack)[consecutive] > gamma * gamma):
            raise AssertionError(f"{name}: accumulator increment exceeded gamma^2")


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    trajectories, final_train, final_test, diverged = {}, {}, {}, []
    for seed in cfg.seeds:
        traj, div = run_seed(cfg, seed)
        trajectories[seed] = traj
        if div:
            diverged.append(seed)
        elif traj.records:
            final_train[seed] = traj.records[-1].train_loss
            final_test[seed] = traj.records[-1].test_loss
    summary = SummaryRow(
        cfg.scenario, cfg.optimizer, cfg.opt, str(cfg.batch), cfg.steps, cfg.seeds,
        final_train, final_test, diverged,
    )
    result = ExperimentResult(cfg, trajectories, summary)
    if cfg.out:
        write_result(result, Path(cfg.out))
    return result


def summary_csv(rows: list[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow(r.as_row())
    return buf.getvalue()


def write_result(result: ExperimentResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for seed, traj in result.trajectories.items():
        traj.to_csv(out / f"trajectory_seed{seed}.csv", out / f"params_seed{seed}.csv")
    (out / "summary.csv").write_text(summary_csv([result.summary]))
    (out / "config.json").write_text(json.dumps(result.config.to_dict(), indent=2, sort_keys=True))


def grid_search(cfg: ExperimentConfig, grid: dict[str, list], eps_lt_eta_sq: bool = False) -> list[SummaryRow]:
    """Run the Cartesian product of optimizer hyperparameters.

    The cell with the lowest mean final training loss over non-diverged
    seeds is flagged ``best``; ties go to the smaller learning rate. With
    ``eps_lt_eta_sq`` cells violating ``epsilon < eta^2`` are skipped.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigurationError("grid must be nonempty")
    keys = sorted(grid)
    rows = []
    for values in itertools.product(*(grid[k] for k in keys)):
        opt = replace(cfg.opt, **dict(zip(keys, values)))
        if eps_lt_eta_sq and not opt.epsilon < opt.eta**2:
            continue
        res = run_experiment(replace(cfg, opt=opt, out=None))
        rows.append(res.summary)
    ok = [r for r in rows if r.n_ok > 0 and math.isfinite(r.train_mean)]
    if ok:
        best = min(ok, key=lambda r: (r.train_mean, r.opt.eta))
        best.best = True
    else:
        log.warning("every grid cell diverged; no best cell flagged")
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "grid_summary.csv").write_text(summary_csv(rows))
        (out / "config.json").write_text(
            json.dumps({"base": cfg.to_dict(), "grid": grid, "eps_lt_eta_sq": eps_lt_eta_sq},
                       indent=2, sort_keys=True, default=str)
        )
    return rows


def best_row(rows: list[SummaryRow]) -> SummaryRow | None:
    return next((r for r in rows if r.best), None)


PRESETS = ("1", "2", "3-sqrt", "3-linear")


def theorem_preset(which: str, T: int, q: float = 0.05, seeds=(0,), **overrides) -> ExperimentConfig:
    """AdaGO schedules prescribed by the convergence theorems for horizon ``T``.

    ``1``: b_t = 1, eps = T^-3/4, 1 - mu = T^-1/2, eta = T^-(3/8 + q).
    ``2``: full batch, mu = 0, eps = T^-1/2, eta = T^-q.
    ``3-sqrt`` / ``3-linear``: mu = 0, b_t = ceil(sqrt t) or t, eps = T^-1/2, eta = T^-q.
    """
    which = str(which)
    if which not in PRESETS:
        raise ConfigurationError(f"preset must be one of {PRESETS}")
    if T < 10 or not q > 0:
        raise ConfigurationError("presets need T >= 10 and q > 0")
    if which == "1":
        opt = OptimizerConfig(eta=T ** -(0.375 + q), mu=1 - T**-0.5, epsilon=T**-0.75)
        batch, scenario = BatchSchedule("constant", 1), "theorem1_sweep"
    else:
        opt = OptimizerConfig(eta=T**-q, mu=0.0, epsilon=T**-0.5)
        if which == "2":
            batch, scenario = BatchSchedule("full"), "theorem2_sweep"
        else:
            kind = "sqrt_t" if which == "3-sqrt" else "linear_t"
            batch, scenario = BatchSchedule(kind, 0), "theorem3_sweep"
    base = scenario_config(scenario, "adago")
    return replace(base, opt=opt, batch=batch, steps=T, seeds=tuple(seeds), full_grad_metrics=True, **overrides)
