import csv
import json
import math

import numpy as np
import pytest

from adago import harness
from adago.data import BatchSchedule
from adago.diagnostics import TRAJECTORY_COLUMNS
from adago.errors import ConfigurationError
from adago.optim import OptimizerConfig


def _linear(optimizer="gd", **kw):
    kw.setdefault("steps", 30)
    return harness.scenario_config("linear_appendix_a", optimizer, **kw)


def test_single_step_run_logs_one_record():
    res = harness.run_experiment(_linear("adago", steps=1))
    assert len(res.trajectories[0]) == 1 and res.trajectories[0].records[0].t == 1


def test_log_every_keeps_final_step():
    res = harness.run_experiment(_linear("adago", steps=25, log_every=10))
    assert [r.t for r in res.trajectories[0].records] == [10, 20, 25]


def test_outputs_written(tmp_path):
    cfg = _linear("adago", seeds=(0, 1), out=str(tmp_path))
    harness.run_experiment(cfg)
    for name in ("summary.csv", "config.json", "trajectory_seed0.csv", "params_seed1.csv"):
        assert (tmp_path / name).exists()
    with (tmp_path / "trajectory_seed0.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == TRAJECTORY_COLUMNS and len(rows) == 31
    with (tmp_path / "summary.csv").open() as fh:
        summary = list(csv.DictReader(fh))
    assert summary[0]["optimizer"] == "adago" and summary[0]["n_ok"] == "2"
    assert float(summary[0]["final_train_loss_std"]) >= 0
    assert json.loads((tmp_path / "config.json").read_text())["seeds"] == [0, 1]


def test_summary_bytes_reproducible(tmp_path):
    cfg = harness.scenario_config("grf_regression", "hybrid_adago", steps=20, seeds=(0, 1))
    a = harness.run_experiment(harness.replace(cfg, out=str(tmp_path / "a")))
    b = harness.run_experiment(harness.replace(cfg, out=str(tmp_path / "b")))
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()
    assert a.summary.final_train == b.summary.final_train


def test_seeds_change_the_run():
    res = harness.run_experiment(_linear("adago", seeds=(0, 1)))
    assert res.summary.final_train[0] != res.summary.final_train[1]


def test_divergence_marks_seed_not_exception():
    res = harness.run_experiment(_linear("gd", opt=OptimizerConfig(eta=10.0, mu=0.0), steps=200))
    assert res.summary.diverged == [0] and res.summary.n_ok == 0
    assert math.isnan(res.summary.train_mean)


def test_diverged_seed_excluded_from_stats():
    row = harness.SummaryRow("linear_appendix_a", "gd", OptimizerConfig(), "full", 10, (0, 1, 2),
                             {0: 1.0, 2: 3.0}, {0: 2.0, 2: 4.0}, [1])
    fields = dict(zip(harness.SUMMARY_COLUMNS, row.as_row()))
    assert fields["n_ok"] == "2" and fields["n_diverged"] == "1"
    assert float(fields["final_train_loss_mean"]) == 2.0 and float(fields["final_train_loss_std"]) == 1.0


def test_singleton_grid_matches_run():
    cfg = _linear("adago")
    rows = harness.grid_search(cfg, {"eta": [cfg.opt.eta]})
    direct = harness.run_experiment(cfg).summary
    assert len(rows) == 1 and rows[0].best
    assert rows[0].as_row()[:-1] == direct.as_row()[:-1]


def test_grid_eps_filter():
    cfg = _linear("adago", steps=5)
    grid = {"eta": [0.01, 0.1], "epsilon": [1e-5, 1e-3]}
    rows = harness.grid_search(cfg, grid, eps_lt_eta_sq=True)
    cells = {(r.opt.eta, r.opt.epsilon) for r in rows}
    assert cells == {(0.01, 1e-5), (0.1, 1e-5), (0.1, 1e-3)}
    assert len(harness.grid_search(cfg, grid)) == 4


def test_grid_all_diverged_flags_nothing():
    rows = harness.grid_search(_linear("gd", steps=200), {"eta": [10.0, 20.0]})
    assert harness.best_row(rows) is None


def test_grid_tie_break_by_eta_ordering(monkeypatch):
    cfg = _linear("gd", steps=2)

    def fake(c):
        row = harness.SummaryRow(c.scenario, c.optimizer, c.opt, "full", c.steps, c.seeds, {0: 1.0}, {0: 1.0}, [])
        return harness.ExperimentResult(c, {}, row)

    monkeypatch.setattr(harness, "run_experiment", fake)
    rows = harness.grid_search(cfg, {"eta": [0.3, 0.1, 0.2]})
    assert harness.best_row(rows).opt.eta == 0.1


def test_grid_matches_refined_grid_neighbourhood():
    # convex quadratic: GD's best coarse eta must neighbour the best fine eta
    cfg = _linear("gd", steps=40)
    coarse = [2.0**k for k in range(-12, -2)]
    fine = [2.0 ** (k / 4) for k in range(-48, -8)]
    best_c = harness.best_row(harness.grid_search(cfg, {"eta": coarse})).opt.eta
    best_f = harness.best_row(harness.grid_search(cfg, {"eta": fine})).opt.eta
    assert abs(math.log2(best_c / best_f)) <= 1.0


def test_grid_writes_summary(tmp_path):
    harness.grid_search(_linear("adago", steps=3, out=str(tmp_path)), {"eta": [0.1, 0.2]})
    with (tmp_path / "grid_summary.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and sum(int(r["best"]) for r in rows) == 1


def test_empty_grid_rejected():
    with pytest.raises(ConfigurationError):
        harness.grid_search(_linear(), {"eta": []})


def test_preset_single_sample_values():
    cfg = harness.theorem_preset("1", 10_000)
    assert cfg.opt.epsilon == pytest.approx(1e-3, rel=1e-12)
    assert cfg.opt.mu == pytest.approx(0.99, rel=1e-12)
    assert cfg.opt.eta == pytest.approx(10**-1.7, rel=1e-12)
    assert cfg.batch == BatchSchedule("constant", 1) and cfg.steps == 10_000


def test_preset_full_and_growing_batch():
    c2 = harness.theorem_preset("2", 400, q=0.1)
    assert c2.opt.mu == 0.0 and c2.batch.kind == "full"
    assert c2.opt.epsilon == pytest.approx(0.05) and c2.opt.eta == pytest.approx(400**-0.1)
    assert harness.theorem_preset("3-linear", 100).batch.size(7, 1000) == 7
    assert harness.theorem_preset("3-sqrt", 100).batch.size(10, 1000) == 4


@pytest.mark.parametrize("args", [("4", 100), ("1", 5)])
def test_preset_rejects(args):
    with pytest.raises(ConfigurationError):
        harness.theorem_preset(*args)


def test_preset_rejects_nonpositive_q():
    with pytest.raises(ConfigurationError):
        harness.theorem_preset("2", 100, q=0.0)


def test_tuned_defaults():
    assert harness.scenario_config("grf_regression", "hybrid_adago").opt.eta == 0.5
    assert harness.scenario_config("grf_regression", "hybrid_adago").opt.epsilon == 5e-3
    assert harness.scenario_config("grf_regression", "hybrid_muon").opt.eta == 5e-3
    assert harness.scenario_config("grf_regression", "adam").opt.eta == 1e-2
    blob = harness.scenario_config("blob_classification", "hybrid_adago")
    assert (blob.opt.eta, blob.opt.epsilon, blob.opt.mu) == (5e-2, 5e-4, 0.95)
    assert blob.steps == 20 * math.ceil(1800 / 128)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        harness.ExperimentConfig(steps=0)
    with pytest.raises(ConfigurationError):
        harness.ExperimentConfig(seeds=())
    with pytest.raises(ConfigurationError):
        harness.ExperimentConfig(optimizer="sgd")
    with pytest.raises(ConfigurationError):
        harness.scenario_config("cifar")


def test_invariant_recheck_catches_tampering():
    cfg = _linear("adago", steps=5)
    traj, _ = harness.run_seed(cfg, 0)
    opt = harness.Optimizer("adago", cfg.opt)
    params = harness._build(cfg, 0)[2]
    rep = traj.records[2].params["W"]
    traj.records[2].params["W"] = harness.replace(rep, stepsize=cfg.opt.epsilon / 2)
    with pytest.raises(AssertionError):
        harness.check_trajectory_invariants(traj, cfg, opt, params)


def test_blob_classification_short_run():
    res = harness.run_experiment(harness.scenario_config("blob_classification", "hybrid_adago", steps=30))
    losses = res.trajectories[0].column("train_loss")
    assert np.all(np.isfinite(losses)) and losses[-1] < losses[0]


def test_default_output_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv(harness.OUT_ENV, str(tmp_path))
    assert harness.default_output_dir() == tmp_path
