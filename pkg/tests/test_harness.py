from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from cmlearn.constrained import TrainConfig
from cmlearn.controller import SolveOptions
from cmlearn.data import Dataset
from cmlearn.harness import (
    ExperimentConfig,
    ResidualModel,
    collect,
    dagger_collect,
    evaluate,
    residual_labels,
    roll_error_sweep,
    run_episodes,
    sample_tasks,
    substream_seed,
    summarize,
    train_model,
    train_with_dagger,
)
from cmlearn.mlp import init_mlp
from cmlearn.sim import AnalyticImpactModel, SimConfig

SMALL = ExperimentConfig(collection_duration=12.0, eval_episodes=4, bounces_per_episode=4, hidden_layers=(8,), seed=5)
FAST = SolveOptions(max_iterations=150)
TRUTH = AnalyticImpactModel(0.8, 0.0)


@pytest.fixture(scope="module")
def small_data():
    return collect(SMALL, SimConfig(), FAST)


# -- tasks and seeds -------------------------------------------------------------

def test_task_sampler_distribution():
    tasks = sample_tasks(1000, np.random.default_rng(0))
    p = np.array([t.p_desired for t in tasks])
    vmin = np.array([t.v_min for t in tasks])
    gap = np.array([t.v_max for t in tasks]) - vmin
    assert np.all((-1 <= p) & (p <= 1))
    assert np.all((3 <= vmin) & (vmin < 4)) and np.all((1 <= gap) & (gap < 2))
    for sample, lo, hi in ((p[:, 0], -1, 1), (p[:, 1], -1, 1), (vmin, 3, 4), (gap, 1, 2)):
        counts, _ = np.histogram(sample, bins=4, range=(lo, hi))
        assert stats.chisquare(counts).pvalue > 0.01
    assert all(t.roll_max == 0.4 and t.pitch_min == -0.4 for t in tasks)


def test_substreams_are_stable_and_distinct():
    assert substream_seed(0, "sim") == substream_seed(0, "sim")
    names = ["init", "batches", "sim", "collect/tasks", "collect/episodes", "eval/tasks", "eval/episodes"]
    seeds = {substream_seed(0, n) for n in names} | {substream_seed(1, n) for n in names}
    assert len(seeds) == 2 * len(names)


# -- collection ------------------------------------------------------------------

def test_collected_labels_are_ground_truth(small_data):
    assert len(small_data) > 5 and small_data.dims == (3, 5, 3)
    np.testing.assert_allclose(TRUTH.predict(small_data.inputs), small_data.labels, rtol=1e-12, atol=1e-12)


def test_collection_is_deterministic_and_respects_duration(small_data):
    again = collect(SMALL, SimConfig(), FAST)
    np.testing.assert_array_equal(again.labels, small_data.labels)
    shorter = collect(replace(SMALL, collection_duration=4.0), SimConfig(), FAST)
    assert 0 < len(shorter) < len(small_data)
    np.testing.assert_array_equal(shorter.labels, small_data.labels[: len(shorter)])  # a prefix of the longer run
    assert len(collect(replace(SMALL, collection_duration=0.0), SimConfig(), FAST)) == 0


def test_dagger_collect_uses_its_own_stream(small_data):
    extra = dagger_collect(TRUTH, replace(SMALL, dagger_duration=4.0), SimConfig(), FAST)
    assert len(extra) > 0
    np.testing.assert_allclose(TRUTH.predict(extra.inputs), extra.labels, rtol=1e-12, atol=1e-12)
    assert not np.array_equal(extra.states[0], small_data.states[0])


def test_zero_dagger_rounds_leave_dataset_unchanged(small_data):
    tc = TrainConfig(iterations=5, batch_size=8, seed=0)
    _, d = train_with_dagger(small_data, SMALL, tc, SimConfig(), FAST)
    assert d is small_data


def test_dagger_round_adds_data(small_data):
    tc = TrainConfig(iterations=5, batch_size=8, seed=0)
    exp = replace(SMALL, dagger_rounds=1, dagger_duration=3.0)
    _, d = train_with_dagger(small_data, exp, tc, SimConfig(), FAST)
    assert len(d) > len(small_data)
    np.testing.assert_array_equal(d.labels[: len(small_data)], small_data.labels)


# -- training --------------------------------------------------------------------

def test_residual_labels_vanish_without_analytic_error(small_data):
    r = residual_labels(small_data, TRUTH)
    assert np.max(np.abs(r.labels)) < 1e-12


def test_residual_model_adds_base_and_net(rng):
    net = init_mlp([8, 4, 3], seed=1)
    base = AnalyticImpactModel(0.8, 0.1)
    x = rng.normal(size=(5, 8))
    from cmlearn.mlp import forward

    np.testing.assert_allclose(ResidualModel(base, net).predict(x), base.predict(x) + forward(net, x), atol=1e-14)


def test_train_model_modes(small_data):
    tc = TrainConfig(iterations=20, batch_size=8, seed=0)
    full = train_model(small_data, replace(SMALL, objective="unconstrained"), tc)
    assert full.model is full.net and full.log.n_constraints == 0
    assert "lambda" not in full.log.to_csv().splitlines()[0]
    res = train_model(small_data, replace(SMALL, mode="residual"), tc)
    assert isinstance(res.model, ResidualModel) and res.model.base.roll_error == SMALL.analytic_roll_error
    np.testing.assert_allclose(res.dataset.labels, small_data.labels - res.model.base.predict(small_data.inputs))
    assert res.log.n_constraints == 1 and np.all(np.array(res.log.lambdas) >= 0)
    with pytest.raises(ValueError):
        train_model(Dataset.empty(3, 5, 3), SMALL, tc)


# -- evaluation ------------------------------------------------------------------

def test_truth_model_never_fails():
    s = evaluate(TRUTH, replace(SMALL, eval_episodes=6), SimConfig(), SolveOptions())
    assert s.failure_rate == 0 and s.mean_error < 0.05


def test_evaluation_is_deterministic():
    a = evaluate(AnalyticImpactModel(0.8, 0.1), SMALL, SimConfig(), FAST)
    b = evaluate(AnalyticImpactModel(0.8, 0.1), SMALL, SimConfig(), FAST)
    assert a.to_csv() == b.to_csv()


def test_batched_episodes_equal_one_at_a_time():
    tasks = sample_tasks(3, np.random.default_rng(2))
    cfg = SimConfig(seed=9)
    together = run_episodes(TRUTH, tasks, cfg, FAST, 3)
    alone = [run_episodes(TRUTH, [t], cfg, FAST, 3, [i])[0] for i, t in enumerate(tasks)]
    assert [t.to_jsonl() for t in together] == [t.to_jsonl() for t in alone]


class Broken:
    def predict(self, x):
        return np.full((np.atleast_2d(x).shape[0], 3), np.nan)

    def input_vjp(self, x, upstream):
        return np.zeros_like(np.atleast_2d(x))


def test_forced_failure_accounting():
    s = evaluate(Broken(), replace(SMALL, eval_episodes=1), SimConfig(), FAST)
    assert s.failure_rate == 1.0 and s.mean_error is None and s.std_error is None
    assert s.rows[0]["reason"] == "policy_aborted"
    assert s.to_csv().splitlines()[1].endswith(",")  # mean error column left empty


def test_mean_error_excludes_failed_episodes():
    class T:
        def __init__(self, failed, err):
            self.failed, self.mean_error, self.reason, self.bounces = failed, err, "x", []

    tasks = sample_tasks(3, np.random.default_rng(0))
    s = summarize([T(False, 0.2), T(True, 9.0), T(False, 0.4)], tasks)
    assert s.failure_rate == pytest.approx(1 / 3) and s.mean_error == pytest.approx(0.3)


def test_sweep_zero_error_matches_truth(small_data):
    tc = TrainConfig(iterations=5, batch_size=8, seed=0)
    rep = roll_error_sweep([0.0], SMALL, small_data, tc, SimConfig(), FAST, n_episodes=3)
    truth = evaluate(TRUTH, SMALL, SimConfig(), FAST, 3, stream="sweep")
    assert rep.arm("analytic")[0]["mean_error"] == truth.mean_error
    assert [r["arm"] for r in rep.rows] == ["analytic", "residual"]
    with pytest.raises(ValueError):
        roll_error_sweep([], SMALL, small_data)


class Downward:
    """Always predicts a flight that never comes back up."""

    def predict(self, x):
        return np.tile([0.0, 0.0, -1.0], (np.atleast_2d(x).shape[0], 1))

    def input_vjp(self, x, upstream):
        return np.zeros_like(np.atleast_2d(x))


def test_infeasible_solve_counts_as_failure():
    s = evaluate(Downward(), replace(SMALL, eval_episodes=2), SimConfig(), FAST)
    assert s.failure_rate == 1.0
    assert {r["reason"] for r in s.rows} == {"solve_infeasible"}
