"""Ball-paddle experiments: data collection, model training, evaluation, sweeps.

Episodes are independent given their id, so evaluation steps many episode
generators in lock step and solves all pending actions as one batch. The
result is identical to running them one by one.
"""
from __future__ import annotations

import csv
import io
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .constrained import (
    LearningProblem,
    TrainConfig,
    normalized_error_problem,
    train,
    unconstrained_problem,
)
from .controller import ControlTask, SolveOptions, failure_reason, solve_actions
from .data import Dataset
from .mlp import MlpModel, forward, init_mlp
from .sim import N_ACTION, N_INPUT, N_STATE, AnalyticImpactModel, SimConfig, episode


def substream_seed(master: int, name: str) -> int:
    """Independent integer seed for a named component of a run."""
    ss = np.random.SeedSequence(int(master), spawn_key=(zlib.crc32(name.encode()),))
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "full"  # or "residual"
    objective: str = "constrained"  # or "unconstrained"
    delta: float = 0.1
    eps: float = 0.1
    collection_duration: float = 252.0  # simulated seconds
    eval_episodes: int = 100
    bounces_per_episode: int = 20
    analytic_roll_error: float = 0.1
    roll_bound: float = 0.4
    pitch_bound: float = 0.4
    hidden_layers: tuple[int, ...] = (128, 128)
    dagger_rounds: int = 0
    dagger_duration: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("full", "residual"):
            raise ValueError(f"mode must be 'full' or 'residual', not {self.mode!r}")
        if self.objective not in ("constrained", "unconstrained"):
            raise ValueError(f"objective must be 'constrained' or 'unconstrained', not {self.objective!r}")
        if not self.delta > 0 or not self.eps >= 0:
            raise ValueError("delta > 0 and eps >= 0 required")
        if self.eval_episodes < 1 or self.bounces_per_episode < 0:
            raise ValueError("eval_episodes >= 1 and bounces_per_episode >= 0 required")
        if self.collection_duration < 0:
            raise ValueError("collection_duration must be nonnegative")


# -- models --------------------------------------------------------------------

class ResidualModel:
    """Analytic impact model plus a learned correction network."""

    def __init__(self, base: AnalyticImpactModel, net: MlpModel):
        self.base = base
        self.net = net

    def predict(self, x):
        return self.base.predict(x) + forward(self.net, x)

    def input_vjp(self, x, upstream):
        return self.base.input_vjp(x, upstream) + self.net.input_vjp(x, upstream)


def learning_problem(experiment: ExperimentConfig) -> LearningProblem:
    if experiment.objective == "constrained":
        return normalized_error_problem(experiment.delta, experiment.eps)
    return unconstrained_problem()


# -- tasks ---------------------------------------------------------------------

def sample_tasks(n: int, rng, roll_bound: float = 0.4, pitch_bound: float = 0.4) -> list[ControlTask]:
    """Targets uniform on [-1, 1]^2, v_min uniform on [3, 4), v_max = v_min + U[1, 2)."""
    p = rng.uniform(-1.0, 1.0, size=(n, 2))
    v_min = rng.uniform(3.0, 4.0, size=n)
    gap = rng.uniform(1.0, 2.0, size=n)
    return [
        ControlTask(p[i], -roll_bound, roll_bound, -pitch_bound, pitch_bound, v_min[i], v_min[i] + gap[i])
        for i in range(n)
    ]


def run_episodes(model, tasks, sim_config: SimConfig, opts: SolveOptions, max_bounces: int,
                 episode_ids=None, record_trajectory: bool = False):
    """Run one episode per task with the MPC controller, batching the solves."""
    if episode_ids is None:
        episode_ids = range(len(tasks))
    gens = [episode(t.p_desired, sim_config, max_bounces, int(i), record_trajectory) for t, i in zip(tasks, episode_ids)]
    traces = [None] * len(gens)
    pending = {}
    for i, gen in enumerate(gens):
        try:
            pending[i] = next(gen)
        except StopIteration as stop:
            traces[i] = stop.value
    previous = [None] * len(gens)
    while pending:
        idx = sorted(pending)
        a0 = [previous[i] if opts.warm_start else None for i in idx]
        actions, reports = solve_actions(
            [pending[i] for i in idx], model, [tasks[i] for i in idx], opts, sim_config, a0
        )
        pending = {}
        for i, action, rep in zip(idx, actions, reports):
            why = failure_reason(rep)
            reply = (None, {"reason": why}) if why else (action, rep.row())
            previous[i] = action
            try:
                pending[i] = gens[i].send(reply)
            except StopIteration as stop:
                traces[i] = stop.value
    return traces


# -- data collection -----------------------------------------------------------

def _collect_with(model, experiment: ExperimentConfig, sim_config: SimConfig, opts: SolveOptions,
                  duration: float, stream: str, block: int = 16) -> Dataset:
    task_rng = np.random.default_rng(substream_seed(experiment.seed, stream + "/tasks"))
    sim = replace(sim_config, seed=substream_seed(experiment.seed, stream + "/episodes"))
    states, actions, labels = [], [], []
    clock = 0.0
    next_id = 0
    while clock < duration:
        tasks = sample_tasks(block, task_rng, experiment.roll_bound, experiment.pitch_bound)
        traces = run_episodes(model, tasks, sim, opts, experiment.bounces_per_episode,
                              range(next_id, next_id + block))
        next_id += block
        # replay in episode order so the result equals a sequential run
        for tr in traces:
            for b in tr.bounces:
                if clock + b.impact_time >= duration:
                    break
                states.append(b.ball_vel_in)
                actions.append(b.action.as_vector())
                labels.append(b.ball_vel_out)
            clock += tr.sim_time
            if clock >= duration:
                break
    if not states:
        return Dataset.empty(N_STATE, N_ACTION, N_STATE)
    return Dataset(np.array(states), np.array(actions), np.array(labels))


def collect(experiment: ExperimentConfig, sim_config: SimConfig | None = None,
            opts: SolveOptions | None = None, stream: str = "collect") -> Dataset:
    """Impacts recorded while the faulty analytic model drives the controller.

    Labels are the simulator's true post-impact velocities. A different
    ``stream`` gives an independent draw, e.g. a held-out validation set.
    """
    sim_config = sim_config or SimConfig()
    faulty = AnalyticImpactModel(sim_config.restitution_alpha, experiment.analytic_roll_error)
    return _collect_with(faulty, experiment, sim_config, opts or SolveOptions(),
                         experiment.collection_duration, stream)


def dagger_collect(model, experiment: ExperimentConfig, sim_config: SimConfig | None = None,
                   opts: SolveOptions | None = None, round_index: int = 0) -> Dataset:
    """Fresh impacts gathered while the current learned model plans."""
    return _collect_with(model, experiment, sim_config or SimConfig(), opts or SolveOptions(),
                         experiment.dagger_duration, f"dagger/{round_index}")


# -- training ------------------------------------------------------------------

@dataclass
class TrainedModel:
    model: object  # what the controller uses
    net: MlpModel
    dual: object
    log: object
    dataset: Dataset  # the (possibly relabeled) data the net was fit to


def residual_labels(dataset: Dataset, base: AnalyticImpactModel) -> Dataset:
    return dataset.with_labels(dataset.labels - base.predict(dataset.inputs))


def train_model(dataset: Dataset, experiment: ExperimentConfig, train_config: TrainConfig | None = None,
                sim_config: SimConfig | None = None, base_roll_error: float | None = None) -> TrainedModel:
    """Fit a full or residual impact model with the configured objective.

    In residual mode the network is fit to ``f - f_hat`` where ``f_hat`` is
    the analytic model with ``base_roll_error`` (default: the experiment's
    ``analytic_roll_error``), and the deployed model is ``f_hat + net``.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    sim_config = sim_config or SimConfig()
    train_config = train_config or TrainConfig(seed=substream_seed(experiment.seed, "batches"))
    net0 = init_mlp([N_INPUT, *experiment.hidden_layers, N_STATE], seed=substream_seed(experiment.seed, "init"))
    problem = learning_problem(experiment)
    base = None
    fit_data = dataset
    if experiment.mode == "residual":
        err = experiment.analytic_roll_error if base_roll_error is None else base_roll_error
        base = AnalyticImpactModel(sim_config.restitution_alpha, err)
        fit_data = residual_labels(dataset, base)
    net, dual, log = train(net0, fit_data, problem, train_config)
    deployed = net if base is None else ResidualModel(base, net)
    return TrainedModel(deployed, net, dual, log, fit_data)


def train_with_dagger(dataset: Dataset, experiment: ExperimentConfig, train_config: TrainConfig | None = None,
                      sim_config: SimConfig | None = None, opts: SolveOptions | None = None):
    """Alternate training and data gathering with the model being trained."""
    trained = train_model(dataset, experiment, train_config, sim_config)
    for r in range(experiment.dagger_rounds):
        dataset = dataset.concat(dagger_collect(trained.model, experiment, sim_config, opts, r))
        trained = train_model(dataset, experiment, train_config, sim_config)
    return trained, dataset


# -- evaluation ----------------------------------------------------------------

@dataclass
class EvalSummary:
    failure_rate: float
    mean_error: float | None  # over non-failed episodes; None if all failed
    std_error: float | None
    rows: list = field(default_factory=list)

    @property
    def episodes(self) -> int:
        return len(self.rows)

    def to_csv(self, comment: str | None = None) -> str:
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "target_x", "target_y", "v_min", "v_max", "failed", "reason", "bounces", "mean_error"])
        for r in self.rows:
            w.writerow([
                r["episode"], repr(float(r["target"][0])), repr(float(r["target"][1])), repr(float(r["v_min"])), repr(float(r["v_max"])),
                int(r["failed"]), r["reason"], r["bounces"],
                "" if r["mean_error"] is None else repr(float(r["mean_error"])),
            ])
        return buf.getvalue()


def summarize(traces, tasks) -> EvalSummary:
    rows = []
    for i, (tr, t) in enumerate(zip(traces, tasks)):
        rows.append({
            "episode": i,
            "target": t.p_desired.tolist(),
            "v_min": float(t.v_min),
            "v_max": float(t.v_max),
            "failed": tr.failed,
            "reason": tr.reason,
            "bounces": len(tr.bounces),
            "mean_error": tr.mean_error,
        })
    ok = [r["mean_error"] for r in rows if not r["failed"] and r["mean_error"] is not None]
    n_fail = sum(r["failed"] for r in rows)
    return EvalSummary(
        failure_rate=n_fail / len(rows),
        mean_error=float(np.mean(ok)) if ok else None,
        std_error=float(np.std(ok)) if ok else None,
        rows=rows,
    )


def evaluation_tasks(experiment: ExperimentConfig, n: int | None = None, stream: str = "eval") -> list[ControlTask]:
    rng = np.random.default_rng(substream_seed(experiment.seed, stream + "/tasks"))
    return sample_tasks(n or experiment.eval_episodes, rng, experiment.roll_bound, experiment.pitch_bound)


def evaluate(model, experiment: ExperimentConfig, sim_config: SimConfig | None = None,
             opts: SolveOptions | None = None, n_episodes: int | None = None, stream: str = "eval") -> EvalSummary:
    """Controller performance with ``model`` over seeded random tasks."""
    sim_config = sim_config or SimConfig()
    tasks = evaluation_tasks(experiment, n_episodes, stream)
    sim = replace(sim_config, seed=substream_seed(experiment.seed, stream + "/episodes"))
    traces = run_episodes(model, tasks, sim, opts or SolveOptions(), experiment.bounces_per_episode)
    return summarize(traces, tasks)


# -- roll error sweep ----------------------------------------------------------

@dataclass
class SweepReport:
    rows: list = field(default_factory=list)

    def to_csv(self, comment: str | None = None) -> str:
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        cols = ["roll_error", "arm", "failure_rate", "mean_error", "std_error"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else ("" if r[c] is None else r[c]) for c in cols])
        return buf.getvalue()

    def arm(self, name: str) -> list[dict]:
        return [r for r in self.rows if r["arm"] == name]


def roll_error_sweep(errors, experiment: ExperimentConfig, dataset: Dataset, train_config: TrainConfig | None = None,
                     sim_config: SimConfig | None = None, opts: SolveOptions | None = None,
                     n_episodes: int = 50) -> SweepReport:
    """Analytic model vs. constrained residual model for each base roll error.

    Every residual model is trained on the same dataset for the same number
    of iterations; both arms face the same ``n_episodes`` tasks.
    """
    errors = list(errors)
    if not errors:
        raise ValueError("no roll errors given")
    sim_config = sim_config or SimConfig()
    resid_exp = replace(experiment, mode="residual", objective="constrained")
    report = SweepReport()
    for err in errors:
        analytic = AnalyticImpactModel(sim_config.restitution_alpha, err)
        trained = train_model(dataset, resid_exp, train_config, sim_config, base_roll_error=err)
        for arm, model in (("analytic", analytic), ("residual", trained.model)):
            s = evaluate(model, experiment, sim_config, opts, n_episodes, stream="sweep")
            report.rows.append({
                "roll_error": float(err), "arm": arm, "failure_rate": s.failure_rate,
                "mean_error": s.mean_error, "std_error": s.std_error,
            })
    return report
