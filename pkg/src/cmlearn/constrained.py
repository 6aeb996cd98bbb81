"""Expectation-constrained model learning with a primal-dual trainer.

A :class:`LearningProblem` minimizes the batch mean of a per-sample loss on an
objective region subject to ``mean(h_i * 1[region_i]) - eps_i <= 0`` for each
constraint. :func:`train` alternates an ADAM step on the network parameters
with projected gradient ascent on the multipliers.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Transition
from .mlp import AdamState, MlpModel, NonFiniteGradientError, adam_step, backward, forward


class ContractViolation(ValueError):
    """A loss was evaluated outside the region it is defined on."""


class NonFiniteLossError(FloatingPointError):
    pass


class TrainingAborted(RuntimeError):
    def __init__(self, iteration: int, last_good: MlpModel, reason: str):
        super().__init__(f"training aborted at iteration {iteration}: {reason}")
        self.iteration = iteration
        self.last_good = last_good


# -- regions -------------------------------------------------------------------

@dataclass(frozen=True)
class Region:
    """Subset of sample space defined on the label norm ``||f(s, a)||``."""

    kind: str  # "norm_at_least" | "norm_below" | "whole" | "complement"
    delta: float | None = None
    inner: Region | None = None

    def __post_init__(self):
        if self.kind in ("norm_at_least", "norm_below"):
            if self.delta is None or not self.delta > 0:
                raise ValueError(f"{self.kind} needs delta > 0")
        elif self.kind == "complement":
            if self.inner is None:
                raise ValueError("complement needs an inner region")
        elif self.kind != "whole":
            raise ValueError(f"unknown region kind {self.kind!r}")

    def mask(self, labels) -> np.ndarray:
        labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
        if self.kind == "whole":
            return np.ones(len(labels), dtype=bool)
        if self.kind == "complement":
            return ~self.inner.mask(labels)
        norms = np.linalg.norm(labels, axis=1)
        # boundary ||f|| == delta belongs to the "at least" side
        if self.kind == "norm_at_least":
            return norms >= self.delta
        return norms < self.delta

    def describe(self) -> str:
        if self.kind == "complement":
            return f"not({self.inner.describe()})"
        if self.delta is None:
            return self.kind
        return f"{self.kind}({self.delta:g})"


def norm_at_least(delta: float) -> Region:
    return Region("norm_at_least", delta)


def norm_below(delta: float) -> Region:
    return Region("norm_below", delta)


def whole_space() -> Region:
    return Region("whole")


def complement(region: Region) -> Region:
    return Region("complement", inner=region)


def indicator(t: Transition, region: Region) -> int:
    return int(region.mask(t.label[None, :])[0])


# -- per-sample losses ---------------------------------------------------------
# Each maps (pred, label) rows to (values, d values / d pred).

def _safe_unit(diff, norms):
    out = np.zeros_like(diff)
    nz = norms > 0
    out[nz] = diff[nz] / norms[nz, None]
    return out


def absolute_error(pred, label):
    diff = pred - label
    err = np.linalg.norm(diff, axis=1)
    return err, _safe_unit(diff, err)


def normalized_error(pred, label):
    diff = pred - label
    err = np.linalg.norm(diff, axis=1)
    scale = np.linalg.norm(label, axis=1)
    return err / scale, _safe_unit(diff, err) / scale[:, None]


def squared_error(pred, label):
    diff = pred - label
    return np.sum(diff * diff, axis=1), 2.0 * diff


LOSSES = {
    "absolute_error": absolute_error,
    "normalized_error": normalized_error,
    "squared_error": squared_error,
}


def normalized_loss(pred, t: Transition, delta: float) -> float:
    label = np.asarray(t.label, dtype=np.float64)
    scale = np.linalg.norm(label)
    if scale < delta:
        raise ContractViolation(f"label norm {scale:g} is below delta {delta:g}; gate with the region first")
    return float(np.linalg.norm(np.asarray(pred, dtype=np.float64) - label) / scale)


# -- problem definition --------------------------------------------------------

@dataclass(frozen=True)
class ConstraintSpec:
    region: Region
    per_sample_h: str = "absolute_error"
    bound_eps: float = 0.1

    def __post_init__(self):
        if not self.bound_eps >= 0:
            raise ValueError("bound_eps must be nonnegative")
        if self.per_sample_h not in LOSSES:
            raise ValueError(f"unknown per-sample function {self.per_sample_h!r}")


@dataclass(frozen=True)
class LearningProblem:
    objective_region: Region = field(default_factory=whole_space)
    objective_loss: str = "absolute_error"
    constraints: tuple[ConstraintSpec, ...] = ()
    label_floor_delta: float = 0.1

    def __post_init__(self):
        if self.objective_loss not in LOSSES:
            raise ValueError(f"unknown objective loss {self.objective_loss!r}")
        if not self.label_floor_delta > 0:
            raise ValueError("label_floor_delta must be positive")
        object.__setattr__(self, "constraints", tuple(self.constraints))

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)


def unconstrained_problem() -> LearningProblem:
    """Plain expected-error minimization over all samples."""
    return LearningProblem(whole_space(), "absolute_error", ())


def normalized_error_problem(delta: float = 0.1, eps: float = 0.1) -> LearningProblem:
    """Normalized error on ``||f|| >= delta``, absolute error on the rest bounded by ``eps``."""
    big = norm_at_least(delta)
    return LearningProblem(
        objective_region=big,
        objective_loss="normalized_error",
        constraints=(ConstraintSpec(complement(big), "absolute_error", eps),),
        label_floor_delta=delta,
    )


@dataclass
class DualState:
    lambdas: np.ndarray
    alpha_lambda: float = 0.01

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=np.float64).reshape(-1)
        if not self.alpha_lambda > 0:
            raise ValueError("alpha_lambda must be positive")


# -- Lagrangian ----------------------------------------------------------------

def _masked_loss(name, pred, labels, mask, delta=None):
    """Per-sample loss values and pred-gradients, zero outside ``mask``."""
    vals = np.zeros(len(labels))
    grads = np.zeros_like(pred)
    if mask.any():
        if name == "normalized_error" and delta is not None:
            if np.linalg.norm(labels[mask], axis=1).min() < delta:
                raise ContractViolation("normalized_error evaluated on labels below delta")
        v, g = LOSSES[name](pred[mask], labels[mask])
        vals[mask] = v
        grads[mask] = g
    return vals, grads


def _evaluate(batch: Dataset, model: MlpModel, problem: LearningProblem, lambdas=None, want_grad=False):
    if len(batch) == 0:
        raise ValueError("empty batch")
    x = batch.inputs
    pred = forward(model, x)
    labels = batch.labels
    n = len(batch)
    delta = problem.label_floor_delta if problem.objective_loss == "normalized_error" else None
    obj_vals, obj_grad = _masked_loss(
        problem.objective_loss, pred, labels, problem.objective_region.mask(labels), delta
    )
    objective = obj_vals.sum() / n
    g = np.empty(problem.n_constraints)
    upstream = obj_grad / n if want_grad else None
    for i, c in enumerate(problem.constraints):
        h_vals, h_grad = _masked_loss(c.per_sample_h, pred, labels, c.region.mask(labels))
        g[i] = h_vals.sum() / n - c.bound_eps
        if want_grad and lambdas is not None and lambdas[i] != 0.0:
            upstream = upstream + lambdas[i] * h_grad / n
    theta_grad = backward(model, x, upstream)[0] if want_grad else None
    return objective, g, theta_grad


def constraint_estimate(batch: Dataset, model: MlpModel, c: ConstraintSpec) -> float:
    """Batch estimate of ``E[h * 1[region]] - eps``; negative means satisfied."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    pred = forward(model, batch.inputs)
    vals, _ = _masked_loss(c.per_sample_h, pred, batch.labels, c.region.mask(batch.labels))
    return float(vals.sum() / len(batch) - c.bound_eps)


def _check_lambdas(problem, dual):
    if dual.lambdas.shape != (problem.n_constraints,):
        raise ValueError(f"{len(dual.lambdas)} multipliers for {problem.n_constraints} constraints")


def lagrangian(batch: Dataset, model: MlpModel, problem: LearningProblem, dual: DualState) -> float:
    _check_lambdas(problem, dual)
    objective, g, _ = _evaluate(batch, model, problem)
    if not np.isfinite(objective):
        raise NonFiniteLossError(f"objective estimate is {objective}")
    for i, gi in enumerate(g):
        if not np.isfinite(gi):
            raise NonFiniteLossError(f"constraint {i} estimate is {gi}")
    return float(objective + dual.lambdas @ g)


def lagrangian_grads(batch: Dataset, model: MlpModel, problem: LearningProblem, dual: DualState):
    """``(theta_grad, lambda_grad)``; ``lambda_grad`` is the constraint estimate vector."""
    _check_lambdas(problem, dual)
    objective, g, theta_grad = _evaluate(batch, model, problem, dual.lambdas, want_grad=True)
    if not (np.isfinite(objective) and np.all(np.isfinite(g))):
        raise NonFiniteLossError("non-finite objective or constraint estimate")
    return theta_grad, g


# -- trainer -------------------------------------------------------------------

@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 256
    learning_rate: float = 1e-3
    lr_decay: float = 1.0  # multiplicative per iteration
    alpha_lambda: float = 0.01
    lambda0: float = 0.0
    seed: int = 0
    val_fraction: float = 0.1
    log_every: int = 1

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1 or self.log_every < 1:
            raise ValueError("iterations >= 0, batch_size >= 1, log_every >= 1 required")
        if not (self.learning_rate > 0 and self.alpha_lambda > 0 and self.lambda0 >= 0):
            raise ValueError("learning_rate, alpha_lambda > 0 and lambda0 >= 0 required")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")


@dataclass
class TrainingLog:
    n_constraints: int
    iterations: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    constraints: list = field(default_factory=list)  # per row: g_1..g_m
    lambdas: list = field(default_factory=list)  # per row: lambda_1..lambda_m
    validation: DualityReport | None = None

    def append(self, it, obj, g, lam):
        self.iterations.append(it)
        self.objective.append(float(obj))
        self.constraints.append([float(v) for v in g])
        self.lambdas.append([float(v) for v in lam])

    @property
    def header(self) -> list[str]:
        m = self.n_constraints
        return ["iteration", "objective"] + [f"g_{i + 1}" for i in range(m)] + [f"lambda_{i + 1}" for i in range(m)]

    def rows(self):
        for it, obj, g, lam in zip(self.iterations, self.objective, self.constraints, self.lambdas):
            yield [it, obj, *g, *lam]

    def to_csv(self, comment: str | None = None) -> str:
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows():
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()


def split_validation(dataset: Dataset, config: TrainConfig) -> tuple[Dataset, Dataset]:
    """The seeded train/validation split used by :func:`train`."""
    rng = np.random.default_rng([config.seed, 0x5A11])
    if config.val_fraction == 0 or len(dataset) < 2:
        return dataset, dataset[np.arange(0)]
    train_set, val_set = dataset.split(config.val_fraction, rng)
    if len(train_set) == 0:
        return dataset, val_set
    return train_set, val_set


def train(model0: MlpModel, dataset: Dataset, problem: LearningProblem, config: TrainConfig | None = None):
    """Primal-dual training loop. Returns ``(model, dual, log)``.

    Each iteration samples a batch, evaluates the Lagrangian gradients at the
    current parameters, takes an ADAM step on theta and a projected ascent
    step ``lambda <- max(lambda + alpha_lambda * g, 0)`` on the multipliers.
    """
    config = config or TrainConfig()
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    train_set, val_set = split_validation(dataset, config)
    rng = np.random.default_rng([config.seed, 0xBA7C])

    m = problem.n_constraints
    dual = DualState(np.full(m, config.lambda0), config.alpha_lambda)
    log = TrainingLog(m)
    theta = model0.get_params()
    opt = AdamState.zeros(theta.size, learning_rate=config.learning_rate)
    model = model0.copy()
    n = len(train_set)
    batch_size = min(config.batch_size, n)

    for it in range(config.iterations):
        idx = np.sort(rng.choice(n, size=batch_size, replace=False))
        batch = train_set[idx]
        try:
            objective, g, theta_grad = _evaluate(batch, model, problem, dual.lambdas, want_grad=True)
            if not (np.isfinite(objective) and np.all(np.isfinite(g))):
                raise NonFiniteLossError(f"objective {objective}, constraints {g}")
            theta, opt = adam_step(theta, theta_grad, opt)
        except (NonFiniteLossError, NonFiniteGradientError) as exc:
            raise TrainingAborted(it, model, str(exc)) from exc
        lam = np.maximum(dual.lambdas + dual.alpha_lambda * g, 0.0)
        assert np.all(lam >= 0)
        dual = DualState(lam, dual.alpha_lambda)
        model = model.set_params(theta)
        model.iterations = model0.iterations + it + 1
        if config.lr_decay != 1.0:
            opt.learning_rate *= config.lr_decay
        if it % config.log_every == 0 or it == config.iterations - 1:
            log.append(it, objective, g, dual.lambdas)

    if len(val_set):
        log.validation = duality_diagnostics(model, dual, val_set, problem)
    return model, dual, log


@dataclass
class DualityReport:
    objective: float
    slacks: np.ndarray
    complementary: np.ndarray  # lambda_i * g_i
    dual_feasible: bool

    @property
    def max_slack(self) -> float:
        return float(self.slacks.max()) if self.slacks.size else -np.inf


def duality_diagnostics(model: MlpModel, dual: DualState, validation_set: Dataset, problem: LearningProblem) -> DualityReport:
    if len(validation_set) == 0:
        raise ValueError("validation set is empty")
    _check_lambdas(problem, dual)
    objective, g, _ = _evaluate(validation_set, model, problem)
    return DualityReport(
        objective=float(objective),
        slacks=g,
        complementary=dual.lambdas * g,
        dual_feasible=bool(np.all(dual.lambdas >= 0)),
    )
