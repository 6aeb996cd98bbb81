"""Synthetic regression tasks with known structure.

The ball-paddle labels are post-impact velocities whose norms never come close
to a small threshold, so the small-label constraint region is empty there.
These tasks put real mass on both sides of ``||f|| = delta`` so the constraint
actually binds, and the 1-D task is small enough to solve by brute force.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constrained import LearningProblem, _evaluate
from .data import Dataset
from .mlp import MlpModel


def mixed_magnitude_labels(x: np.ndarray) -> np.ndarray:
    """3-D labels whose norm scales with ``x0**2``, so about a fifth fall under 0.1."""
    x = np.atleast_2d(x)
    scale = 2.0 * x[:, 0] ** 2
    direction = np.stack([
        np.cos(2 * x[:, 1] + x[:, 2]),
        np.sin(2 * x[:, 1] - x[:, 2]) * np.cos(x[:, 3]),
        np.sin(x[:, 3] + x[:, 4]) + 0.5 * x[:, 5] * x[:, 6] - 0.25 * x[:, 7],
    ], axis=1)
    return scale[:, None] * direction


def mixed_magnitude_dataset(n: int, seed: int = 0, n_input: int = 8) -> Dataset:
    """Inputs uniform on [-1, 1]^8, split 3/5 into state/action columns like the paddle data."""
    rng = np.random.default_rng([seed, 0x313D])
    x = rng.uniform(-1.0, 1.0, size=(n, n_input))
    return Dataset(x[:, :3], x[:, 3:], mixed_magnitude_labels(x))


def line_labels(x: np.ndarray) -> np.ndarray:
    """1-D target ``2 x^2``: small near the origin, which a line cannot fit alongside the tails."""
    x = np.asarray(x, dtype=float)
    return 2.0 * x ** 2


def line_dataset(n: int, seed: int = 0) -> Dataset:
    rng = np.random.default_rng([seed, 0x1D])
    x = np.sort(rng.uniform(-1.0, 1.0, size=n))
    return Dataset(x[:, None], np.zeros((n, 0)), line_labels(x)[:, None])


def linear_model(w: float, b: float) -> MlpModel:
    """A [1, 1] network, i.e. ``phi(x) = w x + b``."""
    return MlpModel([1, 1], [np.array([[float(w)]])], [np.array([float(b)])], [])


@dataclass
class GridOptimum:
    w: float
    b: float
    objective: float
    constraint: float  # g at the optimum; <= 0 means feasible
    feasible_points: int


def grid_search_linear(dataset: Dataset, problem: LearningProblem, w_range, b_range, n: int = 401) -> GridOptimum:
    """Brute-force constrained optimum of a linear model on ``dataset``.

    Evaluates objective and constraints at every grid point directly,
    independent of the network code.
    """
    if problem.n_constraints != 1:
        raise ValueError("grid search supports exactly one constraint")
    x = dataset.states[:, 0]
    f = dataset.labels[:, 0]
    N = len(x)
    if problem.objective_loss not in ("normalized_error", "absolute_error"):
        raise ValueError(f"unsupported objective loss {problem.objective_loss!r}")
    c = problem.constraints[0]
    if c.per_sample_h != "absolute_error":
        raise ValueError("grid search supports an absolute-error constraint only")
    big = problem.objective_region.mask(dataset.labels)
    small = c.region.mask(dataset.labels)
    obj_weight = np.where(big, 1.0 / np.abs(f) if problem.objective_loss == "normalized_error" else 1.0, 0.0) / N

    ws, bs = np.linspace(*w_range, n), np.linspace(*b_range, n)
    W, B = np.meshgrid(ws, bs, indexing="ij")
    obj = np.empty((n, n))
    g = np.empty((n, n))
    for i, w in enumerate(ws):  # one row at a time keeps memory at n * N
        err = np.abs(w * x[None, :] + bs[:, None] - f[None, :])
        obj[i] = err @ obj_weight
        g[i] = err[:, small].sum(axis=1) / N - c.bound_eps

    ok = g <= 0
    if not ok.any():
        raise ValueError("no feasible grid point; widen the ranges")
    masked = np.where(ok, obj, np.inf)
    i, j = np.unravel_index(np.argmin(masked), masked.shape)
    return GridOptimum(float(W[i, j]), float(B[i, j]), float(obj[i, j]), float(g[i, j]), int(ok.sum()))


def objective_and_constraints(dataset: Dataset, model: MlpModel, problem: LearningProblem):
    """Full-dataset objective and constraint slacks for ``model``."""
    obj, g, _ = _evaluate(dataset, model, problem)
    return float(obj), g
