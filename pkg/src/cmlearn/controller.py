"""Gradient-based constrained action selection through a differentiable model.

The single-impact problem: choose paddle roll, pitch and velocity so that the
model's predicted post-impact velocity lands the ball at ``p_desired``,
subject to box bounds on the angles, bounds on ``||v_ball - v_paddle||`` and
landing outside obstacle rectangles. It is solved with projected primal-dual
gradient iterations, vectorized over a batch of independent problems.

A model is anything with ``predict(x)`` and ``input_vjp(x, upstream)`` on
inputs laid out as ``[v_ball (3), roll, pitch, v_paddle (3)]``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .sim import Action, PolicyFailure, SimConfig, SimState

INFEASIBLE_COST = 1e3


class InfeasibleFlightError(ValueError):
    """The ball never comes back down to the hit plane."""


class SolveAborted(PolicyFailure):
    def __init__(self, report):
        super().__init__(f"action solve aborted: {report.message}")
        self.report = report
        self.reason = failure_reason(report)


def failure_reason(report) -> str | None:
    """Episode failure reason for a solve, or None if its action may be used.

    Aborted solves and solves that end above the violation tolerance (the
    non-converged case) both count as failures.
    """
    if report.aborted:
        return "policy_aborted"
    if not report.feasible:
        return "solve_infeasible"
    return None


@dataclass
class ControlTask:
    p_desired: np.ndarray
    roll_min: float = -0.4
    roll_max: float = 0.4
    pitch_min: float = -0.4
    pitch_max: float = 0.4
    v_min: float = 3.0
    v_max: float = 5.0
    obstacles: list = field(default_factory=list)  # (x_min, x_max, y_min, y_max)
    obstacle_margin: float = 0.0

    def __post_init__(self):
        self.p_desired = np.asarray(self.p_desired, dtype=np.float64).reshape(2)
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be below v_max")
        if self.roll_min > self.roll_max or self.pitch_min > self.pitch_max:
            raise ValueError("empty roll or pitch interval")
        self.obstacles = [tuple(float(v) for v in r) for r in self.obstacles]
        for r in self.obstacles:
            if len(r) != 4 or r[0] > r[1] or r[2] > r[3]:
                raise ValueError(f"bad obstacle rectangle {r}")

    @property
    def n_constraints(self) -> int:
        return 6 + len(self.obstacles)


# -- landing point -------------------------------------------------------------

def _landing(pos, vel, gravity, z_hit):
    """Batched landing point and the pieces of its Jacobian in ``vel``.

    Returns ``(land (B,2), t_star (B,), dt_dvz (B,), ok (B,))``.
    """
    dz = pos[:, 2] - z_hit
    vz = vel[:, 2]
    if gravity == 0.0:
        ok = (vz < 0) & (dz > 0)
        t = np.where(ok, dz / np.where(vz < 0, -vz, 1.0), 0.0)
        dt_dvz = np.where(ok, dz / np.where(vz < 0, vz * vz, 1.0), 0.0)
    else:
        disc = vz * vz + 2.0 * gravity * dz
        root = np.sqrt(np.maximum(disc, 0.0))
        t = (vz + root) / gravity
        ok = (disc > 0) & (t > 0)
        dt_dvz = np.where(ok, (1.0 + vz / np.where(root > 0, root, 1.0)) / gravity, 0.0)
    land = pos[:, :2] + vel[:, :2] * t[:, None]
    return land, t, dt_dvz, ok


def landing_point(post_impact_ball_pos, post_impact_ball_vel, config: SimConfig | None = None) -> np.ndarray:
    """Where the ball next descends through the hit plane (xy, meters)."""
    config = config or SimConfig()
    pos = np.asarray(post_impact_ball_pos, dtype=np.float64).reshape(1, 3)
    vel = np.asarray(post_impact_ball_vel, dtype=np.float64).reshape(1, 3)
    land, _, _, ok = _landing(pos, vel, config.gravity, config.hit_plane_height)
    if not ok[0]:
        raise InfeasibleFlightError(f"no positive landing time for velocity {vel[0]}")
    return land[0]


def _landing_vjp(vel, t, dt_dvz, w):
    """Pull a (B,2) cotangent on the landing point back to velocity."""
    out = np.zeros_like(vel)
    out[:, :2] = w * t[:, None]
    out[:, 2] = np.sum(w * vel[:, :2], axis=1) * dt_dvz
    return out


# -- obstacle geometry ---------------------------------------------------------

def rect_depth(p, rect):
    """Signed depth of point ``p`` in an axis-aligned rectangle and its gradient.

    Positive inside (distance to the nearest face), negative outside (minus
    the Euclidean distance to the rectangle).
    """
    x0, x1, y0, y1 = rect
    p = np.asarray(p, dtype=np.float64)
    faces = np.array([p[0] - x0, x1 - p[0], p[1] - y0, y1 - p[1]])
    if np.all(faces >= 0):
        k = int(np.argmin(faces))
        grad = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]][k])
        return float(faces[k]), grad
    q = np.array([np.clip(p[0], x0, x1), np.clip(p[1], y0, y1)])
    d = p - q
    dist = float(np.linalg.norm(d))
    return -dist, -d / dist


# -- single-impact problem (batched) ------------------------------------------

@dataclass
class _Batch:
    pos: np.ndarray  # (B,3) ball position at impact
    vb: np.ndarray  # (B,3) pre-impact ball velocity
    target: np.ndarray  # (B,2)
    lo: np.ndarray  # (B,2) roll_min, pitch_min
    hi: np.ndarray  # (B,2) roll_max, pitch_max
    vmin: np.ndarray
    vmax: np.ndarray
    obstacles: list  # per row list of rects
    margin: np.ndarray
    n_con: int

    @classmethod
    def build(cls, states, tasks):
        n_obs = max((len(t.obstacles) for t in tasks), default=0)
        return cls(
            pos=np.array([s.ball_pos for s in states]),
            vb=np.array([s.ball_vel for s in states]),
            target=np.array([t.p_desired for t in tasks]),
            lo=np.array([[t.roll_min, t.pitch_min] for t in tasks]),
            hi=np.array([[t.roll_max, t.pitch_max] for t in tasks]),
            vmin=np.array([t.v_min for t in tasks]),
            vmax=np.array([t.v_max for t in tasks]),
            obstacles=[t.obstacles for t in tasks],
            margin=np.array([t.obstacle_margin for t in tasks]),
            n_con=6 + n_obs,
        )


def _evaluate(b: _Batch, A, lam, model, config: SimConfig, want_grad=True):
    """Cost, constraint vector and Lagrangian gradient in the action.

    Constraint order per row: roll - roll_max, roll_min - roll,
    pitch - pitch_max, pitch_min - pitch, ||v_rel|| - v_max,
    v_min - ||v_rel||, then one entry per obstacle (padded rows get -1).
    """
    B = len(A)
    x = np.hstack([b.vb, A])
    y = model.predict(x)
    land, t, dt_dvz, ok = _landing(b.pos, y, config.gravity, config.hit_plane_height)
    diff = land - b.target
    dist = np.linalg.norm(diff, axis=1)
    cost = np.where(ok, dist, INFEASIBLE_COST)
    cost[~np.all(np.isfinite(y), axis=1)] = np.nan  # a broken model is not an infeasible flight

    g = np.full((B, b.n_con), -1.0)
    g[:, 0] = A[:, 0] - b.hi[:, 0]
    g[:, 1] = b.lo[:, 0] - A[:, 0]
    g[:, 2] = A[:, 1] - b.hi[:, 1]
    g[:, 3] = b.lo[:, 1] - A[:, 1]
    v_rel = b.vb - A[:, 2:5]
    speed = np.linalg.norm(v_rel, axis=1)
    g[:, 4] = speed - b.vmax
    g[:, 5] = b.vmin - speed

    w_land = np.zeros((B, 2))  # cotangent on the landing point
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(dist[:, None] > 0, diff / dist[:, None], 0.0)
    w_land[ok] = unit[ok]
    for i, rects in enumerate(b.obstacles):
        for j, rect in enumerate(rects):
            if not ok[i]:
                g[i, 6 + j] = 0.0
                continue
            depth, grad = rect_depth(land[i], rect)
            g[i, 6 + j] = b.margin[i] + depth
            if want_grad and lam is not None:
                w_land[i] += lam[i, 6 + j] * grad
    if not want_grad:
        return cost, g, None, ok

    w_y = _landing_vjp(y, t, dt_dvz, w_land)
    grad = model.input_vjp(x, w_y)[:, 3:8].copy()
    if lam is not None:
        grad[:, 0] += lam[:, 0] - lam[:, 1]
        grad[:, 1] += lam[:, 2] - lam[:, 3]
        with np.errstate(invalid="ignore", divide="ignore"):
            u = np.where(speed[:, None] > 0, v_rel / speed[:, None], 0.0)
        # d||v_rel|| / d v_paddle = -u
        grad[:, 2:5] += (lam[:, 5] - lam[:, 4])[:, None] * u
    return cost, g, grad, ok


def _single(s: SimState, a, task: ControlTask):
    A = np.atleast_2d(a.as_vector() if isinstance(a, Action) else np.asarray(a, dtype=np.float64))
    return _Batch.build([s], [task]), A


def control_cost(s: SimState, a, model, task: ControlTask, config: SimConfig | None = None) -> float:
    """Distance from the predicted landing point to the target (1e3 if the ball never lands)."""
    b, A = _single(s, a, task)
    cost, _, _, _ = _evaluate(b, A, None, model, config or SimConfig(), want_grad=False)
    return float(cost[0])


def control_cost_grad(s: SimState, a, model, task: ControlTask, config: SimConfig | None = None):
    """``(cost, d cost / d action, feasible)``; the gradient is zero when infeasible."""
    b, A = _single(s, a, task)
    lam = np.zeros((1, b.n_con))
    cost, _, grad, ok = _evaluate(b, A, lam, model, config or SimConfig())
    return float(cost[0]), grad[0], bool(ok[0])


def control_constraints(s: SimState, a, model, task: ControlTask, config: SimConfig | None = None) -> np.ndarray:
    b, A = _single(s, a, task)
    _, g, _, _ = _evaluate(b, A, None, model, config or SimConfig(), want_grad=False)
    return g[0, : task.n_constraints]


def single_lagrangian(s: SimState, a, lam, model, task: ControlTask, config: SimConfig | None = None):
    """``cost + lam . constraints`` and its action gradient."""
    b, A = _single(s, a, task)
    lam = np.asarray(lam, dtype=np.float64).reshape(1, -1)
    cost, g, grad, _ = _evaluate(b, A, lam, model, config or SimConfig())
    return float(cost[0] + lam[0] @ g[0]), grad[0]


# -- solver --------------------------------------------------------------------

@dataclass(frozen=True)
class SolveOptions:
    alpha_a: float = 0.01
    step_decay: float = 0.99
    alpha_lambda: float = 0.1
    lambda0: float = 0.0
    max_iterations: int = 500
    tol: float = 1e-5
    violation_tol: float = 1e-3
    warm_start: bool = False

    def __post_init__(self):
        if not (self.alpha_a > 0 and self.alpha_lambda > 0 and 0 < self.step_decay <= 1):
            raise ValueError("step sizes must be positive and step_decay in (0, 1]")
        if self.max_iterations < 0 or self.lambda0 < 0:
            raise ValueError("max_iterations and lambda0 must be nonnegative")


@dataclass
class SolveReport:
    cost: float
    max_violation: float
    iterations: int
    converged: bool  # step norm fell below tol
    feasible: bool  # max_violation <= violation_tol
    aborted: bool = False
    message: str = ""
    wall_time: float = 0.0
    lambdas: np.ndarray | None = None

    def row(self) -> dict:
        return {
            "cost": self.cost,
            "violation": self.max_violation,
            "iterations": self.iterations,
            "converged": self.converged,
            "feasible": self.feasible,
            "aborted": self.aborted,
        }


def default_initial_action(s: SimState, task: ControlTask) -> Action:
    """Flat paddle moving vertically so that ``||v_rel||`` sits mid-range."""
    target_speed = 0.5 * (task.v_min + task.v_max)
    vb = s.ball_vel
    horiz2 = vb[0] ** 2 + vb[1] ** 2
    vz_rel = -np.sqrt(max(target_speed**2 - horiz2, 0.0))
    return Action(0.0, 0.0, np.array([0.0, 0.0, vb[2] - vz_rel]))


def solve_actions(states, model, tasks, opts: SolveOptions | None = None, config: SimConfig | None = None,
                  a0=None, lambda_trace=None):
    """Primal-dual action solve for a batch of independent problems.

    Every row runs ``a <- a - alpha_k grad_a L``, ``lam <- max(lam + alpha_lambda g, 0)``
    with ``alpha_k = alpha_a * step_decay**k`` until its step norm drops
    below ``tol`` or the iteration cap is hit. Returns ``(actions, reports)``.
    ``lambda_trace``, if a list, receives a copy of the multipliers after
    every iteration.
    """
    opts = opts or SolveOptions()
    config = config or SimConfig()
    states = list(states)
    tasks = list(tasks)
    start = time.perf_counter()
    b = _Batch.build(states, tasks)
    B = len(states)
    if a0 is None:
        a0 = [None] * B
    A = np.array([
        (a if a is not None else default_initial_action(s, t)).as_vector()
        for s, a, t in zip(states, a0, tasks)
    ])
    # a warm start whose predicted flight never lands has zero cost gradient
    _, _, _, ok = _evaluate(b, A, None, model, config, want_grad=False)
    for i in np.flatnonzero(~ok):
        A[i] = default_initial_action(states[i], tasks[i]).as_vector()
    lam = np.full((B, b.n_con), opts.lambda0)
    active = np.ones(B, dtype=bool)
    converged = np.zeros(B, dtype=bool)
    aborted = np.zeros(B, dtype=bool)
    iters = np.zeros(B, dtype=int)
    step = opts.alpha_a

    for k in range(opts.max_iterations):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        sub = _subset(b, idx)
        c, g, grad, _ = _evaluate(sub, A[idx], lam[idx], model, config)
        bad = ~np.isfinite(c) | ~np.all(np.isfinite(grad), axis=1) | ~np.all(np.isfinite(g), axis=1)
        if bad.any():
            aborted[idx[bad]] = True
            active[idx[bad]] = False
            keep = ~bad
            idx, g, grad = idx[keep], g[keep], grad[keep]
        delta = step * grad
        A[idx] -= delta
        lam[idx] = np.maximum(lam[idx] + opts.alpha_lambda * g, 0.0)
        iters[idx] += 1
        done = np.linalg.norm(delta, axis=1) < opts.tol
        converged[idx[done]] = True
        active[idx[done]] = False
        step *= opts.step_decay
        if lambda_trace is not None:
            lambda_trace.append(lam.copy())

    cost, g, _, ok = _evaluate(b, A, None, model, config, want_grad=False)
    wall = time.perf_counter() - start
    actions, reports = [], []
    for i in range(B):
        n_con = tasks[i].n_constraints
        viol = float(max(0.0, g[i, :n_con].max()))
        finite = bool(np.all(np.isfinite(A[i]))) and np.isfinite(cost[i])
        rep = SolveReport(
            cost=float(cost[i]),
            max_violation=viol,
            iterations=int(iters[i]),
            converged=bool(converged[i]),
            feasible=viol <= opts.violation_tol and bool(ok[i]),
            aborted=bool(aborted[i]) or not finite,
            wall_time=wall / max(B, 1),
            lambdas=lam[i, :n_con].copy(),
        )
        if rep.aborted:
            rep.message = "non-finite model output, gradient or action"
        elif not ok[i]:
            rep.message = "predicted flight never returns to the hit plane"
        elif not rep.feasible:
            rep.message = f"constraint violation {viol:.3g} above tolerance"
        actions.append(Action.from_vector(A[i]))
        reports.append(rep)
    return actions, reports


def _subset(b: _Batch, idx) -> _Batch:
    return _Batch(
        b.pos[idx], b.vb[idx], b.target[idx], b.lo[idx], b.hi[idx], b.vmin[idx], b.vmax[idx],
        [b.obstacles[i] for i in idx], b.margin[idx], b.n_con,
    )


def solve_action(s: SimState, model, task: ControlTask, opts: SolveOptions | None = None,
                 config: SimConfig | None = None, a0: Action | None = None, lambda_trace=None):
    actions, reports = solve_actions([s], model, [task], opts, config, [a0], lambda_trace)
    return actions[0], reports[0]


class MPCPolicy:
    """Replans once per bounce; optionally warm-starts from the last solution."""

    def __init__(self, model, task: ControlTask, opts: SolveOptions | None = None, config: SimConfig | None = None):
        self.model = model
        self.task = task
        self.opts = opts or SolveOptions()
        self.config = config or SimConfig()
        self.previous: Action | None = None
        self.reports: list[SolveReport] = []

    def __call__(self, state: SimState):
        """``(action, solve row)``; the episode records the row with the bounce."""
        a0 = self.previous if self.opts.warm_start else None
        action, report = solve_action(state, self.model, self.task, self.opts, self.config, a0)
        self.reports.append(report)
        if failure_reason(report):
            raise SolveAborted(report)
        self.previous = action
        return action, report.row()


# -- T-step rollout ------------------------------------------------------------
# Named differentiable pieces. Costs return (value, grad_s[, grad_a]);
# constraints return (values, jac_s[, jac_a]) with values as 1-D arrays.

def _zero_step_cost(params):
    def f(s, a):
        return 0.0, np.zeros_like(s), np.zeros_like(a)
    return f


def _action_quadratic(params):
    w = float(params.get("action_weight", 1.0))

    def f(s, a):
        return 0.5 * w * float(a @ a), np.zeros_like(s), w * a
    return f


def _target_distance(params):
    target = np.asarray(params["target"], dtype=np.float64)

    def f(s):
        d = s - target
        n = float(np.linalg.norm(d))
        return n, (d / n if n > 0 else np.zeros_like(d))
    return f


def _landing_distance(params):
    pos = np.asarray(params["impact_pos"], dtype=np.float64).reshape(1, 3)
    target = np.asarray(params["target"], dtype=np.float64)
    gravity = float(params.get("gravity", 9.81))
    z_hit = float(params.get("hit_plane_height", 0.0))

    def f(s):
        land, t, dt_dvz, ok = _landing(pos, s.reshape(1, 3), gravity, z_hit)
        if not ok[0]:
            return INFEASIBLE_COST, np.zeros(3)
        d = land[0] - target
        n = float(np.linalg.norm(d))
        w = (d / n if n > 0 else np.zeros(2)).reshape(1, 2)
        return n, _landing_vjp(s.reshape(1, 3), t, dt_dvz, w)[0]
    return f


def _no_step_constraint(params):
    def g(s, a):
        return np.zeros(0), np.zeros((0, s.size)), np.zeros((0, a.size))
    return g


def _action_box(params):
    lo = np.asarray(params["action_min"], dtype=np.float64)
    hi = np.asarray(params["action_max"], dtype=np.float64)

    def g(s, a):
        n = a.size
        eye = np.eye(n)
        return np.concatenate([a - hi, lo - a]), np.zeros((2 * n, s.size)), np.vstack([eye, -eye])
    return g


def _paddle_action(params):
    """Angle box plus ``||v_rel||`` bounds; the state is the incoming ball velocity."""
    task = params["task"]

    def g(s, a):
        v_rel = s - a[2:5]
        sp = float(np.linalg.norm(v_rel))
        u = v_rel / sp if sp > 0 else np.zeros(3)
        vals = np.array([
            a[0] - task.roll_max, task.roll_min - a[0],
            a[1] - task.pitch_max, task.pitch_min - a[1],
            sp - task.v_max, task.v_min - sp,
        ])
        js = np.zeros((6, s.size))
        ja = np.zeros((6, a.size))
        ja[0, 0], ja[1, 0], ja[2, 1], ja[3, 1] = 1.0, -1.0, 1.0, -1.0
        js[4], js[5] = u, -u
        ja[4, 2:5], ja[5, 2:5] = -u, u
        return vals, js, ja
    return g


def _no_final_constraint(params):
    def g(s):
        return np.zeros(0), np.zeros((0, s.size))
    return g


def _state_norm_max(params):
    limit = float(params["state_norm_max"])

    def g(s):
        n = float(np.linalg.norm(s))
        return np.array([n - limit]), (s / n if n > 0 else np.zeros_like(s)).reshape(1, -1)
    return g


def _landing_obstacles(params):
    pos = np.asarray(params["impact_pos"], dtype=np.float64).reshape(1, 3)
    task = params["task"]
    gravity = float(params.get("gravity", 9.81))
    z_hit = float(params.get("hit_plane_height", 0.0))

    def g(s):
        k = len(task.obstacles)
        vals, jac = np.zeros(k), np.zeros((k, 3))
        land, t, dt_dvz, ok = _landing(pos, s.reshape(1, 3), gravity, z_hit)
        if not ok[0]:
            return vals, jac
        for j, rect in enumerate(task.obstacles):
            depth, grad = rect_depth(land[0], rect)
            vals[j] = task.obstacle_margin + depth
            jac[j] = _landing_vjp(s.reshape(1, 3), t, dt_dvz, grad.reshape(1, 2))[0]
        return vals, jac
    return g


STEP_COSTS = {"zero": _zero_step_cost, "action_quadratic": _action_quadratic}
FINAL_COSTS = {"target_distance": _target_distance, "landing_distance": _landing_distance}
STEP_CONSTRAINTS = {"none": _no_step_constraint, "action_box": _action_box, "paddle_action": _paddle_action}
FINAL_CONSTRAINTS = {"none": _no_final_constraint, "state_norm_max": _state_norm_max, "landing_obstacles": _landing_obstacles}


@dataclass
class RolloutProblem:
    """``s_{t+1} = model(s_t, a_t)`` chained ``horizon - 1`` times from ``s_1``."""

    horizon: int
    model: object
    step_cost: str = "zero"
    final_cost: str = "target_distance"
    step_constraint: str = "none"
    final_constraint: str = "none"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        parts = []
        for kind, table, name in (
            ("step_cost", STEP_COSTS, self.step_cost),
            ("final_cost", FINAL_COSTS, self.final_cost),
            ("step_constraint", STEP_CONSTRAINTS, self.step_constraint),
            ("final_constraint", FINAL_CONSTRAINTS, self.final_constraint),
        ):
            if name not in table:
                raise ValueError(f"unknown {kind} {name!r}; choose from {sorted(table)}")
            try:
                parts.append(table[name](self.params))
            except KeyError as exc:
                raise ValueError(f"{kind} {name!r} needs parameter {exc.args[0]!r}") from None
        self._c_s, self._c_f, self._g_s, self._g_f = parts


def rollout_lagrangian(s1, actions, lambdas, problem: RolloutProblem):
    """Rollout Lagrangian and its gradient with respect to every action.

    ``lambdas[0]`` multiplies the final constraint, ``lambdas[t]`` the step
    constraint at step ``t`` (1-based); each is a scalar or a vector matching
    that constraint's arity. Returns ``(value, action_grads)``.
    """
    actions = [np.asarray(a, dtype=np.float64) for a in actions]
    if len(actions) != problem.horizon - 1 or len(lambdas) != problem.horizon:
        raise ValueError(
            f"horizon {problem.horizon} needs {problem.horizon - 1} actions and {problem.horizon} multipliers"
        )
    model = problem.model
    states = [np.asarray(s1, dtype=np.float64)]
    inputs = []
    for a in actions:
        x = np.concatenate([states[-1], a])
        inputs.append(x)
        states.append(np.asarray(model.predict(x), dtype=np.float64))

    ds = states[0].size
    value, gs_T = problem._c_f(states[-1])
    adj = np.asarray(gs_T, dtype=np.float64).copy()
    gf, jf = problem._g_f(states[-1])
    lam0 = np.broadcast_to(np.asarray(lambdas[0], dtype=np.float64), gf.shape)
    value += float(lam0 @ gf)
    adj += lam0 @ jf

    grads = [None] * len(actions)
    for t in range(len(actions) - 1, -1, -1):
        s, a = states[t], actions[t]
        c, cs, ca = problem._c_s(s, a)
        gv, js, ja = problem._g_s(s, a)
        lam = np.broadcast_to(np.asarray(lambdas[t + 1], dtype=np.float64), gv.shape)
        value += c + float(lam @ gv)
        dx = model.input_vjp(inputs[t], adj)
        grads[t] = dx[ds:] + ca + lam @ ja
        adj = dx[:ds] + cs + lam @ js
    return float(value), grads
