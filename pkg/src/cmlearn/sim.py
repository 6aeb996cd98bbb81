"""Ball bouncing on a kinematic 5-DOF paddle.

The ball flies ballistically between impacts. At each impact the paddle is
already at the crossing point of the hit plane with the commanded roll, pitch
and velocity, and the ball velocity is updated by the restitution law

    v_out = alpha * (v_rel - 2 n (n . v_rel)) + v_paddle,    v_rel = v_ball - v_paddle.

Model inputs for the impact map are laid out as
``[v_ball (3), roll, pitch, v_paddle (3)]`` and the output is ``v_out``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

N_STATE = 3
N_ACTION = 5
N_INPUT = N_STATE + N_ACTION


class NoImpactError(ValueError):
    """The ball is not approaching the paddle surface."""


class PolicyFailure(RuntimeError):
    """Raised by a policy that cannot produce an action (e.g. aborted solve)."""

    reason = "policy_aborted"


@dataclass(frozen=True)
class SimConfig:
    gravity: float = 9.81
    restitution_alpha: float = 0.8
    hit_plane_height: float = 0.0
    workspace_radius: float = 1.5
    paddle_radius: float = 0.15
    observation_roll_error: float = 0.0
    dt: float = 0.01
    drop_height: tuple[float, float] = (0.8, 1.2)
    drop_spread: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not self.gravity >= 0:
            raise ValueError("gravity must be nonnegative")
        if not 0 < self.restitution_alpha <= 1:
            raise ValueError("restitution_alpha must lie in (0, 1]")
        if not (self.dt > 0 and self.workspace_radius > 0 and self.paddle_radius > 0):
            raise ValueError("dt, workspace_radius and paddle_radius must be positive")


@dataclass
class Action:
    roll: float
    pitch: float
    paddle_vel: np.ndarray

    def __post_init__(self):
        self.roll = float(self.roll)
        self.pitch = float(self.pitch)
        self.paddle_vel = np.asarray(self.paddle_vel, dtype=np.float64).reshape(3)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.roll, self.pitch], self.paddle_vel])

    @classmethod
    def from_vector(cls, a) -> Action:
        a = np.asarray(a, dtype=np.float64)
        return cls(a[0], a[1], a[2:5])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.as_vector())))


@dataclass
class SimState:
    ball_pos: np.ndarray
    ball_vel: np.ndarray
    paddle_pos: np.ndarray = field(default_factory=lambda: np.zeros(3))
    paddle_roll: float = 0.0
    paddle_pitch: float = 0.0
    paddle_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("ball_pos", "ball_vel", "paddle_pos", "paddle_vel"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(3))

    def copy(self) -> SimState:
        return SimState(
            self.ball_pos.copy(), self.ball_vel.copy(), self.paddle_pos.copy(),
            self.paddle_roll, self.paddle_pitch, self.paddle_vel.copy(),
        )


def paddle_normal(roll, pitch):
    """Unit normal of the paddle: pitch about y, then roll about x.

    ``n = (cos(roll) sin(pitch), -sin(roll), cos(roll) cos(pitch))``; works
    elementwise on arrays and returns shape ``(..., 3)``.
    """
    roll = np.asarray(roll, dtype=np.float64)
    pitch = np.asarray(pitch, dtype=np.float64)
    cr = np.cos(roll)
    return np.stack([cr * np.sin(pitch), -np.sin(roll), cr * np.cos(pitch)], axis=-1)


def _normal_partials(roll, pitch):
    sr, cr = np.sin(roll), np.cos(roll)
    sp, cp = np.sin(pitch), np.cos(pitch)
    dn_droll = np.stack([-sr * sp, -cr, -sr * cp], axis=-1)
    dn_dpitch = np.stack([cr * cp, np.zeros_like(cr), -cr * sp], axis=-1)
    return dn_droll, dn_dpitch


def impact(v_ball, v_paddle, n, alpha: float) -> np.ndarray:
    v_ball = np.asarray(v_ball, dtype=np.float64)
    v_paddle = np.asarray(v_paddle, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    v_rel = v_ball - v_paddle
    approach = float(n @ v_rel)
    if not approach < 0:
        raise NoImpactError(f"ball is not approaching the paddle (n . v_rel = {approach:g})")
    return alpha * (v_rel - 2.0 * n * approach) + v_paddle


class AnalyticImpactModel:
    """Restitution law as a differentiable impact model.

    ``roll_error`` is added to the commanded roll before computing the
    normal, which reproduces a model that misreads the paddle orientation.
    With ``roll_error = 0`` this is the simulator's own impact map.
    """

    n_inputs = N_INPUT
    n_outputs = N_STATE

    def __init__(self, alpha: float = 0.8, roll_error: float = 0.0):
        self.alpha = float(alpha)
        self.roll_error = float(roll_error)

    def __repr__(self):
        return f"AnalyticImpactModel(alpha={self.alpha}, roll_error={self.roll_error})"

    def _split(self, x):
        x = np.asarray(x, dtype=np.float64)
        xb = np.atleast_2d(x)
        if xb.shape[1] != N_INPUT:
            raise ValueError(f"impact model expects {N_INPUT} inputs, got {xb.shape[1]}")
        return x.ndim == 1, xb[:, 0:3], xb[:, 3] + self.roll_error, xb[:, 4], xb[:, 5:8]

    def predict(self, x):
        single, vb, roll, pitch, vp = self._split(x)
        n = paddle_normal(roll, pitch)
        r = vb - vp
        nr = np.sum(n * r, axis=1, keepdims=True)
        y = self.alpha * (r - 2.0 * n * nr) + vp
        return y[0] if single else y

    def input_vjp(self, x, upstream):
        single, vb, roll, pitch, vp = self._split(x)
        u = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        n = paddle_normal(roll, pitch)
        r = vb - vp
        nr = np.sum(n * r, axis=1, keepdims=True)
        nu = np.sum(n * u, axis=1, keepdims=True)
        # reflection matrix I - 2 n n^T is symmetric
        refl_u = u - 2.0 * n * nu
        d_vb = self.alpha * refl_u
        d_vp = u - self.alpha * refl_u
        d_n = -2.0 * self.alpha * (nr * u + nu * r)
        dn_droll, dn_dpitch = _normal_partials(roll, pitch)
        d_roll = np.sum(d_n * dn_droll, axis=1, keepdims=True)
        d_pitch = np.sum(d_n * dn_dpitch, axis=1, keepdims=True)
        out = np.hstack([d_vb, d_roll, d_pitch, d_vp])
        return out[0] if single else out


def encode_input(v_ball, action) -> np.ndarray:
    a = action.as_vector() if isinstance(action, Action) else np.asarray(action, dtype=np.float64)
    return np.concatenate([np.asarray(v_ball, dtype=np.float64), a])


def analytic_model(sample_in, config: SimConfig) -> np.ndarray:
    """Impact prediction with the configured roll observation error.

    ``sample_in`` is an 8-vector in model-input layout.
    """
    x = np.asarray(sample_in, dtype=np.float64)
    n = paddle_normal(x[3] + config.observation_roll_error, x[4])
    return impact(x[0:3], x[5:8], n, config.restitution_alpha)


# -- flight --------------------------------------------------------------------

def flight_step(state: SimState, dt: float, config: SimConfig) -> SimState:
    """Exact ballistic update; the paddle moves with its current velocity."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    g = config.gravity
    pos = state.ball_pos + state.ball_vel * dt
    pos[2] -= 0.5 * g * dt * dt
    vel = state.ball_vel.copy()
    vel[2] -= g * dt
    return SimState(
        pos, vel, state.paddle_pos + state.paddle_vel * dt,
        state.paddle_roll, state.paddle_pitch, state.paddle_vel.copy(),
    )


def _signed_gap(state: SimState, n, t: float, g: float) -> float:
    ball = state.ball_pos + state.ball_vel * t
    ball[2] -= 0.5 * g * t * t
    paddle = state.paddle_pos + state.paddle_vel * t
    return float(n @ (ball - paddle))


def detect_impact(state: SimState, dt: float, config: SimConfig | None = None, tol: float = 1e-9):
    """Earliest time in ``[0, dt]`` at which the ball meets the paddle disc.

    The ball must cross the paddle plane from the front while approaching it
    (``n . v_rel < 0``) and land within ``paddle_radius`` of the paddle
    center. The crossing is bracketed on a coarse grid and refined by
    bisection to ``tol`` seconds. Returns None when there is no such impact.
    """
    config = config or SimConfig()
    if not dt > 0:
        raise ValueError("dt must be positive")
    g = config.gravity
    n = paddle_normal(state.paddle_roll, state.paddle_pitch)
    # d(t) is quadratic, so it changes sign at most twice; 8 cells isolate the
    # first front-to-back crossing. A ball starting on or just behind the plane
    # (right after a bounce) may rise in front of it and come back within dt.
    grid = np.linspace(0.0, dt, 9)
    gaps = [_signed_gap(state, n, t, g) for t in grid]
    lo = hi = None
    for k in range(8):
        if gaps[k] > 0.0 and gaps[k + 1] <= 0.0:
            lo, hi = grid[k], grid[k + 1]
            break
    if lo is None:
        return None
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _signed_gap(state, n, mid, g) <= 0.0:
            hi = mid
        else:
            lo = mid
    t = hi
    v_ball = state.ball_vel - np.array([0.0, 0.0, g * t])
    if not float(n @ (v_ball - state.paddle_vel)) < 0.0:
        return None
    ball = state.ball_pos + state.ball_vel * t
    ball[2] -= 0.5 * g * t * t
    offset = ball - (state.paddle_pos + state.paddle_vel * t)
    in_plane = offset - n * float(n @ offset)
    if np.linalg.norm(in_plane) > config.paddle_radius:
        return None
    return t


def plane_crossing(pos, vel, config: SimConfig):
    """Time and position at which a ball next descends through the hit plane.

    Returns None if it never gets there (moving up from below, or zero gravity
    and not descending).
    """
    dz = pos[2] - config.hit_plane_height
    g = config.gravity
    if g == 0.0:
        if vel[2] >= 0 or dz < 0:
            return None
        t = dz / -vel[2]
    else:
        disc = vel[2] ** 2 + 2.0 * g * dz
        if disc < 0:
            return None
        t = (vel[2] + np.sqrt(disc)) / g
        if t <= 0:
            return None
    p = pos + vel * t
    p[2] -= 0.5 * g * t * t
    return t, p


# -- episodes ------------------------------------------------------------------

@dataclass
class BounceRecord:
    index: int
    impact_pos: np.ndarray
    ball_vel_in: np.ndarray
    action: Action
    ball_vel_out: np.ndarray
    landing: np.ndarray | None  # xy of the next hit-plane crossing
    error: float | None  # distance from landing to the target
    flight_time: float | None
    impact_time: float = 0.0  # episode clock at the impact
    solve: dict | None = None

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "impact_pos": self.impact_pos.tolist(),
            "ball_vel_in": self.ball_vel_in.tolist(),
            "roll": self.action.roll,
            "pitch": self.action.pitch,
            "paddle_vel": self.action.paddle_vel.tolist(),
            "ball_vel_out": self.ball_vel_out.tolist(),
            "landing": None if self.landing is None else self.landing.tolist(),
            "error": self.error,
            "flight_time": self.flight_time,
            "impact_time": self.impact_time,
            **({"solve": self.solve} if self.solve else {}),
        }


@dataclass
class EpisodeTrace:
    target: np.ndarray
    bounces: list = field(default_factory=list)
    termination: str = "completed"  # or "failure"
    reason: str = ""
    sim_time: float = 0.0
    trajectory: list = field(default_factory=list)  # (t, x, y, z) samples

    @property
    def failed(self) -> bool:
        return self.termination == "failure"

    @property
    def errors(self) -> list[float]:
        return [b.error for b in self.bounces if b.error is not None]

    @property
    def mean_error(self) -> float | None:
        e = self.errors
        return float(np.mean(e)) if e else None

    def transitions(self):
        """(v_ball_in, action vector, v_ball_out) per impact."""
        for b in self.bounces:
            yield b.ball_vel_in, b.action.as_vector(), b.ball_vel_out

    def to_jsonl(self) -> str:
        head = {
            "target": self.target.tolist(),
            "termination": self.termination,
            "reason": self.reason,
            "bounces": len(self.bounces),
            "sim_time": self.sim_time,
        }
        return "\n".join([json.dumps(head)] + [json.dumps(b.to_json()) for b in self.bounces]) + "\n"


def initial_state(config: SimConfig, rng) -> SimState:
    lo, hi = config.drop_height
    xy = rng.uniform(-config.drop_spread, config.drop_spread, size=2)
    z = config.hit_plane_height + rng.uniform(lo, hi)
    return SimState(np.array([xy[0], xy[1], z]), np.zeros(3))


def _fly(state: SimState, config: SimConfig, trace: EpisodeTrace, record: bool):
    """Integrate until the ball meets a flat paddle parked at its crossing point.

    Returns the pre-impact state and the flight time, or None when the
    crossing lies outside the workspace (the paddle cannot get there) or does
    not exist.
    """
    hit = plane_crossing(state.ball_pos, state.ball_vel, config)
    if hit is None:
        return None
    t_hit, p = hit
    if np.linalg.norm(p[:2]) > config.workspace_radius:
        return None
    s = state.copy()
    s.paddle_pos = p.copy()
    s.paddle_roll = s.paddle_pitch = 0.0
    s.paddle_vel = np.zeros(3)
    elapsed = 0.0
    # the crossing is known in closed form; a couple of spare steps cover the
    # case where the flight is too short for the detector to resolve
    for _ in range(int(np.ceil(t_hit / config.dt)) + 2):
        t = detect_impact(s, config.dt, config)
        if t is not None:
            s = flight_step(s, t, config) if t > 0 else s
            elapsed += t
            if record:
                trace.trajectory.append((trace.sim_time + elapsed, *s.ball_pos))
            return s, elapsed
        s = flight_step(s, config.dt, config)
        elapsed += config.dt
        if record:
            trace.trajectory.append((trace.sim_time + elapsed, *s.ball_pos))
    return None


def episode(target, config: SimConfig, max_bounces: int, episode_id: int = 0, record_trajectory: bool = False):
    """Generator form of an episode.

    Yields the pre-impact :class:`SimState` at every bounce and expects the
    paddle :class:`Action` to be sent back (``None`` aborts the episode as a
    policy failure). Returns the :class:`EpisodeTrace` via ``StopIteration``.
    An optional ``(action, info_dict)`` pair may be sent instead of a bare
    action; the dict is stored on the bounce record. ``(None, {"reason": r})``
    aborts with failure reason ``r``.
    """
    target = np.asarray(target, dtype=np.float64).reshape(2)
    trace = EpisodeTrace(target)
    if max_bounces <= 0:
        return trace
    rng = np.random.default_rng([config.seed, episode_id])
    state = initial_state(config, rng)
    flown = _fly(state, config, trace, record_trajectory)
    if flown is None:
        trace.termination, trace.reason = "failure", "fell"
        return trace
    state, t = flown
    trace.sim_time += t

    for k in range(max_bounces):
        reply = yield state.copy()
        info = None
        if isinstance(reply, tuple):
            reply, info = reply
        if reply is None:
            trace.termination, trace.reason = "failure", (info or {}).get("reason", "policy_aborted")
            return trace
        action = reply
        if not action.is_finite():
            trace.termination, trace.reason = "failure", "non_finite_action"
            return trace
        n = paddle_normal(action.roll, action.pitch)
        v_in = state.ball_vel.copy()
        try:
            v_out = impact(v_in, action.paddle_vel, n, config.restitution_alpha)
        except NoImpactError:
            trace.termination, trace.reason = "failure", "no_impact"
            return trace
        after = SimState(state.ball_pos.copy(), v_out, state.ball_pos.copy(), action.roll, action.pitch, np.zeros(3))
        flown = _fly(after, config, trace, record_trajectory)
        rec = BounceRecord(k, state.ball_pos.copy(), v_in, action, v_out, None, None, None, trace.sim_time, info)
        trace.bounces.append(rec)
        if flown is None:
            hit = plane_crossing(after.ball_pos, v_out, config)
            far = hit is not None and np.linalg.norm(hit[1][:2]) > config.workspace_radius
            # otherwise the ball never rose clear of the paddle again
            trace.termination, trace.reason = "failure", "out_of_reach" if far else "fell"
            if hit is not None:
                rec.landing = hit[1][:2].copy()
                rec.error = float(np.linalg.norm(rec.landing - target))
            return trace
        state, t = flown
        trace.sim_time += t
        rec.landing = state.ball_pos[:2].copy()
        rec.error = float(np.linalg.norm(rec.landing - target))
        rec.flight_time = t
    return trace


def drive(gen, policy):
    """Run an episode generator to completion with ``policy(state) -> Action``."""
    try:
        state = next(gen)
        while True:
            try:
                reply = policy(state)
            except PolicyFailure as exc:
                reply = (None, {"reason": exc.reason})
            state = gen.send(reply)
    except StopIteration as stop:
        return stop.value


def run_episode(policy, task, config: SimConfig, max_bounces: int, episode_id: int = 0, record_trajectory: bool = False) -> EpisodeTrace:
    """Simulate up to ``max_bounces`` impacts with ``policy(state) -> Action``.

    ``task`` only needs a ``p_desired`` attribute (or is the target itself).
    """
    target = getattr(task, "p_desired", task)
    return drive(episode(target, config, max_bounces, episode_id, record_trajectory), policy)
