import numpy as np
import pytest

from cmlearn.controller import (
    INFEASIBLE_COST,
    ControlTask,
    InfeasibleFlightError,
    RolloutProblem,
    SolveOptions,
    control_constraints,
    control_cost,
    control_cost_grad,
    default_initial_action,
    landing_point,
    rect_depth,
    rollout_lagrangian,
    single_lagrangian,
    solve_action,
    solve_actions,
)
from cmlearn.harness import ResidualModel
from cmlearn.mlp import init_mlp
from cmlearn.sim import Action, AnalyticImpactModel, SimConfig, SimState, encode_input, episode, plane_crossing
from conftest import central_diff, rel_err

TRUTH = AnalyticImpactModel(0.8, 0.0)


class ConstantModel:
    """Predicts a fixed post-impact velocity regardless of input."""

    def __init__(self, v):
        self.v = np.asarray(v, dtype=float)

    def predict(self, x):
        x = np.asarray(x)
        return self.v.copy() if x.ndim == 1 else np.tile(self.v, (x.shape[0], 1))

    def input_vjp(self, x, upstream):
        return np.zeros_like(np.asarray(x, dtype=float))


class NanModel(ConstantModel):
    def __init__(self):
        super().__init__([np.nan] * 3)


def at_plane(v=(0.0, 0.0, -4.4), xy=(0.0, 0.0)):
    return SimState(np.array([xy[0], xy[1], 0.0]), np.array(v, dtype=float))


def random_instance(r):
    s = at_plane((r.normal(0, 0.3), r.normal(0, 0.3), -r.uniform(3.5, 5.0)), r.uniform(-0.5, 0.5, 2))
    task = ControlTask(r.uniform(-1, 1, 2), v_min=3.0, v_max=5.0, obstacles=[(-2.0, -1.5, -2.0, -1.5)])
    a = np.array([r.uniform(-0.2, 0.2), r.uniform(-0.2, 0.2), *r.normal(0, 0.2, 2), r.uniform(-0.5, 0.5)])
    return s, task, a


# -- landing point ---------------------------------------------------------------

def test_landing_point_unit_flight():
    np.testing.assert_allclose(landing_point([0, 0, 0], [1.0, 0.0, 4.905]), [1.0, 0.0], atol=1e-12)


def test_landing_point_vertical_launch_returns():
    np.testing.assert_allclose(landing_point([0.3, -0.2, 0.0], [0.0, 0.0, 3.0]), [0.3, -0.2], atol=1e-15)


def test_landing_point_linear_in_horizontal_velocity(rng):
    p = landing_point([0, 0, 0], [0.4, -0.3, 3.0])
    q = landing_point([0, 0, 0], [0.8, -0.6, 3.0])
    np.testing.assert_allclose(q, 2 * p, rtol=1e-14)


def test_landing_point_matches_simulator_crossing(rng):
    cfg = SimConfig()
    for _ in range(10):
        pos, vel = np.array([*rng.normal(size=2), rng.uniform(0, 1)]), rng.normal(size=3)
        _, p = plane_crossing(pos, vel, cfg)
        np.testing.assert_allclose(landing_point(pos, vel, cfg), p[:2], rtol=1e-12, atol=1e-12)


def test_landing_point_infeasible():
    with pytest.raises(InfeasibleFlightError):
        landing_point([0, 0, -1.0], [0, 0, 1.0])


def test_landing_vjp_finite_differences():
    from cmlearn.controller import _landing, _landing_vjp

    for seed in range(100):
        r = np.random.default_rng(seed)
        pos = np.array([[*r.normal(size=2), 0.0]])
        vel = np.array([[*r.normal(size=2), r.uniform(1.0, 6.0)]])
        w = r.normal(size=(1, 2))
        _, t, dt_dvz, _ = _landing(pos, vel, 9.81, 0.0)
        g = _landing_vjp(vel, t, dt_dvz, w)[0]
        fd = central_diff(lambda v: float(w[0] @ landing_point(pos[0], v)), vel[0])
        assert rel_err(g, fd) <= 1e-4, seed


# -- cost and constraints --------------------------------------------------------

def test_cost_zero_on_target():
    s = at_plane()
    land = landing_point(s.ball_pos, [1.0, 0.0, 4.905])
    assert control_cost(s, np.zeros(5), ConstantModel([1.0, 0.0, 4.905]), ControlTask(land)) == 0.0


def test_cost_unit_distance():
    cost = control_cost(at_plane(), np.zeros(5), ConstantModel([1.0, 0.0, 4.905]), ControlTask([0.0, 0.0]))
    assert cost == pytest.approx(1.0, abs=1e-12)


def test_cost_infeasible_flight_penalty():
    cost, grad, ok = control_cost_grad(at_plane(), np.zeros(5), ConstantModel([0, 0, -1.0]), ControlTask([0, 0]))
    assert cost == INFEASIBLE_COST and not ok and not grad.any()


def test_constraints_center_all_negative():
    g = control_constraints(at_plane((0, 0, -4.0)), [0, 0, 0, 0, 0], TRUTH, ControlTask([0, 0], v_min=3.0, v_max=5.0))
    assert g.shape == (6,) and np.all(g < 0)


def test_constraints_roll_at_bound_is_zero():
    task = ControlTask([0, 0])
    g = control_constraints(at_plane(), [task.roll_max, 0, 0, 0, 0], TRUTH, task)
    assert g[0] == 0.0


def test_constraints_speed_rows():
    g = control_constraints(at_plane((0, 0, -4.0)), [0, 0, 0, 0, 1.0], TRUTH, ControlTask([0, 0], v_min=3.0, v_max=4.5))
    assert g[4] == pytest.approx(5.0 - 4.5) and g[5] == pytest.approx(3.0 - 5.0)


def test_obstacle_entry_inside_by_0_2():
    # landing (1, 0); rectangle x in [0.8, 2], y in [-1, 1] -> nearest face 0.2 away
    task = ControlTask([0, 0], obstacles=[(0.8, 2.0, -1.0, 1.0)])
    g = control_constraints(at_plane(), np.zeros(5), ConstantModel([1.0, 0.0, 4.905]), task)
    assert g[6] == pytest.approx(0.2, abs=1e-12)


def test_rect_depth_outside_and_corner():
    d, grad = rect_depth([3.0, 4.0], (-0.0, 0.0, -0.0, 0.0))
    assert d == pytest.approx(-5.0) and np.allclose(grad, [-0.6, -0.8])
    d, _ = rect_depth([0.5, 0.5], (0, 1, 0, 2))
    assert d == pytest.approx(0.5)


def test_cost_gradient_full_chain_finite_differences():
    """Action gradient through model and landing point, on 100 seeded instances."""
    net = init_mlp([8, 16, 16, 3], seed=0)
    net = net.set_params(0.05 * net.get_params())
    model = ResidualModel(AnalyticImpactModel(0.8, 0.07), net)
    worst = 0.0
    checked = 0
    for seed in range(100):
        r = np.random.default_rng(seed)
        s, task, a = random_instance(r)
        lam = r.uniform(0, 2, size=7)
        _, grad = single_lagrangian(s, a, lam, model, task)
        fd = central_diff(lambda v: single_lagrangian(s, v, lam, model, task)[0], a, h=1e-6)
        worst = max(worst, rel_err(grad, fd, floor=1e-4))
        checked += 1
    assert checked == 100
    assert worst <= 1e-3


# -- solver ----------------------------------------------------------------------

def test_zero_iterations_returns_start():
    s, task = at_plane(), ControlTask([0.3, 0.1])
    a0 = Action(0.05, -0.02, [0.1, 0.0, 0.5])
    a, rep = solve_action(s, TRUTH, task, SolveOptions(max_iterations=0), a0=a0)
    np.testing.assert_array_equal(a.as_vector(), a0.as_vector())
    assert rep.iterations == 0


def test_truth_model_reaches_target_and_matches_simulator():
    cfg = SimConfig(seed=4)
    for k, target in enumerate([(0.3, -0.2), (-0.6, 0.4), (0.0, 0.8)]):
        gen = episode(target, cfg, 1, k)
        s = next(gen)
        task = ControlTask(target)
        a, rep = solve_action(s, TRUTH, task, SolveOptions(), cfg)
        assert rep.cost <= 0.05 and rep.max_violation <= 1e-3 and rep.iterations <= 500
        predicted = landing_point(s.ball_pos, TRUTH.predict(encode_input(s.ball_vel, a)), cfg)
        try:
            gen.send(a)
        except StopIteration as stop:
            trace = stop.value
        assert np.linalg.norm(trace.bounces[0].landing - predicted) <= 1e-6
        assert trace.bounces[0].error <= 0.05


def test_dual_variables_stay_nonnegative():
    trace = []
    s, task = at_plane((0.2, -0.1, -4.0)), ControlTask([0.5, 0.5])
    a0 = Action(0.6, 0.0, [0.0, 0.0, 0.0])  # starts outside the roll box
    a, rep = solve_action(s, TRUTH, task, SolveOptions(max_iterations=300), a0=a0, lambda_trace=trace)
    assert len(trace) > 0
    assert all(np.all(l >= 0) for l in trace)
    assert trace[0][0, 0] > 0  # the roll upper bound pushed its multiplier up
    assert a.roll <= task.roll_max + 1e-3


def test_non_finite_model_aborts():
    _, rep = solve_action(at_plane(), NanModel(), ControlTask([0, 0]))
    assert rep.aborted and "finite" in rep.message


def test_batched_solve_equals_individual(rng):
    cfg = SimConfig()
    states, tasks = [], []
    for seed in range(4):
        s, task, _ = random_instance(np.random.default_rng(seed))
        states.append(s)
        tasks.append(task)
    acts, reps = solve_actions(states, TRUTH, tasks, SolveOptions(max_iterations=150), cfg)
    for s, t, a, rep in zip(states, tasks, acts, reps):
        a1, rep1 = solve_action(s, TRUTH, t, SolveOptions(max_iterations=150), cfg)
        np.testing.assert_array_equal(a.as_vector(), a1.as_vector())
        assert rep.cost == rep1.cost and rep.iterations == rep1.iterations


def test_stateless_without_warm_start():
    s1, t1, _ = random_instance(np.random.default_rng(1))
    s2, t2, _ = random_instance(np.random.default_rng(2))
    opts = SolveOptions(max_iterations=100)
    a_first, _ = solve_action(s1, TRUTH, t1, opts)
    solve_action(s2, TRUTH, t2, opts)
    a_again, _ = solve_action(s1, TRUTH, t1, opts)
    np.testing.assert_array_equal(a_first.as_vector(), a_again.as_vector())


def test_default_initial_action_mid_speed():
    s, task = at_plane((0, 0, -4.0)), ControlTask([0, 0], v_min=3.0, v_max=5.0)
    a = default_initial_action(s, task)
    assert a.roll == 0 and a.pitch == 0
    assert np.linalg.norm(s.ball_vel - a.paddle_vel) == pytest.approx(4.0)


# -- T-step rollout --------------------------------------------------------------

def test_rollout_t2_reduces_to_single_step_lagrangian():
    for seed in range(10):
        r = np.random.default_rng(seed)
        s, task, a = random_instance(r)
        task.obstacles = [(-0.3, 0.3, -0.3, 0.3)]
        lam = r.uniform(0, 2, size=7)
        prob = RolloutProblem(
            2, TRUTH, "zero", "landing_distance", "paddle_action", "landing_obstacles",
            {"task": task, "target": task.p_desired, "impact_pos": s.ball_pos},
        )
        val, grads = rollout_lagrangian(s.ball_vel, [a], [lam[6:], lam[:6]], prob)
        ref, ref_grad = single_lagrangian(s, a, lam, TRUTH, task)
        assert val == pytest.approx(ref, rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(grads[0], ref_grad, rtol=1e-10, atol=1e-12)


def test_rollout_zero_multipliers_is_pure_cost(rng):
    net = init_mlp([8, 12, 3], seed=1)
    prob = RolloutProblem(3, net, "action_quadratic", "target_distance", "action_box", "state_norm_max",
                          {"target": np.ones(3), "action_min": -np.ones(5), "action_max": np.ones(5), "state_norm_max": 0.1})
    acts = [rng.normal(size=5), rng.normal(size=5)]
    s1 = rng.normal(size=3)
    v0, _ = rollout_lagrangian(s1, acts, [0.0, np.zeros(10), np.zeros(10)], prob)
    s2 = net.predict(np.concatenate([s1, acts[0]]))
    s3 = net.predict(np.concatenate([s2, acts[1]]))
    expected = np.linalg.norm(s3 - 1) + 0.5 * (acts[0] @ acts[0] + acts[1] @ acts[1])
    assert v0 == pytest.approx(expected, rel=1e-13)


def test_rollout_t3_gradients_finite_differences():
    for seed in range(100):
        r = np.random.default_rng(seed)
        net = init_mlp([8, 12, 12, 3], seed=seed)
        prob = RolloutProblem(3, net, "action_quadratic", "target_distance", "action_box", "state_norm_max",
                              {"target": r.normal(size=3), "action_min": -0.5 * np.ones(5), "action_max": 0.5 * np.ones(5),
                               "state_norm_max": 0.5, "action_weight": r.uniform(0.1, 1.0)})
        s1 = r.normal(size=3)
        acts = [r.normal(size=5), r.normal(size=5)]
        lams = [r.uniform(0, 1), r.uniform(0, 1, 10), r.uniform(0, 1, 10)]
        _, grads = rollout_lagrangian(s1, acts, lams, prob)
        flat = np.concatenate(acts)
        fd = central_diff(lambda v: rollout_lagrangian(s1, [v[:5], v[5:]], lams, prob)[0], flat)
        assert rel_err(np.concatenate(grads), fd, floor=1e-4) <= 1e-3, seed


def test_rollout_horizon_mismatch():
    prob = RolloutProblem(3, TRUTH, params={"target": np.zeros(3)})
    with pytest.raises(ValueError):
        rollout_lagrangian(np.zeros(3), [np.zeros(5)], [0.0, 0.0, 0.0], prob)
    with pytest.raises(ValueError):
        RolloutProblem(1, TRUTH)
    with pytest.raises(ValueError, match="target"):
        RolloutProblem(3, TRUTH)
    with pytest.raises(ValueError, match="unknown"):
        RolloutProblem(3, TRUTH, final_cost="nope", params={"target": np.zeros(3)})


def test_failure_reason_flags():
    from cmlearn.controller import SolveReport, failure_reason

    base = dict(cost=0.0, max_violation=0.0, iterations=1, converged=False, feasible=True)
    assert failure_reason(SolveReport(**base)) is None  # hitting the iteration cap alone is fine
    assert failure_reason(SolveReport(**{**base, "feasible": False})) == "solve_infeasible"
    assert failure_reason(SolveReport(**base, aborted=True)) == "policy_aborted"


def test_mpc_policy_reports_infeasible_solve():
    from cmlearn.controller import MPCPolicy
    from cmlearn.sim import drive

    cfg = SimConfig(seed=1)
    policy = MPCPolicy(ConstantModel([0.0, 0.0, -1.0]), ControlTask([0, 0]), SolveOptions(max_iterations=5), cfg)
    trace = drive(episode([0, 0], cfg, 3), policy)
    assert trace.failed and trace.reason == "solve_infeasible" and not trace.bounces
