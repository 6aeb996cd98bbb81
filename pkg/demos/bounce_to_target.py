"""Keep a ball bouncing toward a target with the model-based controller.

Runs one episode with the exact impact model, then the same episode with
the 0.1 rad faulty analytic model, and prints the per-bounce landing error.

    python demos/bounce_to_target.py
"""
import numpy as np

from cmlearn.controller import ControlTask, MPCPolicy, SolveOptions
from cmlearn.sim import AnalyticImpactModel, SimConfig, drive, episode

cfg = SimConfig(seed=2)
task = ControlTask([0.6, -0.4], v_min=3.0, v_max=5.0)

for name, model in [("exact model", AnalyticImpactModel(0.8, 0.0)), ("faulty model", AnalyticImpactModel(0.8, 0.1))]:
    policy = MPCPolicy(model, task, SolveOptions(), cfg)
    trace = drive(episode(task.p_desired, cfg, 10, episode_id=0), policy)
    errs = " ".join(f"{e:.3f}" for e in trace.errors)
    print(f"{name:>12}: {trace.termination:<9} landing errors [m] {errs}")
    if trace.bounces:
        b = trace.bounces[-1]
        print(f"{'':>12}  last action roll {b.action.roll:+.3f} pitch {b.action.pitch:+.3f} "
              f"paddle velocity {np.round(b.action.paddle_vel, 3)}")
