"""Where does each objective spend its accuracy?

Trains the same network on a synthetic task with labels on both sides of
||f|| = 0.1, once on plain absolute error and once on the constrained
normalized-error problem, then prints error quantiles by label magnitude.

    python demos/error_distribution.py [iterations]
"""
import sys

import numpy as np

from cmlearn.constrained import TrainConfig, normalized_error_problem, train, unconstrained_problem
from cmlearn.mlp import forward, init_mlp
from cmlearn.synthetic import mixed_magnitude_dataset

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
data, val = mixed_magnitude_dataset(5000, seed=0), mixed_magnitude_dataset(1000, seed=1)
norm = np.linalg.norm(val.labels, axis=1)
bins = [0.0, 0.1, 0.3, 1.0, np.inf]

for name, problem in [("unconstrained", unconstrained_problem()), ("constrained", normalized_error_problem(0.1, 0.1))]:
    net, dual, log = train(init_mlp([8, 128, 128, 3], seed=0), data, problem, TrainConfig(iterations=iterations, seed=1))
    err = np.linalg.norm(forward(net, val.inputs) - val.labels, axis=1)
    print(f"{name}: lambda {np.round(dual.lambdas, 4).tolist()}")
    for lo, hi in zip(bins[:-1], bins[1:]):
        m = (norm >= lo) & (norm < hi)
        print(f"  ||f|| in [{lo}, {hi}): n={m.sum():4d}  mean abs err {err[m].mean():.4f}  "
              f"median normalized {np.median(err[m] / norm[m]):.3f}")
