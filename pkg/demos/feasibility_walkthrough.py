"""
Least-squares feasibility on the line
=====================================

Two disjoint intervals have no common point, so the best compromise is the
minimizer of the average squared distance to them. With ``[-2, -1]`` and
``[1, 2]`` that point is 0. Each step of the stochastic method samples one
interval and moves toward it.
"""

import numpy as np

from stochprox import (
    ConvexSet, FeasibilitySpec, RngStream, SolverConfig, StepSchedule,
    make_feasibility_problem, replicate, spg_run,
)

spec = FeasibilitySpec(
    constraint=ConvexSet.whole_space(1),
    sets=[ConvexSet.box([-2.0], [-1.0]), ConvexSet.box([1.0], [2.0])],
)
dist = make_feasibility_problem(spec)
print("components:", dist.n_components, " beta:", dist.beta)

# One run with harmonic steps 1/(n+1), started far from the answer.
schedule = StepSchedule.power(1.0, 1.0)
cfg = SolverConfig(schedule=schedule, budget=20000, x0=[5.0], rng=RngStream(3),
                   record_every=5000)
run = spg_run(dist, cfg, reference=[0.0])
for n, x in zip(run.steps, run.iterates):
    if n in (0, 1, 16, 256, 5000, 20000):
        print(f"n = {n:6d}   x_n = {x[0]: .5f}")

# A single path is noisy; an ensemble shows the trend. Every replication has
# its own stream, keyed by (seed, replication index).
ens = replicate(dist, cfg, 200, reference=[0.0])
summ = ens.summary("dist")
print("\n     n   median |x_n|    q95 |x_n|")
for n, med, hi in zip(ens.steps, summ["median"], summ["q95"]):
    if n >= 256:
        print(f"{n:6d}   {med:.3e}      {hi:.3e}")

# The objective gap behaves like |x|^2 / 2 near the minimizer.
print("\nrunning-min gap, median over replications:",
      f"{np.median(ens.running_min_gap[:, -1]):.2e}")
