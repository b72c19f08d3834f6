"""
Which step sizes are allowed
============================

Convergence needs steps whose sum diverges while the sum of their squares
converges. Power schedules ``gamma0 / (n + 1)^p`` meet this exactly for
``1/2 < p <= 1``. The solvers refuse anything else unless told otherwise,
and with summable steps the method simply runs out of distance to travel.
"""

import numpy as np

from stochprox import (
    ConvexSet, FeasibilitySpec, ScheduleError, SolverConfig, StepSchedule,
    make_feasibility_problem, replicate, validate_schedule,
)

for p in (0.4, 0.5, 0.51, 0.75, 1.0, 1.5):
    print(f"p = {p:<5}  {validate_schedule(StepSchedule.power(1.0, p))}")
print("constant:", validate_schedule(StepSchedule.constant(0.1)))

dist = make_feasibility_problem(FeasibilitySpec(
    ConvexSet.whole_space(1), [ConvexSet.box([-2.0], [-1.0]), ConvexSet.box([1.0], [2.0])]))

summable = StepSchedule.power(0.1, 1.5)
try:
    replicate(dist, SolverConfig(schedule=summable, budget=10, x0=[5.0]), 2)
except ScheduleError as exc:
    print("\nrejected:", exc)

# Forcing it through: the total step mass is about 0.26, and the gradients on
# [-5, 5] are at most 6, so no path can get closer than about 3.4 to zero.
for sched, label in ((summable, "summable"), (StepSchedule.power(1.0, 1.0), "harmonic")):
    cfg = SolverConfig(schedule=sched, budget=20000, x0=[5.0], allow_invalid_schedule=True,
                       record_every=20000)
    ens = replicate(dist, cfg, 100, reference=[0.0])
    print(f"{label:9s} median |x_N| = {np.median(np.abs(ens.finals)):.4f}")
print("step mass of the summable schedule:", f"{summable.gammas(0, 20000).sum():.4f}")
