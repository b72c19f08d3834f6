"""
Watching the mean-square recursion
==================================

Between checkpoints ``m < n`` the expected squared distance to the minimizer
obeys ``E|x_n - z|^2 <= A E|x_m - z|^2 + B``, with ``A`` and ``B`` built from
the steps, the Lipschitz constant and the residual second moment. The monitor
estimates both sides from an ensemble and flags a pair only when the excess
is more than three standard errors above zero.
"""

from stochprox import (
    ConvexSet, FeasibilitySpec, RngStream, SolverConfig, StepSchedule, check_assumption1,
    fejer_monitor, feasibility_subgradients, make_feasibility_problem, replicate,
)

dist = make_feasibility_problem(FeasibilitySpec(
    ConvexSet.whole_space(1), [ConvexSet.box([-2.0], [-1.0]), ConvexSet.box([1.0], [2.0])]))
zbar = [0.0]
sigma2 = check_assumption1(dist, zbar, feasibility_subgradients(dist, zbar)).second_moment

schedule = StepSchedule.power(1.0, 1.0)
cfg = SolverConfig(schedule=schedule, budget=2 ** 14, x0=[5.0], rng=RngStream(11))
ens = replicate(dist, cfg, 500, track_gradient_sums=True, reference=zbar)
rep = fejer_monitor(ens, zbar, schedule, dist.beta, sigma2)

print("     m      n     E|x_n-z|^2     bound       excess/se")
for r in rep.rows:
    z = r["excess"] / r["se"] if r["se"] > 0 else float("-inf")
    print(f"{r['m']:6d} {r['n']:6d}   {r['lhs']:.3e}   {r['rhs']:.3e}   {z:8.1f}")
print("violations at powers of two:", len(rep.violations))

# Every step was recorded, but testing all 16384 one-step pairs is a
# multiple-testing exercise: each pair is close to a null test, and 3 sigma
# lets through about 0.13% of them by chance.
every = fejer_monitor(ens, zbar, schedule, dist.beta, sigma2, checkpoints="all")
print(f"violations over all {len(every.rows)} recorded pairs: {len(every.violations)}")

# The noise and gradient sums are partial sums; they stay bounded here but a
# finite run cannot prove that they converge.
print(f"noise partial sum at the last checkpoint: {rep.noise_partial_sums[-1]:.4f}")
print(f"gradient partial sum at the last checkpoint: {rep.gradient_partial_sums[-1]:.4f}")

# Corrupting one checkpoint is caught.
ens.iterates[:, 1024] *= 3.0
print("after corrupting n = 1024:",
      [(r["m"], r["n"]) for r in fejer_monitor(ens, zbar, schedule, dist.beta, sigma2).violations])
