"""
Hinge plus logistic classifier on four points
=============================================

Two noisy samples enter through the hinge loss (handled by its prox) and two
clean samples through the logistic loss (handled by its gradient). Each step
samples one pair. The data below cannot be separated by a line through the
origin, so the objective has a unique minimizer.
"""

from pathlib import Path

import numpy as np

from stochprox import (
    RngStream, SolverConfig, StepSchedule, check_assumption1, check_psi_bound,
    classification_psi, classification_subgradients, load_dataset,
    make_classification_problem, reference_minimizer, replicate,
)

samples = load_dataset(Path(__file__).parent / "data" / "desk4.csv")
for s in samples:
    print(f"{s.cohort:5s}  label {s.label:+d}  features {s.features}")

dist = make_classification_problem(samples, alpha=0.5)
print("pairs:", dist.n_components, " beta:", dist.beta)

# A deterministic reference from several starting points.
ref = reference_minimizer(dist)
print("reference:", ref.point, " unique:", ref.unique, " iterations:", ref.iterations)

# The residual s_i + grad g_j at the reference must average to zero, and its
# second moment sets the noise level of the method.
a1 = check_assumption1(dist, ref.point, classification_subgradients(dist, ref.point))
print(f"mean residual {a1.mean_norm:.1e}, second moment {a1.second_moment:.4f}")

grid = np.array([[u, v] for u in np.linspace(-4, 4, 10) for v in np.linspace(-4, 4, 10)])
psi = check_psi_bound(dist, classification_psi(dist), grid)
print("subgradient growth bound violations on the grid:", len(psi.violations))

# Ensembles for two leading constants of the harmonic schedule.
for gamma0 in (1.0, 10.0):
    cfg = SolverConfig(schedule=StepSchedule.power(gamma0, 1.0), budget=20000,
                       x0=[0.0, 0.0], rng=RngStream(0), record_every=20000)
    ens = replicate(dist, cfg, 50, reference=ref.point)
    med = ens.summary("dist")["median"][-1]
    print(f"gamma0 = {gamma0:4.1f}: median distance to reference after 2e4 steps {med:.4f}")
