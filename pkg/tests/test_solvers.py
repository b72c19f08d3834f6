import numpy as np
import pytest

from stochprox import operators as ops
from stochprox.apps import FeasibilitySpec, make_feasibility_problem, make_quadratic_problem
from stochprox.core import (
    ComponentPair, NonFiniteError, RngStream, ScheduleError, SmoothOracle, StepSchedule,
    ValidationError, make_finite_distribution,
)
from stochprox.diagnostics import replicate
from stochprox.operators import ConvexSet
from stochprox.solvers import (
    DivergenceError, SolverConfig, StepBoundError, check_assumption1, check_psi_bound, fb_run,
    initial_points, record_steps, sgd_run, spg_run, spp_run,
)

HARMONIC = StepSchedule.power(1.0, 1.0)


@pytest.fixture
def desk():
    return make_feasibility_problem(FeasibilitySpec(
        ConvexSet.whole_space(1), [ConvexSet.box([-2.0], [-1.0]), ConvexSet.box([1.0], [2.0])]))


def _atom(f, g, dim=2):
    return make_finite_distribution([ComponentPair(f, g)], [1.0], dim=dim)


# ---------------------------------------------------------------------------
# Configuration and records

def test_budget_must_be_positive():
    with pytest.raises(ValidationError):
        SolverConfig(schedule=HARMONIC, budget=0, x0=[0.0])
    with pytest.raises(ValidationError):
        SolverConfig(schedule=HARMONIC, budget=5, x0=[0.0], record_every=0)


def test_budget_one_is_one_update(desk):
    rec = spg_run(desk, SolverConfig(schedule=HARMONIC, budget=1, x0=[5.0]))
    np.testing.assert_array_equal(rec.steps, [0, 1])
    assert len(rec.sampled_indices) == 1
    # gamma_0 = 1 lands exactly on the sampled set's nearest point
    assert rec.final[0] == (-1.0 if rec.sampled_indices[0] == 0 else 2.0)


def test_record_steps():
    np.testing.assert_array_equal(record_steps(10, 4), [0, 1, 2, 4, 8, 10])
    np.testing.assert_array_equal(record_steps(3, 1), [0, 1, 2, 3])


def test_record_alignment(desk):
    rec = spg_run(desk, SolverConfig(schedule=HARMONIC, budget=1000, x0=[5.0], record_every=100),
                  reference=[0.0])
    assert len(rec.sampled_indices) == 1000
    assert len(rec.steps) == len(rec.iterates) == len(rec.objective_trace) == len(rec.dist_trace)
    np.testing.assert_allclose(rec.objective_trace, desk.objective(rec.iterates))
    np.testing.assert_allclose(rec.dist_trace, np.abs(rec.iterates[:, 0]))


def test_reproducible(desk):
    cfg = SolverConfig(schedule=HARMONIC, budget=2000, x0=[5.0], rng=RngStream(42, 3))
    a, b = spg_run(desk, cfg), spg_run(desk, cfg)
    np.testing.assert_array_equal(a.iterates, b.iterates)
    np.testing.assert_array_equal(a.sampled_indices, b.sampled_indices)
    c = spg_run(desk, SolverConfig(schedule=HARMONIC, budget=2000, x0=[5.0],
                                   rng=RngStream(42, 4)))
    assert not np.array_equal(a.sampled_indices, c.sampled_indices)


def test_replay_from_recorded_indices(desk):
    rec = spg_run(desk, SolverConfig(schedule=HARMONIC, budget=300, x0=[5.0], rng=RngStream(9)))
    x = np.array([5.0])
    for n, k in enumerate(rec.sampled_indices):
        pair = desk.pair(int(k))
        gamma = 1.0 / (n + 1)
        x = pair.f.prox(gamma, x - gamma * pair.g.grad(x))
    np.testing.assert_array_equal(x, rec.final)


def test_initial_noise_is_per_stream_and_reproducible():
    a = initial_points([1.0, 2.0], 5, [0, 1, 2], noise=0.5)
    np.testing.assert_array_equal(a, initial_points([1.0, 2.0], 5, [0, 1, 2], noise=0.5))
    assert len({tuple(r) for r in a}) == 3
    np.testing.assert_array_equal(initial_points([1.0], 5, [0, 1]), [[1.0], [1.0]])


# ---------------------------------------------------------------------------
# Schedule gate

@pytest.mark.parametrize("p", [0.4, 1.5])
def test_rejects_non_robbins_monro(desk, p):
    cfg = SolverConfig(schedule=StepSchedule.power(1.0, p), budget=10, x0=[5.0])
    with pytest.raises(ScheduleError, match="Robbins-Monro"):
        spg_run(desk, cfg)


def test_override_is_recorded(desk):
    cfg = SolverConfig(schedule=StepSchedule.power(1.0, 1.5), budget=10, x0=[5.0],
                       allow_invalid_schedule=True)
    rec = spg_run(desk, cfg)
    assert rec.schedule_overridden
    assert rec.schedule_class == "sum_converges"


@pytest.mark.parametrize("p", [0.51, 0.75, 1.0])
def test_accepts_robbins_monro(desk, p):
    rec = spg_run(desk, SolverConfig(schedule=StepSchedule.power(1.0, p), budget=10, x0=[5.0]))
    assert not rec.schedule_overridden


# ---------------------------------------------------------------------------
# Special cases

def test_single_atom_matches_forward_backward():
    f = ops.hinge(0.4, np.array([1.0, -2.0]), -1)
    g = ops.logistic(0.4, np.array([0.5, 1.5]), 1)
    sched = StepSchedule.power(2.0, 0.6)
    rec = spg_run(_atom(f, g), SolverConfig(schedule=sched, budget=1000, x0=[1.0, 1.0]))
    det = fb_run(f, g, sched, 1000, [1.0, 1.0])
    np.testing.assert_array_equal(rec.iterates, det.iterates)


def test_domain_preservation():
    C = ConvexSet.box([0.5, -1.0], [3.0, 1.0])
    spec = FeasibilitySpec(C, [ConvexSet.ball([-3.0, 0.0], 1.0), ConvexSet.ball([0.0, 4.0], 0.5)])
    d = make_feasibility_problem(spec)
    rec = spg_run(d, SolverConfig(schedule=HARMONIC, budget=500, x0=[-7.0, 9.0],
                                  rng=RngStream(1)))
    assert np.all(ops.violation(C, rec.iterates[1:]) <= 1e-12)


def test_spp_random_projections_approach_intersection():
    pairs = [ComponentPair(ops.indicator(ConvexSet.halfspace([1.0, 0.0], 0.0)), ops.zero_smooth()),
             ComponentPair(ops.indicator(ConvexSet.halfspace([0.0, 1.0], 0.0)), ops.zero_smooth())]
    d = make_finite_distribution(pairs, [1, 1])
    rec = spp_run(d, SolverConfig(schedule=HARMONIC, budget=200, x0=[3.0, 5.0]))
    dist = np.linalg.norm(np.maximum(rec.iterates, 0.0), axis=1)
    assert np.all(np.diff(dist) <= 1e-15)
    assert dist[-1] == 0.0


def test_spp_single_atom_matches_proximal_point():
    f = ops.l1_norm()
    rec = spp_run(_atom(f, ops.zero_smooth(), 1), SolverConfig(schedule=HARMONIC, budget=50,
                                                               x0=[3.0]))
    x, expected = 3.0, []
    for n in range(50):
        expected.append(x)
        x = np.sign(x) * max(abs(x) - 1.0 / (n + 1), 0.0)
    expected.append(x)
    np.testing.assert_array_equal(rec.iterates[:, 0], expected)


def test_spp_quadratics_converge():
    d = make_quadratic_problem([[1.0], [-1.0]], proximal=True)
    cfg = SolverConfig(schedule=HARMONIC, budget=10 ** 5, x0=[4.0], record_every=10 ** 5)
    ens = replicate(d, cfg, 100, algorithm="spp", reference=[0.0])
    assert np.median(np.abs(ens.finals[:, 0])) <= 0.05


def test_sgd_centers_converge_to_mean():
    d = make_quadratic_problem([[1.0, 2.0], [-3.0, 0.0], [0.5, 1.0]])
    cbar = np.array([-0.5, 1.0])
    cfg = SolverConfig(schedule=HARMONIC, budget=10 ** 5, x0=[4.0, 4.0], record_every=10 ** 5)
    ens = replicate(d, cfg, 100, algorithm="sgd", reference=cbar)
    assert np.median(np.linalg.norm(ens.finals - cbar, axis=1)) <= 0.05


def test_sgd_single_atom_is_gradient_descent():
    c = np.array([2.0, -1.0])
    rec = sgd_run(_atom(ops.zero_function(), ops.quadratic_smooth(c)),
                  SolverConfig(schedule=StepSchedule.power(0.5, 0.75), budget=40, x0=[0.0, 0.0]))
    x = np.zeros(2)
    for n in range(40):
        x = x - 0.5 / (n + 1) ** 0.75 * (x - c)
    np.testing.assert_array_equal(rec.final, x)


def test_sgd_stationary_start():
    c = np.array([2.0, -1.0])
    rec = sgd_run(_atom(ops.zero_function(), ops.quadratic_smooth(c)),
                  SolverConfig(schedule=HARMONIC, budget=20, x0=c))
    assert np.all(rec.iterates == c)


def test_special_case_preconditions(desk):
    cfg = SolverConfig(schedule=HARMONIC, budget=5, x0=[0.0])
    with pytest.raises(ValidationError):
        spp_run(desk, cfg)
    with pytest.raises(ValidationError):
        sgd_run(desk, cfg)


def test_non_finite_iterate_reports_step():
    blowup = SmoothOracle(value=lambda x: np.sum(x, axis=-1),
                          grad=lambda x: np.where(np.abs(x) > 10, np.inf, -x * 3.0),
                          lipschitz=3.0)
    d = _atom(ops.zero_function(), blowup, 1)
    with pytest.raises(NonFiniteError) as info:
        sgd_run(d, SolverConfig(schedule=HARMONIC, budget=100, x0=[1.0]))
    # x: 1 -> 4 -> 10 -> 20, and the update at n = 3 sees |x| > 10
    assert info.value.step == 3


def test_early_stop(desk):
    cfg = SolverConfig(schedule=HARMONIC, budget=10 ** 5, x0=[5.0], early_stop_tol=10.0,
                       early_stop_patience=5)
    rec = spg_run(desk, cfg)
    assert rec.stopped_early is not None and rec.iterations < 10 ** 5
    assert rec.steps[-1] == rec.iterations


# ---------------------------------------------------------------------------
# Deterministic forward-backward

def test_fb_constrained_quadratic():
    rec = fb_run(ops.indicator(ConvexSet.box([0.0], [np.inf])), ops.quadratic_smooth([-3.0]),
                 StepSchedule.constant(1.0), 5, [4.0])
    np.testing.assert_array_equal(rec.iterates[1:, 0], 0.0)


def test_fb_exact_step():
    rec = fb_run(ops.zero_function(), ops.quadratic_smooth([0.0, 0.0]), StepSchedule.constant(1.0),
                 3, [3.0, -2.0])
    np.testing.assert_array_equal(rec.iterates[1], [0.0, 0.0])


def test_fb_step_bound():
    with pytest.raises(StepBoundError):
        fb_run(ops.zero_function(), ops.quadratic_smooth([0.0], weight=2.0),
               StepSchedule.constant(1.0), 3, [1.0])


def test_fb_tolerance_and_divergence():
    rec = fb_run(ops.zero_function(), ops.quadratic_smooth([1.0]), StepSchedule.constant(0.5),
                 10 ** 6, [0.0], record_every=10 ** 6, tol=1e-12)
    assert rec.converged and rec.iterations < 100
    grow = SmoothOracle(value=lambda x: -np.sum(x * x, axis=-1), grad=lambda x: -2 * x,
                        lipschitz=2.0)
    with pytest.raises(DivergenceError):
        fb_run(ops.zero_function(), grow, StepSchedule.constant(0.5), 10 ** 4, [1.0],
               divergence_norm=1e8)


# ---------------------------------------------------------------------------
# Assumption checks

def test_assumption1_desk(desk):
    rep = check_assumption1(desk, [0.0], [np.zeros(1), np.zeros(1)])
    np.testing.assert_array_equal(rep.mean_residual, [0.0])
    assert rep.second_moment == 1.0
    assert not rep.flagged


def test_assumption1_smooth_atom_at_minimizer():
    d = _atom(ops.zero_function(), ops.quadratic_smooth([1.0, 2.0]))
    rep = check_assumption1(d, [1.0, 2.0], lambda k: np.zeros(2))
    assert rep.mean_norm == 0.0 and rep.second_moment == 0.0


def test_assumption1_wrong_point_flagged(desk):
    rep = check_assumption1(desk, [0.7], [np.zeros(1), np.zeros(1)])
    assert rep.flagged
    assert rep.mean_residual[0] == pytest.approx(0.7)


def test_assumption1_missing_selection(desk):
    with pytest.raises(ValidationError):
        check_assumption1(desk, [0.0], [np.zeros(1)])


def test_psi_zero_flags_nonstationary_points(desk):
    pts = np.linspace(-5, 5, 21)[:, None]
    rep = check_psi_bound(desk, lambda r: 0.0, pts)
    moments = np.array([desk.pair(0).g.grad(p)[0] ** 2 / 2 + desk.pair(1).g.grad(p)[0] ** 2 / 2
                        for p in pts])
    assert set(rep.violations) == set(np.flatnonzero(moments > 0))
    assert len(rep.violations) == len(pts)
