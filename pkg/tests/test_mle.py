import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iodmle import scenario
from iodmle.frames import StateVector, kepler_to_cartesian
from iodmle.measmodel import (
    SPEED_OF_LIGHT,
    DegenerateGeometryError,
    MeasurementSet,
    RadarSite,
    apply_noise,
    ideal_measurements,
)
from iodmle.mle import (
    BcdState,
    InfeasibleError,
    ProblemWeights,
    SingularSystemError,
    SolverConfig,
    UnderdeterminedError,
    _block_pass,
    _y_step,
    assemble_subproblem,
    cost_original,
    cost_original_grad,
    cost_original_terms,
    cost_relaxed,
    cost_relaxed_grad,
    cost_relaxed_terms,
    initial_state,
    relaxed_excess,
    solve,
    update_v,
    update_x,
    update_xv,
    update_y,
)
from iodmle.trs import TrsSolution, check_kkt, solve_trs_secular

# coarse noise so that both interior and boundary rows show up
NOISY_SITES = scenario.make_sites(sigma_range=5.0, sigma_doppler=50.0, kappa=1e6)


def noisy_problem(seed, per_site=2, obj=0, family="gaussian"):
    rng = np.random.default_rng(seed)
    truth = scenario_truths()[obj]
    data = apply_noise(ideal_measurements(truth, NOISY_SITES, per_site), family, NOISY_SITES, rng)
    return truth, data, ProblemWeights.from_data(data, NOISY_SITES)


_TRUTHS = [kepler_to_cartesian(el) for el in scenario.reference_objects()]


def scenario_truths():
    return _TRUTHS


def unit_site(position, fc=SPEED_OF_LIGHT / 2):
    # alpha = beta = 1 and 2 f_c / c = 1
    return RadarSite(position, fc, 1.0, 1.0, 1.0)


# ------------------------------------------------------------------- original cost


def test_original_cost_at_truth(sites, truths):
    data = ideal_measurements(truths[0], sites)
    f_range, f_angle, f_doppler = cost_original_terms(truths[0].position, truths[0].velocity, data, sites)
    assert f_range == pytest.approx(0.0, abs=1e-12)
    assert f_doppler == pytest.approx(0.0, abs=1e-12)
    assert f_angle == pytest.approx(-3e9, rel=1e-15)


def test_original_cost_one_metre_off(truths):
    site = scenario.make_sites()[0]
    data = ideal_measurements(truths[0], [site])
    x = truths[0].position + data.directions[0]
    f_range, _, _ = cost_original_terms(x, truths[0].velocity, data, [site])
    assert f_range == pytest.approx(50.0, rel=1e-6)


def test_original_cost_degenerate(sites, truths):
    data = ideal_measurements(truths[0], sites)
    with pytest.raises(DegenerateGeometryError):
        cost_original(sites[1].position, truths[0].velocity, data, sites)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_original_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    truth, data, _ = noisy_problem(seed)
    x = truth.position + rng.normal(scale=100.0, size=3)
    v = truth.velocity + rng.normal(scale=10.0, size=3)
    gx, gv = cost_original_grad(x, v, data, NOISY_SITES)
    num = np.zeros(6)
    z = np.concatenate([x, v])
    for k in range(6):
        h = 1e-6 * max(abs(z[k]), 1.0)
        zp, zm = z.copy(), z.copy()
        zp[k] += h
        zm[k] -= h
        num[k] = (cost_original(zp[:3], zp[3:], data, NOISY_SITES) - cost_original(zm[:3], zm[3:], data, NOISY_SITES)) / (2 * h)
    ana = np.concatenate([gx, gv])
    assert np.linalg.norm(ana - num) <= 1e-5 * max(np.linalg.norm(ana), 1.0)


# -------------------------------------------------------------------- relaxed cost


def test_relaxed_cost_tight_at_truth(sites, truths):
    data = ideal_measurements(truths[2], sites)
    w = ProblemWeights.from_data(data, sites)
    state = BcdState(truths[2].position, truths[2].velocity, truths[2].position[None] - w.sites)
    f_range, f_angle, f_doppler = cost_relaxed_terms(state, data, w)
    assert f_range == pytest.approx(0.0, abs=1e-6)
    assert f_doppler == pytest.approx(0.0, abs=1e-9)
    assert f_angle == pytest.approx(-3e9, rel=1e-14)
    assert relaxed_excess(state, data, w) == pytest.approx(0.0, abs=1e-6)


def test_relaxed_cost_with_zero_auxiliaries():
    sites = [unit_site([0.0, 0, 0]), unit_site([10.0, 0, 0]), unit_site([0.0, 10, 0])]
    data = MeasurementSet([5.0, 6.0, 7.0], np.eye(3), [1.0, 2.0, 3.0])
    w = ProblemWeights.from_data(data, sites)
    x = np.array([1.0, 2.0, 3.0])
    state = BcdState(x, np.zeros(3), np.zeros((3, 3)))
    expected = 0.5 * sum(np.sum((x - s.position) ** 2) for s in sites) + 0.5 * (1 + 4 + 9)
    assert cost_relaxed(state, data, w) == pytest.approx(expected)


@given(st.integers(0, 2**32 - 1))
def test_relaxed_cost_by_hand(seed):
    rng = np.random.default_rng(seed)
    _, data, w = noisy_problem(seed)
    y = rng.normal(size=(len(data), 3))
    y *= (w.radius * rng.random(len(data)) / np.linalg.norm(y, axis=1))[:, None]
    x, v = rng.normal(scale=1e6, size=3), rng.normal(scale=1e3, size=3)
    t, fc, sd, sf, kappa = data.site_arrays(NOISY_SITES)
    total = 0.0
    for i in range(len(data)):
        d = data.ranges[i]
        total += np.sum((x - t[i] - y[i]) ** 2) / (2 * sd[i] ** 2)
        total -= kappa[i] / d * (data.directions[i] @ y[i])
        om = 2 * fc[i] / (SPEED_OF_LIGHT * d)
        total += (om * (y[i] @ v) - data.dopplers[i]) ** 2 / (2 * sf[i] ** 2)
    assert cost_relaxed(BcdState(x, v, y), data, w) == pytest.approx(total, rel=1e-12)
    # the excess is the same cost shifted by the angle bound
    shift = np.sum(np.linalg.norm(w.b, axis=1) * w.radius)
    assert relaxed_excess(BcdState(x, v, y), data, w) == pytest.approx(total + shift, rel=1e-6, abs=1e-6 * shift)


def test_relaxed_cost_rejects_infeasible(sites, truths):
    data = ideal_measurements(truths[0], sites)
    w = ProblemWeights.from_data(data, sites)
    y = 2.0 * (truths[0].position[None] - w.sites)
    with pytest.raises(InfeasibleError):
        cost_relaxed(BcdState(truths[0].position, truths[0].velocity, y), data, w)


def test_radius_clamped_with_warning(caplog):
    sites = [unit_site([0.0, 0, 0]), unit_site([10.0, 0, 0]), unit_site([0.0, 10, 0])]
    data = MeasurementSet([-0.5, 6.0, 7.0], np.eye(3), [0.0, 0.0, 0.0])
    with caplog.at_level(logging.WARNING, logger="iodmle.mle"):
        w = ProblemWeights.from_data(data, sites)
    assert "clamped" in caplog.text
    assert w.radius.tolist() == [1.0, 6.0, 7.0]


# --------------------------------------------------------------------- block steps


def test_update_x_single_term():
    w = ProblemWeights.from_data(MeasurementSet([1.0], [[1.0, 0, 0]], [0.0]), [unit_site([0.0, 0, 0])])
    assert np.allclose(update_x([[1.0, 0, 0]], w), [1, 0, 0])


def test_update_v_identity_system():
    sites = [unit_site([0.0, 0, 0])] * 3
    data = MeasurementSet([1.0, 1.0, 1.0], np.eye(3), [1.0, 2.0, 3.0], [0, 1, 2])
    w = ProblemWeights.from_data(data, sites)
    assert np.allclose(w.omega, 1.0)
    assert np.allclose(update_v(np.eye(3), data, w), [1, 2, 3])


def test_update_x_equal_weights_is_mean(sites, rng):
    data = MeasurementSet([1e6] * 3, np.eye(3), [0.0] * 3)
    w = ProblemWeights.from_data(data, sites)
    y = rng.normal(size=(3, 3))
    assert np.allclose(update_x(y, w), np.mean(w.sites + y, axis=0))


def test_update_v_rank_deficient():
    sites = [unit_site([0.0, 0, 0])] * 3
    data = MeasurementSet([1.0] * 3, np.eye(3), [1.0, 2.0, 3.0], [0, 1, 2])
    w = ProblemWeights.from_data(data, sites)
    coplanar = np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 1.0, 0]])
    with pytest.raises(SingularSystemError):
        update_v(coplanar, data, w)
    short = MeasurementSet([1.0, 1.0], np.eye(3)[:2], [1.0, 2.0], [0, 1])
    with pytest.raises(SingularSystemError):
        update_v(np.eye(3)[:2], short, ProblemWeights.from_data(short, sites))


@given(st.integers(0, 2**32 - 1))
def test_xv_step_zeroes_gradient(seed):
    rng = np.random.default_rng(seed)
    _, data, w = noisy_problem(seed)
    y = w.radius[:, None] * data.directions + rng.normal(scale=10.0, size=(len(data), 3))
    y *= np.minimum(1.0, w.radius / np.linalg.norm(y, axis=1))[:, None]
    state = BcdState(np.zeros(3), np.zeros(3), y)
    state.x, state.v = update_xv(state, data, w)
    gx, gv, _ = cost_relaxed_grad(state, data, w)
    assert np.linalg.norm(gx) <= 1e-9 * np.sum(w.alpha**2) * np.linalg.norm(state.x)
    scale = np.sum((w.beta * w.omega) ** 2 * np.linalg.norm(y, axis=1) ** 2) * np.linalg.norm(state.v)
    assert np.linalg.norm(gv) <= 1e-9 * scale


def test_subproblem_zero_velocity():
    u = np.eye(3)
    data = MeasurementSet([2.0, 2.0, 2.0], u, [0.0] * 3, [0, 1, 2])
    sites = [RadarSite([0.0, 0, 0], SPEED_OF_LIGHT / 2, 1.0, 1.0, 2.0)] * 3
    w = ProblemWeights.from_data(data, sites)
    x = np.array([2.0, 0.0, 0.0])
    state = BcdState(x, np.zeros(3), np.zeros((3, 3)))
    prob = assemble_subproblem(0, state, data, w)
    assert prob.eta == 1.0 and prob.radius == 2.0
    assert np.allclose(prob.matrix(), np.eye(3))
    # kappa = d with unit noise: the linear term is -u - (x - t)
    assert np.allclose(prob.p, -u[0] - x)


@given(st.integers(0, 2**32 - 1))
def test_subproblem_matches_row_cost(seed):
    rng = np.random.default_rng(seed)
    truth, data, w = noisy_problem(seed)
    x = truth.position + rng.normal(scale=50.0, size=3)
    v = truth.velocity + rng.normal(scale=5.0, size=3)
    state = BcdState(x, v, np.zeros((len(data), 3)))
    for i in range(len(data)):
        prob = assemble_subproblem(i, state, data, w)
        a = x - w.sites[i]
        zeta = 0.5 * w.alpha[i] ** 2 * (a @ a) + 0.5 * w.beta[i] ** 2 * data.dopplers[i] ** 2
        for _ in range(3):
            y = rng.normal(scale=w.radius[i] / 3, size=3)
            g = (
                0.5 * w.alpha[i] ** 2 * np.sum((a - y) ** 2)
                - w.b[i] @ y
                + 0.5 * w.beta[i] ** 2 * (w.omega[i] * (y @ v) - data.dopplers[i]) ** 2
            )
            assert prob.objective(y) + zeta == pytest.approx(g, rel=1e-9, abs=1e-9 * abs(zeta))


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_y_step_kkt_and_batch(seed):
    truth, data, w = noisy_problem(seed, per_site=1)
    state = initial_state(data, w, SolverConfig())
    Y, lam = _y_step(state.x, state.v, data, w, "eigen")
    for i in range(len(data)):
        prob = assemble_subproblem(i, state, data, w)
        sol = solve_trs_secular(prob)
        assert np.allclose(Y[i], sol.y_star, rtol=0, atol=1e-8 * prob.radius)
        assert check_kkt(prob, TrsSolution(Y[i], lam[i], lam[i] > 0)).max_scaled() <= 1e-8


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_block_optimality(seed):
    rng = np.random.default_rng(seed)
    truth, data, w = noisy_problem(seed)
    start = initial_state(data, w, SolverConfig())
    state = BcdState(start.x + rng.normal(scale=20.0, size=3), start.v, start.y)
    state.y = update_y(state, data, w)
    base = relaxed_excess(state, data, w)
    slack = 1e-9 * (1.0 + abs(base))
    for i in range(len(data)):
        for scale in (1e-3, 1.0, 10.0):
            y = state.y.copy()
            y[i] = y[i] + rng.normal(scale=scale, size=3)
            y[i] *= min(1.0, w.radius[i] / np.linalg.norm(y[i]))
            assert relaxed_excess(BcdState(state.x, state.v, y), data, w) >= base - slack
    state.x, state.v = update_xv(state, data, w)
    base = relaxed_excess(state, data, w)
    slack = 1e-9 * (1.0 + abs(base))
    for scale in (1e-3, 1.0):
        x = state.x + rng.normal(scale=scale, size=3)
        v = state.v + rng.normal(scale=scale, size=3)
        assert relaxed_excess(BcdState(x, v, state.y), data, w) >= base - slack


# -------------------------------------------------------------------------- solver


def test_noiseless_recovery(sites, truths):
    for truth in truths:
        data = ideal_measurements(truth, sites)
        est, report = solve(data, sites)
        assert report.converged
        assert np.linalg.norm(est.position - truth.position) <= 1e-3
        assert np.linalg.norm(est.velocity - truth.velocity) <= 1e-4


def test_two_triples_underdetermined(sites, truths):
    data = ideal_measurements(truths[0], sites[:2])
    with pytest.raises(UnderdeterminedError):
        solve(data, sites[:2])


def test_truth_is_fixed_point(sites, truths):
    for truth in truths:
        data = ideal_measurements(truth, sites, per_site=2)
        w = ProblemWeights.from_data(data, sites)
        state, _ = _block_pass(truth.position, truth.velocity, data, w, "eigen")
        assert np.linalg.norm(state.x - truth.position) <= 1e-6


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["gaussian", "laplace", "cauchy"]), st.integers(1, 3))
def test_trace_monotone_and_feasible(seed, family, per_site):
    truth, data, w = noisy_problem(seed, per_site=per_site, family=family)
    est, report = solve(data, NOISY_SITES, SolverConfig(max_iterations=200))
    trace = np.asarray(report.cost_trace)
    steps = np.diff(trace)
    assert np.all(steps <= 1e-12 * np.abs(trace[:-1]))
    assert report.final_relaxed_cost == trace[-1]


def test_feasible_every_iteration(sites, truths, rng):
    data = apply_noise(ideal_measurements(truths[3], NOISY_SITES, 3), "cauchy", NOISY_SITES, rng)
    w = ProblemWeights.from_data(data, NOISY_SITES)
    state = initial_state(data, w, SolverConfig())
    for _ in range(30):
        state, _ = _block_pass(state.x, state.v, data, w, "eigen")
        assert np.all(np.linalg.norm(state.y, axis=1) <= w.radius * (1 + 1e-9))


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_accelerated_result_is_plain_fixed_point(seed):
    truth, data, w = noisy_problem(seed, per_site=2)
    est, report = solve(data, NOISY_SITES)
    assert report.converged
    state, _ = _block_pass(est.position, est.velocity, data, w, "eigen")
    # a further plain pass barely moves the estimate
    assert np.linalg.norm(state.x - est.position) <= 1e-6 * 5.0
    assert np.linalg.norm(state.v - est.velocity) <= 1e-6 * 50.0


def test_plain_and_accelerated_agree():
    # coarse range noise keeps plain descent fast enough to converge
    sites = scenario.make_sites(sigma_range=50.0, sigma_doppler=50.0, kappa=1e4)
    truth = scenario_truths()[1]
    data = apply_noise(ideal_measurements(truth, sites, 2), "gaussian", sites, np.random.default_rng(5))
    fast, r1 = solve(data, sites)
    # plain descent crawls, so its stagnation test needs a much tighter tolerance
    slow, r2 = solve(data, sites, SolverConfig(accelerate=False, max_iterations=20000, rel_cost_tolerance=1e-15))
    assert r1.converged and r2.converged
    assert 10 * r1.iterations < r2.iterations
    assert np.linalg.norm(fast.position - slow.position) <= 1e-4 * 50.0
    assert r1.final_relaxed_cost <= r2.final_relaxed_cost + 1e-9 * abs(r2.final_relaxed_cost)


def test_secular_method_matches(sites, truths, rng):
    data = apply_noise(ideal_measurements(truths[4], sites, 2), "laplace", sites, rng)
    a, _ = solve(data, sites)
    b, _ = solve(data, sites, SolverConfig(trs_method="secular"))
    assert np.linalg.norm(a.position - b.position) <= 1e-6
    assert np.linalg.norm(a.velocity - b.velocity) <= 1e-6


def test_custom_initialisation(sites, truths):
    truth = truths[0]
    data = ideal_measurements(truth, sites)
    config = SolverConfig(init_strategy="custom", initial_state=truth)
    est, report = solve(data, sites, config)
    assert report.iterations <= 2
    assert np.linalg.norm(est.position - truth.position) <= 1e-6
    far = StateVector(truth.position * 3.0, truth.velocity)
    state = initial_state(data, ProblemWeights.from_data(data, sites), SolverConfig(init_strategy="custom", initial_state=far))
    assert np.all(np.linalg.norm(state.y, axis=1) <= data.ranges * (1 + 1e-12))


def test_coplanar_geometry_is_singular():
    # every site and object in one plane through the origin: the auxiliary vectors span 2 dimensions
    sites = [RadarSite(p, 1e9) for p in ([0.0, 0, 0], [1e5, 0, 0], [0.0, 1e5, 0])]
    truth = StateVector([3e5, 4e5, 0.0], [1e3, 2e3, 0.0])
    data = ideal_measurements(truth, sites)
    with pytest.raises(SingularSystemError):
        solve(data, sites)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(max_iterations=0),
        dict(rel_cost_tolerance=0.0),
        dict(init_strategy="random"),
        dict(init_strategy="custom"),
        dict(trs_method="dense"),
        dict(max_backtracks=0),
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)
