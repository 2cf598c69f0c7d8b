import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recurlab.certification import (AssumptionBundle, Monomial, RecurrenceSetParams, auto_bundle,
                                    check_dissipation, check_sandwich, clopper_pearson, estimate_boundedness,
                                    estimate_recurrence, initial_states, lyapunov_Y, reachable_delta,
                                    recurrence_set_contains, theoretical_gamma_star, theoretical_horizon)
from recurlab.errors import ContractError
from recurlab.policy import EtaBound, lqr_policy
from recurlab.riccati_lqr import DetectabilityCertificate, detectability_for_spec, lqr_oracle
from recurlab.system_model import NoiseSpec, SigmaMetric, linear_system

from conftest import scalar_lq


def simple_bundle(a_W=1.0, abar_W=0.0, abar_V=1.0, c=0.0, d=0.0, e1=0.0, e2=0.0):
    return AssumptionBundle(Monomial(a_W), Monomial(abar_W), Monomial(abar_V), lambda g: c, c, d, e1, e2)


def test_recurrence_set_boundary():
    params = RecurrenceSetParams(0.9, 4.0, EtaBound(), simple_bundle())
    assert recurrence_set_contains(params, [2.0])
    assert recurrence_set_contains(params, [0.0, -2.0])
    assert not recurrence_set_contains(params, [2.01])
    assert params.radius == 2.0


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(0.01, 3), st.floats(0.01, 3), st.floats(0, 2), st.floats(0, 2))
def test_recurrence_set_monotone(x, d1, d2, e1, e2):
    b = simple_bundle(c=0.1, d=0.2)
    lo, hi = sorted((d1, d2))
    elo, ehi = sorted((e1, e2))
    if recurrence_set_contains(RecurrenceSetParams(0.9, lo, EtaBound.constant(elo), b), [x]):
        assert recurrence_set_contains(RecurrenceSetParams(0.9, hi, EtaBound.constant(elo), b), [x])
        assert recurrence_set_contains(RecurrenceSetParams(0.9, lo, EtaBound.proportional(ehi, 0.1), b), [x])


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 5), st.floats(0.01, 3), st.floats(0.1, 4), st.floats(0, 1))
def test_radius_agrees_with_predicate(s, delta, a_W, eta0):
    params = RecurrenceSetParams(0.9, delta, EtaBound.constant(eta0), simple_bundle(a_W=a_W, c=0.3, d=0.1))
    r = params.radius
    assert r == pytest.approx(np.sqrt((0.3 + 0.1 + eta0 + delta) / a_W))
    if abs(s - r) > 1e-9 * (1 + r):
        assert recurrence_set_contains(params, [s]) == (s < r)


def test_clopper_pearson_endpoints():
    lo, hi = clopper_pearson(100, 100, 0.05)
    assert lo == pytest.approx(0.025 ** (1 / 100), rel=1e-12)
    assert hi == 1.0
    lo, hi = clopper_pearson(0, 50, 0.05)
    assert lo == 0.0 and hi == pytest.approx(1 - 0.025 ** (1 / 50), rel=1e-12)
    widths = [np.subtract(*clopper_pearson(n // 2, n)[::-1]) for n in (100, 1000, 10_000)]
    assert widths[0] > widths[1] > widths[2]


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 5000), st.floats(0.001, 0.5), st.data())
def test_clopper_pearson_contains_estimate(N, alpha, data):
    S = data.draw(st.integers(0, N))
    lo, hi = clopper_pearson(S, N, alpha)
    assert 0 <= lo <= S / N <= hi <= 1


def test_clopper_pearson_rejects_bad_counts():
    with pytest.raises(ContractError):
        clopper_pearson(5, 4)


def test_boundedness_trivial_cases():
    spec = scalar_lq(a=0.5, b=0.0, l=0.0)
    pol = lqr_policy(spec, 0.9)
    est = estimate_boundedness(spec, pol, [[1.0]], 2.0, 20, 200)
    assert est.successes == 200 and est.estimate == 1.0
    est = estimate_boundedness(spec, pol, [[1.0]], 0.5, 20, 200)
    assert est.successes == 0


def test_recurrence_trivial_cases():
    spec = scalar_lq(a=0.5, b=0.0, l=0.0)
    pol = lqr_policy(spec, 0.9)
    params = RecurrenceSetParams(0.9, 0.01, EtaBound(), simple_bundle())
    assert estimate_recurrence(spec, pol, params, [[0.05]], 0, 100).successes == 100
    assert estimate_recurrence(spec, pol, params, [[5.0], [-3.0]], 40, 100).successes == 100
    assert estimate_recurrence(spec, pol, params, [[5.0]], 2, 100).successes == 0


def test_estimates_reproducible_across_workers(fixture_spec):
    bundle, _, _ = auto_bundle(fixture_spec)
    params = RecurrenceSetParams(0.9, 0.05, EtaBound(), bundle)
    pol = lqr_policy(fixture_spec, 0.9)
    a = estimate_recurrence(fixture_spec, pol, params, ("ball", 5.0), 3, 3000, seed=4, workers=1)
    b = estimate_recurrence(fixture_spec, pol, params, ("ball", 5.0), 3, 3000, seed=4, workers=3)
    assert a == b and 0 < a.successes < a.trials


def test_initial_sets():
    X = initial_states(("ball", 2.0), 500, 3, seed=1)
    assert np.all(np.linalg.norm(X, axis=1) < 2.0)
    S = initial_states(("sphere", 2.0), 10, 2, seed=1)
    assert np.allclose(np.linalg.norm(S, axis=1), 2.0 * (1 - 1e-9))
    P = initial_states([[1.0], [2.0]], 5, 1)
    assert P[:, 0].tolist() == [1.0, 2.0, 1.0, 2.0, 1.0]


def test_horizon_examples():
    b = simple_bundle(abar_V=1.0)
    assert theoretical_horizon(1.0, 1.0, 0.5, b) == 8
    assert theoretical_horizon(1.0, 2.0, 0.5, b) == 4


def test_horizon_from_fixture(fixture_spec):
    bundle, sweep, cert = auto_bundle(fixture_spec)
    aY = sweep.alphabar_V_coef * 25 + 2 * cert.alphabar_W_coef * 25
    expected = int(np.ceil(4 * (aY + sweep.c + cert.d + 0.0) / (0.1 * 0.5)))
    assert theoretical_horizon(5.0, 0.5, 0.1, bundle) == expected


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.01, 0.9), st.floats(0.01, 0.9),
       st.floats(0.05, 5), st.floats(0.05, 5))
def test_horizon_monotone(D1, D2, p1, p2, d1, d2):
    b = simple_bundle(abar_V=1.7, abar_W=0.3, c=0.2, d=0.1, e1=0.05)
    (D1, D2), (p1, p2), (d1, d2) = sorted((D1, D2)), sorted((p1, p2)), sorted((d1, d2))
    assert theoretical_horizon(D1, d1, p1, b) <= theoretical_horizon(D2, d1, p1, b)
    assert theoretical_horizon(D1, d1, p1, b) >= theoretical_horizon(D1, d1, p2, b)
    assert theoretical_horizon(D1, d1, p1, b) >= theoretical_horizon(D1, d2, p1, b)


def test_gamma_star_examples():
    b = simple_bundle(abar_V=1.0)
    assert theoretical_gamma_star(1.0, 2.0, b) == 0.5 + 1e-9
    assert theoretical_gamma_star(1.0, 0.2, b) == pytest.approx(1 / 1.1, rel=1e-12)
    assert theoretical_gamma_star(1.0, 0.1, b) == pytest.approx(1 / 1.05, rel=1e-12)
    assert theoretical_gamma_star(1.0, 0.01, b) == pytest.approx(1 / 1.005, rel=1e-12)
    assert theoretical_gamma_star(np.inf, 0.01, b) < 1.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.01, 5), st.floats(0.01, 5))
def test_gamma_star_monotone(D1, D2, d1, d2):
    b = simple_bundle(abar_V=2.0, e2=0.1)
    (D1, D2), (d1, d2) = sorted((D1, D2)), sorted((d1, d2))
    g = theoretical_gamma_star(D1, d2, b)
    assert 0.5 < g < 1
    assert theoretical_gamma_star(D2, d2, b) >= g
    assert theoretical_gamma_star(D1, d1, b) >= g


def test_reachable_two_steps():
    spec = linear_system([[0.5]], [[0.0]], [[1.0]], [[1.0]], [[1.0]], NoiseSpec.gaussian([0.0], [[1.0]]))
    # r1 = 0.5 + 1 = 1.5, r2 = 0.75 + 1 = 1.75
    assert reachable_delta(1.0, 2, 0.1, spec, 0.0, v_max=1.0) == pytest.approx(1.75 * (1 + 1e-6), rel=1e-15)


def test_reachable_no_growth():
    spec = linear_system([[0.8, 0.0], [0.0, -1.0]], np.eye(2), np.zeros((2, 1)), np.eye(2), np.eye(2),
                         NoiseSpec.gaussian([0.0], [[1.0]]))
    assert reachable_delta(3.0, 40, 0.1, spec, 0.0, 0.0) == pytest.approx(3.0, rel=2e-6)


def test_reachable_tail_quantile():
    from scipy import stats

    spec = scalar_lq(a=0.0, b=0.0, l=1.0, var=4.0)
    D = reachable_delta(0.1, 10, 0.1, spec, 0.0)
    v_max = D / (1 + 1e-6)
    # P[|v| > v_max] for v ~ N(0, 4) must be just below p / T = 0.01
    tail = 2 * stats.norm.sf(v_max / 2.0)
    assert tail < 0.01 and tail > 0.0099


def test_reachable_rejects_other_metrics(fixture_spec):
    with pytest.raises(ContractError, match="Euclidean"):
        reachable_delta(1.0, 5, 0.1, fixture_spec, 1.0, metric=SigmaMetric.distance_to_box([-1.0], [1.0]))


def test_sandwich_at_origin(fixture_spec):
    bundle, sweep, _ = auto_bundle(fixture_spec)
    for g in (0.5, 0.9):
        o = lqr_oracle(fixture_spec, g)
        Y0 = float(lyapunov_Y(bundle, o, g, np.zeros((1, 1)))[0])
        assert Y0 == pytest.approx(sweep.c_gamma(g) + bundle.d, rel=1e-12)


def test_sandwich_falsified_by_small_abar_V(fixture_spec):
    bundle, _, _ = auto_bundle(fixture_spec)
    X = np.linspace(-10, 10, 401)[:, None]
    ok = check_sandwich(bundle, lambda g: lqr_oracle(fixture_spec, g), [0.5, 0.9, 0.99], X)
    assert ok.max_scaled_violation <= 1e-6
    from dataclasses import replace

    bad = replace(bundle, alphabar_V=Monomial(bundle.alphabar_V.a / 2))
    rep = check_sandwich(bad, lambda g: lqr_oracle(fixture_spec, g), [0.5, 0.9, 0.99], X)
    assert rep.max_violation > 0


def test_sandwich_deterministic_reduction():
    spec = scalar_lq(l=0.0)
    bundle, sweep, cert = auto_bundle(spec)
    assert sweep.c == 0 and cert.d == 0
    X = np.linspace(-3, 3, 61)[:, None]
    assert check_sandwich(bundle, lambda g: lqr_oracle(spec, g), [0.5, 0.8], X).max_scaled_violation <= 1e-12


def test_sandwich_rejects_small_gamma(fixture_spec):
    bundle, _, _ = auto_bundle(fixture_spec)
    with pytest.raises(ContractError, match="1/2"):
        check_sandwich(bundle, lambda g: lqr_oracle(fixture_spec, g), [0.4], np.zeros((1, 1)))


def test_dissipation_trivial_and_inflated():
    spec = scalar_lq(q=2.0)
    cert = detectability_for_spec(spec)
    assert check_dissipation(cert, spec, 2000) <= 0
    A = np.array([[1.1, 0.0], [0.0, 0.5]])
    lin = linear_system(A, np.eye(2), 0.3 * np.eye(2), np.diag([1.0, 0.0]), np.eye(2),
                        NoiseSpec.gaussian([0, 0], np.eye(2)))
    cert = detectability_for_spec(lin)
    assert check_dissipation(cert, lin, 10_000) <= 1e-9
    inflated = DetectabilityCertificate(cert.M, 10 * cert.a_W, cert.d)
    assert check_dissipation(inflated, lin, 10_000) > 0


def test_bundle_validation():
    with pytest.raises(ContractError):
        simple_bundle(a_W=0.0)
    with pytest.raises(ContractError):
        simple_bundle(c=-1.0)
    b = simple_bundle(abar_V=2.0, abar_W=0.5)
    s = np.linspace(0, 5, 11)
    assert np.allclose(b.alphabar_Y(s), 2.0 * s ** 2 + 2 * 0.5 * s ** 2)


def test_auto_bundle_c_gamma_bounded(fixture_spec):
    bundle, sweep, _ = auto_bundle(fixture_spec)
    assert bundle.c_gamma_bounded(sweep.gammas)
    assert bundle.c_gamma(0.77) == sweep.c_gamma(0.8)


def test_empirical_delta_deterministic():
    from recurlab.certification import empirical_delta

    grow = scalar_lq(a=1.1, b=0.0, l=0.0)
    D = empirical_delta(grow, lqr_policy(grow, 0.5), [[1.0], [-0.5]], 5, 0.1, N=20)
    assert D == pytest.approx(1.1 ** 5 * (1 + 1e-6), rel=1e-12)
    shrink = scalar_lq(a=0.5, b=0.0, l=0.0)
    D = empirical_delta(shrink, lqr_policy(shrink, 0.5), ("ball", 2.0), 5, 0.1, N=50)
    assert D == pytest.approx(2.0 * (1 + 1e-6), rel=1e-12)
