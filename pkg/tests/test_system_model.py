import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recurlab import rng
from recurlab.benchmarks import make_benchmark
from recurlab.errors import ContractError, DimensionError
from recurlab.system_model import (NoiseSpec, SigmaMetric, linear_system, nonlinear_system, sigma,
                                   spec_from_dict, spec_to_dict, stage_cost, step)

from conftest import scalar_lq

finite = st.floats(-50, 50, allow_nan=False)


def test_identity_dynamics():
    spec = linear_system(np.eye(2), np.zeros((2, 0)), np.zeros((2, 0)), np.eye(2), np.zeros((0, 0)),
                         NoiseSpec.zero(0))
    assert np.array_equal(step(spec, [1, 2], [], []), [1.0, 2.0])


def test_shift_dynamics():
    spec = linear_system([[0, 1], [0, 0]], [[0], [1]], np.zeros((2, 1)), np.eye(2), [[1]], NoiseSpec.zero(1))
    assert np.array_equal(step(spec, [1, 0], [3], [0]), [0.0, 3.0])


def test_scalar_step():
    spec = scalar_lq(a=0.5, b=1.0, l=1.0)
    assert step(spec, [2.0], [1.0], [-0.25]) == pytest.approx([1.75], abs=0)


def test_dimension_error_names_operand():
    spec = scalar_lq()
    with pytest.raises(DimensionError, match="u"):
        step(spec, [1.0], [1.0, 2.0], [0.0])
    with pytest.raises(DimensionError) as err:
        step(spec, [1.0, 2.0], [1.0], [0.0])
    assert err.value.operand == "x"


@pytest.mark.parametrize("Q,R,x,u,expected", [
    (np.eye(2), [[1.0]], [1, 1], [2], 6.0),
    (np.eye(2), [[1.0]], [0, 0], [0], 0.0),
    (np.diag([2.0, 0.0]), [[3.0]], [1, 5], [1], 5.0),
])
def test_quadratic_stage_cost(Q, R, x, u, expected):
    spec = linear_system(np.eye(2), np.ones((2, 1)), np.zeros((2, 1)), Q, R, NoiseSpec.zero(1))
    assert stage_cost(spec, x, u) == expected


def test_negative_callable_cost_rejected():
    spec = nonlinear_system(lambda X, U, V: X, 1, 1, NoiseSpec.zero(1), cost_fn=lambda X, U: -X[..., 0] ** 2)
    with pytest.raises(ContractError, match="nonnegative"):
        stage_cost(spec, [2.0], [0.0])


def test_R_must_be_pd():
    with pytest.raises(ContractError, match="R"):
        scalar_lq(r=0.0)


def test_sigma_examples():
    assert sigma(SigmaMetric.euclidean(), np.array([3.0, 4.0])) == 5.0
    assert sigma(SigmaMetric.distance_to_box([-1.0], [1.0]), np.array([3.0])) == 2.0
    assert sigma(SigmaMetric.euclidean(), np.zeros(3)) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=9, max_size=9))
def test_sigma_triangle_inequality(v):
    x, y, z = np.array(v).reshape(3, 3)
    s = lambda a: sigma(SigmaMetric.euclidean(), a)
    assert s(x - z) <= s(x - y) + s(y - z) + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=12, max_size=12))
def test_linear_step_is_affine(v):
    spec = linear_system([[0.3, -1.2], [0.7, 0.9]], [[1.0], [0.5]], [[0.2, 0.0], [0.1, 0.4]], np.eye(2), [[1.0]],
                         NoiseSpec.gaussian([0, 0], np.eye(2)))
    x1, x2 = np.array(v[0:2]), np.array(v[2:4])
    u1, u2 = np.array(v[4:5]), np.array(v[5:6])
    w1, w2 = np.array(v[6:8]), np.array(v[8:10])
    lhs = step(spec, x1 + x2, u1 + u2, w1 + w2)
    rhs = step(spec, x1, u1, w1) + step(spec, x2, u2, w2) - step(spec, np.zeros(2), np.zeros(1), np.zeros(2))
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * (1 + np.abs(lhs).max()))


def test_stage_cost_nonnegative_on_shipped_specs():
    gen = np.random.default_rng(0)
    specs = [scalar_lq(), make_benchmark("sine", NoiseSpec.uniform_box([0.0], [1.0]))]
    for spec in specs:
        X = gen.normal(scale=10, size=(10_000, spec.n))
        U = gen.normal(scale=10, size=(10_000, spec.m))
        assert np.all(spec.cost(X, U) >= 0)


def test_discrete_noise_support():
    noise = NoiseSpec.discrete([[1.0], [-1.0]], [0.5, 0.5])
    draws = rng.noise_block(noise, 3, 0, 1000)
    assert set(np.unique(draws)) <= {1.0, -1.0}


def test_discrete_probabilities_must_sum_to_one():
    with pytest.raises(ContractError):
        NoiseSpec.discrete([[1.0], [-1.0]], [0.5, 0.49])


def test_covariance_must_be_psd():
    with pytest.raises(ContractError):
        NoiseSpec.gaussian([0, 0], [[1.0, 2.0], [2.0, 1.0]])


def test_gaussian_sample_mean_and_covariance():
    cov = np.array([[1.0, 0.4], [0.4, 0.5]])
    noise = NoiseSpec.gaussian([0.0, 0.0], cov)
    V = np.concatenate([rng.noise_block(noise, 11, t, 1000) for t in range(100)])
    # law of large numbers band on the mean, 5% relative Frobenius on E[vv^T]
    assert np.all(np.abs(V.mean(axis=0)) <= 4 * np.sqrt(np.diag(cov) / V.shape[0]))
    emp = V.T @ V / V.shape[0]
    assert np.linalg.norm(emp - noise.second_moment) <= 0.05 * np.linalg.norm(noise.second_moment)


@pytest.mark.parametrize("noise", [NoiseSpec.uniform_box([0.0, 1.0], [1.0, 0.5]),
                                   NoiseSpec.discrete([[1.0, 0.0], [-1.0, 2.0], [0.0, 0.0]], [0.2, 0.3, 0.5])])
def test_second_moment_matches_samples(noise):
    V = np.concatenate([rng.noise_block(noise, 5, t, 1000) for t in range(100)])
    emp = V.T @ V / V.shape[0]
    assert np.linalg.norm(emp - noise.second_moment) <= 0.05 * np.linalg.norm(noise.second_moment)


def test_same_key_same_draw():
    noise = NoiseSpec.gaussian([0.0], [[2.0]])
    key = rng.StreamKey(seed=42, traj=7, step=13)
    assert np.array_equal(rng.sample_noise(noise, key), rng.sample_noise(noise, key))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(0, 10_000), st.integers(0, 50))
def test_stream_prefix_property(seed, traj, k):
    noise = NoiseSpec.gaussian([0.0, 0.0], np.eye(2))
    long = rng.noise_block(noise, seed, traj, 60)
    assert np.array_equal(rng.sample_noise(noise, rng.StreamKey(seed, traj, k)), long[k])


def test_spec_round_trip():
    spec = scalar_lq(a=0.5, l=0.3)
    back = spec_from_dict(spec_to_dict(spec))
    for name in ("A", "B", "L", "Q", "R"):
        assert np.array_equal(getattr(back, name), getattr(spec, name))
    assert np.array_equal(back.noise.covariance, spec.noise.covariance)
    bench = make_benchmark("sine", NoiseSpec.gaussian([0.0], [[1.0]]), s=0.3)
    again = spec_from_dict(spec_to_dict(bench))
    X = np.linspace(-3, 3, 7)[:, None]
    assert np.array_equal(again.dynamics(X, X, X), bench.dynamics(X, X, X))
