import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from noisysbm.model import (
    EdgeIndexMap,
    EdgeListError,
    InvalidParameterError,
    ModelParams,
    ObservationMatrix,
    alt_density,
    edge_index,
    edge_pairs,
    l_value,
    n_nodes,
    null_density,
    p_value,
    pi0_pi1,
    read_adjacency,
    read_labels,
    read_observations,
    scenario1_theta,
    validate_theta,
    write_adjacency,
    write_labels,
    write_observations,
)


def one_cell(w, mu, sigma, sigma0=1.0):
    return ModelParams([1.0], [[w]], sigma0, [[mu]], [[sigma]])


def test_edge_index_round_trip():
    n = 7
    emap = EdgeIndexMap(n)
    rows, cols = emap.pairs()
    assert emap.m == 21
    assert_allclose(emap.index(rows, cols), np.arange(21))
    assert_allclose(emap.index(cols, rows), np.arange(21))
    # lexicographic
    assert list(zip(rows[:7], cols[:7])) == [(0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (0, 6), (1, 2)]
    assert n_nodes(21) == 7
    with pytest.raises(ValueError):
        n_nodes(20)


def test_validate_scenario1():
    theta = scenario1_theta()
    assert validate_theta(theta) is theta
    assert pi0_pi1(theta) == pytest.approx((0.5, 0.5))
    assert pi0_pi1(scenario1_theta(c_w=0.5)) == pytest.approx((0.75, 0.25))
    assert pi0_pi1(scenario1_theta(c_w=0.2)) == pytest.approx((0.9, 0.1))


@pytest.mark.parametrize("kwargs, message", [
    (dict(pi=[0.6, 0.5]), "pi not a probability vector"),
    (dict(w=[[0.8, 0.3], [0.2, 0.8]]), "w not symmetric"),
    (dict(w=[[1.0, 0.2], [0.2, 0.8]]), "w entries must lie in (0,1)"),
    (dict(sigma=[[1.0, -1.0], [-1.0, 1.0]]), "sigma must be positive"),
    (dict(sigma0=0.0), "sigma0 must be positive"),
    (dict(mu=[[0.0, 2.0], [2.0, 2.0]]), "null equals alternative at (1,1)"),
])
def test_validate_reports_first_violation(kwargs, message):
    base = scenario1_theta().to_dict()
    base.update(kwargs)
    with pytest.raises(InvalidParameterError, match=message.replace("(", r"\(").replace(")", r"\)")):
        validate_theta(ModelParams.from_dict(base))


def test_single_group_allowed():
    validate_theta(one_cell(0.3, 1.0, 1.0))
    assert pi0_pi1(one_cell(0.3, 1.0, 1.0)) == pytest.approx((0.7, 0.3))


def test_densities():
    assert null_density(0, 1) == pytest.approx(0.3989422804)
    assert alt_density(0, 1, 2) == pytest.approx(0.1760326634)
    x = np.linspace(-5, 5, 11)
    assert_allclose(alt_density(x, 1.5, 0.7), stats.norm.pdf(x, 1.5, 0.7))
    assert_allclose(alt_density(0.3, 0.3, 2.0), null_density(0, 2.0))


@pytest.mark.parametrize("x, theta, expected, rtol", [
    (1.0, one_cell(0.5, 2.0, 1.0), 0.5, 1e-12),
    (10.0, one_cell(0.5, 2.0, 1.0), 1 / (1 + np.exp(18)), 1e-9),
    (0.0, one_cell(0.3, 1.0, 2.0), 0.8410, 1e-4),
])
def test_l_value_examples(x, theta, expected, rtol):
    assert l_value(x, 0, 0, theta) == pytest.approx(expected, rel=rtol)


def test_l_value_direct_ratio():
    theta = one_cell(0.3, 1.0, 2.0)
    x = np.linspace(-4, 4, 41)
    g0 = stats.norm.pdf(x, 0, 1)
    g = stats.norm.pdf(x, 1, 2)
    assert_allclose(l_value(x, 0, 0, theta), 0.7 * g0 / (0.7 * g0 + 0.3 * g), rtol=1e-12)


def test_l_value_extreme_inputs_stay_finite():
    theta = one_cell(0.5, 2.0, 1.0)
    v = l_value(np.array([-200.0, 200.0]), 0, 0, theta)
    assert np.all(np.isfinite(v))
    assert v[0] == pytest.approx(1.0)
    assert v[1] == pytest.approx(0.0, abs=1e-100)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.1, 5), st.floats(-30, 30))
def test_l_value_in_unit_interval_and_decreasing(w, mu, x):
    theta = one_cell(w, mu, 1.0)
    v = l_value(np.array([x, x + 0.5]), 0, 0, theta)
    assert np.all((v >= 0) & (v <= 1))
    assert v[1] <= v[0]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2 ** 31))
def test_pi0_pi1_sum_to_one(Q, seed):
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet(np.ones(Q))
    w = rng.uniform(0.01, 0.99, (Q, Q))
    theta = ModelParams(pi, (w + w.T) / 2, 1.0, np.ones((Q, Q)), np.ones((Q, Q)))
    assert sum(pi0_pi1(theta)) == pytest.approx(1.0, abs=1e-12)


def test_p_value_examples():
    assert p_value(0.0, 1.0) == 1.0
    assert p_value(1.959964, 1.0) == pytest.approx(0.05, abs=1e-6)
    assert p_value(-2.3, 1.7) == p_value(2.3, 1.7)


def test_p_values_uniform_under_null():
    rng = np.random.default_rng(0)
    p = np.sort(p_value(rng.standard_normal(100_000), 1.0))
    ecdf = np.arange(1, p.size + 1) / p.size
    assert np.max(np.abs(ecdf - p)) < 0.01


def test_l_value_posterior_oracle():
    """Binned fraction of absent edges matches the l-value at the bin center."""
    rng = np.random.default_rng(1)
    theta = one_cell(0.4, 1.5, 1.3)
    size = 1_000_000
    A = rng.random(size) < 0.4
    x = np.where(A, rng.normal(1.5, 1.3, size), rng.normal(0.0, 1.0, size))
    edges = np.arange(-2.0, 4.0, 0.1)
    idx = np.digitize(x, edges)
    for b in range(1, edges.size):
        sel = idx == b
        if sel.sum() < 2000:
            continue
        center = edges[b - 1] + 0.05
        assert np.mean(~A[sel]) == pytest.approx(l_value(center, 0, 0, theta), abs=0.02)


def test_observation_matrix_access():
    X = ObservationMatrix(4, np.arange(6.0))
    assert X(0, 1) == 0.0 and X(1, 0) == 0.0
    assert X(2, 3) == 5.0
    D = X.dense()
    assert_allclose(D, D.T)
    assert_allclose(np.diag(D), 0)
    with pytest.raises(IndexError):
        X(2, 2)
    with pytest.raises(ValueError):
        ObservationMatrix(4, np.arange(5.0))


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    X = ObservationMatrix(6, rng.standard_normal(15))
    write_observations(tmp_path / "X.csv", X)
    back = read_observations(tmp_path / "X.csv")
    assert back.n == 6
    assert_allclose(back.values, X.values, rtol=0, atol=0)

    A = (rng.random(15) < 0.4).astype(np.int8)
    write_adjacency(tmp_path / "A.csv", A, 6)
    assert np.array_equal(read_adjacency(tmp_path / "A.csv", 6), A)

    Z = np.array([0, 1, 1, 0, 2, 2])
    write_labels(tmp_path / "Z.csv", Z)
    assert np.array_equal(read_labels(tmp_path / "Z.csv"), Z)


@pytest.mark.parametrize("body, message", [
    ("a,b,c\n1,2,0.5\n", ":1: expected header"),
    ("i,j,x\n1,2,0.5\n1,2,0.7\n", ":3: duplicate pair"),
    ("i,j,x\n1,2,0.5\n1,3,0.5\n", "missing pair (2,3)"),
    ("i,j,x\n2,1,0.5\n", ":2: need 1 <= i < j"),
    ("i,j,x\n1,2,abc\n", ":2: x is not a number"),
])
def test_read_observations_errors(tmp_path, body, message):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(EdgeListError, match=message.replace("(", r"\(").replace(")", r"\)")):
        read_observations(path)


def test_edge_index_matches_triu():
    n = 9
    rows, cols = edge_pairs(n)
    flat = np.full((n, n), -1)
    flat[np.triu_indices(n, 1)] = np.arange(rows.size)
    for i, j in zip(rows, cols):
        assert edge_index(i, j, n) == flat[i, j]
