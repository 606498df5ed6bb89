import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from noisysbm import vem
from noisysbm.model import ModelParams, ObservationMatrix, edge_pairs, l_value, scenario1_theta
from noisysbm.sampler import sample_nsbm


def one_cell(w, mu, sigma, sigma0=1.0):
    return ModelParams([1.0], [[w]], sigma0, [[mu]], [[sigma]])


def random_theta(rng, Q):
    def sym(a):
        return np.triu(a) + np.triu(a, 1).T
    return ModelParams(rng.dirichlet(np.full(Q, 2.0)), sym(rng.uniform(0.1, 0.9, (Q, Q))),
                       rng.uniform(0.7, 1.5), sym(rng.normal(1.5, 1.0, (Q, Q))),
                       sym(rng.uniform(0.5, 2.0, (Q, Q))))


def random_tau(rng, n, Q):
    return rng.dirichlet(np.ones(Q), size=n)


# ---------------------------------------------------------------------------
# rho and d

def test_rho_complements_l_value():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        theta = random_theta(rng, 2)
        x = rng.normal(0, 4)
        q, l = rng.integers(2, size=2)
        assert vem.rho(x, q, l, theta) + l_value(x, q, l, theta) == pytest.approx(1.0, abs=1e-12)


def test_rho_examples():
    assert vem.rho(1.0, 0, 0, one_cell(0.5, 2.0, 1.0)) == pytest.approx(0.5)
    assert vem.rho(0.0, 0, 0, one_cell(0.3, 1.0, 2.0)) == pytest.approx(0.1590, abs=1e-4)


def test_d_term_hand_value():
    theta = one_cell(0.3, 1.0, 2.0)
    g0 = stats.norm.pdf(0, 0, 1)
    g = stats.norm.pdf(0, 1, 2)
    r = 0.3 * g / (0.3 * g + 0.7 * g0)
    want = r * (np.log(g) + np.log(0.3) - 1) + (1 - r) * (np.log(g0) + np.log(0.7))
    assert vem.d_term(0.0, 0, 0, theta) == pytest.approx(want, rel=1e-12)


def test_d_term_equal_densities():
    # null and alternative coincide: rho = w = 0.5
    theta = one_cell(0.5, 0.0, 1.0)
    x = 0.7
    want = stats.norm.logpdf(x) + np.log(0.5) - 0.5
    assert vem.d_term(x, 0, 0, theta) == pytest.approx(want, rel=1e-12)


def test_d_term_finite_far_out():
    theta = one_cell(0.5, 2.0, 1.0)
    assert np.isfinite(vem.d_term(50.0, 0, 0, theta))
    assert np.isfinite(vem.d_term(-50.0, 0, 0, theta))


def test_edge_tables_match_scalar_forms():
    rng = np.random.default_rng(2)
    theta = random_theta(rng, 3)
    x = rng.normal(0, 2, 10)
    d = vem.edge_d(x, theta)
    for e in range(10):
        for q, l in itertools.product(range(3), repeat=2):
            assert d[e, q, l] == pytest.approx(vem.d_term(x[e], q, l, theta), rel=1e-12)


# ---------------------------------------------------------------------------
# VE step

def brute_force_ve(X, theta, tau, iters=10_000):
    """Plain undamped fixed-point iteration written with explicit loops."""
    n, Q = tau.shape
    d = {(i, j, q, l): vem.d_term(X(i, j), q, l, theta)
         for i in range(n) for j in range(n) if i != j for q in range(Q) for l in range(Q)}
    tau = tau.copy()
    for _ in range(iters):
        s = np.tile(np.log(theta.pi), (n, 1))
        for (i, j, q, l), v in d.items():
            s[i, q] += tau[j, l] * v
        new = np.exp(s - s.max(axis=1, keepdims=True))
        new /= new.sum(axis=1, keepdims=True)
        step = np.abs(new - tau).max()
        tau = new
        if step < 1e-14:
            break
    assert step < 1e-12, "oracle did not converge"
    return tau


def test_ve_step_matches_brute_force_on_five_nodes():
    # weakly separated cells keep the plain iteration contracting to a unique point
    rng = np.random.default_rng(11)
    theta = ModelParams([0.4, 0.6], [[0.5, 0.4], [0.4, 0.45]], 1.0,
                        [[1.5, 1.2], [1.2, 1.4]], [[1.0, 0.9], [0.9, 1.1]])
    X = ObservationMatrix(5, rng.normal(1.0, 1.5, 10))
    tau0 = random_tau(rng, 5, 2)
    got = vem.ve_step(X, theta, tau0)
    want = brute_force_ve(X, theta, tau0)
    assert_allclose(got, want, atol=1e-6)


def test_ve_step_single_group():
    rng = np.random.default_rng(0)
    X = ObservationMatrix(6, rng.normal(size=15))
    tau = vem.ve_step(X, one_cell(0.3, 2.0, 1.0), np.full((6, 1), 0.3))
    assert_allclose(tau, 1.0)


def test_ve_step_reports_residual():
    rng = np.random.default_rng(1)
    theta = scenario1_theta()
    _, X = sample_nsbm(30, theta, 1)
    cfg = vem.FitConfig()
    tau, it, res = vem.ve_step(X, theta, random_tau(rng, 30, 2), cfg, return_info=True)
    assert res < 1e-8 or it == cfg.max_fixedpoint_iters
    tau, it, res = vem.ve_step(X, theta, random_tau(rng, 30, 2),
                               vem.FitConfig(max_fixedpoint_iters=2), return_info=True)
    assert it == 2


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10_000))
def test_ve_step_rows_normalized(Q, seed):
    rng = np.random.default_rng(seed)
    theta = random_theta(rng, Q)
    X = ObservationMatrix(8, rng.normal(1, 2, 28))
    tau = vem.ve_step(X, theta, random_tau(rng, 8, Q))
    assert_allclose(tau.sum(axis=1), 1.0, atol=1e-10)
    assert tau.min() >= 1e-10 - 1e-16


# ---------------------------------------------------------------------------
# M step

def brute_force_m_step(X, tau, theta_prev):
    """Direct sums over ordered pairs i != j."""
    n, Q = tau.shape
    pi = tau.mean(axis=0)
    num_w = np.zeros((Q, Q))
    den_w = np.zeros((Q, Q))
    num_mu = np.zeros((Q, Q))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            x = X(i, j)
            for q in range(Q):
                for l in range(Q):
                    t = tau[i, q] * tau[j, l]
                    r = vem.rho(x, q, l, theta_prev)
                    num_w[q, l] += t * r
                    den_w[q, l] += t
                    num_mu[q, l] += t * r * x
    mu = num_mu / num_w
    var = np.zeros((Q, Q))
    num0 = den0 = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            x = X(i, j)
            for q in range(Q):
                for l in range(Q):
                    t = tau[i, q] * tau[j, l]
                    r = vem.rho(x, q, l, theta_prev)
                    var[q, l] += t * r * (x - mu[q, l]) ** 2
                    if i < j:
                        num0 += t * (1 - r) * x ** 2
                        den0 += t * (1 - r)
    return pi, num_w / den_w, np.sqrt(num0 / den0), mu, np.sqrt(var / num_w)


@pytest.mark.parametrize("seed", range(5))
def test_m_step_matches_direct_summation(seed):
    rng = np.random.default_rng(seed)
    Q = 2
    theta_prev = random_theta(rng, Q)
    X = ObservationMatrix(3, rng.normal(1, 2, 3))
    tau = random_tau(rng, 3, Q)
    got = vem.m_step(X, tau, theta_prev)
    pi, w, s0, mu, sig = brute_force_m_step(X, tau, theta_prev)
    assert_allclose(got.pi, pi, rtol=1e-12)
    assert_allclose(got.w, w, rtol=1e-10)
    assert got.sigma0 == pytest.approx(s0, rel=1e-10)
    assert_allclose(got.mu, mu, rtol=1e-10)
    assert_allclose(got.sigma, sig, rtol=1e-8)


def test_m_step_pi_from_hard_rows():
    tau = np.array([[1, 0], [0, 1], [1, 0], [0, 1]], dtype=float)
    rng = np.random.default_rng(0)
    X = ObservationMatrix(4, rng.normal(2, 1, 6))
    theta = vem.m_step(X, tau, scenario1_theta())
    assert_allclose(theta.pi, [0.5, 0.5])


def test_m_step_all_rho_one():
    rng = np.random.default_rng(0)
    X = ObservationMatrix(5, rng.normal(2, 1, 10))
    tau = random_tau(rng, 5, 2)
    theta = vem.m_step(X, tau, scenario1_theta(), rho_table=np.ones((10, 2, 2)))
    # numerator equals denominator cell-wise, up to the clamp away from 1
    assert_allclose(theta.w, 1 - vem.W_EPS)


def test_m_step_flags_empty_cells(caplog):
    # group 2 only carries the floor mass, so the (2,2) weights vanish
    tau = vem.hard_tau([0, 0, 0, 0], 2)
    rng = np.random.default_rng(0)
    X = ObservationMatrix(4, rng.normal(2, 1, 6))
    prev = scenario1_theta(mu=[[2.0, 5.0], [5.0, 7.0]])
    theta, cells = vem._m_step(X, tau, prev)
    assert cells == [(2, 2)]
    assert theta.mu[1, 1] == 7.0
    with caplog.at_level("WARNING"):
        vem.m_step(X, tau, prev)
    assert "no weight" in caplog.text


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 10_000))
def test_m_step_increases_j(Q, seed):
    rng = np.random.default_rng(seed)
    theta_prev = random_theta(rng, Q)
    X = ObservationMatrix(7, rng.normal(1, 2, 21))
    tau = random_tau(rng, 7, Q)
    new = vem.m_step(X, tau, theta_prev)
    before = vem.j_criterion(theta_prev, tau, theta_prev, X)
    after = vem.j_criterion(new, tau, theta_prev, X)
    assert after >= before - 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 4), st.integers(0, 10_000))
def test_m_step_permutation_equivariant(Q, seed):
    rng = np.random.default_rng(seed)
    theta_prev = random_theta(rng, Q)
    X = ObservationMatrix(8, rng.normal(1, 2, 28))
    tau = random_tau(rng, 8, Q)
    perm = rng.permutation(Q)
    a = vem.m_step(X, tau, theta_prev).permuted(perm)
    b = vem.m_step(X, tau[:, perm], theta_prev.permuted(perm))
    for name in ("pi", "w", "mu", "sigma"):
        assert_allclose(getattr(a, name), getattr(b, name), rtol=1e-10)
    assert a.sigma0 == pytest.approx(b.sigma0, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(0, 10_000))
def test_m_step_output_valid(Q, seed):
    from noisysbm.model import validate_theta
    rng = np.random.default_rng(seed)
    X = ObservationMatrix(6, rng.normal(1, 2, 15))
    theta = vem.m_step(X, random_tau(rng, 6, Q), random_theta(rng, Q))
    validate_theta(theta, check_distinct=False)


# ---------------------------------------------------------------------------
# J criterion

def test_j_single_group_closed_form():
    rng = np.random.default_rng(3)
    X = ObservationMatrix(5, rng.normal(1, 1.5, 10))
    theta = one_cell(0.4, 1.8, 1.1, sigma0=0.9)
    prev = one_cell(0.3, 2.0, 1.0)
    r = vem.rho(X.values, 0, 0, prev)
    lg = stats.norm.logpdf(X.values, 1.8, 1.1)
    lg0 = stats.norm.logpdf(X.values, 0, 0.9)
    want = np.sum(r * (lg + np.log(0.4) - 1) + (1 - r) * (lg0 + np.log(0.6)))
    assert vem.j_criterion(theta, np.ones((5, 1)), prev, X) == pytest.approx(want, rel=1e-12)


def test_j_entropy_zero_when_tau_equals_pi():
    theta = scenario1_theta()
    tau = np.tile(theta.pi, (4, 1))
    assert vem._entropy_term(tau, theta.pi) == pytest.approx(0.0, abs=1e-14)
    # 0 log 0 convention
    assert vem._entropy_term(np.array([[1.0, 0.0]]), theta.pi) == pytest.approx(np.log(0.5))


def test_j_finite_on_random_instances():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        Q = rng.integers(1, 4)
        X = ObservationMatrix(4, rng.normal(0, 5, 6))
        val = vem.j_criterion(random_theta(rng, Q), random_tau(rng, 4, Q), random_theta(rng, Q), X)
        assert np.isfinite(val)


# ---------------------------------------------------------------------------
# initialization

def test_init_kmeans_single_group():
    X = ObservationMatrix(5, np.arange(10.0))
    assert_allclose(vem.init_kmeans(X, 1, 0), 1.0)


def test_init_kmeans_deterministic():
    _, X = sample_nsbm(40, scenario1_theta(), 2)
    assert np.array_equal(vem.init_kmeans(X, 3, 7), vem.init_kmeans(X, 3, 7))


def test_init_kmeans_matches_exhaustive_partition():
    rng = np.random.default_rng(5)
    Z = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    rows, cols = edge_pairs(8)
    mean = np.where(Z[rows] == Z[cols], 4.0, -4.0)
    X = ObservationMatrix(8, mean + 0.2 * rng.standard_normal(28))
    data = X.dense()

    def inertia(labels):
        return sum(((data[labels == k] - data[labels == k].mean(axis=0)) ** 2).sum()
                   for k in (0, 1) if np.any(labels == k))

    best = min((np.array((0,) + bits) for bits in itertools.product((0, 1), repeat=7)
                if 0 < sum(bits) + 0 < 8), key=inertia)
    tau = vem.init_kmeans(X, 2, 0)
    labels = tau.argmax(axis=1)
    assert np.array_equal(labels, best) or np.array_equal(labels, 1 - best)
    assert np.array_equal(labels, Z) or np.array_equal(labels, 1 - Z)
    assert_allclose(tau.max(axis=1), 1 - 1e-10)


def test_init_kmeans_rejects_too_many_groups():
    with pytest.raises(ValueError):
        vem.init_kmeans(ObservationMatrix(3, np.zeros(3)), 4, 0)


def test_pooled_mixture_recovers_components():
    rng = np.random.default_rng(6)
    A = rng.random(20_000) < 0.3
    x = np.where(A, rng.normal(2.5, 0.8, A.size), rng.normal(0, 1.2, A.size))
    w, mu, s, s0, _ = vem.pooled_mixture(x)
    assert w == pytest.approx(0.3, abs=0.02)
    assert mu == pytest.approx(2.5, abs=0.05)
    assert s == pytest.approx(0.8, abs=0.05)
    assert s0 == pytest.approx(1.2, abs=0.03)


# ---------------------------------------------------------------------------
# fitting and selection

def test_fit_single_group_null_data():
    rng = np.random.default_rng(0)
    X = ObservationMatrix(60, rng.normal(0, 1.3, 1770))
    res = vem.fit(X, 1, vem.FitConfig(restarts=1))
    assert res.theta.sigma0 == pytest.approx(1.3, abs=0.05)


def test_fit_selection_rule_and_consistency():
    _, X = sample_nsbm(40, scenario1_theta(), 3)
    cfg = vem.FitConfig(restarts=4, seed=1)
    res = vem.fit(X, 2, cfg)
    assert res.j_trace[-1] >= max(v for v in res.restart_j if np.isfinite(v))
    assert res.restart_j[res.restart] == res.j_trace[-1]
    assert np.array_equal(res.Z_hat, res.tau.argmax(axis=1))
    if res.converged:
        assert vem.fixed_point_residual(X, res.theta, res.tau, floor=cfg.tau_floor) < 1e-6
    again = vem.fit(X, 2, cfg)
    assert np.array_equal(again.tau, res.tau)


def test_fit_recovers_strong_signal():
    theta0 = scenario1_theta()
    state, X = sample_nsbm(100, theta0, 4)
    res = vem.fit(X, 2, vem.FitConfig(restarts=3))
    acc = max(np.mean(res.Z_hat == state.Z), np.mean(res.Z_hat == 1 - state.Z))
    assert acc >= 0.95


def test_fit_rejects_bad_q():
    X = ObservationMatrix(3, np.zeros(3))
    with pytest.raises(ValueError):
        vem.fit(X, 0)
    with pytest.raises(ValueError):
        vem.fit(X, 4)


def test_fit_config_validation():
    with pytest.raises(ValueError):
        vem.FitConfig(rel_tol=0)
    with pytest.raises(ValueError):
        vem.FitConfig(damping=1.0)
    with pytest.raises(ValueError):
        vem.FitConfig(restarts=0)


@pytest.mark.parametrize("Q, n, m, want", [
    (2, 100, 4950, -np.log(100) - 10 * np.log(4950)),
    (1, 100, 4950, -4 * np.log(4950)),
])
def test_icl_penalty(Q, n, m, want):
    assert vem.bic_penalty(Q, n, m) == pytest.approx(want)


def test_icl_penalty_decreasing():
    pens = [vem.bic_penalty(Q, 100, 4950) for Q in range(1, 8)]
    assert np.all(np.diff(pens) < 0)


def test_icl_value():
    _, X = sample_nsbm(30, scenario1_theta(), 5)
    res = vem.fit(X, 2, vem.FitConfig(restarts=2))
    want = vem.expected_complete_loglik(X, res.theta, res.tau) + vem.bic_penalty(2, 30, 435)
    assert res.icl == pytest.approx(want)
    with pytest.raises(ValueError):
        vem.icl(X, res, 3)


def test_select_q_single():
    _, X = sample_nsbm(20, scenario1_theta(), 6)
    q_hat, fits = vem.select_q(X, 1, vem.FitConfig(restarts=1))
    assert q_hat == 1 and list(fits) == [1]


def test_select_q_tie_goes_to_smallest(monkeypatch):
    X = ObservationMatrix(4, np.zeros(6))

    def fake_fit(X, Q, config=None):
        return vem.FitResult(one_cell(0.5, 1, 1), np.ones((4, 1)), np.zeros(4, int), [0.0], True, icl=-1.0)
    monkeypatch.setattr(vem, "fit", fake_fit)
    assert vem.select_q(X, 3)[0] == 1


def test_fit_result_json_round_trip():
    _, X = sample_nsbm(20, scenario1_theta(), 7)
    res = vem.fit(X, 2, vem.FitConfig(restarts=1))
    back = vem.FitResult.from_dict(json.loads(json.dumps(res.to_dict())))
    assert np.array_equal(back.Z_hat, res.Z_hat)
    assert_allclose(back.tau, res.tau)
    assert_allclose(back.theta.mu, res.theta.mu)
    assert back.j_trace == res.j_trace
    assert min(res.to_dict()["Z_hat"]) >= 1
