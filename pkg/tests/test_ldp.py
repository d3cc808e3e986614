import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from schedlab import (
    IoptSearch,
    PathSample,
    aux_growth,
    compute_iopt,
    is_stabilizable,
    path_cost,
    poisson_rate,
    relative_entropy,
    w_growth,
)
from schedlab.errors import (
    MalformedPathError,
    NegativeArgumentError,
    NotAProbabilityVectorError,
)
from schedlab.ldp import _GrowthEvaluator
from conftest import make_config


def legendre_oracle(xi, lam, theta_max=60.0, n=400_001):
    """Numeric sup over a theta grid of theta*xi - lam*(e^theta - 1)."""
    theta = np.linspace(-60.0, theta_max, n)
    with np.errstate(over="ignore"):
        vals = theta * xi - lam * (np.exp(theta) - 1.0)
    return float(np.nanmax(vals))


class TestPoissonRate:
    def test_zero_at_mean(self):
        assert poisson_rate(1.0, 1.0) == 0.0
        assert poisson_rate(3.5, 3.5) == 0.0

    def test_value_at_two(self):
        assert poisson_rate(2.0, 1.0) == pytest.approx(2 * math.log(2) - 1, abs=1e-12)
        assert poisson_rate(2.0, 1.0) == pytest.approx(legendre_oracle(2.0, 1.0), abs=1e-7)

    def test_zero_argument_limit(self):
        assert poisson_rate(0.0, 1.0) == 1.0
        assert poisson_rate(0.0, 2.5) == 2.5

    def test_negative_arguments_rejected(self):
        with pytest.raises(NegativeArgumentError):
            poisson_rate(-0.1, 1.0)
        with pytest.raises(NegativeArgumentError):
            poisson_rate(1.0, 0.0)

    def test_vectorized(self):
        out = poisson_rate(np.array([0.0, 1.0, 2.0]), 1.0)
        assert out.shape == (3,)
        assert out[1] == 0.0

    @given(
        lam=st.floats(0.1, 8.0),
        xi=st.floats(0.0, 20.0),
    )
    @settings(max_examples=150, deadline=None)
    def test_matches_legendre_supremum(self, lam, xi):
        assert poisson_rate(xi, lam) == pytest.approx(legendre_oracle(xi, lam), abs=1e-6)

    @given(
        lam=st.floats(0.1, 5.0),
        a=st.floats(0.0, 15.0),
        b=st.floats(0.0, 15.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_midpoint_convexity(self, lam, a, b):
        mid = poisson_rate((a + b) / 2, lam)
        assert mid <= (poisson_rate(a, lam) + poisson_rate(b, lam)) / 2 + 1e-12


class TestRelativeEntropy:
    def test_identity_case(self):
        p = np.array([0.3, 0.6, 0.1])
        assert relative_entropy(p, p) == 0.0

    def test_single_term(self):
        val = relative_entropy([1.0, 0.0, 0.0], [0.3, 0.6, 0.1])
        assert val == pytest.approx(math.log(1 / 0.3), abs=1e-12)

    def test_absolute_continuity_failure(self):
        assert relative_entropy([0.5, 0.5], [1.0, 0.0]) == math.inf

    def test_rejects_non_probability_vectors(self):
        with pytest.raises(NotAProbabilityVectorError):
            relative_entropy([0.5, 0.6], [0.5, 0.5])
        with pytest.raises(NotAProbabilityVectorError):
            relative_entropy([1.5, -0.5], [0.5, 0.5])

    @given(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3))
    @settings(max_examples=150, deadline=None)
    def test_nonnegative_and_zero_only_at_p(self, raw):
        gamma = np.array(raw) / np.sum(raw)
        p = np.array([0.3, 0.6, 0.1])
        h = relative_entropy(gamma, p)
        assert h >= 0.0
        if h < 1e-12:
            assert np.allclose(gamma, p, atol=1e-5)


class TestPathCost:
    def test_mean_path_costs_nothing(self, ref_cfg):
        t = np.linspace(0.0, 4.0, 9)
        path = PathSample(
            times=t,
            f_values=np.outer(t, ref_cfg.arrival_rates),
            g_values=np.outer(t, ref_cfg.state_probs),
        )
        assert path_cost(path, ref_cfg) == pytest.approx(0.0, abs=1e-12)

    def test_constant_slopes(self, ref_cfg):
        y = np.array([2.0, 1.0, 1.0, 0.5])
        gamma = np.array([0.5, 0.25, 0.25])
        T = 3.0
        t = np.linspace(0.0, T, 7)
        path = PathSample(times=t, f_values=np.outer(t, y), g_values=np.outer(t, gamma))
        expected = T * (
            poisson_rate(y, ref_cfg.arrival_rates).sum()
            + relative_entropy(gamma, ref_cfg.state_probs)
        )
        assert path_cost(path, ref_cfg) == pytest.approx(expected, rel=1e-12)

    def test_invalid_state_increment_is_infinite(self, ref_cfg):
        t = np.array([0.0, 1.0])
        g = np.array([[0.0, 0.0, 0.0], [0.25, 0.25, 0.0]])  # sums to 0.5, not 1
        path = PathSample(times=t, f_values=np.outer(t, ref_cfg.arrival_rates), g_values=g)
        assert path_cost(path, ref_cfg) == math.inf

    def test_malformed_paths_rejected(self, ref_cfg):
        t = np.array([0.0, 1.0, 0.5])
        with pytest.raises(MalformedPathError):
            path_cost(
                PathSample(t, np.zeros((3, 4)), np.zeros((3, 3))), ref_cfg
            )
        t = np.array([0.0, 1.0])
        with pytest.raises(MalformedPathError):
            path_cost(
                PathSample(t, np.array([[0.0] * 4, [-1.0] * 4]), np.outer(t, ref_cfg.state_probs)),
                ref_cfg,
            )

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_additive_over_concatenation(self, seed, ref_cfg):
        rng = np.random.default_rng(seed)
        t_all = np.array([0.0, 0.5, 1.0, 1.6, 2.0])
        df = rng.uniform(0, 2, size=(4, 4)) * np.diff(t_all)[:, None]
        dg = rng.dirichlet(np.ones(3), size=4) * np.diff(t_all)[:, None]
        f = np.vstack([np.zeros(4), df.cumsum(axis=0)])
        g = np.vstack([np.zeros(3), dg.cumsum(axis=0)])
        whole = path_cost(PathSample(t_all, f, g), ref_cfg)
        first = path_cost(PathSample(t_all[:3], f[:3], g[:3]), ref_cfg)
        second = path_cost(
            PathSample(t_all[2:] - t_all[2], f[2:] - f[2], g[2:] - g[2]), ref_cfg
        )
        assert whole == pytest.approx(first + second, rel=1e-9, abs=1e-12)


def allocation_lattice(n, parts):
    cells = []
    for cut in itertools.combinations(range(parts + n - 1), n - 1):
        prev, row = -1, []
        for c in cut:
            row.append(c - prev - 1)
            prev = c
        row.append(parts + n - 2 - prev)
        cells.append(row)
    return np.array(cells, dtype=float) / parts


def w_bruteforce(y, gamma, cfg, parts=20):
    """Min over a per-state allocation lattice (step 1/parts) of the max shortfall."""
    M, N = cfg.n_states, cfg.n_users
    rows = allocation_lattice(N, parts)
    contribs = [gamma[m] * cfg.rate_matrix[m] * rows for m in range(M)]  # each (K, N)
    if M == 1:
        v = contribs[0]
        return float(np.maximum(y[None, :] - v, 0.0).max(axis=1).min())
    if M == 2:
        v = contribs[0][:, None, :] + contribs[1][None, :, :]
        return float(np.maximum(y - v, 0.0).max(axis=2).min())
    assert M == 3, "brute-force oracle implemented for up to three states"
    best = np.inf
    pair = contribs[1][:, None, :] + contribs[2][None, :, :]
    for row0 in contribs[0]:
        short = np.maximum(y - (pair + row0), 0.0).max(axis=2)
        best = min(best, float(short.min()))
    return best


class TestWGrowth:
    def test_single_user_forced(self, single_user_cfg):
        w, phi = w_growth(np.array([2.0]), np.array([1.0]), single_user_cfg)
        assert w == pytest.approx(0.0, abs=1e-9)
        w, phi = w_growth(np.array([7.0]), np.array([1.0]), single_user_cfg)
        assert w == pytest.approx(2.0, abs=1e-9)
        assert phi.phi[0, 0] == pytest.approx(1.0)

    def test_reference_mean_point_is_stable(self, ref_cfg):
        w, _ = w_growth(ref_cfg.arrival_rates, ref_cfg.state_probs, ref_cfg)
        assert w == pytest.approx(0.0, abs=1e-9)

    def test_matches_scipy_linprog(self, ref_cfg):
        rng = np.random.default_rng(3)
        M, N = ref_cfg.n_states, ref_cfg.n_users
        for _ in range(30):
            y = rng.uniform(0, 8, N)
            gamma = rng.dirichlet(np.ones(M))
            w, _ = w_growth(y, gamma, ref_cfg)
            nv = 1 + M * N
            c = np.zeros(nv)
            c[0] = 1.0
            A_ub = np.zeros((N, nv))
            b_ub = -y
            for i in range(N):
                A_ub[i, 0] = -1.0
                for m in range(M):
                    A_ub[i, 1 + m * N + i] = -gamma[m] * ref_cfg.rate_matrix[m, i]
            A_eq = np.zeros((M, nv))
            for m in range(M):
                A_eq[m, 1 + m * N : 1 + (m + 1) * N] = 1.0
            ref = linprog(
                c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=np.ones(M),
                bounds=[(0, None)] * nv, method="highs",
            )
            assert ref.success
            assert w == pytest.approx(ref.x[0], abs=1e-8)

    def test_monotone_in_each_arrival(self, ref_cfg):
        rng = np.random.default_rng(5)
        gamma = np.array([0.2, 0.5, 0.3])
        for _ in range(20):
            y = rng.uniform(0, 6, 4)
            w0, _ = w_growth(y, gamma, ref_cfg)
            i = int(rng.integers(4))
            y2 = y.copy()
            y2[i] += rng.uniform(0, 3)
            w1, _ = w_growth(y2, gamma, ref_cfg)
            assert w1 >= w0 - 1e-9

    def test_zero_iff_dominated(self, ref_cfg):
        rng = np.random.default_rng(6)
        for _ in range(20):
            gamma = rng.dirichlet(np.ones(3))
            y = rng.uniform(0, 5, 4)
            w, phi = w_growth(y, gamma, ref_cfg)
            v = (gamma[:, None] * ref_cfg.rate_matrix * phi.phi).sum(axis=0)
            if w <= 1e-9:
                assert np.all(y <= v + 1e-7)
            else:
                assert np.any(y > v + 1e-9) or w <= 1e-9

    def test_dual_evaluator_matches_lp(self, ref_cfg):
        ev = _GrowthEvaluator(ref_cfg)
        assert ev.cands is not None
        rng = np.random.default_rng(7)
        for _ in range(100):
            y = rng.uniform(0, 10, 4)
            gamma = rng.dirichlet(np.ones(3))
            assert ev.one(y, gamma) == pytest.approx(w_growth(y, gamma, ref_cfg)[0], abs=1e-8)

    def test_bruteforce_grid_bound_random_3x3(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            rates = rng.uniform(0, 2, size=(3, 3))
            cfg = make_config(rates, rng.dirichlet(np.ones(3)), rng.uniform(0.2, 2, 3))
            y = rng.uniform(0, 4, 3)
            gamma = rng.dirichlet(np.ones(3))
            w, _ = w_growth(y, gamma, cfg)
            grid = w_bruteforce(y, gamma, cfg, parts=20)
            assert w <= grid + 1e-9
            assert grid - w <= 2e-2


class TestStabilizable:
    def test_reference_system_stable(self, ref_cfg):
        ok, witness = is_stabilizable(ref_cfg, 0.0)
        assert ok
        v = (ref_cfg.state_probs[:, None] * ref_cfg.rate_matrix * witness.phi).sum(axis=0)
        assert np.all(v >= ref_cfg.arrival_rates - 1e-7)

    def test_overloaded_single_user(self):
        cfg = make_config([[5.0]], [1.0], [6.0])
        ok, witness = is_stabilizable(cfg, 0.0)
        assert not ok
        assert witness is None

    def test_vanishing_load(self):
        cfg = make_config([[0.0, 1.0], [2.0, 0.0]], [0.5, 0.5], [1e-9, 1e-9])
        ok, _ = is_stabilizable(cfg, 0.0)
        assert ok


class TestComputeIopt:
    def test_unstable_config_returns_zero(self):
        cfg = make_config([[5.0]], [1.0], [6.0])
        res = compute_iopt(cfg)
        assert res.value == 0.0
        assert res.converged
        assert res.arg_w > 0

    def test_single_user_against_bruteforce(self, single_user_cfg):
        res = compute_iopt(single_user_cfg)
        y = np.linspace(5.0 + 1e-6, 16.0, 2_000_001)
        oracle = float(np.min((y * np.log(y) - y + 1.0) / (y - 5.0)))
        assert res.value == pytest.approx(oracle, abs=1e-4)
        assert res.value >= oracle - 1e-9  # upper bound on the infimum

    def test_value_invariant(self, ref_cfg):
        res = compute_iopt(ref_cfg, IoptSearch(y_grid=7, gamma_grid=9))
        cost = poisson_rate(res.arg_y, ref_cfg.arrival_rates).sum() + relative_entropy(
            res.arg_gamma, ref_cfg.state_probs
        )
        assert res.value * res.arg_w == pytest.approx(cost, abs=1e-9)
        assert res.arg_w >= 1e-6
        rows = res.arg_phi.phi.sum(axis=1)
        assert np.allclose(rows, 1.0, atol=1e-9)

    def test_grid_refinement_never_increases_value(self, ref_cfg):
        coarse = compute_iopt(ref_cfg, IoptSearch(y_grid=5, gamma_grid=8))
        fine = compute_iopt(ref_cfg, IoptSearch(y_grid=9, gamma_grid=15))
        assert fine.value <= coarse.value + 1e-7


def aux_grid_oracle(cfg, gamma, rho1=0.0, rho2=0.0, n=100):
    """10^4-point allocation grid for 2-user/2-state instances."""
    share = np.linspace(0.0, 1.0, n)
    r = gamma[:, None] * cfg.rate_matrix
    best = np.inf
    for a in share:
        phi0 = np.array([a, 1 - a])
        v0 = r[0] * phi0
        v1_all = r[1][None, :] * np.stack([share, 1 - share], axis=1)
        v = v0[None, :] + v1_all
        vmax = v.max(axis=1)
        t = np.where(vmax[:, None] > 0, v / np.where(vmax[:, None] > 0, vmax[:, None], 1.0), 0.0)
        obj = (cfg.arrival_rates[None, :] - np.exp(-t + rho1 + rho2)).max(axis=1)
        best = min(best, float(obj.min()))
    return best


class TestAuxGrowth:
    def test_single_user_closed_form(self, single_user_cfg):
        omega, v = aux_growth(single_user_cfg, np.array([1.0]))
        assert omega == pytest.approx(1.0 - math.exp(-1.0), abs=1e-9)
        assert v[0] == pytest.approx(5.0)

    def test_symmetric_users_symmetric_argument(self):
        cfg = make_config([[2.0, 2.0], [6.0, 6.0]], [0.5, 0.5], [1.0, 1.0])
        omega, v = aux_growth(cfg, np.array([0.5, 0.5]))
        assert v[0] == pytest.approx(v[1], rel=1e-6)

    def test_random_2x2_against_grid_oracle(self):
        rng = np.random.default_rng(13)
        for _ in range(8):
            rates = rng.uniform(0.5, 8, size=(2, 2))
            cfg = make_config(rates, rng.dirichlet(np.ones(2)), rng.uniform(0.5, 2, 2))
            gamma = rng.dirichlet(np.ones(2))
            omega, _ = aux_growth(cfg, gamma)
            oracle = aux_grid_oracle(cfg, gamma)
            assert omega <= oracle + 1e-3

    def test_all_zero_rates_convention(self):
        cfg = make_config([[0.0, 0.0]], [1.0], [1.0, 2.0])
        omega, v = aux_growth(cfg, np.array([1.0]))
        assert omega == pytest.approx(2.0 - 1.0)  # max lambda - e^0
        assert np.array_equal(v, [0.0, 0.0])
