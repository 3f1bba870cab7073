import numpy as np
import pytest

from nnreg.designs import build_kernel_recovery_design
from nnreg.errors import InvalidInputError
from nnreg.estimators import (nn_lasso, nn_lasso_lambda_max, nn_lasso_path,
                              omp, rank_by_magnitude, recover_support, ridge,
                              ridge_cv, select_model_size, sigma_naive,
                              threshold_hard)
from nnreg.nnls import solve_nnls
from nnreg.rng import substream


def _normalized(g, n, p, nonneg=False):
    x = g.standard_normal((n, p))
    if nonneg:
        x = np.abs(x) + 0.1
    x *= np.sqrt(n) / np.linalg.norm(x, axis=0)
    return x


def test_threshold_and_ranking_trivia():
    beta = np.array([0.0, 3.0, 0.5, 2.0])
    kept, support = threshold_hard(beta, 1.0)
    assert np.allclose(kept, [0, 3, 0, 2]) and list(support) == [1, 3]
    kept, support = threshold_hard(beta, 0.5)     # strict >
    assert np.allclose(kept, [0, 3, 0, 2]) and list(support) == [1, 3]
    ranks = rank_by_magnitude(beta)
    assert list(ranks) == [4, 1, 3, 2]
    # ties go to the lower index
    assert list(rank_by_magnitude([1.0, 1.0])) == [1, 2]


def test_sigma_naive_zero_on_perfect_fit():
    g = substream(0, 20)
    x = _normalized(g, 20, 6)
    beta = np.abs(g.standard_normal(6))
    assert sigma_naive(x, x @ beta, beta) < 1e-12


def test_nn_lasso_zero_above_lambda_max():
    for seed in range(15):
        g = substream(seed, 21)
        x = _normalized(g, 25, 10)
        y = g.standard_normal(25)
        lmax = nn_lasso_lambda_max(x, y)
        assert not nn_lasso(x, y, lmax * 1.0001).any()
        if lmax > 0:
            assert nn_lasso(x, y, lmax * 0.98).any()


def test_nn_lasso_kkt():
    # stationarity: X_j'r/n == lam/2 on the active set, <= lam/2 off it
    for seed in range(25):
        g = substream(seed, 22)
        n, p = 30, 12
        x = _normalized(g, n, p)
        y = g.standard_normal(n) + x[:, :3] @ np.full(3, 2.0)
        lam = 0.3
        beta = nn_lasso(x, y, lam)
        grad = x.T @ (y - x @ beta) / n
        on = beta > 1e-12
        if on.any():
            assert np.max(np.abs(grad[on] - lam / 2)) < 1e-7
        assert np.max(grad[~on], initial=-np.inf) <= lam / 2 + 1e-7


def test_nn_lasso_approaches_nnls_as_lambda_vanishes():
    g = substream(3, 23)
    x = _normalized(g, 40, 8)
    y = x[:, :2] @ np.array([1.5, 2.0]) + 0.1 * g.standard_normal(40)
    sol = solve_nnls(x, y)
    beta = nn_lasso(x, y, 1e-8)
    assert np.max(np.abs(beta - sol.beta)) < 1e-4


def test_path_matches_coordinate_descent():
    # Two independent algorithms for the same objective must agree at
    # interior penalties.
    for seed in range(20):
        g = substream(seed, 24)
        n, p = 30, 15
        x = _normalized(g, n, p, nonneg=(seed % 2 == 0))
        beta_true = np.zeros(p)
        beta_true[:3] = g.uniform(1, 2, size=3)
        y = x @ beta_true + 0.3 * g.standard_normal(n)
        lmax = nn_lasso_lambda_max(x, y)
        path = nn_lasso_path(x, y, lam_floor=lmax * 0.05)
        assert np.all(np.diff(path.breakpoints) <= 1e-12)
        assert path.breakpoints[0] == pytest.approx(lmax, rel=1e-10)
        for frac in (0.8, 0.4, 0.1):
            lam = lmax * frac
            via_path = path.beta_at(lam)
            via_cd = nn_lasso(x, y, lam, tol=1e-12)
            assert np.max(np.abs(via_path - via_cd)) < 1e-6
        assert not path.beta_at(lmax * 2).any()


def test_path_beta_at_below_floor_raises():
    g = substream(1, 25)
    x = _normalized(g, 20, 6)
    y = np.abs(g.standard_normal(20))
    lmax = nn_lasso_lambda_max(x, y)
    path = nn_lasso_path(x, y, lam_floor=lmax * 0.5)
    with pytest.raises(InvalidInputError):
        path.beta_at(path.breakpoints[-1] * 0.5)


def test_path_support_patterns_dedupe_and_floor():
    g = substream(2, 26)
    x = _normalized(g, 40, 10)
    y = x[:, :4] @ np.full(4, 2.0) + 0.2 * g.standard_normal(40)
    lmax = nn_lasso_lambda_max(x, y)
    path = nn_lasso_path(x, y, lam_floor=lmax * 0.01)
    pats = path.support_patterns()
    keys = [tuple(p) for p in pats]
    assert len(keys) == len(set(keys))
    assert keys[0] == ()            # the path starts empty at lambda_max
    high_only = path.support_patterns(lam_floor=path.breakpoints[1])
    assert len(high_only) <= len(pats)


def test_omp_orthonormal_exact():
    for seed in range(10):
        g = substream(seed, 27)
        n = 30
        q, _ = np.linalg.qr(g.standard_normal((n, n)))
        x = np.sqrt(n) * q[:, :20]
        beta = np.zeros(20)
        s = 4
        beta[g.choice(20, size=s, replace=False)] = g.uniform(1, 2, size=s)
        res = omp(x, x @ beta, steps=s)
        assert set(res.support.tolist()) == set(np.flatnonzero(beta).tolist())
        assert np.max(np.abs(res.beta - beta)) < 1e-8
        assert np.all(np.diff(res.residual_norms) <= 1e-12)


def test_omp_step_count_and_refit():
    g = substream(11, 27)
    x = _normalized(g, 25, 12)
    y = g.standard_normal(25)
    res = omp(x, y, steps=5)
    assert res.support.size == 5 and len(res.order) == 5
    # refit optimality: residual orthogonal to the selected columns
    r = y - x @ res.beta
    assert np.max(np.abs(x[:, res.support].T @ r)) < 1e-8


def test_ridge_matches_closed_form():
    g = substream(4, 28)
    n, p = 30, 8
    x = _normalized(g, n, p)
    y = g.standard_normal(n)
    for gamma in (0.01, 1.0, 50.0):
        beta = ridge(x, y, gamma)
        expect = np.linalg.solve(x.T @ x / n + gamma * np.eye(p), x.T @ y / n)
        assert np.max(np.abs(beta - expect)) < 1e-10
    assert np.max(np.abs(ridge(x, y, 1e9))) < 1e-6


def test_ridge_cv_picks_from_grid_deterministically():
    g = substream(5, 29)
    x = _normalized(g, 60, 10)
    y = x[:, :2] @ np.array([2.0, 1.0]) + 0.5 * g.standard_normal(60)
    grid = (0.01, 0.1, 1.0, 10.0)
    beta1, g1, cv1 = ridge_cv(x, y, grid=grid, folds=5, seed=3)
    beta2, g2, cv2 = ridge_cv(x, y, grid=grid, folds=5, seed=3)
    assert g1 == g2 and g1 in grid
    assert np.array_equal(beta1, beta2) and np.array_equal(cv1, cv2)
    assert cv1.size == len(grid)


def test_select_model_size_validates_order():
    g = substream(6, 30)
    x = _normalized(g, 20, 5)
    y = g.standard_normal(20)
    with pytest.raises(InvalidInputError):
        select_model_size(x, y, [0, 1, 2], sigma_hat=1.0)
    with pytest.raises(InvalidInputError):
        select_model_size(x, y, [0, 0, 1, 2, 3], sigma_hat=1.0)


def test_select_model_size_noiseless_gains_vanish_past_s():
    g = substream(7, 31)
    n, p, s = 40, 15, 5
    x = _normalized(g, n, p)
    beta = np.zeros(p)
    beta[:s] = g.uniform(1, 3, size=s)
    y = x @ beta
    order = list(range(p))
    size, gains = select_model_size(x, y, order, sigma_hat=0.0)
    assert size == s
    assert np.max(np.abs(gains[s:])) < 1e-9 * np.linalg.norm(y)
    assert np.min(gains[:s]) > 0


def test_recover_support_noiseless_and_pure_noise():
    g = substream(8, 32)
    n, p, s = 60, 30, 4
    x = _normalized(g, n, p)
    beta = np.zeros(p)
    beta[g.choice(p, size=s, replace=False)] = g.uniform(1, 2, size=s)
    res = recover_support(x, x @ beta)
    assert set(res.support.tolist()) == set(np.flatnonzero(beta).tolist())
    assert res.size == s
    # refit on the right support reproduces the signal
    assert np.max(np.abs(res.beta - beta)) < 1e-8

    # pure noise: the data-driven size stays small
    sizes = [recover_support(x, g.standard_normal(n)).size
             for _ in range(20)]
    assert np.mean(sizes) < 3 and max(sizes) <= 6


def test_shat_with_true_sigma_on_near_noiseless_kernel_designs():
    # Localized-bump designs at a comfortable sparsity: handing the rule the
    # true (tiny) noise level must give exactly s nearly always.
    hits = 0
    for seed in range(100):
        design = build_kernel_recovery_design(n=120, p=240, s=3, seed=seed)
        g = substream(seed, 33)
        beta = np.zeros(240)
        beta[:3] = 1.0 * 4 * np.sqrt(6 * np.log(10) / 120) * (1 + g.uniform(size=3))
        sigma = 1e-3
        y = design.x @ beta + sigma * g.standard_normal(120)
        res = recover_support(design.x, y, sigma_hat=sigma)
        hits += res.size == 3
    assert hits >= 95
