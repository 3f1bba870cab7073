import itertools

import numpy as np
import pytest

from nnreg.errors import InvalidInputError
from nnreg.nnls import (decouple, kkt_check, self_reg_decompose, solve_nnls,
                        uniqueness_report)
from nnreg.rng import substream
from nnreg.simplexqp import self_reg_margin


def _random_instance(g, n_hi=40, p_hi=40):
    n = int(g.integers(5, n_hi))
    p = int(g.integers(2, p_hi))
    x = g.standard_normal((n, p))
    y = g.standard_normal(n)
    return x, y


def test_kkt_on_random_instances():
    for seed in range(150):
        g = substream(seed, 0)
        x, y = _random_instance(g)
        sol = solve_nnls(x, y)
        rep = kkt_check(x, y, sol.beta)
        assert rep.ok, f"seed {seed}: violation {rep.max_violation:.2e}"
        assert rep.max_violation <= 1e-8
        assert sol.beta.min() >= 0


def test_orthonormal_closed_form():
    # With X'X/n = I each coordinate fits independently: clip(X_j'y/n, 0).
    for seed in range(20):
        g = substream(seed, 1)
        n = 30
        p = int(g.integers(2, n + 1))
        q, _ = np.linalg.qr(g.standard_normal((n, n)))
        x = np.sqrt(n) * q[:, :p]
        y = g.standard_normal(n)
        sol = solve_nnls(x, y)
        expect = np.maximum(x.T @ y / n, 0.0)
        assert np.max(np.abs(sol.beta - expect)) < 1e-10


def _brute_force(x, y):
    # enumerate supports, solve the unconstrained LS on each, keep feasible
    n, p = x.shape
    best = (np.inf, np.zeros(p))
    for r in range(p + 1):
        for cols in itertools.combinations(range(p), r):
            beta = np.zeros(p)
            if cols:
                sub = x[:, cols]
                coef, *_ = np.linalg.lstsq(sub, y, rcond=None)
                if coef.min() < 0:
                    continue
                beta[list(cols)] = coef
            obj = float(np.sum((y - x @ beta) ** 2)) / n
            if obj < best[0] - 1e-12:
                best = (obj, beta)
    return best


def test_small_problems_match_brute_force():
    for seed in range(60):
        g = substream(seed, 2)
        n = int(g.integers(2, 8))
        p = int(g.integers(1, 4))
        x = g.standard_normal((n, p))
        y = g.standard_normal(n)
        sol = solve_nnls(x, y)
        obj_bf, _ = _brute_force(x, y)
        assert sol.objective <= obj_bf + 1e-6


def test_noiseless_identifiable_is_exact():
    for seed in range(25):
        g = substream(seed, 3)
        n, p = 25, 12
        x = g.standard_normal((n, p))
        beta = np.zeros(p)
        s = int(g.integers(1, 6))
        beta[g.choice(p, size=s, replace=False)] = g.uniform(0.5, 3, size=s)
        sol = solve_nnls(x, x @ beta)
        assert np.max(np.abs(sol.beta - beta)) < 1e-8


def test_pure_noise_orthonormal_half_active():
    # Independent coordinates: |F| ~ Binomial(p, 1/2).
    g = substream(0, 4)
    n = p = 120
    x = np.sqrt(n) * np.eye(n)
    cards = []
    for _ in range(40):
        sol = solve_nnls(x, g.standard_normal(n))
        cards.append(sol.active.size)
    mean = np.mean(cards)
    se = np.sqrt(p * 0.25 / 40)
    assert abs(mean - p / 2) < 4 * se


def test_solution_fields_consistent():
    g = substream(7, 5)
    x, y = _random_instance(g)
    sol = solve_nnls(x, y)
    assert np.array_equal(sol.active, np.flatnonzero(sol.beta > 0))
    assert np.allclose(sol.residual, y - x @ sol.beta)
    n = x.shape[0]
    assert abs(sol.objective - np.sum(sol.residual ** 2) / n) < 1e-12


def test_solve_rejects_shape_mismatch():
    with pytest.raises(InvalidInputError):
        solve_nnls(np.ones((4, 2)), np.ones(3))


def test_decouple_composite_matches_direct():
    # When the on-support cleanup keeps every coefficient strictly positive,
    # the two-stage composite is itself a global minimizer.
    hits = 0
    for seed in range(40):
        g = substream(seed, 6)
        n, p, s = 30, 12, 3
        x = np.abs(g.standard_normal((n, p))) + 0.1
        x *= np.sqrt(n) / np.linalg.norm(x, axis=0)
        beta = np.zeros(p)
        beta[:s] = g.uniform(2.0, 4.0, size=s)
        y = x @ beta + 0.05 * g.standard_normal(n)
        fit = decouple(x, y, np.arange(s))
        if fit.on_all_positive:
            hits += 1
            assert fit.max_gap is not None and fit.max_gap < 1e-6
            assert np.max(np.abs(fit.composite - fit.full.beta)) < 1e-6
    assert hits >= 30          # the regime is calibrated to mostly qualify


def test_decouple_true_support_noiseless():
    # S covering the whole signal, no noise: stage one fits nothing,
    # stage two returns the signal.
    g = substream(1, 7)
    n, p, s = 20, 8, 4
    x = np.abs(g.standard_normal((n, p))) + 0.2
    beta = np.zeros(p)
    beta[:s] = g.uniform(1, 2, size=s)
    fit = decouple(x, x @ beta, np.arange(s))
    assert np.allclose(fit.beta_off, 0.0, atol=1e-8)
    assert np.allclose(fit.beta_on, beta[:s], atol=1e-8)
    with pytest.raises(InvalidInputError):
        decouple(x, x @ beta, np.arange(p))


def test_self_reg_decompose_identity():
    # (1/n)|eps - X b|^2 == (1/n)|eps - Xbar b|^2 + (h'b)^2 - 2(eps'w/sqrt n)(h'b)
    g = substream(2, 8)
    n, p = 25, 10
    x = np.abs(g.standard_normal((n, p))) + 0.3
    x *= np.sqrt(n) / np.linalg.norm(x, axis=0)
    cert = self_reg_margin(x)
    parts = self_reg_decompose(x, cert)
    tau = np.sqrt(cert.value)
    assert parts.h.min() >= tau - 1e-8
    assert np.all((parts.d > 0) & (parts.d <= 1 + 1e-12))
    for _ in range(20):
        eps = g.standard_normal(n)
        b = np.abs(g.standard_normal(p))
        lhs = np.sum((eps - x @ b) ** 2) / n
        hb = parts.h @ b
        rhs = np.sum((eps - parts.x_bar @ b) ** 2) / n + hb ** 2 \
            - 2 * (eps @ parts.w / np.sqrt(n)) * hb
        assert abs(lhs - rhs) < 1e-8 * max(1, lhs)


def test_uniqueness_report_flags():
    g = substream(3, 9)
    x = g.standard_normal((12, 5))
    sol = solve_nnls(x, g.standard_normal(12))
    rep = uniqueness_report(x, sol)
    assert rep.glp_ok and rep.unique_certified

    # duplicated column: general linear position fails
    xd = np.column_stack([x, x[:, 0]])
    sold = solve_nnls(xd, g.standard_normal(12))
    repd = uniqueness_report(xd, sold)
    assert not repd.glp_ok
    assert not repd.unique_certified
