import os

import numpy as np
import pytest

from nnreg import designs
from nnreg.designs import (DesignSpec, block_lower_bound,
                           build_deconv_instance,
                           build_kernel_recovery_design, ensemble_moments,
                           equicorr_gram, exact_gram_design,
                           gauss_kernel_columns, generate, glp_check,
                           grid_points, group_testing_demo,
                           laplace_kernel_columns, load_design,
                           load_instance, negcorr_gram, power_decay_gram,
                           save_design, save_instance)
from nnreg.errors import InvalidInputError
from nnreg.nnls import solve_nnls, uniqueness_report
from nnreg.rng import substream


def test_ensemble_moments_frozen_values():
    m = ensemble_moments("uniform", 1.0)
    assert (abs(m.mu - np.sqrt(3) / 2) < 1e-15 and m.mu2 == 1.0
            and abs(m.rho - 0.75) < 1e-15)
    assert abs(ensemble_moments("bernoulli", 0.25).rho - 0.25) < 1e-15
    m = ensemble_moments("halfnormal", 1.0)
    assert abs(m.rho - 2 / np.pi) < 1e-15
    m = ensemble_moments("poisson", 1.0)
    assert m.mu == 3.0 and m.mu2 == 12.0 and abs(m.rho - 0.75) < 1e-15
    with pytest.raises(InvalidInputError):
        ensemble_moments("uniform", 0.0)
    with pytest.raises(InvalidInputError):
        ensemble_moments("cauchy", 1.0)


def test_empirical_gram_approaches_population_rho():
    # large-n law of large numbers on the normalized off-diagonals
    n, p = 4000, 6
    for family, a in (("uniform", 1.0), ("bernoulli", 0.5),
                      ("halfnormal", 1.0), ("poisson", 2 / 3)):
        rho = ensemble_moments(family, a).rho
        x = generate(DesignSpec("nonneg-iid", n, p,
                                {"family": family, "a": a}), seed=0)
        gram = x.T @ x / n
        off = gram[~np.eye(p, dtype=bool)]
        assert np.max(np.abs(off - rho)) < 3 / np.sqrt(n), (family, a)


def test_gram_constructors():
    g = equicorr_gram(4, 0.3)
    assert np.allclose(np.diag(g), 1) and np.allclose(g[0, 1:], 0.3)
    with pytest.raises(InvalidInputError):
        equicorr_gram(4, 1.5)

    g = power_decay_gram(5, 0.5)
    assert g[0, 3] == 0.5 ** 3 and g[2, 4] == 0.25

    g = negcorr_gram(5, 3)
    assert np.allclose(g[0, 1:3], -1 / np.sqrt(2 * 2))
    assert np.allclose(g[0, 3:], 0) and np.allclose(np.diag(g), 1)
    lo = np.linalg.eigvalsh(g[:3, :3])[0]
    assert abs(lo - (1 - 1 / np.sqrt(2))) < 1e-12


def test_exact_gram_design_reproduces_gram():
    g = substream(0, 40)
    for _ in range(10):
        p = int(g.integers(2, 10))
        b = g.standard_normal((p + 2, p))
        target = b.T @ b / (p + 2)
        d = np.sqrt(np.diag(target))
        target = target / np.outer(d, d)
        n = p + int(g.integers(0, 4))
        x = exact_gram_design(target, n)
        assert x.shape == (n, p)
        assert np.max(np.abs(x.T @ x / n - target)) < 1e-10
    with pytest.raises(InvalidInputError):
        exact_gram_design(np.eye(3), 2)


def test_generate_deterministic_and_normalized():
    for kind, params in (("gaussian-iid", {}),
                         ("nonneg-iid", {"family": "uniform", "a": 1.0}),
                         ("group-testing", {"pi": 0.3})):
        spec = DesignSpec(kind, 50, 20, params)
        x1 = generate(spec, seed=11)
        x2 = generate(spec, seed=11)
        x3 = generate(spec, seed=12)
        assert np.array_equal(x1, x2)
        assert not np.array_equal(x1, x3)
        assert np.max(np.abs(np.sum(x1 ** 2, axis=0) - 50)) < 1e-9


def test_generate_orthonormal_and_unknown_kind():
    x = generate(DesignSpec("orthonormal", 6, 4))
    assert np.allclose(x.T @ x / 6, np.eye(4))
    with pytest.raises(InvalidInputError):
        DesignSpec("banded", 5, 5)
    with pytest.raises(InvalidInputError):
        generate(DesignSpec("orthonormal", 3, 5))


def test_group_testing_dead_column_redraw():
    # tiny inclusion probability: raw draws would often zero out a column
    x = generate(DesignSpec("group-testing", 8, 30, {"pi": 0.05}), seed=2)
    assert np.min(np.linalg.norm(x, axis=0)) > 0


def test_kernel_columns_shapes_and_peaks():
    n = 50
    u = grid_points(n)
    assert u[0] == 1 / n and u[-1] == 1.0
    centers = np.array([0.25, 0.5, 0.75])
    for cols in (gauss_kernel_columns(n, centers, width=2 / n),
                 laplace_kernel_columns(n, centers, h=2 / n)):
        assert cols.shape == (n, 3)
        peaks = u[np.argmax(cols, axis=0)]
        assert np.max(np.abs(peaks - centers)) <= 1 / n + 1e-12
    # closed form at one sampling point
    val = gauss_kernel_columns(n, np.array([0.5]), width=0.04)[9, 0]
    assert abs(val - np.exp(-(u[9] - 0.5) ** 2 / 0.04)) < 1e-15


def test_glp_check():
    assert glp_check(np.eye(4))
    x = np.random.default_rng(1).standard_normal((4, 6))
    x[:, 5] = x[:, 0]
    assert not glp_check(x)


def test_block_lower_bound():
    g = equicorr_gram(6, 0.4)
    # any partition of an equicorrelated gram has sigma0 = rho
    assert block_lower_bound(g, [[0, 1, 2], [3, 4, 5]]) == pytest.approx(0.2)
    assert block_lower_bound(g, [range(6)]) == pytest.approx(0.4)
    assert block_lower_bound(negcorr_gram(4, 3), [[0, 1], [2, 3]]) == 0.0
    with pytest.raises(InvalidInputError):
        block_lower_bound(g, [[0, 1], [3, 4, 5]])


def test_group_testing_demo_unique_recovery():
    from scipy.optimize import linprog
    x, beta_star = group_testing_demo()
    y = x @ beta_star
    sol = solve_nnls(x, y)
    assert np.max(np.abs(sol.beta - beta_star)) < 1e-8
    # uniqueness among non-negative exact fits, coordinate by coordinate:
    # the LP extremes of each beta_j over {b >= 0 : Xb = y} must coincide
    p = x.shape[1]
    for j in range(p):
        c = np.zeros(p)
        c[j] = 1.0
        lo = linprog(c, A_eq=x, b_eq=y, bounds=(0, None)).fun
        hi = -linprog(-c, A_eq=x, b_eq=y, bounds=(0, None)).fun
        assert abs(lo - beta_star[j]) < 1e-8 and abs(hi - beta_star[j]) < 1e-8
    # pooled 0/1 designs are NOT in general position; the subset checker
    # must say so rather than over-certify
    assert not uniqueness_report(x, sol).glp_ok


def test_deconv_instance_fixed_design_fresh_noise():
    a = build_deconv_instance(seed=1)
    b = build_deconv_instance(seed=2)
    assert np.array_equal(a.x, b.x)              # dictionary is part of the task
    assert not np.array_equal(a.y, b.y)
    assert a.truth.support.size == 5
    amps = a.truth.beta[a.truth.support]
    assert np.all((amps >= 0.2) & (amps <= 0.7))
    assert a.truth.sigma == 0.09
    assert np.max(np.abs(np.sum(a.x ** 2, axis=0) - 100)) < 1e-9


def test_kernel_recovery_design_separation():
    for seed in range(10):
        d = build_kernel_recovery_design(n=100, p=200, s=4, seed=seed)
        planted = d.centers[:4]
        decoys = d.centers[4:]
        assert np.all((d.centers >= d.m_lo) & (d.centers <= d.m_hi))
        gaps = np.diff(np.sort(planted))
        assert np.min(gaps) >= d.h
        dist = np.min(np.abs(decoys[:, None] - planted[None, :]), axis=1)
        assert np.min(dist) >= d.h
        assert np.array_equal(d.support, np.arange(4))


def test_save_load_roundtrip(tmp_path):
    spec = DesignSpec("gaussian-iid", 12, 7)
    x = generate(spec, seed=5)
    path = os.path.join(tmp_path, "d.json")
    manifest = save_design(path, x, spec=spec, seed=5)
    assert manifest["layout"] == "column-major"
    assert manifest["byte_order"] == "little"
    back, m2 = load_design(path)
    assert np.array_equal(back, x)
    assert m2["spec"]["kind"] == "gaussian-iid"

    # tamper with the payload: the hash check must catch it
    bin_path = os.path.join(tmp_path, "d.bin")
    blob = bytearray(open(bin_path, "rb").read())
    blob[3] ^= 1
    open(bin_path, "wb").write(bytes(blob))
    with pytest.raises(InvalidInputError):
        load_design(path)


def test_instance_roundtrip_preserves_truth(tmp_path):
    from nnreg.nnls import GroundTruth, RegressionInstance
    g = substream(3, 41)
    x = generate(DesignSpec("gaussian-iid", 10, 4), seed=3)
    beta = np.array([1.0, 0.0, 2.0, 0.0])
    inst = RegressionInstance(x, x @ beta,
                              GroundTruth(beta, np.array([0, 2]), 0.0))
    path = os.path.join(tmp_path, "i.json")
    save_instance(path, inst, seed=3)
    back, _ = load_instance(path)
    assert np.array_equal(back.x, x)
    assert np.array_equal(back.y, inst.y)
    assert np.array_equal(back.truth.beta, beta)
    assert list(back.truth.support) == [0, 2]
    assert back.truth.sigma == 0.0


def test_payload_is_column_major_float64(tmp_path):
    x = np.arange(6, dtype=np.float64).reshape(2, 3)
    path = os.path.join(tmp_path, "m.json")
    save_design(path, x)
    raw = np.frombuffer(open(os.path.join(tmp_path, "m.bin"), "rb").read(),
                        dtype="<f8")
    assert np.array_equal(raw, [0, 3, 1, 4, 2, 5])
