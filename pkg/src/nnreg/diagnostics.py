"""Support-level design constants, error bounds, and cone diagnostics.

Everything here is a deterministic function of the design (through its
Gram matrix XᵀX/n), a candidate support, and the noise scale. These are
the quantities that decide, before any data are drawn, whether thresholded
support recovery can work: the off-support margin, the conditioning of the
on-support block, the irrepresentable-type alignment of off-support
columns, and the resulting coefficient error bounds.
"""

from dataclasses import dataclass
from math import log, sqrt

import numpy as np

from .errors import InvalidInputError
from .linalg import as_matrix, sym_eig_extremes, spd_inverse
from .simplexqp import project_to_simplex, self_reg_margin, support_margin
from .rng import substream


def noise_level(sigma, n, p, slack=0.0):
    """Scale of the maximal noise correlation: (1+slack)·σ·√(2 log p / n)."""
    if n <= 0 or p < 2 or sigma < 0 or slack < 0:
        raise InvalidInputError("need n ≥ 1, p ≥ 2, sigma ≥ 0, slack ≥ 0")
    return (1.0 + slack) * sigma * sqrt(2.0 * log(p) / n)


def slow_rate_bound(l1_norm, margin_sq, sigma, n, p, slack=0.0, approx_err=0.0):
    """Prediction-error bound that needs no sparsity, only a positive margin.

    Returns
        approx_err
        + ((6·‖β*‖₁ + 8·√approx_err) / margin²) · (1+slack)·σ·√(2 log p/n)
        + 16·(1+slack)²·σ²·log p / (margin²·n).
    """
    if margin_sq <= 0:
        raise InvalidInputError("slow-rate bound requires a positive squared margin")
    if l1_norm < 0 or approx_err < 0:
        raise InvalidInputError("norms must be non-negative")
    lam = noise_level(sigma, n, p, slack)
    return (approx_err
            + ((6.0 * l1_norm + 8.0 * sqrt(approx_err)) / margin_sq) * lam
            + 16.0 * (1.0 + slack) ** 2 * sigma ** 2 * log(p) / (margin_sq * n))


@dataclass
class ConeReport:
    ratio: float
    in_cone: bool


def cone_membership(delta, support, c0):
    """Is the off-support ℓ₁ mass of ``delta`` at most c0 times the on-support mass?"""
    dv = np.asarray(delta, dtype=np.float64).reshape(-1)
    s_idx = np.asarray(sorted(support), dtype=int)
    mask = np.zeros(dv.size, dtype=bool)
    mask[s_idx] = True
    on = float(np.sum(np.abs(dv[mask])))
    off = float(np.sum(np.abs(dv[~mask])))
    ratio = off / max(on, 1e-300)
    return ConeReport(ratio, ratio <= c0)


def size_condition(margin_sq, n, p, s, sigma=1.0, slack=1.0,
                   noise_second_moment=None):
    """Sample-size condition for high-probability active-set control.

    True when (32·(1+slack)²·σ²/m₂)·(log p)/(margin²·n) ≤ 1 − s/n, with m₂
    the noise second moment (default σ², the Gaussian case). Monotone in n:
    growing the sample never flips it from true to false.
    """
    if noise_second_moment is None:
        noise_second_moment = sigma ** 2
    if margin_sq <= 0:
        return False
    lhs = (32.0 * (1.0 + slack) ** 2 * sigma ** 2 / noise_second_moment) \
        * log(p) / (margin_sq * n)
    return bool(lhs <= 1.0 - s / n)


@dataclass
class DiagnosticsReport:
    """Design constants of a candidate support and the bounds they imply.

    ``margin_sq_full`` / ``margin_sq_support`` are the squared separation
    margins of the whole design and of the projected off-support columns;
    ``inv_gram_inf_norm`` the ∞-norm of the inverse on-support Gram;
    ``min_eig_support`` its smallest eigenvalue; ``irrepresentable`` the
    largest alignment of an off-support column with the equi-weighted
    on-support direction. ``off_support_l1_bound`` bounds ‖β̂_off‖₁ and
    ``sup_norm_bound`` bounds ‖β̂ − β*‖_∞, both at noise level
    ``noise_bound``. ``size_condition_ok`` says the sample is large enough
    for the high-probability support-size control. ``beta_min`` and
    ``slow_rate`` are filled when the ground-truth coefficients are known.
    """

    support: np.ndarray
    n: int
    p: int
    sigma: float
    slack: float
    margin_sq_full: float
    margin_sq_support: float
    min_eig_support: float
    max_eig_support: float
    inv_gram_inf_norm: float
    inv_gram_one_inf: float
    irrepresentable: float
    noise_bound: float
    off_support_l1_bound: float
    sup_norm_bound: float
    size_condition_ok: bool
    lasso_lambda_floor: float
    beta_min: float | None = None
    slow_rate: float | None = None

    def lasso_sup_norm_bound(self, lam):
        """ℓ∞ error bound for the non-negative lasso at penalty ``lam``.

        Only meaningful for lam above ``lasso_lambda_floor``; raises below.
        """
        if not lam > self.lasso_lambda_floor:
            raise InvalidInputError(
                f"penalty {lam:g} is not above the floor {self.lasso_lambda_floor:g}")
        return 0.5 * lam * self.inv_gram_one_inf \
            + self.noise_bound / sqrt(self.min_eig_support)


def support_constants(x, support, sigma=1.0, slack=1.0, beta_star=None,
                      noise_second_moment=None, margin_sq=None,
                      full_margin=True):
    """Compute DiagnosticsReport for a design and candidate support.

    ``slack`` is the confidence-slack factor multiplying the noise level
    (report-level default 1). ``noise_second_moment`` defaults to sigma²
    (Gaussian case); it enters only the sample-size condition. ``margin_sq``
    can be supplied to skip the simplex-QP margin computation; set
    ``full_margin`` false to skip the whole-design margin (and with it the
    slow-rate bound). With ``beta_star`` given, ``beta_min`` and the
    slow-rate prediction bound are filled in assuming zero approximation
    error.
    """
    xm = as_matrix(x)
    n, p = xm.shape
    s_idx = np.asarray(sorted(support), dtype=int)
    s = s_idx.size
    if s == 0 or s >= p:
        raise InvalidInputError("support must be a nonempty strict subset")
    if sigma < 0:
        raise InvalidInputError("sigma must be non-negative")

    sigma_full = (xm.T @ xm) / n
    mask = np.zeros(p, dtype=bool)
    mask[s_idx] = True
    s_on = sigma_full[np.ix_(s_idx, s_idx)]
    s_cross = sigma_full[np.ix_(np.flatnonzero(~mask), s_idx)]

    lo, hi = sym_eig_extremes(s_on)
    inv = spd_inverse(s_on)
    k_const = float(np.max(np.sum(np.abs(inv), axis=1)))
    inv_row_sums = inv @ np.ones(s)
    one_inf = float(np.max(np.abs(inv_row_sums)))
    iota = float(np.max(s_cross @ inv_row_sums))

    if margin_sq is None:
        margin_sq = support_margin(xm, s_idx, cross_check=False).value
    tau0_sq = self_reg_margin(xm).value if full_margin else float("nan")
    lam_noise = noise_level(sigma, n, p, slack)

    if margin_sq > 0:
        b_off = 2.0 * lam_noise / margin_sq
    else:
        b_off = float("inf")
    size_ok = size_condition(margin_sq, n, p, s, sigma, slack,
                             noise_second_moment)
    b_sup = b_off * k_const + lam_noise / sqrt(lo) if lo > 0 else float("inf")
    floor = 2.0 * lam_noise / (1.0 - iota) if iota < 1.0 else float("inf")

    beta_min = None
    slow = None
    if beta_star is not None:
        bs = np.asarray(beta_star, dtype=np.float64).reshape(-1)
        beta_min = float(np.min(bs[s_idx]))
        if full_margin and tau0_sq > 0:
            slow = slow_rate_bound(float(np.sum(np.abs(bs))), tau0_sq,
                                   sigma, n, p, slack=slack)

    return DiagnosticsReport(
        support=s_idx, n=n, p=p, sigma=float(sigma), slack=float(slack),
        margin_sq_full=float(tau0_sq), margin_sq_support=float(margin_sq),
        min_eig_support=float(lo), max_eig_support=float(hi),
        inv_gram_inf_norm=k_const, inv_gram_one_inf=one_inf,
        irrepresentable=iota, noise_bound=lam_noise,
        off_support_l1_bound=float(b_off), sup_norm_bound=float(b_sup),
        size_condition_ok=size_ok, lasso_lambda_floor=float(floor),
        beta_min=beta_min, slow_rate=slow)


# ---------------------------------------------------------------------------
# restricted-eigenvalue search (upper bound by construction)


@dataclass
class RestrictedEigBound:
    """Upper estimate of the restricted eigenvalue, with its feasible witness.

    ``value`` equals witnessᵀΣwitness under the normalization
    ‖witness_J‖₂ = 1, so it is the cone-restricted Rayleigh quotient at the
    witness — an upper bound on the true restricted minimum, never a
    certificate of it.
    """

    value: float
    witness: np.ndarray
    support: np.ndarray
    alpha: float
    restarts: int


def _project_l1_ball(v, radius):
    if np.sum(np.abs(v)) <= radius:
        return v
    if radius <= 0:
        return np.zeros_like(v)
    mags = project_to_simplex(np.abs(v) / radius) * radius
    return np.sign(v) * mags


def restricted_eig_upper(gram, s, alpha=1.0, restarts=64, iters=400, seed=0,
                         enumerate_limit=2000, sampled_supports=40):
    """Search for small values of δᵀΣδ over the compressibility cone.

    The cone for a support J is {‖δ_{J^c}‖₁ ≤ alpha·‖δ_J‖₁}; iterates are
    normalized to ‖δ_J‖₂ = 1, so the objective value is the restricted
    Rayleigh quotient directly. Projected gradient descent (sphere
    renormalization for the J block, ℓ₁-ball projection at the current cone
    radius for the rest) runs from multiple seeded starts. Candidate
    supports of sizes 1..s are enumerated exhaustively when there are at
    most ``enumerate_limit`` of them, otherwise ``sampled_supports`` random
    size-s supports are drawn.
    """
    from itertools import combinations
    from math import comb

    q = as_matrix(gram)
    p = q.shape[0]
    if q.shape[1] != p:
        raise InvalidInputError("gram must be square")
    if not 1 <= s < p:
        raise InvalidInputError("need 1 ≤ s < p")
    if alpha < 1:
        raise InvalidInputError("alpha must be at least 1")

    total = sum(comb(p, k) for k in range(1, s + 1))
    if total <= enumerate_limit:
        candidates = [np.array(c, dtype=int)
                      for k in range(1, s + 1)
                      for c in combinations(range(p), k)]
    else:
        rng_j = substream(seed, 1)
        candidates = [np.sort(rng_j.choice(p, size=s, replace=False))
                      for _ in range(sampled_supports)]

    starts_per = max(2, -(-restarts // len(candidates)))
    _, top = sym_eig_extremes(q)
    step = 1.0 / (2.2 * max(top, 1e-12))
    rng = substream(seed, 0)

    best = None
    for j_set in candidates:
        mask = np.zeros(p, dtype=bool)
        mask[j_set] = True
        for start in range(starts_per):
            delta = rng.standard_normal(p)
            if start == 0:
                delta = np.zeros(p)
                delta[j_set] = 1.0
            nj = np.linalg.norm(delta[mask])
            delta[mask] = delta[mask] / nj if nj > 0 else 1.0 / sqrt(j_set.size)
            delta[~mask] = _project_l1_ball(
                delta[~mask], alpha * float(np.sum(np.abs(delta[mask]))))
            for _ in range(iters):
                g = 2.0 * (q @ delta)
                delta = delta - step * g
                nj = np.linalg.norm(delta[mask])
                if nj <= 1e-12:
                    delta[mask] = 1.0 / sqrt(j_set.size)
                else:
                    delta[mask] /= nj
                delta[~mask] = _project_l1_ball(
                    delta[~mask], alpha * float(np.sum(np.abs(delta[mask]))))
            val = float(delta @ q @ delta)
            if best is None or val < best.value:
                best = RestrictedEigBound(val, delta.copy(), j_set.copy(),
                                          float(alpha), restarts)
    return best
