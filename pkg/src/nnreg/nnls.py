"""Non-negative least squares: active-set solver, KKT audit, decoupling.

``solve_nnls`` minimizes (1/n)‖y − Xβ‖₂² over β ⪰ 0 with the classic
active-set exchange (Lawson–Hanson), maintaining a thin QR factorization of
the working columns incrementally — one append or one Givens-based delete
per active-set change, with a full refactorization every
``QR_REFRESH_CHANGES`` changes to keep rounding drift bounded.

The other entry points audit and dissect a fit:

* ``kkt_check`` — stationarity certificate for a candidate solution;
* ``uniqueness_report`` — column-position and residual tests that certify
  the minimizer is unique;
* ``decouple`` — splits the problem into an off-support fit on projected
  columns and an on-support fit, and verifies that the composite matches
  the one-shot solution whenever the on-support part is strictly positive;
* ``self_reg_decompose`` — the margin-based change of variables that makes
  the non-negativity constraint act like an ℓ₁ penalty.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, NonConvergenceError, SingularMatrixError
from .linalg import as_matrix, as_vector, orthonormal_basis_for

# Full QR rebuild cadence, counted in active-set changes (adds + removes).
QR_REFRESH_CHANGES = 50

# A coefficient above this threshold counts as strictly positive when we ask
# whether the on-support half of a decoupled fit is interior.
STRICT_POSITIVE = 1e-12


@dataclass
class GroundTruth:
    """Signal that generated a synthetic response.

    Attributes
    ----------
    beta : (p,) true coefficient vector (non-negative in all our designs).
    support : sorted int indices where beta is nonzero.
    sigma : noise standard deviation.
    noise : the realized noise vector, when the generator kept it.
    """

    beta: np.ndarray
    support: np.ndarray
    sigma: float
    noise: np.ndarray | None = None


@dataclass
class RegressionInstance:
    """A design/response pair, optionally with the generating truth attached."""

    x: np.ndarray
    y: np.ndarray
    truth: GroundTruth | None = None


@dataclass
class NnlsSolution:
    beta: np.ndarray
    active: np.ndarray
    residual: np.ndarray
    objective: float
    iterations: int
    max_kkt_violation: float


@dataclass
class KktReport:
    ok: bool
    max_violation: float
    active_violation: float
    inactive_violation: float
    grad: np.ndarray


class _WorkingQr:
    """Thin QR of the active columns with append / delete / refresh."""

    def __init__(self, n):
        self.n = n
        self.q = np.zeros((n, 0))
        self.r = np.zeros((0, 0))

    @property
    def k(self):
        return self.r.shape[0]

    def append(self, col):
        """Add a column; returns False (and leaves the factor alone) if the
        column is numerically dependent on the current ones."""
        c = col.astype(np.float64, copy=True)
        coeffs = self.q.T @ c
        v = c - self.q @ coeffs
        # one reorthogonalization pass
        corr = self.q.T @ v
        coeffs += corr
        v -= self.q @ corr
        rho = np.linalg.norm(v)
        if rho <= 1e-10 * max(np.linalg.norm(col), 1.0):
            return False
        k = self.k
        self.q = np.column_stack([self.q, v / rho])
        newr = np.zeros((k + 1, k + 1))
        newr[:k, :k] = self.r
        newr[:k, k] = coeffs
        newr[k, k] = rho
        self.r = newr
        return True

    def delete(self, pos):
        """Remove column ``pos``; re-triangularize with Givens rotations."""
        r = np.delete(self.r, pos, axis=1)
        q = self.q
        k = r.shape[1]
        for i in range(pos, k):
            a, b = r[i, i], r[i + 1, i]
            rad = np.hypot(a, b)
            if rad == 0.0:
                c, s = 1.0, 0.0
            else:
                c, s = a / rad, b / rad
            gi = np.array([[c, s], [-s, c]])
            r[i:i + 2, i:] = gi @ r[i:i + 2, i:]
            q[:, i:i + 2] = q[:, i:i + 2] @ gi.T
        self.r = r[:k, :]
        self.q = q[:, :k]

    def refresh(self, cols):
        self.q, self.r = np.linalg.qr(cols, mode="reduced")

    def solve_ls(self, y):
        if self.k == 0:
            return np.zeros(0)
        return scipy.linalg.solve_triangular(self.r, self.q.T @ y)


def solve_nnls(x, y, max_iter=None, tol=None):
    """Minimize (1/n)‖y − Xβ‖₂² subject to β ⪰ 0.

    Active-set exchange: grow the working set by the inactive coordinate
    with the largest residual correlation (lowest index on ties), solve the
    unconstrained least-squares problem on the working set, and step back
    along the segment to the previous iterate when coordinates go negative,
    dropping everything that hits zero.

    Parameters
    ----------
    x : (n, p) design.
    y : (n,) response.
    max_iter : combined cap on working-set solves; default 10·(n+p).
    tol : entry threshold on the gradient (1/n)Xᵀr; default
        1e-10 · max(1, ‖Xᵀy‖_∞/n).

    Returns
    -------
    NnlsSolution. Raises NonConvergenceError (carrying the best iterate and
    its KKT gap) if the cap is hit first.
    """
    xm = as_matrix(x)
    n, p = xm.shape
    yv = as_vector(y, length=n)
    if max_iter is None:
        max_iter = 10 * (n + p)
    if tol is None:
        tol = 1e-10 * max(1.0, float(np.max(np.abs(xm.T @ yv))) / n)

    beta = np.zeros(p)
    passive = []            # working set, insertion order
    in_passive = np.zeros(p, dtype=bool)
    barred = np.zeros(p, dtype=bool)   # dependent candidates, cleared on removal
    qr = _WorkingQr(n)
    changes_since_refresh = 0
    resid = yv.copy()
    iterations = 0

    def grad():
        return (xm.T @ resid) / n

    while iterations < max_iter:
        w = grad()
        w_sel = np.where(in_passive | barred, -np.inf, w)
        if len(passive) == p or np.max(w_sel) <= tol:
            break
        j = int(np.argmax(w_sel))   # lowest index among ties
        if not qr.append(xm[:, j]):
            barred[j] = True
            continue
        passive.append(j)
        in_passive[j] = True
        changes_since_refresh += 1
        if changes_since_refresh >= QR_REFRESH_CHANGES:
            qr.refresh(xm[:, passive])
            changes_since_refresh = 0

        while iterations < max_iter:
            iterations += 1
            z = qr.solve_ls(yv)
            if np.min(z) > 0:
                beta[:] = 0.0
                beta[passive] = z
                break
            bp = beta[np.array(passive)]
            nonpos = z <= 0
            denom = bp[nonpos] - z[nonpos]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(denom > 0, bp[nonpos] / denom, 0.0)
            alpha = float(np.min(ratios))
            stepped = bp + alpha * (z - bp)
            stepped[nonpos] = np.maximum(stepped[nonpos], 0.0)
            beta[:] = 0.0
            beta[np.array(passive)] = stepped
            # drop every working coordinate that landed on zero
            drop = [pos for pos, val in enumerate(stepped) if val <= 0.0]
            for pos in reversed(drop):
                jout = passive.pop(pos)
                in_passive[jout] = False
                beta[jout] = 0.0
                qr.delete(pos)
                changes_since_refresh += 1
            barred[:] = False
            if changes_since_refresh >= QR_REFRESH_CHANGES and passive:
                qr.refresh(xm[:, passive])
                changes_since_refresh = 0
            if not passive:
                break
        resid = yv - xm[:, passive] @ beta[passive] if passive else yv.copy()

    w = grad()
    report = kkt_check(xm, yv, beta, tol=max(tol, 1e-8))
    if iterations >= max_iter:
        sel = np.where(in_passive | barred, -np.inf, w)
        gap = max(float(np.max(sel)) if np.any(np.isfinite(sel)) else 0.0, 0.0)
        sol = NnlsSolution(beta, np.array(sorted(passive)), resid,
                           float(resid @ resid) / n, iterations,
                           report.max_violation)
        raise NonConvergenceError(
            f"active-set cap {max_iter} reached (entry gap {gap:.3e})",
            best=sol, gap=gap)
    return NnlsSolution(beta, np.array(sorted(passive), dtype=int), resid,
                        float(resid @ resid) / n, iterations,
                        report.max_violation)


def kkt_check(x, y, beta, tol=1e-8):
    """Stationarity audit of a candidate β ⪰ 0.

    With g = (1/n)Xᵀ(y − Xβ): coordinates with β_j > 0 need g_j = 0,
    the rest need g_j ≤ 0. Violations are reported separately and combined.
    """
    xm = as_matrix(x)
    n = xm.shape[0]
    yv = as_vector(y, length=n)
    bv = as_vector(beta, length=xm.shape[1])
    if np.min(bv) < 0:
        raise InvalidInputError("beta must be non-negative")
    g = (xm.T @ (yv - xm @ bv)) / n
    active = bv > 0
    act = float(np.max(np.abs(g[active]))) if np.any(active) else 0.0
    inact = float(np.max(g[~active])) if np.any(~active) else 0.0
    inact = max(inact, 0.0)
    worst = max(act, inact)
    return KktReport(worst <= tol, worst, act, inact, g)


# ---------------------------------------------------------------------------
# uniqueness diagnostics


@dataclass
class UniquenessReport:
    glp_ok: bool
    glp_exact: bool
    subsets_checked: int
    residual_positive: bool
    active_card_ok: bool
    unique_certified: bool


def _subset_full_rank(xm, cols):
    sub = xm[:, cols]
    return np.linalg.matrix_rank(sub) == len(cols)


def uniqueness_report(x, solution, seed=0, n_subsets=200, enumerate_limit=5000):
    """Certify uniqueness of an NNLS minimizer.

    The column-position test asks whether every size-min(n,p) subset of
    columns is linearly independent; all C(p, min(n,p)) subsets are
    enumerated when there are at most ``enumerate_limit`` of them, otherwise
    ``n_subsets`` seeded random subsets are sampled. Combined with a
    strictly positive residual (only needed when p > n) and the active-set
    cardinality bound |F| ≤ min(n−1, p), this certifies uniqueness.
    """
    from itertools import combinations
    from math import comb

    from .rng import substream

    xm = as_matrix(x)
    n, p = xm.shape
    m = min(n, p)
    total = comb(p, m)
    glp_ok = True
    if total <= enumerate_limit:
        glp_exact = True
        checked = 0
        for cols in combinations(range(p), m):
            checked += 1
            if not _subset_full_rank(xm, list(cols)):
                glp_ok = False
                break
    else:
        glp_exact = False
        rng = substream(seed, 0)
        checked = n_subsets
        for _ in range(n_subsets):
            cols = rng.choice(p, size=m, replace=False)
            if not _subset_full_rank(xm, list(cols)):
                glp_ok = False
                break

    residual_positive = solution.objective > 1e-12
    active_card_ok = solution.active.size <= min(n - 1, p)
    unique = glp_ok and (p <= n or residual_positive)
    return UniquenessReport(glp_ok, glp_exact, checked,
                            residual_positive, active_card_ok, unique)


# ---------------------------------------------------------------------------
# decoupling


@dataclass
class DecoupledFit:
    """Two-stage fit around a candidate support.

    ``beta_off`` solves the projected off-support problem, ``beta_on`` the
    on-support cleanup; ``composite`` interleaves them into a full-length
    vector. When every on-support coefficient is strictly positive the
    composite is itself a global NNLS minimizer, and ``max_gap`` records
    its ℓ∞ distance from the one-shot solution.
    """

    support: np.ndarray
    beta_off: np.ndarray
    beta_on: np.ndarray
    composite: np.ndarray
    on_all_positive: bool
    full: NnlsSolution
    max_gap: float | None


def decouple(x, y, support):
    """Split an NNLS fit into off-support and on-support stages.

    Stage one regresses the response component orthogonal to the support
    columns on the projected off-support columns (non-negatively). Stage
    two fits the support columns to what remains inside their span after
    the stage-one prediction is subtracted.
    """
    xm = as_matrix(x)
    n, p = xm.shape
    yv = as_vector(y, length=n)
    s_idx = np.asarray(sorted(support), dtype=int)
    if s_idx.size == 0 or s_idx.size >= p:
        raise InvalidInputError("support must be a nonempty strict subset of columns")
    mask = np.zeros(p, dtype=bool)
    mask[s_idx] = True
    x_on = xm[:, mask]
    x_off = xm[:, ~mask]

    basis = orthonormal_basis_for(x_on)
    if basis.dim < s_idx.size:
        raise SingularMatrixError("support columns are rank deficient")

    def proj(v):
        return basis.q @ (basis.q.T @ v)

    z = x_off - basis.q @ (basis.q.T @ x_off)
    xi = yv - proj(yv)
    off = solve_nnls(z, xi)

    target = proj(yv - x_off @ off.beta)
    on = solve_nnls(x_on, target)

    composite = np.zeros(p)
    composite[~mask] = off.beta
    composite[mask] = on.beta
    all_pos = bool(np.min(on.beta) > STRICT_POSITIVE)

    full = solve_nnls(xm, yv)
    gap = float(np.max(np.abs(composite - full.beta))) if all_pos else None
    return DecoupledFit(s_idx, off.beta, on.beta, composite, all_pos, full, gap)


# ---------------------------------------------------------------------------
# margin-based reparametrization


@dataclass
class SelfRegParts:
    """Pieces of the separating-direction decomposition of a design."""

    tau: float
    w: np.ndarray
    h: np.ndarray
    d: np.ndarray
    x_bar: np.ndarray
    x_tilde: np.ndarray


def self_reg_decompose(x, cert):
    """Decompose X along the separating direction of a margin certificate.

    With w the unit separating direction and τ = √value: h = Xᵀw/√n ⪰ τ·1,
    the rescaling D = diag(τ/h_j) has entries in [τ, 1] for unit-normalized
    columns, X̄ = (I − wwᵀ)X and X̃ = X̄D. For any β ⪰ 0 and any ε,

      (1/n)‖ε − Xβ‖² = (1/n)‖ε − X̄β‖² + (hᵀβ)² − 2(εᵀw/√n)(hᵀβ),

    which is what lets the fitted ℓ₁ mass hᵀβ be controlled like a penalty.
    """
    xm = as_matrix(x)
    n = xm.shape[0]
    if cert.value <= 0:
        raise InvalidInputError("decomposition needs a strictly positive margin")
    tau = float(np.sqrt(cert.value))
    w = as_vector(cert.w, length=n)
    h = xm.T @ w / np.sqrt(n)
    if np.min(h) < tau - 1e-6:
        raise InvalidInputError("certificate direction does not separate the columns")
    d = tau / h
    x_bar = xm - np.outer(w, w @ xm)
    x_tilde = x_bar * d[np.newaxis, :]
    return SelfRegParts(tau, w, h, d, x_bar, x_tilde)
