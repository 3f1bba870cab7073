"""Support recovery and comparator estimators.

The centerpiece is ``recover_support``: fit NNLS, rank coordinates by
magnitude, pick the model size from the sequence of orthogonalized
regression gains, threshold the ranking at that size, and refit. The
comparators — non-negative lasso (coordinate descent and a full homotopy
path as independent implementations), orthogonal matching pursuit, and
ridge with cross-validation — exist so experiments can measure NNLS
against penalized and greedy baselines under identical data.
"""

from dataclasses import dataclass, field
from math import log, sqrt

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, NonConvergenceError, PathOverrunError
from .linalg import OrthoBasis, as_matrix, as_vector
from .nnls import solve_nnls
from .rng import substream


def threshold_hard(beta, t):
    """Hard-threshold a coefficient vector at level t ≥ 0.

    Returns (kept, support): coefficients with everything at or below ``t``
    zeroed, and the surviving indices sorted ascending.
    """
    if t < 0:
        raise InvalidInputError("threshold must be non-negative")
    bv = np.asarray(beta, dtype=np.float64).reshape(-1)
    kept = np.where(bv > t, bv, 0.0)
    return kept, np.flatnonzero(kept > 0)


def rank_by_magnitude(beta):
    """1-based ranks, largest coefficient first; ties broken by lower index."""
    bv = np.asarray(beta, dtype=np.float64).reshape(-1)
    order = np.lexsort((np.arange(bv.size), -bv))
    ranks = np.empty(bv.size, dtype=int)
    ranks[order] = np.arange(1, bv.size + 1)
    return ranks


def sigma_naive(x, y, beta):
    """Residual-scale estimate √((1/n)‖y − Xβ‖²). Optimistic: no dof correction."""
    xm = as_matrix(x)
    yv = as_vector(y, length=xm.shape[0])
    r = yv - xm @ as_vector(beta, length=xm.shape[1])
    return float(np.sqrt(r @ r / xm.shape[0]))


def select_model_size(x, y, order, sigma_hat, slack=1.0, floor_rel=1e-9):
    """Choose how many of the top-ranked columns to keep.

    Columns are orthogonalized one at a time in ``order``; the gain of step
    k is |u_kᵀy| where u_k is the new unit direction (0 if the column is
    dependent on its predecessors). The size is 1 plus the last step whose
    gain clears (1+slack)·σ̂·√(2 log p) — a maximal-noise-correlation scale
    with no 1/√n, since gains live on the response scale. A relative floor
    of ``floor_rel``·‖y‖₂ keeps the rule sane when σ̂ ≈ 0 (noiseless fits):
    without it every vanishing gain would pass the threshold.

    Returns (size, gains) with gains of length p.
    """
    xm = as_matrix(x)
    n, p = xm.shape
    yv = as_vector(y, length=n)
    order = np.asarray(order, dtype=int)
    if order.size != p or set(order.tolist()) != set(range(p)):
        raise InvalidInputError("order must be a permutation of all column indices")

    basis = OrthoBasis(n)
    gains = np.zeros(p)
    for k, j in enumerate(order):
        u = basis.append(xm[:, j])
        gains[k] = abs(float(u @ yv)) if u is not None else 0.0

    thr = (1.0 + slack) * sigma_hat * sqrt(2.0 * log(p))
    thr_eff = max(thr, floor_rel * float(np.linalg.norm(yv)))
    keep = np.flatnonzero((gains >= thr_eff) & (gains > 0))
    size = int(keep[-1]) + 1 if keep.size else 0
    return size, gains


@dataclass
class RecoveryResult:
    support: np.ndarray
    size: int
    beta: np.ndarray
    beta_full: np.ndarray
    sigma_hat: float
    threshold: float
    ranks: np.ndarray
    gains: np.ndarray


def recover_support(x, y, slack=1.0, sigma_hat=None):
    """Estimate the support by NNLS ranking plus gain-based size selection.

    Pipeline: solve NNLS → rank coordinates by fitted magnitude → estimate
    the noise scale from the NNLS residual (unless given) → pick the model
    size from orthogonalized gains → keep the top-ranked columns → refit
    NNLS on the kept columns only.
    """
    xm = as_matrix(x)
    n, p = xm.shape
    yv = as_vector(y, length=n)
    full = solve_nnls(xm, yv)
    ranks = rank_by_magnitude(full.beta)
    if sigma_hat is None:
        sigma_hat = sigma_naive(xm, yv, full.beta)
    order = np.argsort(ranks, kind="stable")
    size, gains = select_model_size(xm, yv, order, sigma_hat, slack=slack)
    support = np.flatnonzero(ranks <= size)
    beta = np.zeros(p)
    if support.size:
        refit = solve_nnls(xm[:, support], yv)
        beta[support] = refit.beta
    thr = (1.0 + slack) * sigma_hat * sqrt(2.0 * log(p))
    return RecoveryResult(support, size, beta, full.beta, float(sigma_hat),
                          thr, ranks, gains)


# ---------------------------------------------------------------------------
# non-negative lasso: coordinate descent and homotopy path


def nn_lasso_lambda_max(x, y):
    """Smallest penalty at which the non-negative lasso fit is identically 0."""
    xm = as_matrix(x)
    yv = as_vector(y, length=xm.shape[0])
    return max(float(np.max(2.0 * (xm.T @ yv) / xm.shape[0])), 0.0)


def nn_lasso(x, y, lam, tol=1e-10, max_sweeps=10_000):
    """Coordinate descent for min_{β⪰0} (1/n)‖y − Xβ‖² + λ·1ᵀβ.

    Requires columns scaled to ‖X_j‖² = n, which makes each coordinate
    update the closed form β_j ← max(0, X_jᵀr_{-j}/n − λ/2). Sweeps until
    the largest coordinate move in a full pass is below tol·max(1, ‖β‖_∞).
    """
    xm = as_matrix(x)
    n, p = xm.shape
    yv = as_vector(y, length=n)
    if lam < 0:
        raise InvalidInputError("penalty must be non-negative")
    norms_sq = np.sum(xm * xm, axis=0)
    if np.max(np.abs(norms_sq - n)) > 1e-6 * n:
        raise InvalidInputError("columns must be normalized to ‖X_j‖² = n")

    beta = np.zeros(p)
    r = yv.copy()
    for _ in range(max_sweeps):
        biggest = 0.0
        for j in range(p):
            old = beta[j]
            rho = float(xm[:, j] @ r) / n + old
            new = max(0.0, rho - 0.5 * lam)
            if new != old:
                r -= (new - old) * xm[:, j]
                beta[j] = new
                biggest = max(biggest, abs(new - old))
        if biggest <= tol * max(1.0, float(np.max(beta))):
            return beta
    raise NonConvergenceError(
        f"coordinate descent not converged in {max_sweeps} sweeps",
        best=beta, gap=biggest)


@dataclass
class LassoPath:
    """Piecewise-linear non-negative lasso path, from λ_max downward.

    ``breakpoints`` is a descending array of event penalties (first entry
    λ_max); ``betas`` stacks the solution at each breakpoint; ``actives``
    the corresponding active sets. Between consecutive breakpoints the
    solution is linear in λ, which is what ``beta_at`` evaluates. ``ended``
    records why the walk stopped ('floor', 'stationary', 'singular').
    """

    breakpoints: np.ndarray
    betas: np.ndarray
    actives: list
    ended: str
    lambda0: float | None = None
    lambda_hat_emp: float | None = None

    def beta_at(self, lam):
        bp = self.breakpoints
        if lam >= bp[0]:
            return np.zeros(self.betas.shape[1])
        if lam < bp[-1] - 1e-12:
            raise InvalidInputError(
                f"path ends at {bp[-1]:g}; {lam:g} is below it")
        k = int(np.searchsorted(-bp, -lam, side="right")) - 1
        k = min(k, bp.size - 2) if bp.size > 1 else 0
        if bp.size == 1:
            return self.betas[0].copy()
        lo, hi = bp[k + 1], bp[k]
        if hi - lo <= 0:
            return self.betas[k + 1].copy()
        t = (hi - lam) / (hi - lo)
        return (1 - t) * self.betas[k] + t * self.betas[k + 1]

    def support_patterns(self, lam_floor=None):
        """Distinct active sets along the path (ordered, deduplicated),
        restricted to breakpoints at or above ``lam_floor`` when given."""
        seen, out = set(), []
        for bp, act in zip(self.breakpoints, self.actives):
            if lam_floor is not None and bp < lam_floor - 1e-12:
                break
            key = tuple(act)
            if key not in seen:
                seen.add(key)
                out.append(np.array(act, dtype=int))
        return out


def nn_lasso_path(x, y, lam_floor, max_breakpoints=None,
                  lambda0=None, lambda_hat_emp=None):
    """Exact homotopy path of the non-negative lasso, down to ``lam_floor`` > 0.

    On an active set A the solution is β_A(λ) = u_A − λ·v_A with
    u_A = (X_AᵀX_A)⁻¹X_Aᵀy and v_A = (n/2)·(X_AᵀX_A)⁻¹1; inactive
    correlations are affine in λ, so the next event (an inactive
    coordinate's KKT boundary, or an active coordinate hitting zero) is the
    largest candidate penalty strictly below the current one. The walk
    stops at ``lam_floor``, when no event remains, or when the active Gram
    turns numerically singular (p > n deep paths). Caps at
    ``max_breakpoints`` (default 20·(n+p)) with PathOverrunError.
    ``lambda0``/``lambda_hat_emp`` are carried on the result for protocol
    bookkeeping (theoretical and empirical penalty levels).
    """
    xm = as_matrix(x)
    n, p = xm.shape
    yv = as_vector(y, length=n)
    if lam_floor <= 0:
        raise InvalidInputError("lam_floor must be positive")
    if max_breakpoints is None:
        max_breakpoints = 20 * (n + p)

    corr0 = 2.0 * (xm.T @ yv) / n
    lam_max = float(np.max(corr0))
    if lam_max <= 0:
        return LassoPath(np.array([0.0]), np.zeros((1, p)), [()], "stationary",
                         lambda0, lambda_hat_emp)

    bps = [lam_max]
    betas = [np.zeros(p)]
    actives = [()]
    active = [int(np.argmax(corr0))]
    lam_cur = lam_max
    ended = "floor"

    while len(bps) < max_breakpoints:
        a_idx = np.array(active, dtype=int)
        xa = xm[:, a_idx]
        gram = xa.T @ xa
        try:
            cho = scipy.linalg.cho_factor(gram, lower=True)
            if np.min(np.abs(np.diag(cho[0]))) <= 1e-7 * sqrt(n):
                ended = "singular"
                break
            u = scipy.linalg.cho_solve(cho, xa.T @ yv)
            v = scipy.linalg.cho_solve(cho, np.full(a_idx.size, n / 2.0))
        except scipy.linalg.LinAlgError:
            ended = "singular"
            break

        # inactive correlation lines c_j(λ) = a_j + b_j λ
        mask = np.zeros(p, dtype=bool)
        mask[a_idx] = True
        inact = np.flatnonzero(~mask)
        events = []         # (λ, kind, index)
        if inact.size:
            xi = xm[:, inact]
            aj = 2.0 * (xi.T @ (yv - xa @ u)) / n
            bj = 2.0 * (xi.T @ (xa @ v)) / n
            denom = 1.0 - bj
            # only lines with slope b_j < 1 turn into violations below the
            # crossing; the rest stay on the feasible side
            with np.errstate(divide="ignore", invalid="ignore"):
                lam_in = np.where(denom > 1e-14, aj / denom, -np.inf)
            for idx, le in zip(inact, lam_in):
                if 1e-14 < le < lam_cur * (1 - 1e-12):
                    events.append((float(le), "in", int(idx)))
        # a coefficient u_j − λ·v_j shrinks as λ decreases only when v_j < 0,
        # so exits need v_j < 0 (and then u_j < 0 for a positive crossing)
        with np.errstate(divide="ignore", invalid="ignore"):
            lam_out = np.where(v < -1e-14, u / v, -np.inf)
        for pos, le in enumerate(lam_out):
            if 1e-14 < le < lam_cur * (1 - 1e-12):
                events.append((float(le), "out", int(a_idx[pos])))

        lam_next = max((e[0] for e in events), default=0.0)
        if lam_next <= lam_floor:
            lam_stop = max(lam_floor, 0.0)
            beta = np.zeros(p)
            beta[a_idx] = np.maximum(u - lam_stop * v, 0.0)
            bps.append(lam_stop)
            betas.append(beta)
            actives.append(tuple(sorted(active)))
            ended = "floor" if events else "stationary"
            return LassoPath(np.array(bps), np.vstack(betas), actives, ended,
                             lambda0, lambda_hat_emp)

        # record the state just at the event, then apply it
        beta = np.zeros(p)
        beta[a_idx] = np.maximum(u - lam_next * v, 0.0)
        hit = [e for e in events if abs(e[0] - lam_next) <= 1e-14 * max(1.0, lam_next)]
        hit.sort(key=lambda e: (e[1] != "out", e[2]))
        kind, idx = hit[0][1], hit[0][2]
        if kind == "in":
            active.append(idx)
        else:
            active.remove(idx)
            beta[idx] = 0.0
        bps.append(lam_next)
        betas.append(beta)
        actives.append(tuple(sorted(active)))
        lam_cur = lam_next
        if not active:
            ended = "stationary"
            break

    else:
        raise PathOverrunError(
            f"homotopy exceeded {max_breakpoints} breakpoints")
    return LassoPath(np.array(bps), np.vstack(betas), actives, ended,
                     lambda0, lambda_hat_emp)


# ---------------------------------------------------------------------------
# greedy and ridge comparators


@dataclass
class OmpResult:
    support: np.ndarray
    order: list
    beta: np.ndarray
    residual_norms: list
    rank_collapsed: bool = False


def omp(x, y, steps):
    """Orthogonal matching pursuit: greedy |X_jᵀr| selection (lowest index on
    ties), unconstrained LS refit after every step. Stops early with
    ``rank_collapsed`` set if the chosen columns lose full rank."""
    xm = as_matrix(x)
    n, p = xm.shape
    yv = as_vector(y, length=n)
    if not 1 <= steps <= min(n, p):
        raise InvalidInputError("steps must be in [1, min(n, p)]")
    chosen = []
    beta = np.zeros(p)
    r = yv.copy()
    rnorms = []
    collapsed = False
    coef = np.zeros(0)
    for _ in range(steps):
        c = np.abs(xm.T @ r)
        c[chosen] = -np.inf
        j = int(np.argmax(c))
        sub = xm[:, chosen + [j]]
        coef_try, _, rank, _ = scipy.linalg.lstsq(sub, yv, lapack_driver="gelsd")
        if rank < len(chosen) + 1:
            collapsed = True
            break
        chosen.append(j)
        coef = coef_try
        r = yv - sub @ coef
        rnorms.append(float(np.linalg.norm(r)))
    beta[:] = 0.0
    if chosen:
        beta[chosen] = coef
    return OmpResult(np.array(sorted(chosen)), chosen, beta, rnorms, collapsed)


def ridge(x, y, gamma):
    """Ridge estimate (XᵀX/n + γI)⁻¹ Xᵀy/n."""
    xm = as_matrix(x)
    n, p = xm.shape
    yv = as_vector(y, length=n)
    if gamma <= 0:
        raise InvalidInputError("gamma must be positive")
    a = (xm.T @ xm) / n + gamma * np.eye(p)
    return scipy.linalg.solve(a, xm.T @ yv / n, assume_a="pos")


def ridge_cv(x, y, grid=None, folds=10, seed=0):
    """Ridge with K-fold cross-validated penalty.

    Default grid: 10 logarithmic points in [1e-4, 1e2]. Fold assignment is
    a seeded permutation dealt round-robin, so results are reproducible.
    Returns (beta, gamma, cv_mse) with cv_mse aligned to the grid.
    """
    xm = as_matrix(x)
    n = xm.shape[0]
    yv = as_vector(y, length=n)
    if grid is None:
        grid = np.logspace(-4, 2, 10)
    grid = np.asarray(grid, dtype=np.float64)
    folds = min(folds, n)
    perm = substream(seed, 0).permutation(n)
    assign = np.empty(n, dtype=int)
    assign[perm] = np.arange(n) % folds

    cv = np.zeros(grid.size)
    for f in range(folds):
        tr, te = assign != f, assign == f
        for gi, g in enumerate(grid):
            b = ridge(xm[tr], yv[tr], g)
            pred = xm[te] @ b
            cv[gi] += float(np.sum((yv[te] - pred) ** 2))
    cv /= n
    best = int(np.argmin(cv))
    return ridge(xm, yv, float(grid[best])), float(grid[best]), cv
