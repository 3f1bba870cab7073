"""Quadratic minimization over the probability simplex and design margins.

The central quantity everywhere in this package is

    margin² = min { λᵀ (XᵀX/n) λ : λ ⪰ 0, 1ᵀλ = 1 },

the squared distance from the origin to the convex hull of the scaled
columns. A strictly positive value certifies a hyperplane separating all
columns from the origin ("self-regularization"): the dual vector
w = Xλ/(√n·√value) has unit norm and Xᵀw/√n ⪰ √value·1.

``support_margin`` computes the same margin after the off-support columns
have been projected orthogonal to the span of the on-support ones; that
version controls how much coefficient mass the solver can place off the
true support.

Solver: accelerated projected gradient (sort-based exact simplex projection,
objective-restart) to identify the optimal face, then an active-face Newton
polish that solves the equality-constrained QP on the face and exchanges
face members until the full simplex KKT conditions hold.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, NonConvergenceError, SingularMatrixError
from .linalg import as_matrix, as_vector, orthonormal_basis_for, spd_solve

# Below this level the margin is reported as exactly zero: the origin lies in
# the convex hull (to machine scale) and the separating half-space fails.
ZERO_MARGIN = 1e-12

MAX_ITER = 50_000


def project_to_simplex(v):
    """Euclidean projection of ``v`` onto {λ ⪰ 0, 1ᵀλ = 1} (sort-based)."""
    x = np.asarray(v, dtype=np.float64).reshape(-1)
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, x.size + 1)
    cond = u - css / idx > 0
    k = idx[cond][-1]
    theta = css[k - 1] / k
    return np.maximum(x - theta, 0.0)


def _kkt_gap(q, lam, scale):
    """Worst simplex-KKT violation of ``lam`` for objective λᵀqλ."""
    g = q @ lam
    mu = float(lam @ g)  # common gradient level on the active face
    active = lam > 0
    gap = 0.0
    if np.any(active):
        gap = float(np.max(np.abs(g[active] - mu)))
    if np.any(~active):
        gap = max(gap, float(np.max(mu - g[~active])))
    return max(gap, 0.0) / scale


def _polish_on_face(q, lam, tol, scale):
    """Active-face Newton polish.

    Starting from a feasible point, repeatedly solve the equality-constrained
    QP on the current face; walk toward that solution with a ratio test,
    dropping variables that hit zero; once the face solution is feasible,
    admit the worst KKT violator from outside the face. Finite exchange
    caps guard degenerate instances.
    """
    m = q.shape[0]
    lam = lam.copy()
    face = lam > max(tol, 1e-12)
    if not np.any(face):
        face[int(np.argmax(lam))] = True
    lam[~face] = 0.0
    s = lam.sum()
    if s <= 0:
        lam[:] = 0.0
        lam[np.argmax(face)] = 1.0
    else:
        lam /= s

    for _ in range(3 * m + 50):
        idx = np.flatnonzero(face)
        k = idx.size
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = 2.0 * q[np.ix_(idx, idx)]
        kkt[:k, k] = -1.0
        kkt[k, :k] = 1.0
        rhs = np.zeros(k + 1)
        rhs[k] = 1.0
        try:
            with warnings.catch_warnings():
                # accurate-face systems can be numerically rank deficient
                # (near-duplicate columns); escalate to the lstsq fallback
                warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
                sol = scipy.linalg.solve(kkt, rhs)
            if not np.all(np.isfinite(sol)):
                raise scipy.linalg.LinAlgError("non-finite solve")
        except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning,
                ValueError):
            sol, *_ = scipy.linalg.lstsq(kkt, rhs, lapack_driver="gelsd")
        target = np.zeros(m)
        target[idx] = sol[:k]

        if np.min(target[idx]) >= -1e-12:
            lam = np.maximum(target, 0.0)
            tot = lam.sum()
            if tot > 0:
                lam /= tot
            # Face solution feasible: check the global KKT conditions.
            g = q @ lam
            mu = float(lam @ g)
            outside = np.flatnonzero(~face)
            if outside.size == 0:
                return lam
            viol = mu - g[outside]
            worst = int(np.argmax(viol))
            if viol[worst] <= tol * scale:
                return lam
            face[outside[worst]] = True
            continue

        # Ratio test toward the (infeasible) face solution.
        d = target - lam
        neg = np.flatnonzero((target < -1e-15) & (lam > 0))
        if neg.size == 0:
            neg = np.flatnonzero((d < 0) & (lam > 0))
        if neg.size == 0:
            return lam
        alphas = lam[neg] / (lam[neg] - target[neg])
        j = int(np.argmin(alphas))
        alpha = max(0.0, min(1.0, float(alphas[j])))
        lam = np.maximum(lam + alpha * d, 0.0)
        blocked = neg[j]
        lam[blocked] = 0.0
        face[blocked] = False
        if not np.any(face):
            face[blocked] = True
            lam[blocked] = 1.0
        tot = lam.sum()
        if tot > 0:
            lam /= tot
    return lam


def simplex_min_quadratic(q, tol=1e-9, max_iter=MAX_ITER):
    """Minimize λᵀqλ over the probability simplex.

    Returns ``(value, lam)`` where ``lam`` satisfies the simplex KKT
    conditions within ``tol`` (scaled by max(1, ‖q‖_max)). ``q`` must be
    symmetric PSD to ~1e-9; indefiniteness shows up as a failed KKT
    certificate and raises NonConvergenceError with the best iterate.
    """
    qm = as_matrix(q)
    m = qm.shape[0]
    if qm.shape[1] != m:
        raise InvalidInputError("q must be square")
    scale = max(1.0, float(np.max(np.abs(qm)))) if m else 1.0
    if float(np.max(np.abs(qm - qm.T))) > 1e-9 * scale:
        raise InvalidInputError("q must be symmetric")
    qm = 0.5 * (qm + qm.T)
    if m == 1:
        return float(qm[0, 0]), np.array([1.0])

    # Step size from a power-iteration estimate of the top eigenvalue.
    v = np.full(m, 1.0 / np.sqrt(m))
    lmax = 0.0
    for _ in range(50):
        w = qm @ v
        nw = np.linalg.norm(w)
        if nw <= 0:
            break
        lmax = nw
        v = w / nw
    if lmax <= 0:
        lam = np.full(m, 1.0 / m)  # q ≈ 0: every point is optimal
        return float(lam @ qm @ lam), lam

    step = 1.0 / (2.2 * lmax)
    lam = np.full(m, 1.0 / m)
    y = lam.copy()
    t = 1.0
    fbest = float(lam @ qm @ lam)
    best = lam.copy()
    it = 0
    prev_gap = np.inf
    stagnant = 0
    while it < max_iter:
        burst = min(200, max_iter - it)
        for _ in range(burst):
            grad = 2.0 * (qm @ y)
            nxt = project_to_simplex(y - step * grad)
            fn = float(nxt @ qm @ nxt)
            if fn > fbest + 1e-18:
                # objective restart
                y = best.copy()
                t = 1.0
                lam = best.copy()
            else:
                tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
                y = nxt + ((t - 1.0) / tn) * (nxt - lam)
                lam = nxt
                t = tn
                if fn < fbest:
                    fbest = fn
                    best = nxt.copy()
            it += 1
        polished = _polish_on_face(qm, best, tol, scale)
        fp = float(polished @ qm @ polished)
        if fp < fbest:
            fbest, best = fp, polished
        gap = _kkt_gap(qm, best, scale)
        if gap <= tol:
            return fbest, best
        # A degenerate near-tie can pin the gap just above tol no matter
        # how long the gradient loop runs; once the polish stops making
        # progress, accept the same 10x slack used at the iteration cap.
        if gap >= prev_gap - 1e-16:
            stagnant += 1
            if stagnant >= 3 and gap <= 10 * tol:
                return fbest, best
        else:
            stagnant = 0
        prev_gap = min(prev_gap, gap)
    gap = _kkt_gap(qm, best, scale)
    if gap <= 10 * tol:
        return fbest, best
    raise NonConvergenceError(
        f"simplex QP did not reach KKT tolerance {tol:g} (gap {gap:.3e})",
        best=(fbest, best), gap=gap)


@dataclass
class MarginCertificate:
    """Margin value plus the primal/dual pair certifying it.

    ``value`` is the squared margin; ``lam`` the simplex minimizer (over all
    columns for kind 'full', over the off-support columns for kind
    'off-support'); ``w`` the unit separating direction (zero vector when
    the margin is zero); ``forms`` holds the independently computed values
    when cross-checking was requested.
    """

    value: float
    lam: np.ndarray
    w: np.ndarray
    kind: str
    note: str = ""
    forms: dict = field(default_factory=dict)


def self_reg_margin(x, tol=1e-9):
    """Squared separation margin of the whole design (simplex minimum of XᵀX/n)."""
    xm = as_matrix(x)
    n = xm.shape[0]
    sigma = (xm.T @ xm) / n
    value, lam = simplex_min_quadratic(sigma, tol=tol)
    if value < ZERO_MARGIN:
        return MarginCertificate(0.0, lam, np.zeros(n), kind="full",
                                 note="margin below 1e-12: origin inside column hull")
    w = (xm @ lam) / (np.sqrt(n) * np.sqrt(value))
    return MarginCertificate(float(value), lam, w, kind="full")


def _joint_margin_value(x_on, x_off, tol):
    """Margin via joint elimination: each off-support column is replaced by
    its residual from a per-column least-squares fit against the on-support
    block (no shared orthonormal basis, no Gram Schur complement)."""
    n = x_on.shape[0]
    cols = []
    for j in range(x_off.shape[1]):
        theta, *_ = scipy.linalg.lstsq(x_on, x_off[:, j], lapack_driver="gelsd")
        cols.append(x_off[:, j] - x_on @ theta)
    z = np.column_stack(cols)
    value, _ = simplex_min_quadratic((z.T @ z) / n, tol=tol)
    return float(value)


def support_margin(x, support, tol=1e-9, cross_check=True):
    """Squared margin of the off-support columns after projecting out the support.

    With Q an orthonormal basis of the on-support columns and
    Z = X_off − Q(QᵀX_off), the value is the simplex minimum of ZᵀZ/n.
    When ``cross_check`` is true the same number is recomputed two more
    ways — from the Gram Schur complement and by per-column least-squares
    elimination — and all three are stored in ``forms`` (they must agree
    to ~1e-7; disagreement raises).
    """
    xm = as_matrix(x)
    n, p = xm.shape
    s_idx = np.asarray(sorted(support), dtype=int)
    s = s_idx.size
    if s >= p:
        raise InvalidInputError("support must leave at least one off-support column")
    mask = np.zeros(p, dtype=bool)
    mask[s_idx] = True
    x_off = xm[:, ~mask]

    if s == 0:
        cert = self_reg_margin(xm, tol=tol)
        return MarginCertificate(cert.value, cert.lam, cert.w, kind="off-support",
                                 note="empty support: equals the full-design margin",
                                 forms={"projected": cert.value})

    x_on = xm[:, mask]
    basis = orthonormal_basis_for(x_on)
    if basis.dim < s:
        raise SingularMatrixError("on-support columns are rank deficient")
    z = x_off - basis.q @ (basis.q.T @ x_off)
    value, lam = simplex_min_quadratic((z.T @ z) / n, tol=tol)

    forms = {"projected": float(value)}
    note = ""
    if cross_check:
        sigma = (xm.T @ xm) / n
        s_on = sigma[np.ix_(s_idx, s_idx)]
        s_cross = sigma[np.ix_(s_idx, np.flatnonzero(~mask))]
        schur = sigma[np.ix_(np.flatnonzero(~mask), np.flatnonzero(~mask))] \
            - s_cross.T @ spd_solve(s_on, s_cross)
        v_schur, _ = simplex_min_quadratic(schur, tol=tol)
        v_joint = _joint_margin_value(x_on, x_off, tol)
        forms["schur"] = float(v_schur)
        forms["joint"] = float(v_joint)
        spread = max(forms.values()) - min(forms.values())
        if spread > 1e-7:
            raise NonConvergenceError(
                f"margin forms disagree beyond 1e-7 (spread {spread:.3e})",
                best=forms, gap=spread)
        note = f"forms agree to {spread:.2e}"

    if value < ZERO_MARGIN:
        return MarginCertificate(0.0, lam, np.zeros(n), kind="off-support",
                                 note="margin below 1e-12", forms=forms)
    w = (z @ lam) / (np.sqrt(n) * np.sqrt(value))
    return MarginCertificate(float(value), lam, w, kind="off-support",
                             note=note, forms=forms)
