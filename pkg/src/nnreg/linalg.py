"""Dense linear-algebra kernels used by every other module.

Everything is plain float64 numpy. The only stateful object is
:class:`OrthoBasis`, an incrementally grown orthonormal basis used both by
the active-set solver and by the model-size selection rule, where the new
orthonormal direction contributed by each appended column is the quantity
of interest.
"""

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, SingularMatrixError

# A column whose residual after projection is below this (relative) level is
# treated as lying in the current span. Matches the general-position checks
# at machine scale.
DEPENDENT_COL_RTOL = 1e-10


def as_matrix(a):
    """Validate and return a float64 2-d array; rejects non-finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise InvalidInputError(f"expected a 2-d array, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("matrix contains non-finite entries")
    return m


def as_vector(v, length=None):
    """Validate and return a float64 1-d array of the given length."""
    x = np.asarray(v, dtype=np.float64).reshape(-1)
    if length is not None and x.shape[0] != length:
        raise InvalidInputError(f"expected vector of length {length}, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("vector contains non-finite entries")
    return x


class OrthoBasis:
    """Orthonormal basis grown one column at a time.

    ``append`` feeds in a raw column and returns the unit vector spanning the
    new direction (the part of the column orthogonal to the current span),
    or None when the column is linearly dependent on what was appended
    before. One reorthogonalization pass keeps ``QᵀQ ≈ I`` to ~1e-10 even
    for long append sequences.
    """

    def __init__(self, n):
        self.n = int(n)
        self.q = np.empty((self.n, 0))
        self.appended = 0

    @property
    def dim(self):
        return self.q.shape[1]

    def append(self, column):
        """Append ``column``; return the new unit direction or None."""
        c = as_vector(column, self.n)
        self.appended += 1
        norm0 = np.linalg.norm(c)
        if norm0 == 0.0:
            return None
        # Modified Gram-Schmidt with a single reorthogonalization pass.
        r = c - self.q @ (self.q.T @ c)
        r = r - self.q @ (self.q.T @ r)
        nr = np.linalg.norm(r)
        if nr <= DEPENDENT_COL_RTOL * norm0:
            return None
        u = r / nr
        self.q = np.column_stack([self.q, u])
        return u

    def project(self, v):
        """Projection of ``v`` onto the current span: Q(Qᵀv)."""
        x = as_vector(v, self.n)
        if self.dim == 0:
            return np.zeros(self.n)
        return self.q @ (self.q.T @ x)

    def project_residual(self, v):
        """Residual of ``v`` after projecting out the current span: v − Q(Qᵀv)."""
        x = as_vector(v, self.n)
        if self.dim == 0:
            return x.copy()
        return x - self.q @ (self.q.T @ x)


def project_residual(basis, v):
    """Functional form of :meth:`OrthoBasis.project_residual`."""
    return basis.project_residual(v)


def orthonormal_basis_for(columns):
    """Build an OrthoBasis spanning the given columns (n × k array)."""
    a = as_matrix(columns)
    basis = OrthoBasis(a.shape[0])
    for j in range(a.shape[1]):
        basis.append(a[:, j])
    return basis


def sym_eig_extremes(a):
    """Extreme eigenvalues (smallest, largest) of a symmetric matrix.

    The input must be symmetric to 1e-10 (absolute, relative to its largest
    entry) and of dimension at most 2000. Uses the LAPACK tridiagonal
    reduction path and asks only for the extreme ends of the spectrum.
    """
    m = as_matrix(a)
    if m.shape[0] != m.shape[1]:
        raise InvalidInputError("matrix must be square")
    if m.shape[0] > 2000:
        raise InvalidInputError("dimension above supported cap (2000)")
    scale = max(1.0, float(np.max(np.abs(m))))
    if float(np.max(np.abs(m - m.T))) > 1e-10 * scale:
        raise InvalidInputError("matrix is not symmetric to 1e-10")
    k = m.shape[0]
    if k == 1:
        return float(m[0, 0]), float(m[0, 0])
    ms = 0.5 * (m + m.T)
    lo = scipy.linalg.eigh(ms, eigvals_only=True, subset_by_index=[0, 0])[0]
    hi = scipy.linalg.eigh(ms, eigvals_only=True, subset_by_index=[k - 1, k - 1])[0]
    return float(lo), float(hi)


def spd_solve(a, b):
    """Solve ``A x = b`` for symmetric positive-definite A via Cholesky.

    Raises SingularMatrixError when the factorization fails or a pivot is
    at/below 1e-12, so callers never silently work with a semidefinite
    system.
    """
    m = as_matrix(a)
    if m.shape[0] != m.shape[1]:
        raise InvalidInputError("matrix must be square")
    rhs = np.asarray(b, dtype=np.float64)
    try:
        c, low = scipy.linalg.cho_factor(m, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"Cholesky failed: {exc}") from exc
    if np.min(np.diag(c)) <= 1e-6:  # pivot² ≤ 1e-12
        raise SingularMatrixError("matrix pivot at or below 1e-12; not safely SPD")
    return scipy.linalg.cho_solve((c, low), rhs, check_finite=False)


def spd_inverse(a):
    """Explicit inverse of a small SPD matrix (via spd_solve on I)."""
    m = as_matrix(a)
    return spd_solve(m, np.eye(m.shape[0]))
