"""Design generators: deterministic Grams, non-negative ensembles, kernels.

Families (``DesignSpec.kind``):

* ``orthonormal`` — √n·[I; 0], deterministic, needs n ≥ p.
* ``gaussian-iid`` — standard normal entries.
* ``equicorr-gram`` — exact equi-correlated Gram (1−ρ)I + ρ11ᵀ via Cholesky.
* ``power-decay`` — exact Gram Σ_ij = ρ^|i−j| via Cholesky.
* ``negcorr-block`` — explicit block Gram whose leading s×s block has one
  column negatively correlated with the rest (the design that defeats
  greedy/ℓ₁ methods while keeping all margin constants benign).
* ``nonneg-iid`` — i.i.d. entries from a non-negative family
  {uniform, bernoulli, halfnormal, poisson} with an atom at zero of mass
  1−a; after rescaling by 1/√μ₂ the population Gram is equi-correlated
  with ρ = μ²/μ₂.
* ``kernel-gauss`` / ``kernel-laplace`` — localized bump columns
  φ_j(u_i) on the grid u_i = i/n.
* ``group-testing`` — Bernoulli(π) 0/1 membership matrix.
* ``explicit-gram`` — any caller-supplied SPD Gram, realized exactly.

Exact-Gram kinds build X = √n·Lᵀ from the lower Cholesky factor Σ = LLᵀ,
so XᵀX = n·Σ to rounding; they require n ≥ p and embed extra zero rows.
With ``normalize`` (default) every generated column is scaled to
‖X_j‖₂² = n exactly.
"""

import os
from dataclasses import dataclass, field, asdict
from hashlib import sha256
from math import log, sqrt

import numpy as np
import scipy.special

from .errors import InvalidInputError, NonConvergenceError
from .linalg import as_matrix
from .nnls import GroundTruth, RegressionInstance
from .rng import substream
from . import reports

KINDS = ("orthonormal", "gaussian-iid", "equicorr-gram", "power-decay",
         "negcorr-block", "nonneg-iid", "kernel-gauss", "kernel-laplace",
         "group-testing", "explicit-gram")

ENSEMBLES = ("uniform", "bernoulli", "halfnormal", "poisson")


@dataclass
class DesignSpec:
    kind: str
    n: int
    p: int
    params: dict = field(default_factory=dict)
    normalize: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown design kind {self.kind!r}")
        if self.n < 1 or self.p < 1:
            raise InvalidInputError("n and p must be positive")


@dataclass
class EnsembleMoments:
    """Population entry moments of a non-negative i.i.d. family."""

    mu: float
    mu2: float
    rho: float          # μ²/μ₂: equi-correlation of the rescaled population Gram


def ensemble_moments(family, a):
    """Mean, second moment, and population correlation for weight ``a``.

    Each family places mass 1−a at zero and draws the rest from a fixed
    non-negative component; ρ = μ²/μ₂ is computed from the moments, which
    is the only correct general rule (printed per-family shortcuts in
    common references are unreliable).
    """
    if not 0 < a <= 1:
        raise InvalidInputError("weight a must be in (0, 1]")
    if family == "uniform":
        # component U([0, √(3/a)]): E V = √(3/a)/2, E V² = 1/a
        mu = a * sqrt(3.0 / a) / 2.0
        mu2 = 1.0
    elif family == "bernoulli":
        mu = a
        mu2 = a
    elif family == "halfnormal":
        mu = a * sqrt(2.0 / np.pi)
        mu2 = a
    elif family == "poisson":
        # component Poisson(3): E V = 3, E V² = 12
        mu = 3.0 * a
        mu2 = 12.0 * a
    else:
        raise InvalidInputError(f"unknown ensemble family {family!r}")
    return EnsembleMoments(mu, mu2, mu * mu / mu2)


def equicorr_gram(p, rho):
    if not 0 <= rho < 1:
        raise InvalidInputError("rho must be in [0, 1)")
    g = np.full((p, p), float(rho))
    np.fill_diagonal(g, 1.0)
    return g


def power_decay_gram(p, rho):
    if not 0 <= rho < 1:
        raise InvalidInputError("rho must be in [0, 1)")
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def negcorr_gram(p, s):
    """Block Gram: leading s×s block [[1, −c1ᵀ], [−c1, I]] with
    c = 1/√(2(s−1)), identity elsewhere. The first on-support column is
    negatively correlated with its s−1 partners; all off-support columns
    are exactly orthogonal to the support."""
    if s < 2 or s > p:
        raise InvalidInputError("need 2 ≤ s ≤ p")
    g = np.eye(p)
    c = 1.0 / sqrt(2.0 * (s - 1))
    g[0, 1:s] = -c
    g[1:s, 0] = -c
    return g


def exact_gram_design(gram, n):
    """Realize a unit-diagonal SPD Gram exactly: X = √n·Lᵀ (+ zero rows)."""
    g = as_matrix(gram)
    p = g.shape[0]
    if n < p:
        raise InvalidInputError("exact-Gram designs need n ≥ p")
    try:
        ell = np.linalg.cholesky(g)
    except np.linalg.LinAlgError as exc:
        raise InvalidInputError("gram matrix is not positive definite") from exc
    x = np.zeros((n, p))
    x[:p, :] = sqrt(n) * ell.T
    return x


def _rng_from(seed):
    """Accept either a seed (keying a fresh substream) or a live generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return substream(seed, 0)


def _gate_draw(rng, shape, a):
    return rng.random(shape) < a


def _ensemble_entries(rng, shape, family, a):
    gate = _gate_draw(rng, shape, a)
    if family == "uniform":
        comp = rng.random(shape) * sqrt(3.0 / a)
    elif family == "bernoulli":
        comp = np.ones(shape)
    elif family == "halfnormal":
        # inverse CDF of |N(0,1)|: Φ⁻¹((1+u)/2)
        comp = scipy.special.ndtri((1.0 + rng.random(shape)) / 2.0)
    elif family == "poisson":
        comp = rng.poisson(3.0, shape).astype(np.float64)
    else:
        raise InvalidInputError(f"unknown ensemble family {family!r}")
    return np.where(gate, comp, 0.0)


def _normalize_columns(x, n):
    norms = np.linalg.norm(x, axis=0)
    if np.min(norms) <= 0:
        raise InvalidInputError("cannot normalize a zero column")
    return x * (sqrt(n) / norms)[np.newaxis, :]


def grid_points(n):
    """Sample grid u_i = i/n, i = 1..n."""
    return np.arange(1, n + 1, dtype=np.float64) / n


def gauss_kernel_columns(n, centers, width):
    """Columns φ_j(u_i) = exp(−(u_i − m_j)²/width) on the grid u_i = i/n.

    ``width`` is the squared-deviation scale, i.e. twice the variance: the
    Gaussian standard deviation is √(width/2). With the default width 2/n
    the bumps have std 1/√n, which is what reproduces the documented full
    squared margin ≈ 0.275 at (n, p) = (100, 200).
    """
    u = grid_points(n)
    m = np.asarray(centers, dtype=np.float64).reshape(-1)
    return np.exp(-((u[:, None] - m[None, :]) ** 2) / width)


def laplace_kernel_columns(n, centers, h):
    u = grid_points(n)
    m = np.asarray(centers, dtype=np.float64).reshape(-1)
    return np.exp(-np.abs(u[:, None] - m[None, :]) / h)


def generate(spec, seed=0):
    """Draw (or construct) the design matrix for ``spec``.

    Pure in (spec, seed): the same pair always yields the same matrix.
    Random kinds consume a Philox substream keyed by the seed (or draw from
    ``seed`` directly when it is already a generator); the deterministic
    kinds ignore it.
    """
    n, p = spec.n, spec.p
    rng = _rng_from(seed)
    kind = spec.kind
    prm = spec.params

    if kind == "orthonormal":
        if n < p:
            raise InvalidInputError("orthonormal design needs n ≥ p")
        x = np.zeros((n, p))
        x[:p, :] = sqrt(n) * np.eye(p)
        return x                       # exactly normalized already
    if kind == "gaussian-iid":
        x = rng.standard_normal((n, p))
    elif kind == "equicorr-gram":
        x = exact_gram_design(equicorr_gram(p, prm["rho"]), n)
    elif kind == "power-decay":
        x = exact_gram_design(power_decay_gram(p, prm["rho"]), n)
    elif kind == "negcorr-block":
        x = exact_gram_design(negcorr_gram(p, prm["s"]), n)
    elif kind == "explicit-gram":
        x = exact_gram_design(np.asarray(prm["gram"], dtype=np.float64), n)
    elif kind == "nonneg-iid":
        family = prm["family"]
        a = float(prm.get("a", 1.0))
        mom = ensemble_moments(family, a)
        x = _ensemble_entries(rng, (n, p), family, a)
        for _ in range(100):
            dead = np.flatnonzero(np.linalg.norm(x, axis=0) == 0)
            if dead.size == 0 or not spec.normalize:
                break
            x[:, dead] = _ensemble_entries(rng, (n, dead.size), family, a)
        x /= sqrt(mom.mu2)
    elif kind == "group-testing":
        pi = float(prm["pi"])
        if not 0 < pi <= 1:
            raise InvalidInputError("pi must be in (0, 1]")
        x = _gate_draw(rng, (n, p), pi).astype(np.float64)
        for _ in range(100):
            dead = np.flatnonzero(np.linalg.norm(x, axis=0) == 0)
            if dead.size == 0 or not spec.normalize:
                break
            x[:, dead] = _gate_draw(rng, (n, dead.size), pi).astype(np.float64)
    elif kind == "kernel-gauss":
        width = float(prm.get("width", 2.0 / n))
        centers = prm.get("centers")
        if centers is None:
            centers = np.arange(1, p + 1, dtype=np.float64) / p
        x = gauss_kernel_columns(n, centers, width)
    elif kind == "kernel-laplace":
        h = float(prm.get("h", 2.0 / n))
        x = laplace_kernel_columns(n, prm["centers"], h)
    else:
        raise InvalidInputError(f"unknown design kind {kind!r}")

    if spec.normalize:
        x = _normalize_columns(x, n)
    return x


def glp_check(x, trials=200, seed=0, enumerate_limit=5000):
    """Are all size-min(n,p) column subsets linearly independent?

    Exhaustive when the number of subsets is at most ``enumerate_limit``,
    otherwise a seeded sample of ``trials`` subsets. A False is conclusive;
    a True from sampling is only probabilistic.
    """
    from itertools import combinations
    from math import comb

    xm = as_matrix(x)
    n, p = xm.shape
    m = min(n, p)
    if comb(p, m) <= enumerate_limit:
        subsets = combinations(range(p), m)
    else:
        rng = substream(seed, 0)
        subsets = (rng.choice(p, size=m, replace=False) for _ in range(trials))
    for cols in subsets:
        if np.linalg.matrix_rank(xm[:, list(cols)]) < m:
            return False
    return True


def block_lower_bound(gram, blocks):
    """Margin lower bound σ₀/K from a partition into K blocks.

    σ₀ is the smallest entry appearing in any block's principal submatrix;
    the bound is 0 whenever that minimum is ≤ 0. Valid as a lower bound on
    the squared full margin when the cross-block Gram entries are
    non-negative (all our non-negative designs).
    """
    g = as_matrix(gram)
    p = g.shape[0]
    seen = sorted(i for b in blocks for i in b)
    if seen != list(range(p)):
        raise InvalidInputError("blocks must partition the column indices")
    k = len(blocks)
    sigma0 = min(float(np.min(g[np.ix_(list(b), list(b))])) for b in blocks)
    if sigma0 <= 0:
        return 0.0
    return sigma0 / k


# ---------------------------------------------------------------------------
# experiment-oriented builders


def build_deconv_instance(seed, n=100, p=200, n_spikes=5, sigma=0.09,
                          amp_range=(0.2, 0.7), width=None):
    """Spike-train deconvolution instance on a fixed kernel dictionary.

    The design is ``p`` Gaussian bumps with squared-deviation scale 2/n
    (pinned exactly, i.e. std 1/√n) centered at j/p on the grid u_i = i/n,
    with columns normalized. Spikes sit at ``n_spikes`` distinct dictionary
    centers with amplitudes uniform in ``amp_range``, so the best
    approximation error within the dictionary is exactly zero.
    """
    if width is None:
        width = 2.0 / n
    spec = DesignSpec("kernel-gauss", n, p, {"width": width})
    x = generate(spec, seed=0)
    rng = _rng_from(seed)
    support = np.sort(rng.choice(p, size=n_spikes, replace=False))
    beta = np.zeros(p)
    beta[support] = amp_range[0] + (amp_range[1] - amp_range[0]) \
        * rng.random(n_spikes)
    noise = sigma * rng.standard_normal(n)
    y = x @ beta + noise
    truth = GroundTruth(beta, support, float(sigma), noise)
    return RegressionInstance(x, y, truth)


@dataclass
class KernelRecoveryDesign:
    x: np.ndarray
    support: np.ndarray
    centers: np.ndarray
    m_lo: float
    m_hi: float
    h: float


def build_kernel_recovery_design(n, p, s, seed, h=None, max_tries=10_000):
    """Laplace-kernel design with well-separated planted centers.

    Grid u_i = i/n, bandwidth h = 2/n, center range
    [u_1 + h·log n, u_n − h·log n] (the inset follows the published recipe
    m_min = u_1 − h·log(1/n) verbatim, which moves the endpoints inward
    since log(1/n) < 0; we implement it as printed rather than guess a
    sign). The s planted centers are drawn one per equal sub-interval with
    pairwise separation at least Δ = h (rejection sampling); the p−s decoy
    centers are uniform on the range excluding a Δ-neighborhood of every
    planted center. Planted centers occupy columns 0..s−1.
    """
    if h is None:
        h = 2.0 / n
    if s < 1 or s >= p:
        raise InvalidInputError("need 1 ≤ s < p")
    u = grid_points(n)
    m_lo = u[0] + h * log(n)
    m_hi = u[-1] - h * log(n)
    if m_hi <= m_lo:
        raise InvalidInputError("center range is empty at these (n, h)")
    rng = _rng_from(seed)

    edges = np.linspace(m_lo, m_hi, s + 1)
    planted = None
    for _ in range(max_tries):
        cand = edges[:-1] + (edges[1:] - edges[:-1]) * rng.random(s)
        if s == 1 or np.min(np.diff(cand)) >= h:
            planted = cand
            break
    if planted is None:
        raise NonConvergenceError(
            f"could not place {s} separated centers in {max_tries} tries",
            best=None, gap=float("nan"))

    decoys = np.empty(p - s)
    for i in range(p - s):
        ok = False
        for _ in range(max_tries):
            c = m_lo + (m_hi - m_lo) * rng.random()
            if np.min(np.abs(planted - c)) >= h:
                decoys[i] = c
                ok = True
                break
        if not ok:
            raise NonConvergenceError(
                f"could not place decoy center {i} in {max_tries} tries",
                best=None, gap=float("nan"))

    centers = np.concatenate([planted, decoys])
    spec = DesignSpec("kernel-laplace", n, p, {"h": h, "centers": centers})
    x = generate(spec, seed=0)
    return KernelRecoveryDesign(x, np.arange(s), centers, m_lo, m_hi, h)


_GROUP_TESTING_ROWS = [
    "1100010010",
    "0100001001",
    "1010001100",
    "0001110100",
    "0011100011",
]


def group_testing_demo(normalize=True):
    """The 5×10 pooled-measurement matrix whose noiseless observation of
    items {2, 8} pins down a unique NNLS solution.

    Returns (x, beta_star) with beta_star rescaled to match the normalized
    columns when ``normalize`` is set.
    """
    a = np.array([[float(ch) for ch in row] for row in _GROUP_TESTING_ROWS])
    n = a.shape[0]
    beta = np.zeros(a.shape[1])
    beta[2] = 1.0
    beta[8] = 1.0
    if not normalize:
        return a, beta
    norms = np.linalg.norm(a, axis=0)
    x = a * (sqrt(n) / norms)[np.newaxis, :]
    return x, beta * norms / sqrt(n)


# ---------------------------------------------------------------------------
# serialization: JSON manifest + raw column-major float64 payload


def _payload_path(manifest_path):
    root, ext = os.path.splitext(manifest_path)
    return (root if ext == ".json" else manifest_path) + ".bin"


def save_design(manifest_path, x, spec=None, seed=None, extras=None,
                also_csv=False):
    """Write a design (or instance) as JSON manifest + raw matrix file.

    The payload is little-endian float64, column-major, alongside the
    manifest; the manifest records dimensions, layout, a sha256 of the
    payload, the generating spec/seed when given, and any ``extras``
    (e.g. response vector and ground truth for full instances).
    """
    xm = as_matrix(x)
    n, p = xm.shape
    payload = np.asfortranarray(xm).astype("<f8").tobytes(order="F")
    data_path = _payload_path(manifest_path)
    with open(data_path, "wb") as fh:
        fh.write(payload)
    manifest = {
        "format": "nnreg-design",
        "version": 1,
        "n": n,
        "p": p,
        "dtype": "float64",
        "byte_order": "little",
        "layout": "column-major",
        "matrix_file": os.path.basename(data_path),
        "matrix_sha256": sha256(payload).hexdigest(),
    }
    if spec is not None:
        sd = asdict(spec)
        sd["params"] = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray)
                            else v)
                        for k, v in sd["params"].items()}
        manifest["spec"] = sd
    if seed is not None:
        manifest["seed"] = int(seed)
    if extras:
        manifest.update(extras)
    reports.write_json(manifest_path, manifest)
    if also_csv:
        rows = [{f"c{j}": xm[i, j] for j in range(p)} for i in range(n)]
        reports.write_csv(os.path.splitext(manifest_path)[0] + ".csv",
                          rows, [f"c{j}" for j in range(p)])
    return manifest


def load_design(manifest_path):
    """Read back a saved design; verifies payload hash and shape."""
    manifest = reports.read_json(manifest_path)
    if manifest.get("format") != "nnreg-design":
        raise InvalidInputError("not a design manifest")
    data_path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)),
                             manifest["matrix_file"])
    with open(data_path, "rb") as fh:
        payload = fh.read()
    if sha256(payload).hexdigest() != manifest["matrix_sha256"]:
        raise InvalidInputError("matrix payload does not match manifest hash")
    n, p = int(manifest["n"]), int(manifest["p"])
    flat = np.frombuffer(payload, dtype="<f8")
    if flat.size != n * p:
        raise InvalidInputError("matrix payload has wrong size")
    x = np.reshape(flat, (n, p), order="F").copy()
    return x, manifest


def save_instance(manifest_path, instance, spec=None, seed=None, extras=None):
    extras = dict(extras or {})
    extras["y"] = instance.y
    if instance.truth is not None:
        t = instance.truth
        extras["truth"] = {
            "beta": t.beta,
            "support": [int(j) for j in t.support],
            "sigma": t.sigma,
        }
    return save_design(manifest_path, instance.x, spec=spec, seed=seed,
                       extras=extras)


def load_instance(manifest_path):
    x, manifest = load_design(manifest_path)
    if "y" not in manifest:
        raise InvalidInputError("manifest has no response vector")
    y = np.asarray(manifest["y"], dtype=np.float64)
    truth = None
    if "truth" in manifest:
        t = manifest["truth"]
        truth = GroundTruth(np.asarray(t["beta"], dtype=np.float64),
                            np.asarray(t["support"], dtype=int),
                            float(t["sigma"]))
    return RegressionInstance(x, y, truth), manifest
