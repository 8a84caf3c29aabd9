"""Matrix-induced norms, their brute-force oracles, and spectrum/activation metrics.

``||A||_{alpha,beta} = max_{x != 0} ||A x||_beta / ||x||_alpha``. Closed forms are
provided for the five pairs in ``SUPPORTED_PAIRS``:

* (1, beta): largest column beta-norm
* (2, 2): largest singular value
* (inf, inf): largest row absolute sum
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateInput, InvalidParameter, OracleTooLarge, UnsupportedNorm
from .linalg import as_matrix, singular_values, vector_norm

INF = float("inf")
SUPPORTED_PAIRS = ((1.0, 1.0), (1.0, 2.0), (1.0, INF), (2.0, 2.0), (INF, INF))
ORACLE_MAX_COLS = 20


@dataclass(frozen=True)
class NormPair:
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = float(getattr(self, name))
            if not v >= 1.0:
                raise InvalidParameter(f"{name} must be in [1, inf], got {v}")
            object.__setattr__(self, name, v)

    @property
    def supported(self):
        return (self.alpha, self.beta) in SUPPORTED_PAIRS

    def label(self):
        def fmt(v):
            return "inf" if np.isinf(v) else f"{v:g}"

        return f"({fmt(self.alpha)},{fmt(self.beta)})"

    def __iter__(self):
        return iter((self.alpha, self.beta))


def _pair(p):
    return p if isinstance(p, NormPair) else NormPair(*p)


def _column_norms(a, beta):
    if beta == 1.0:
        return np.abs(a).sum(axis=0)
    if beta == 2.0:
        return np.sqrt((a * a).sum(axis=0))
    if np.isinf(beta):
        return np.abs(a).max(axis=0)
    return np.array([vector_norm(a[:, j], beta) for j in range(a.shape[1])])


def induced_norm(a, p):
    a = as_matrix(a)
    p = _pair(p)
    if not p.supported:
        raise UnsupportedNorm(f"no closed form for {p.label()}")
    if p.alpha == 1.0:
        return float(_column_norms(a, p.beta).max())
    if p.alpha == 2.0:
        return float(singular_values(a)[0])
    return float(np.abs(a).sum(axis=1).max())


def induced_norm_oracle(a, p):
    """Maximize ||A x||_beta over the extreme points of the unit alpha-ball.

    alpha=1 enumerates +-e_j, alpha=inf enumerates all sign vectors (cols <= 20),
    and (2, 2) uses LAPACK's SVD, a route independent of ``induced_norm``.
    """
    a = as_matrix(a)
    p = _pair(p)
    m, n = a.shape
    if p.alpha == 1.0:
        best = 0.0
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            best = max(best, vector_norm(a @ e, p.beta), vector_norm(a @ -e, p.beta))
        return best
    if np.isinf(p.alpha):
        if n > ORACLE_MAX_COLS:
            raise OracleTooLarge(f"{n} columns exceeds the sign-vector cap {ORACLE_MAX_COLS}")
        if p.beta not in (1.0, 2.0) and not np.isinf(p.beta):
            raise UnsupportedNorm(f"sign-vector oracle supports beta in {{1, 2, inf}}, got {p.beta}")
        return float(kernels.sign_vector_max(np.ascontiguousarray(a), p.beta))
    if p.alpha == 2.0 and p.beta == 2.0:
        return float(np.linalg.svd(a, compute_uv=False)[0])
    raise UnsupportedNorm(f"no oracle for {p.label()}")


def stable_rank(a):
    s = singular_values(a)
    if s[0] == 0.0:
        raise DegenerateInput("stable rank of the zero matrix")
    return float(np.sum(s**2) / s[0] ** 2)


def singular_sparsity(a=None, spectrum=None):
    """sum(s) / sqrt(n * sum(s^2)) over the full spectrum, n = min(rows, cols)."""
    s = np.asarray(spectrum, dtype=np.float64) if spectrum is not None else singular_values(a)
    sq = float(np.sum(s**2))
    if sq == 0.0:
        raise DegenerateInput("singular sparsity of the zero matrix")
    return float(np.sum(s) / np.sqrt(s.size * sq))


def activation_sparsity(x):
    """||x||_1 / (sqrt(d) ||x||_2); lower means sparser."""
    x = np.asarray(x, dtype=np.float64).ravel()
    l2 = np.sqrt(x @ x)
    if l2 == 0.0:
        raise DegenerateInput("activation sparsity of the zero vector")
    return float(np.abs(x).sum() / (np.sqrt(x.size) * l2))


def activation_sparsity_rows(x):
    """Vectorized ``activation_sparsity`` over the rows of ``x``; zero rows are dropped."""
    x = np.asarray(x, dtype=np.float64)
    l2 = np.sqrt((x * x).sum(axis=1))
    keep = l2 > 0
    return np.abs(x[keep]).sum(axis=1) / (np.sqrt(x.shape[1]) * l2[keep])


@dataclass(frozen=True)
class SpectrumReport:
    layer_name: str
    stable_rank: float
    singular_sparsity: float


def spectrum_report(layer_name, w):
    s = singular_values(w)
    if s[0] == 0.0:
        raise DegenerateInput(f"zero weight matrix {layer_name}")
    return SpectrumReport(
        layer_name=layer_name,
        stable_rank=float(np.sum(s**2) / s[0] ** 2),
        singular_sparsity=singular_sparsity(spectrum=s),
    )


# --- norm comparison fuzzing ---------------------------------------------------

VECTOR_ORDERS = (1.0, 1.5, 2.0, 3.0, INF)


@dataclass
class InequalityReport:
    checks: int = 0
    violations: int = 0
    worst_slack: float = INF
    worst_case: str = ""
    per_pair: dict = field(default_factory=dict)

    def record(self, key, lhs, rhs, tol):
        self.checks += 1
        slack = rhs - lhs
        scale = max(1.0, abs(rhs))
        if slack < -tol * scale:
            self.violations += 1
        self.per_pair[key] = min(self.per_pair.get(key, INF), slack / scale)
        if slack / scale < self.worst_slack:
            self.worst_slack = slack / scale
            self.worst_case = key


def _exponent(lo, hi):
    return (0.0 if np.isinf(lo) else 1.0 / lo) - (0.0 if np.isinf(hi) else 1.0 / hi)


def _random_matrix(rng, shape):
    kind = rng.integers(4)
    a = rng.standard_normal(shape)
    if kind == 1:
        a *= rng.random(shape) < 0.3
    elif kind == 2:
        a = rng.standard_cauchy(shape)
    elif kind == 3:
        a = np.outer(rng.standard_normal(shape[0]), rng.standard_normal(shape[1]))
    return a


def matrix_chains():
    """Ordered pairs (lo, hi) of supported norms differing in exactly one exponent."""
    chains = []
    for beta in (1.0, 2.0, INF):
        alphas = [p[0] for p in SUPPORTED_PAIRS if p[1] == beta]
        chains += [("alpha", (a1, beta), (a2, beta)) for a1 in alphas for a2 in alphas if a1 < a2]
    for alpha in (1.0, 2.0, INF):
        betas = [p[1] for p in SUPPORTED_PAIRS if p[0] == alpha]
        chains += [("beta", (alpha, b1), (alpha, b2)) for b1 in betas for b2 in betas if b1 < b2]
    return chains


def check_norm_inequalities(seed=0, trials=1000, shape=(4, 6), dims=(1, 2, 5, 16, 64), tol=1e-9):
    """Fuzz the vector and induced-norm comparison inequalities.

    Vectors: ||z||_{a2} <= ||z||_{a1} <= d^{1/a1 - 1/a2} ||z||_{a2} for a1 <= a2.
    Matrices (m x n): for a1 <= a2, ||A||_{a1,b} <= ||A||_{a2,b} <= n^{1/a1-1/a2} ||A||_{a1,b};
    for b1 <= b2, ||A||_{a,b2} <= ||A||_{a,b1} <= m^{1/b1-1/b2} ||A||_{a,b2}.
    ``trials`` vectors per ordered vector pair and ``trials`` matrices per chain.
    """
    rng = np.random.default_rng(seed)
    report = InequalityReport()
    for i, a1 in enumerate(VECTOR_ORDERS):
        for a2 in VECTOR_ORDERS[i + 1:]:
            key = f"vec({a1:g},{a2:g})"
            for _ in range(trials):
                d = int(rng.choice(dims))
                z = _random_matrix(rng, (1, d)).ravel()
                n1, n2 = vector_norm(z, a1), vector_norm(z, a2)
                report.record(key + ":lower", n2, n1, tol)
                report.record(key + ":upper", n1, d ** _exponent(a1, a2) * n2, tol)
    m, n = shape
    for side, lo, hi in matrix_chains():
        key = f"mat[{side}]{NormPair(*lo).label()}<={NormPair(*hi).label()}"
        for _ in range(trials):
            a = _random_matrix(rng, shape)
            v_lo, v_hi = induced_norm(a, lo), induced_norm(a, hi)
            if side == "alpha":
                report.record(key + ":lower", v_lo, v_hi, tol)
                report.record(key + ":upper", v_hi, n ** _exponent(lo[0], hi[0]) * v_lo, tol)
            else:
                report.record(key + ":lower", v_hi, v_lo, tol)
                report.record(key + ":upper", v_lo, m ** _exponent(lo[1], hi[1]) * v_hi, tol)
    return report
