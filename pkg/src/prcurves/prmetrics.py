"""Precision and Recall between a reference P and a model Q.

For a trade-off ``lam``::

    alpha_lam = sum_x min(lam * P(x), Q(x))      # precision
    beta_lam  = sum_x min(P(x), Q(x) / lam)      # recall

so ``alpha_lam == lam * beta_lam``. The endpoints ``lam = inf`` and
``lam = 0`` reduce to the support-based values ``Q(Supp P)`` and
``P(Supp Q)``.
"""
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from . import kernels
from .dist import FactorizedSeqDist
from .errors import DomainError, ResourceError

DEFAULT_BUDGET = 10**7


@dataclass(frozen=True)
class PRPoint:
    lam: float
    alpha: float
    beta: float

    def __iter__(self):
        return iter((self.lam, self.alpha, self.beta))


@dataclass(frozen=True)
class PRCurve:
    points: tuple

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]

    @property
    def lambdas(self):
        return np.array([pt.lam for pt in self.points])

    @property
    def alphas(self):
        return np.array([pt.alpha for pt in self.points])

    @property
    def betas(self):
        return np.array([pt.beta for pt in self.points])


# --------------------------------------------------------------------------
# exhaustive enumeration
# --------------------------------------------------------------------------

def joint_probs(dist, budget=DEFAULT_BUDGET):
    """All ``V**L`` sequence probabilities of ``dist`` in lexicographic order."""
    n = dist.vocab_size ** dist.length
    if n > budget:
        raise ResourceError(
            f"enumeration needs V^L = {dist.vocab_size}^{dist.length} = {n} outcomes, "
            f"budget is {budget}"
        )
    positions = dist.__dict__.get("positions")
    if positions is not None:
        # context-free: joint is an outer product, no conditional calls needed
        joint = positions[0]
        for row in positions[1:]:
            joint = np.multiply.outer(joint, row).reshape(-1)
        return np.asarray(joint, dtype=np.float64)
    return kernels.joint_from_tables(dist.tables)


def _check_pair(p, q):
    if (p.vocab_size, p.length) != (q.vocab_size, q.length):
        raise DomainError(
            f"P is over {p.vocab_size}^{p.length} sequences, Q over {q.vocab_size}^{q.length}"
        )


def _support_pr_arrays(p, q):
    alpha_bar = float(q[p > 0].sum())
    beta_bar = float(p[q > 0].sum())
    return alpha_bar, beta_bar


def _curve_from_arrays(p, q, lambdas, n_blocks):
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if lambdas.ndim != 1:
        raise DomainError("lambdas must be a 1-D sequence")
    if np.any(np.isnan(lambdas)) or np.any(lambdas < 0):
        raise DomainError("lambdas must be non-negative")
    if np.any(np.diff(lambdas) < 0):
        raise DomainError("lambdas must be ascending")
    finite = np.isfinite(lambdas) & (lambdas > 0)
    alpha = np.empty(lambdas.shape[0])
    beta = np.empty(lambdas.shape[0])
    if finite.any():
        alpha[finite], beta[finite] = kernels.pr_sums(p, q, lambdas[finite], n_blocks)
    if not finite.all():
        alpha_bar, beta_bar = _support_pr_arrays(p, q)
        alpha[lambdas == 0], beta[lambdas == 0] = 0.0, beta_bar
        alpha[np.isinf(lambdas)], beta[np.isinf(lambdas)] = alpha_bar, 0.0
    return PRCurve(PRPoint(float(l), float(a), float(b)) for l, a, b in zip(lambdas, alpha, beta))


def pr_curve_exact(P, Q, lambdas, budget=DEFAULT_BUDGET):
    """PR-curve of ``Q`` against ``P`` by summing over every sequence.

    The sums are split into ``V`` blocks by first token and reduced in
    block order, so the result does not depend on the thread count.
    """
    _check_pair(P, Q)
    p = joint_probs(P, budget)
    q = joint_probs(Q, budget)
    return _curve_from_arrays(p, q, lambdas, P.vocab_size)


def pr_point_exact(P, Q, lam, budget=DEFAULT_BUDGET):
    return pr_curve_exact(P, Q, [lam], budget)[0]


def support_pr(P, Q, budget=DEFAULT_BUDGET):
    """``(Q(Supp P), P(Supp Q))``."""
    _check_pair(P, Q)
    return _support_pr_arrays(joint_probs(P, budget), joint_probs(Q, budget))


# --------------------------------------------------------------------------
# sparsity bound
# --------------------------------------------------------------------------

class SparsityBound(NamedTuple):
    alpha_ub: float
    beta_ub: float
    alpha_raw: float
    beta_raw: float


def sparsity_bound(supp_size, V, L, Z, t, lam):
    """Upper bounds on precision and recall of a tempered softmax model.

    ``alpha <= supp_size / V**L * exp(Z * L / t)`` and ``beta <= alpha_bound / lam``,
    where ``Z`` is the largest logit gap of the model. The ``*_ub`` fields
    are clamped to [0, 1]; ``*_raw`` are the unclamped values (possibly inf).
    """
    if supp_size < 1 or V < 1 or L < 1:
        raise DomainError("supp_size, V and L must be positive")
    if supp_size > V**L:
        raise DomainError(f"support size {supp_size} exceeds V^L = {V**L}")
    if Z < 0 or t <= 0 or lam <= 0:
        raise DomainError("need Z >= 0, t > 0 and lam > 0")
    log_alpha = math.log(supp_size) - L * math.log(V) + Z * L / t
    log_beta = log_alpha - math.log(lam)
    alpha_raw = math.exp(log_alpha) if log_alpha < 700 else math.inf
    beta_raw = math.exp(log_beta) if log_beta < 700 else math.inf
    return SparsityBound(min(alpha_raw, 1.0), min(beta_raw, 1.0), alpha_raw, beta_raw)


def max_logit_gap(logit_table):
    """Largest ``max - min`` of any logit vector along the last axis."""
    logits = np.asarray(logit_table, dtype=np.float64)
    if logits.size == 0:
        raise DomainError("empty logit table")
    logits = logits.reshape(-1, logits.shape[-1])
    return float((logits.max(axis=1) - logits.min(axis=1)).max())


def logits_seq_dist(logit_tables, t=1.0):
    """Factorized softmax model from per-depth logit tables, tempered by ``t``.

    ``logit_tables[l]`` has shape ``(V**l, V)`` in lexicographic context order.
    """
    tables = []
    for z in logit_tables:
        z = np.asarray(z, dtype=np.float64) / t
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        tables.append(e / e.sum(axis=-1, keepdims=True))
    return FactorizedSeqDist.from_tables(tables)


# --------------------------------------------------------------------------
# k-NN manifold estimate on feature vectors
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Embedding vectors, one row per sample."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] == 0:
            raise DomainError(f"expected a non-empty 2-D array of vectors, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("feature vectors must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]


def _as_features(x):
    return x if isinstance(x, FeatureSet) else FeatureSet(x)


def knn_coverage(ref, other, k):
    """Fraction of ``other`` inside some k-NN ball around a ``ref`` point."""
    radii = kernels.kth_nn_sqdist(ref.vectors, k)
    return float(kernels.in_any_ball(other.vectors, ref.vectors, radii).mean())


def knn_pr(real, fake, k=4):
    """k-NN precision and recall between two feature sets.

    Each point of one set gets a ball reaching its k-th nearest neighbour
    within that set. Precision is the share of ``fake`` inside a ball of
    ``real``; recall is the share of ``real`` inside a ball of ``fake``.
    Boundary points count as inside.
    """
    real, fake = _as_features(real), _as_features(fake)
    if k < 1:
        raise DomainError(f"k must be positive, got {k}")
    if real.dim != fake.dim:
        raise DomainError(f"dimension mismatch: {real.dim} vs {fake.dim}")
    if len(real) < k + 1 or len(fake) < k + 1:
        raise DomainError(f"need at least k+1 = {k + 1} points per set")
    return knn_coverage(real, fake, k), knn_coverage(fake, real, k)


# --------------------------------------------------------------------------
# pass@k
# --------------------------------------------------------------------------

def pass_at_k_exact(n, c, k):
    """Unbiased pass@k as an exact fraction."""
    if not (n >= 1 and 0 <= c <= n):
        raise DomainError(f"need n >= 1 and 0 <= c <= n, got n={n}, c={c}")
    if not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    if c > n - k:
        return Fraction(1)
    return 1 - Fraction(math.comb(n - c, k), math.comb(n, k))


def pass_at_k(n, c, k):
    """``1 - C(n-c, k) / C(n, k)``, the chance a random k-subset holds a correct sample."""
    return float(pass_at_k_exact(n, c, k))
