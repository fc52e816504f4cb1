"""A two-defect toy model with a closed-form PR-curve under temperature.

The reference ``P`` is uniform over the first ``K`` ids at every position.
The model ``Q`` matches it except at two positions:

* ``l1``: the first ``rho*K`` ids carry ``a/(rho*K)`` each and the next
  ``(1-rho)*K`` ids carry ``b/(rho*K)`` each, with ``b = mu*(1-a)`` and
  ``mu = rho/(1-rho)``;
* ``l2``: the acceptable ids carry ``(1-eps)/K`` each and the other
  ``V-K`` ids share ``eps``.

On ``Supp P`` the ratio ``Q/P`` after tempering takes two values, which
are exactly ``lambda_max`` and ``lambda_min``. Everything below is written
with ``tau = 1/t`` and evaluated in log space.
"""
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .dist import FactorizedSeqDist
from .errors import DomainError
from .prmetrics import PRPoint

_INT_TOL = 1e-9


@dataclass(frozen=True)
class ArtCaseParams:
    V: int
    K: int
    L: int
    l1: int
    l2: int
    rho: float
    a: float
    epsilon: float

    def __post_init__(self):
        V, K, L = self.V, self.K, self.L
        if not (1 <= K <= V) or L < 2:
            raise DomainError(f"need 1 <= K <= V and L >= 2, got V={V}, K={K}, L={L}")
        if not (1 <= self.l1 <= L and 1 <= self.l2 <= L) or self.l1 == self.l2:
            raise DomainError(f"l1, l2 must be distinct positions in [1, {L}]")
        if not 0 < self.rho < 1:
            raise DomainError(f"rho must lie in (0, 1), got {self.rho}")
        n_over = self.rho * K
        if abs(n_over - round(n_over)) > _INT_TOL:
            raise DomainError(f"rho*K = {n_over} is not an integer")
        if round(n_over) < 1 or K - round(n_over) < 1:
            raise DomainError("both token groups at l1 need at least one id")
        if not 0 < self.a <= 1:
            raise DomainError(f"a must lie in (0, 1], got {self.a}")
        if self.a < self.b:
            raise DomainError(f"a = {self.a} must be at least b = {self.b}")
        if not 0 <= self.epsilon <= 0.5:
            raise DomainError(f"epsilon must lie in [0, 1/2], got {self.epsilon}")
        if K == V and self.epsilon > 0:
            raise DomainError("epsilon > 0 needs off-support ids (K < V)")

    @property
    def mu(self):
        return self.rho / (1 - self.rho)

    @property
    def b(self):
        return self.mu * (1 - self.a)

    @property
    def n_over(self):
        """Number of over-represented ids at ``l1``."""
        return int(round(self.rho * self.K))


class RegimeBoundaries(NamedTuple):
    lambda_min: float
    lambda_max: float
    t: float
    degenerate: bool = False


class Epsilon0(NamedTuple):
    value: float
    degenerate: bool = False


def _tau(t):
    if not (math.isfinite(t) and t > 0):
        raise DomainError(f"temperature must be positive and finite, got {t!r}")
    return 1.0 / t


# --------------------------------------------------------------------------
# distributions
# --------------------------------------------------------------------------

def _p_row(params):
    row = np.zeros(params.V)
    row[: params.K] = 1.0 / params.K
    return row


def q_rows(params):
    """Per-position conditionals of the model (context-free)."""
    V, K, m = params.V, params.K, params.n_over
    rows = [_p_row(params) for _ in range(params.L)]
    r1 = np.zeros(V)
    r1[:m] = params.a / m
    r1[m:K] = params.b / m
    r2 = np.zeros(V)
    r2[:K] = (1 - params.epsilon) / K
    if K < V:
        r2[K:] = params.epsilon / (V - K)
    rows[params.l1 - 1] = r1
    rows[params.l2 - 1] = r2
    return rows


def build_p(params):
    return FactorizedSeqDist.independent([_p_row(params)] * params.L)


def build_q(params):
    return FactorizedSeqDist.independent(q_rows(params))


# --------------------------------------------------------------------------
# closed forms
# --------------------------------------------------------------------------

def _logistic_neg(x):
    """``1 / (1 + exp(x))`` without overflow."""
    return math.exp(-np.logaddexp(0.0, x))


def noise_factor(params, t):
    """Tempered mass that ``Q`` keeps on the acceptable ids at ``l2``."""
    tau = _tau(t)
    V, K, eps = params.V, params.K, params.epsilon
    if K == V or eps == 0:
        return 1.0
    x = (1 - tau) * math.log(V / K - 1) + tau * (math.log(eps) - math.log1p(-eps))
    return _logistic_neg(x)


def regime_boundaries(params, t):
    """Ratios ``Q^t/P`` on the over- and under-represented parts of ``Supp P``."""
    tau = _tau(t)
    rho, a, b = params.rho, params.a, params.b
    f = noise_factor(params, t)
    log_ba = math.log(b) - math.log(a) if b > 0 else -math.inf
    # 1 / (rho + (1-rho) (b/a)^tau) and 1 / (rho (a/b)^tau + (1-rho))
    lam_max = f * math.exp(-np.logaddexp(math.log(rho), math.log1p(-rho) + tau * log_ba))
    if b == 0:
        return RegimeBoundaries(0.0, lam_max, t, True)
    lam_min = f * math.exp(-np.logaddexp(math.log(rho) - tau * log_ba, math.log1p(-rho)))
    return RegimeBoundaries(lam_min, lam_max, t)


def middle_factor(params, t):
    """``lambda_min(t)``. Middle-regime precision is ``rho*lam + (1-rho)*lambda_min``."""
    return regime_boundaries(params, t).lambda_min


def pr_closed_form(params, t, lam):
    """Exact ``(alpha, beta)`` of the tempered model at trade-off ``lam``."""
    if not lam > 0:
        raise DomainError(f"lam must be positive, got {lam!r}")
    lam_min, lam_max, _, _ = regime_boundaries(params, t)
    if math.isinf(lam):
        return PRPoint(lam, noise_factor(params, t), 0.0)
    if lam >= lam_max:
        alpha = noise_factor(params, t)
    elif lam >= lam_min:
        alpha = params.rho * lam + (1 - params.rho) * lam_min
    else:
        return PRPoint(lam, lam, 1.0)
    return PRPoint(lam, alpha, alpha / lam)


def epsilon0(params):
    """Noise level separating eventual fall and rise of ``lambda_min(t)``.

    Below it, ``lambda_min`` (hence middle-regime recall) peaks at a finite
    temperature and then decreases; above it, it keeps increasing.
    """
    V, K, a, b = params.V, params.K, params.a, params.b
    if b == 0 or K == V:
        return Epsilon0(0.0, True)
    r = V / K - 1
    expo = params.rho / (1 - K / V)
    return Epsilon0(r / (r + (a / b) ** expo))


def recall_vs_temperature(params, lam, t_grid):
    return [(float(t), pr_closed_form(params, t, lam).beta) for t in t_grid]


def _log_slope(params, t, h=1e-4):
    # central difference of log lambda_min in log t
    hi = math.log(middle_factor(params, t * math.exp(h)))
    lo = math.log(middle_factor(params, t * math.exp(-h)))
    return (hi - lo) / (2 * h)


def peak_temperature(params, t_lo=1e-2, t_hi=1e4):
    """Temperature maximizing ``lambda_min``, or ``None`` if it is monotone on the range."""
    if regime_boundaries(params, 1.0).degenerate:
        return None
    f = lambda logt: _log_slope(params, math.exp(logt))
    lo, hi = math.log(t_lo), math.log(t_hi)
    if not (f(lo) > 0 > f(hi)):
        return None
    return math.exp(brentq(f, lo, hi, xtol=1e-10))


def find_t0(params, lam, t_max=1e4):
    """Smallest ``t0 > 1`` beyond which recall at ``lam`` stays below its ``t = 1`` value.

    Located by bisection on ``beta(t) - beta(1)`` after the recall peak.
    Returns ``None`` when recall at ``t_max`` has not fallen below ``beta(1)``.
    """
    base = pr_closed_form(params, 1.0, lam).beta
    h = lambda t: pr_closed_form(params, t, lam).beta - base
    if h(t_max) >= 0:
        return None
    start = peak_temperature(params) or 1.0
    start = max(start, 1.0)
    if h(start) < 0:
        return start
    return brentq(h, start, t_max, xtol=1e-12)
