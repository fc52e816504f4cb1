"""Token weights for the reweighted NLL family and the weighted objective.

Every method trains on ``-sum_l w(x, l) * log Q(x_l | x_<l)`` with weights
computed from the detached model:

=========  ===============================================================
NLL        ``w = 1``
Trunc      ``w = 1{log Q(x) >= delta}``, delta keeps the top ``1-Delta`` of a
           rolling buffer of sequence log-likelihoods
TruncR     ``w = 1{log Q(x) <= delta}``, delta keeps the bottom ``1-Delta``
CDiv       ``w = q**(1-alpha)`` (``alpha = 0.5`` is GOLD, ``alpha = 1`` is NLL)
TaiLr      ``w = q / (gamma + (1-gamma) q)``
LambdaPR   TaiLr weight, gated at ``q <= delta`` and discounted by position
=========  ===============================================================
"""
import enum
import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, StateError

log = logging.getLogger(__name__)

Q_FLOOR = 1e-12
DEFAULT_BUFFER = 2048
WARMUP_FRACTION = 0.25


class Method(str, enum.Enum):
    NLL = "NLL"
    TRUNC = "Trunc"
    TRUNCR = "TruncR"
    CDIV = "CDiv"
    TAILR = "TaiLr"
    LAMBDA_PR = "LambdaPR"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).replace("-", "").replace("_", "").lower()
        aliases = {"gold": cls.CDIV, "lambdapr": cls.LAMBDA_PR, "λpr": cls.LAMBDA_PR}
        for m in cls:
            if m.value.lower() == key:
                return m
        if key in aliases:
            return aliases[key]
        raise DomainError(f"unknown loss method {name!r}; expected one of {[m.value for m in cls]}")


@dataclass(frozen=True)
class LossSpec:
    """A loss method and the hyperparameters it reads."""

    method: Method = Method.NLL
    delta_frac: float = 0.25
    alpha: float = 1.0
    gamma: float = 1e-5
    lam: float = 1.0
    buffer_size: int = DEFAULT_BUFFER

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        m = self.method
        if m in (Method.TRUNC, Method.TRUNCR) and not 0 < self.delta_frac < 1:
            raise DomainError(f"delta_frac must lie in (0, 1), got {self.delta_frac}")
        if m is Method.CDIV and not self.alpha > 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        if m in (Method.TAILR, Method.LAMBDA_PR) and not 0 < self.gamma <= 1:
            raise DomainError(f"gamma must lie in (0, 1], got {self.gamma}")
        if m is Method.LAMBDA_PR and not 0 < self.lam <= 1:
            raise DomainError(f"lambda must lie in (0, 1], got {self.lam}")
        if self.buffer_size < 1:
            raise DomainError("buffer_size must be positive")

    @classmethod
    def gold(cls):
        return cls(Method.CDIV, alpha=0.5)

    def params_str(self):
        """Compact ``key=value`` rendering of the fields this method reads."""
        m = self.method
        if m in (Method.TRUNC, Method.TRUNCR):
            return f"delta={self.delta_frac:g}"
        if m is Method.CDIV:
            return f"alpha={self.alpha:g}"
        if m is Method.TAILR:
            return f"gamma={self.gamma:g}"
        if m is Method.LAMBDA_PR:
            return f"gamma={self.gamma:g};lambda={self.lam:g}"
        return ""


# --------------------------------------------------------------------------
# rolling quantile
# --------------------------------------------------------------------------

class QuantileBuffer:
    """Most recent sequence log-likelihoods, oldest evicted first."""

    def __init__(self, capacity=DEFAULT_BUFFER):
        if capacity < 1:
            raise DomainError("capacity must be positive")
        self.capacity = int(capacity)
        self._items = deque(maxlen=self.capacity)

    def push(self, values):
        self._items.extend(float(v) for v in np.ravel(values))

    def values(self):
        return np.fromiter(self._items, dtype=np.float64, count=len(self._items))

    def __len__(self):
        return len(self._items)

    @property
    def warm(self):
        return len(self) >= WARMUP_FRACTION * self.capacity

    def state(self):
        return {"capacity": self.capacity, "values": self.values()}

    @classmethod
    def from_state(cls, state):
        buf = cls(int(state["capacity"]))
        buf.push(state["values"])
        return buf


def quantile_threshold(buf, frac, side):
    """Order statistic with a ``frac`` share of the buffer on ``side``.

    With ``m = ceil(frac * n)``, ``highest`` returns the m-th largest value
    and ``lowest`` the m-th smallest.
    """
    values = buf.values() if isinstance(buf, QuantileBuffer) else np.asarray(buf, dtype=np.float64)
    n = values.shape[0]
    if n == 0:
        raise StateError("quantile of an empty buffer")
    if not 0 < frac <= 1:
        raise DomainError(f"frac must lie in (0, 1], got {frac}")
    m = min(n, max(1, math.ceil(frac * n - 1e-9)))
    ordered = np.sort(values, kind="stable")
    if side == "highest":
        return float(ordered[n - m])
    if side == "lowest":
        return float(ordered[m - 1])
    raise DomainError(f"side must be 'highest' or 'lowest', got {side!r}")


# --------------------------------------------------------------------------
# weight formulas (vectorized over numpy inputs)
# --------------------------------------------------------------------------

def weights_trunc(seq_loglik, delta_thresh):
    return (np.asarray(seq_loglik) >= delta_thresh).astype(np.float64)


def weights_truncr(seq_loglik, delta_thresh):
    return (np.asarray(seq_loglik) <= delta_thresh).astype(np.float64)


def weights_cdiv(token_prob, alpha, q_floor=Q_FLOOR):
    q = np.asarray(token_prob, dtype=np.float64)
    if alpha == 1:
        return np.ones_like(q)
    if alpha < 1:
        # q**(1-alpha) -> 0 as q -> 0, no floor needed
        return np.power(q, 1 - alpha)
    low = q < q_floor
    if np.any(low):
        log.debug("c-Div: %d token probabilities floored at %g", int(low.sum()), q_floor)
    return np.power(np.maximum(q, q_floor), 1 - alpha)


def weights_tailr(token_prob, gamma):
    q = np.asarray(token_prob, dtype=np.float64)
    return q / (gamma + (1 - gamma) * q)


def lambda_pr_delta(gamma, lam, seq_len):
    """Per-token gate ``s*gamma / (1 - (1-gamma)*s)`` with ``s = lam**(1/L)``."""
    s = lam ** (1.0 / seq_len)
    denom = (1 - s) + gamma * s
    if not np.all(denom > 0):
        raise DomainError("1 - (1-gamma) lam^(1/L) must be positive; need lam <= 1 and gamma > 0")
    return gamma * s / denom


def weights_lambda_pr(token_prob, gamma, lam, position, seq_len):
    """``lam**((l-1)/L) * 1{q <= delta} * q / (gamma + (1-gamma) q)``, ``l`` 1-based."""
    q = np.asarray(token_prob, dtype=np.float64)
    position = np.asarray(position)
    if np.any(position < 1) or np.any(position > seq_len):
        raise DomainError(f"positions must lie in [1, {seq_len}]")
    delta = lambda_pr_delta(gamma, lam, seq_len)
    discount = np.power(lam, (position - 1) / seq_len)
    return discount * (q <= delta) * weights_tailr(q, gamma)


# --------------------------------------------------------------------------
# batch assembly
# --------------------------------------------------------------------------

@dataclass
class WeightInfo:
    mean_weight: float
    kept_fraction: float
    threshold: float = math.nan
    gated: bool = False


def compute_weights(spec, token_logprobs, buffer=None):
    """Detached weights of shape ``(batch, L)`` for one batch.

    ``token_logprobs[i, l]`` is ``log Q(x_l | x_<l)`` under the current model.
    Trunc and TruncR push the batch's sequence log-likelihoods into
    ``buffer`` first, then gate once the buffer is at least a quarter full.
    """
    lp = np.asarray(token_logprobs, dtype=np.float64)
    if lp.ndim != 2:
        raise DomainError(f"token_logprobs must be (batch, L), got shape {lp.shape}")
    batch, seq_len = lp.shape
    m = spec.method
    info = WeightInfo(1.0, 1.0)

    if m is Method.NLL:
        w = np.ones_like(lp)
    elif m in (Method.TRUNC, Method.TRUNCR):
        if buffer is None:
            raise StateError("Trunc/TruncR need a QuantileBuffer")
        seq_ll = lp.sum(axis=1)
        buffer.push(seq_ll)
        if buffer.warm:
            frac = 1 - spec.delta_frac
            if m is Method.TRUNC:
                thresh = quantile_threshold(buffer, frac, "highest")
                keep = weights_trunc(seq_ll, thresh)
            else:
                thresh = quantile_threshold(buffer, frac, "lowest")
                keep = weights_truncr(seq_ll, thresh)
            info.threshold, info.gated = thresh, True
        else:
            keep = np.ones(batch)
        w = np.repeat(keep[:, None], seq_len, axis=1)
        info.kept_fraction = float(keep.mean())
    elif m is Method.CDIV:
        w = weights_cdiv(np.exp(lp), spec.alpha)
    elif m is Method.TAILR:
        w = weights_tailr(np.exp(lp), spec.gamma)
    elif m is Method.LAMBDA_PR:
        pos = np.arange(1, seq_len + 1)[None, :]
        w = weights_lambda_pr(np.exp(lp), spec.gamma, spec.lam, pos, seq_len)
        info.kept_fraction = float((w > 0).mean())
    else:  # pragma: no cover - Method is closed
        raise DomainError(f"unhandled method {m}")

    info.mean_weight = float(w.mean())
    return w, info


def weighted_nll(logprobs, weights):
    """``-mean_over_batch(sum_l w * logprob)``; weights are constants."""
    lp = np.asarray(logprobs)
    w = np.asarray(weights)
    if lp.shape != w.shape:
        raise DomainError(f"shape mismatch: logprobs {lp.shape} vs weights {w.shape}")
    batch = lp.shape[0] if lp.ndim > 1 else 1
    # skip zero-weight terms so a -inf logprob with weight 0 contributes 0
    with np.errstate(invalid="ignore"):
        return float(-np.where(w != 0, w * lp, 0.0).sum() / batch)


def weighted_nll_grad(logprobs, weights):
    """Gradient of :func:`weighted_nll` with respect to ``logprobs``."""
    lp = np.asarray(logprobs)
    w = np.asarray(weights, dtype=lp.dtype)
    batch = lp.shape[0] if lp.ndim > 1 else 1
    return -w / batch


# --------------------------------------------------------------------------
# population optima (test oracles)
# --------------------------------------------------------------------------

def tailr_optimum(p, gamma):
    """Stationary point of the TaiLr objective for reference ``p``.

    ``Q* = (p (1 - gamma + V gamma) - gamma) / (1 - gamma)``; interior only
    when every ``p_i > gamma / (1 - gamma + V gamma)``.
    """
    p = np.asarray(p, dtype=np.float64)
    v = p.shape[0]
    return (p * (1 - gamma + v * gamma) - gamma) / (1 - gamma)


def truncr_optimum(p, kept):
    """Best ``Q`` for TruncR when the ids in ``kept`` are the low-likelihood set.

    Minimizes ``-sum_{i in kept} p_i log Q_i`` over the simplex subject to
    ``Q_i <= delta`` on ``kept`` and ``Q_j >= delta`` elsewhere. The answer is
    ``Q_i = min(delta, gamma p_i)`` on ``kept`` with ``gamma = 1 / p(kept)``
    and ``Q_j = delta`` elsewhere; ``delta`` comes from water-filling the
    largest kept entries.

    Returns ``(Q, gamma, delta)``.
    """
    p = np.asarray(p, dtype=np.float64)
    kept = np.asarray(kept)
    if kept.dtype != bool:
        mask = np.zeros(p.shape[0], dtype=bool)
        mask[kept] = True
        kept = mask
    mass = p[kept].sum()
    n_out = int((~kept).sum())
    gamma = 1.0 / mass
    if n_out == 0:
        return p / mass, gamma, float(np.max(p) * gamma)
    order = np.sort(p[kept])[::-1]
    top = np.cumsum(order)
    delta = None
    for c in range(1, order.shape[0] + 1):
        d = top[c - 1] / (mass * (c + n_out))
        nxt = order[c] * gamma if c < order.shape[0] else -np.inf
        if order[c - 1] * gamma >= d >= nxt:
            delta = d
            break
    if delta is None:  # pragma: no cover - the sweep always finds a consistent cap
        raise StateError("water-filling found no consistent cap")
    q = np.where(kept, np.minimum(delta, gamma * p), delta)
    return q, gamma, float(delta)
