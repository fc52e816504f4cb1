"""Categorical distributions over a finite vocabulary and factorized
sequence distributions built from them.

Probabilities are stored in linear space. Tempering goes through log
space so that t well below 1 cannot underflow a non-zero entry to 0 or
overflow the normalizer.
"""
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError
from .kernels import MASS_TOL

SUM_TOL = 1e-12


def _readonly(arr):
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Categorical:
    """A probability vector over token ids ``0..V-1``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _readonly(self.probs)
        if probs.ndim != 1 or probs.size == 0:
            raise DomainError(f"probs must be a non-empty vector, got shape {probs.shape}")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise DomainError("probs must be finite and non-negative")
        if abs(probs.sum() - 1.0) > SUM_TOL:
            raise DomainError(f"probs sum to {probs.sum()!r}, not 1")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_weights(cls, weights):
        w = np.asarray(weights, dtype=np.float64)
        return cls(w / w.sum())

    @classmethod
    def uniform(cls, size, support=None):
        """Uniform over ``support`` (default: all ``size`` ids)."""
        probs = np.zeros(size)
        idx = np.arange(size) if support is None else np.asarray(list(support))
        probs[idx] = 1.0 / len(idx)
        return cls(probs)

    @property
    def size(self):
        return self.probs.shape[0]

    def __len__(self):
        return self.size

    def __eq__(self, other):
        if not isinstance(other, Categorical):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())

    def __repr__(self):
        return f"Categorical({np.array2string(self.probs, precision=4)})"


def _check_temperature(t):
    if not (isinstance(t, (int, float, np.floating, np.integer)) and math.isfinite(t) and t > 0):
        raise DomainError(f"temperature must be a positive finite number, got {t!r}")


def temper_probs(probs, t):
    """Temper along the last axis: ``p**(1/t)`` renormalized. Zeros stay zero."""
    _check_temperature(t)
    probs = np.asarray(probs, dtype=np.float64)
    if t == 1:
        return probs
    with np.errstate(divide="ignore"):
        z = np.log(probs) / t
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def temper(d, t):
    """Temperature-scaled copy of ``d``; ``t == 1`` returns ``d`` itself."""
    _check_temperature(t)
    if t == 1:
        return d
    return Categorical(temper_probs(d.probs, t))


def entropy(d):
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = d.probs[d.probs > 0]
    return float(-(p * np.log(p)).sum())


def top_p_probs(probs, p):
    """Nucleus truncation along the last axis.

    Keeps the shortest prefix of tokens, sorted by descending probability
    with lower ids first among ties, whose mass reaches ``p``.
    """
    if not (0 < p <= 1):
        raise DomainError(f"top-p mass must lie in (0, 1], got {p!r}")
    probs = np.asarray(probs, dtype=np.float64)
    order = np.argsort(-probs, axis=-1, kind="stable")
    ordered = np.take_along_axis(probs, order, axis=-1)
    csum = np.cumsum(ordered, axis=-1)
    n_keep = (csum < p - MASS_TOL).sum(axis=-1, keepdims=True) + 1
    keep_sorted = np.arange(probs.shape[-1]) < n_keep
    keep = np.zeros_like(keep_sorted)
    np.put_along_axis(keep, order, keep_sorted, axis=-1)
    out = np.where(keep, probs, 0.0)
    return out / out.sum(axis=-1, keepdims=True)


def top_p(d, p):
    return Categorical(top_p_probs(d.probs, p))


def support(d, tol=0.0):
    return frozenset(int(i) for i in np.flatnonzero(d.probs > tol))


def sample_rows(probs, rng, u=None):
    """One inverse-CDF draw per row of ``probs`` (any leading shape).

    Pass pre-drawn uniforms ``u`` to decouple the draw from batching; then
    ``rng`` is unused.
    """
    probs = np.asarray(probs, dtype=np.float64)
    csum = np.cumsum(probs, axis=-1)
    if u is None:
        u = rng.random(probs.shape[:-1])
    u = np.asarray(u) * csum[..., -1]
    idx = (csum <= u[..., None]).sum(axis=-1)
    # float slack can push u past the last cumulative value
    last = probs.shape[-1] - 1 - np.argmax(probs[..., ::-1] > 0, axis=-1)
    return np.minimum(idx, last)


def sample(d, rng):
    """Draw one token id from ``d`` using the caller's ``numpy.random.Generator``."""
    return int(sample_rows(d.probs, rng))


# --------------------------------------------------------------------------
# sequences
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FactorizedSeqDist:
    """A distribution over ``V**L`` sequences given by its conditionals.

    ``conditional`` maps a context (tuple of fewer than ``L`` token ids) to
    a :class:`Categorical` or a probability vector of length ``V``.
    """

    vocab_size: int
    length: int
    conditional: object = field(repr=False)

    def __post_init__(self):
        if self.vocab_size < 1 or self.length < 1:
            raise DomainError("vocab_size and length must be positive")

    def cond(self, context):
        context = tuple(int(x) for x in context)
        if len(context) >= self.length:
            raise DomainError(f"context of length {len(context)} for L={self.length}")
        out = self.conditional(context)
        probs = out.probs if isinstance(out, Categorical) else np.asarray(out, dtype=np.float64)
        if probs.shape != (self.vocab_size,):
            raise DomainError(f"conditional returned shape {probs.shape}, expected ({self.vocab_size},)")
        return probs

    @cached_property
    def tables(self):
        """Per-depth conditional tables, ``tables[l].shape == (V**l, V)``.

        Row ``i`` of ``tables[l]`` is the conditional after the ``i``-th
        length-``l`` context in lexicographic order.
        """
        v = self.vocab_size
        out = []
        for depth in range(self.length):
            rows = [self.cond(ctx) for ctx in itertools.product(range(v), repeat=depth)]
            table = np.array(rows, dtype=np.float64).reshape(v ** depth, v)
            table.setflags(write=False)
            out.append(table)
        return out

    @classmethod
    def from_tables(cls, tables):
        """Build from explicit per-depth tables (see :attr:`tables`)."""
        tables = [np.array(t, dtype=np.float64) for t in tables]
        v = tables[0].shape[-1]
        for depth, t in enumerate(tables):
            t.shape = (v ** depth, v)
            t.setflags(write=False)

        def conditional(context):
            idx = 0
            for tok in context:
                idx = idx * v + tok
            return tables[len(context)][idx]

        dist = cls(v, len(tables), conditional)
        dist.__dict__["tables"] = tables
        return dist

    @classmethod
    def independent(cls, positions):
        """Context-free model: one fixed categorical per position."""
        rows = [p.probs if isinstance(p, Categorical) else np.asarray(p, dtype=np.float64)
                for p in positions]
        v = rows[0].shape[0]
        rows = [_readonly(r) for r in rows]
        dist = cls(v, len(rows), lambda context: rows[len(context)])
        dist.__dict__["positions"] = rows
        return dist

    @property
    def n_sequences(self):
        return self.vocab_size ** self.length


def seq_prob(dist, x):
    """Probability of the full sequence ``x`` under ``dist``."""
    x = [int(t) for t in x]
    if len(x) != dist.length:
        raise DomainError(f"sequence of length {len(x)} for L={dist.length}")
    if any(t < 0 or t >= dist.vocab_size for t in x):
        raise DomainError(f"token id outside [0, {dist.vocab_size})")
    prob = 1.0
    for pos, tok in enumerate(x):
        prob *= dist.cond(x[:pos])[tok]
    return prob


def temper_seq(dist, t):
    """Temper every conditional of ``dist`` independently."""
    _check_temperature(t)
    if t == 1:
        return dist
    if "positions" in dist.__dict__:
        return FactorizedSeqDist.independent([temper_probs(r, t) for r in dist.positions])
    if "tables" in dist.__dict__:
        return FactorizedSeqDist.from_tables([temper_probs(tab, t) for tab in dist.tables])
    return FactorizedSeqDist(
        dist.vocab_size, dist.length, lambda context: temper_probs(dist.cond(context), t)
    )
