"""Two-digit multiplication modulo 97 as a sequence task.

Each example renders as eight tokens ``a1 a2 × b1 b2 = c1 c2`` with one
token per digit, ``×`` = 10 and ``=`` = 11, so ``V = 12`` and ``L = 8``.
Operands lie in ``[1, 99]`` and ``c = a*b mod 97`` is written with a
leading zero.

Training data can under-represent part of the input space: the tens
digit of ``a`` falls in ``{0..4}`` with probability ``b_level`` and in
``{5..9}`` otherwise, i.e. ``a`` is uniform on ``[1, 49]`` or on
``[50, 99]``.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dist import FactorizedSeqDist
from .errors import DomainError
from .nn.generate import PLAIN, generate
from .nn.model import forward

MODULUS = 97
TIMES = 10
EQUALS = 11
VOCAB = 12
SEQ_LEN = 8
OPERAND_MIN, OPERAND_MAX = 1, 99
N_PAIRS = 99 * 99
LOW_GROUP = (1, 49)
HIGH_GROUP = (50, 99)

_DIGIT_POS = np.array([0, 1, 3, 4, 6, 7])
_SYMBOLS = "0123456789×="


@dataclass(frozen=True)
class SkewSpec:
    b_level: float = 0.5

    def __post_init__(self):
        if not 0 < self.b_level <= 1:
            raise DomainError(f"b_level must lie in (0, 1], got {self.b_level}")


# the low group holds 49 of the 99 operands, so this level makes ``a`` uniform
UNIFORM_SKEW = SkewSpec(49 / 99)


@dataclass(frozen=True)
class MulSample:
    a: int
    b: int

    def __post_init__(self):
        for v in (self.a, self.b):
            if not OPERAND_MIN <= v <= OPERAND_MAX:
                raise DomainError(f"operand {v} outside [{OPERAND_MIN}, {OPERAND_MAX}]")

    @property
    def c(self):
        return self.a * self.b % MODULUS

    def tokens(self):
        return render(self.a, self.b)


# --------------------------------------------------------------------------
# rendering and parsing
# --------------------------------------------------------------------------

def render_batch(a, b, c=None):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    c = a * b % MODULUS if c is None else np.asarray(c, dtype=np.int64)
    out = np.empty(a.shape + (SEQ_LEN,), dtype=np.int64)
    out[..., 0], out[..., 1] = a // 10, a % 10
    out[..., 2] = TIMES
    out[..., 3], out[..., 4] = b // 10, b % 10
    out[..., 5] = EQUALS
    out[..., 6], out[..., 7] = c // 10, c % 10
    return out


def render(a, b, c=None):
    return render_batch(a, b, c)


def to_text(tokens):
    return "".join(_SYMBOLS[int(t)] for t in tokens)


def from_text(text):
    try:
        return np.array([_SYMBOLS.index(ch) for ch in text.strip()], dtype=np.int64)
    except ValueError as exc:
        raise DomainError(f"unknown symbol in {text!r}") from exc


def check_batch(tokens):
    """Vectorized grammar and arithmetic check.

    Returns ``(wellformed, correct, a, b)`` over the rows of ``tokens``.
    A row is well formed when it has eight tokens in the digit/symbol
    layout and both operands lie in ``[1, 99]``.
    """
    x = np.asarray(tokens, dtype=np.int64)
    if x.ndim != 2:
        raise DomainError(f"expected (n, L) tokens, got shape {x.shape}")
    n = x.shape[0]
    if x.shape[1] != SEQ_LEN:
        zeros = np.zeros(n, dtype=bool)
        return zeros, zeros.copy(), np.zeros(n, np.int64), np.zeros(n, np.int64)
    digits = x[:, _DIGIT_POS]
    layout = (digits >= 0).all(1) & (digits <= 9).all(1) & (x[:, 2] == TIMES) & (x[:, 5] == EQUALS)
    a = x[:, 0] * 10 + x[:, 1]
    b = x[:, 3] * 10 + x[:, 4]
    c = x[:, 6] * 10 + x[:, 7]
    wellformed = layout & (a >= OPERAND_MIN) & (b >= OPERAND_MIN)
    correct = wellformed & (a * b % MODULUS == c)
    return wellformed, correct, a, b


@dataclass(frozen=True)
class ParseResult:
    status: str
    a: int = None
    b: int = None

    @property
    def correct(self):
        return self.status == "correct"


MALFORMED = ParseResult("malformed")


def parse_and_check(tokens):
    """Classify one token sequence as malformed, incorrect or correct(a, b)."""
    try:
        x = np.asarray(tokens, dtype=np.int64).reshape(1, -1)
    except (TypeError, ValueError):
        return MALFORMED
    wellformed, correct, a, b = check_batch(x)
    if not wellformed[0]:
        return MALFORMED
    if not correct[0]:
        return ParseResult("incorrect", int(a[0]), int(b[0]))
    return ParseResult("correct", int(a[0]), int(b[0]))


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------

def sample_operands(n, skew, rng):
    if n <= 0:
        raise DomainError(f"n must be positive, got {n}")
    skew = skew if isinstance(skew, SkewSpec) else SkewSpec(skew)
    low = rng.random(n) < skew.b_level
    a = np.where(
        low,
        rng.integers(LOW_GROUP[0], LOW_GROUP[1] + 1, n),
        rng.integers(HIGH_GROUP[0], HIGH_GROUP[1] + 1, n),
    )
    b = rng.integers(OPERAND_MIN, OPERAND_MAX + 1, n)
    return a, b


def gen_dataset(n, skew, rng):
    """``n`` i.i.d. examples as a list of :class:`MulSample`."""
    a, b = sample_operands(n, skew, rng)
    return [MulSample(int(x), int(y)) for x, y in zip(a, b)]


def dataset_tokens(samples):
    """Stack samples into an ``(n, 8)`` token array."""
    a = np.fromiter((s.a for s in samples), dtype=np.int64)
    b = np.fromiter((s.b for s in samples), dtype=np.int64)
    return render_batch(a, b)


def write_dataset(path, samples):
    with open(path, "w") as fh:
        for s in samples:
            fh.write(to_text(s.tokens()) + "\n")


def read_dataset(path):
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                res = parse_and_check(from_text(line))
                if not res.correct:
                    raise DomainError(f"bad dataset line {line.strip()!r}")
                out.append(MulSample(res.a, res.b))
    return out


def _a_probs(b_level):
    """Law of ``a`` over ``[0, 99]`` for a given skew (index 0 unused)."""
    pa = np.zeros(100)
    pa[LOW_GROUP[0] : LOW_GROUP[1] + 1] = b_level / (LOW_GROUP[1] - LOW_GROUP[0] + 1)
    if b_level < 1:
        pa[HIGH_GROUP[0] : HIGH_GROUP[1] + 1] = (1 - b_level) / (HIGH_GROUP[1] - HIGH_GROUP[0] + 1)
    return pa


def reference_dist(skew=None):
    """The data-generating law as a :class:`FactorizedSeqDist`.

    ``skew=None`` gives the uniform reference over ``[1, 99]^2``. Contexts
    off the grammar get a uniform conditional; they have probability zero.
    """
    skew = UNIFORM_SKEW if skew is None else skew
    pa = _a_probs(skew.b_level if isinstance(skew, SkewSpec) else SkewSpec(skew).b_level)
    pb = np.full(100, 1.0 / 99)
    pb[0] = 0.0
    uniform = np.full(VOCAB, 1.0 / VOCAB)

    def onehot(tok):
        row = np.zeros(VOCAB)
        row[tok] = 1.0
        return row

    def digit_pair(law, context):
        grid = law.reshape(10, 10)
        if not context:
            row = np.zeros(VOCAB)
            row[:10] = grid.sum(axis=1)
            return row
        hi = context[0]
        if hi > 9 or grid[hi].sum() == 0:
            return uniform
        row = np.zeros(VOCAB)
        row[:10] = grid[hi] / grid[hi].sum()
        return row

    def conditional(ctx):
        pos = len(ctx)
        if pos < 2:
            return digit_pair(pa, ctx)
        if pos == 2:
            return onehot(TIMES)
        if pos < 5:
            return digit_pair(pb, ctx[3:])
        if pos == 5:
            return onehot(EQUALS)
        if any(ctx[i] > 9 for i in (0, 1, 3, 4)):
            return uniform
        c = (ctx[0] * 10 + ctx[1]) * (ctx[3] * 10 + ctx[4]) % MODULUS
        return onehot(c // 10 if pos == 6 else c % 10)

    return FactorizedSeqDist(VOCAB, SEQ_LEN, conditional)


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    n_samples: int
    n_wellformed: int
    n_correct: int
    unique_pairs: frozenset = field(repr=False)
    temperature: float
    n_pairs: int = N_PAIRS
    seed: int = None
    decoding: str = "plain"

    @property
    def precision(self):
        return self.n_correct / self.n_samples

    @property
    def recall(self):
        return len(self.unique_pairs) / self.n_pairs


def report_from_tokens(tokens, t, n_pairs=N_PAIRS, seed=None, decoding="plain"):
    """Aggregate sampled sequences; only correct rows add to the unique pairs."""
    wellformed, correct, a, b = check_batch(tokens)
    pairs = frozenset(zip(a[correct].tolist(), b[correct].tolist()))
    return EvalReport(len(wellformed), int(wellformed.sum()), int(correct.sum()), pairs,
                      float(t), n_pairs, seed, decoding)


def eval_pr(params, cfg, n, t, decoding=PLAIN, rng=None, seed=None, n_pairs=N_PAIRS):
    """Sample ``n`` sequences at temperature ``t`` and score them."""
    if rng is None:
        rng = np.random.default_rng(seed)
    tokens = generate(params, cfg, None, t, decoding, rng, n=n)
    return report_from_tokens(tokens, t, n_pairs, seed, decoding.label())


def sweep_rngs(seed, count):
    """Independent generators for the points of a sweep."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def temperature_sweep(params, cfg, t_grid, n, decoding=PLAIN, seed=0, n_pairs=N_PAIRS):
    """One :class:`EvalReport` per temperature, each with its own stream."""
    rngs = sweep_rngs(seed, len(t_grid))
    return [eval_pr(params, cfg, n, t, decoding, rng=r, seed=seed, n_pairs=n_pairs)
            for t, r in zip(t_grid, rngs)]


# --------------------------------------------------------------------------
# sparsity probe
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SparsityReport:
    geo_mean: float
    k_max: np.ndarray = field(repr=False)
    histogram: np.ndarray = field(repr=False)
    p: float = 0.9


def model_conditionals(params, cfg, tokens, chunk=4096):
    """Softmax of the model at every position, ``(n, L, V)`` in float64."""
    tokens = np.asarray(tokens, dtype=np.int64)
    out = np.empty(tokens.shape + (cfg.vocab_size,))
    for lo in range(0, len(tokens), chunk):
        z = forward(params, cfg, tokens[lo : lo + chunk]).astype(np.float64)
        z -= z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        out[lo : lo + chunk] = e / e.sum(axis=-1, keepdims=True)
    return out


def _dist_conditionals(dist, tokens):
    n, L = tokens.shape
    out = np.empty((n, L, dist.vocab_size))
    for i in range(n):
        for pos in range(L):
            out[i, pos] = dist.cond(tokens[i, :pos])
    return out


def sparsity_probe(ref, dataset, p, cfg=None):
    """Geometric mean over samples of the largest per-position cover count.

    ``ref`` is a :class:`FactorizedSeqDist` or, together with ``cfg``, a
    trained parameter dict. The cover count at a position is the fewest
    top tokens of the conditional whose mass reaches ``p``.
    ``histogram[l, k]`` counts samples whose count at position ``l`` is ``k``.
    """
    if not 0 < p < 1:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    tokens = np.asarray(dataset, dtype=np.int64)
    if isinstance(ref, FactorizedSeqDist):
        probs = _dist_conditionals(ref, tokens)
    else:
        if cfg is None:
            raise DomainError("a parameter dict needs its ModelConfig")
        probs = model_conditionals(ref, cfg, tokens)
    k = kernels.cover_counts(probs, p)
    k_max = k.max(axis=1)
    V = probs.shape[-1]
    hist = np.stack([np.bincount(k[:, l], minlength=V + 1) for l in range(k.shape[1])])
    return SparsityReport(float(math.exp(np.log(k_max).mean())), k_max, hist, p)
