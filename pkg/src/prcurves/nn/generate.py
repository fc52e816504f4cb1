"""Autoregressive sampling from a trained model."""
from dataclasses import dataclass

import numpy as np

from ..dist import sample_rows, temper_probs, top_p_probs
from ..errors import DomainError
from .model import next_logits

DEFAULT_CHUNK = 4096


@dataclass(frozen=True)
class Decoding:
    """``plain`` sampling, or ``top_p`` truncation with mass ``p`` before tempering."""

    kind: str = "plain"
    p: float = 1.0

    def __post_init__(self):
        if self.kind not in ("plain", "top_p"):
            raise DomainError(f"decoding must be 'plain' or 'top_p', got {self.kind!r}")
        if not 0 < self.p <= 1:
            raise DomainError(f"top-p mass must lie in (0, 1], got {self.p}")

    def label(self):
        return "plain" if self.kind == "plain" else f"top_p={self.p:g}"


PLAIN = Decoding()


def next_token_probs(logits, t, decoding=PLAIN):
    """Sampling distribution for one step: softmax, optional top-p, then temperature."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=-1, keepdims=True)
    if decoding.kind == "top_p":
        probs = top_p_probs(probs, decoding.p)
    return temper_probs(probs, t)


def generate(params, cfg, prompt, t, decoding=PLAIN, rng=None, n=None, chunk=DEFAULT_CHUNK):
    """Complete ``prompt`` to length ``L``.

    ``prompt`` is ``(batch, m)`` with ``m < L``; pass ``n`` together with an
    empty prompt to draw ``n`` sequences from scratch. ``t == 0`` decodes
    greedily, lowest id first among ties. All uniforms are drawn up front,
    so the output does not depend on ``chunk``.
    """
    if t < 0:
        raise DomainError(f"temperature must be non-negative, got {t}")
    if prompt is None:
        if n is None:
            raise DomainError("pass a prompt or a sample count")
        prompt = np.zeros((n, 0), dtype=np.int64)
    prompt = np.asarray(prompt, dtype=np.int64)
    if prompt.ndim == 1:
        prompt = prompt[None, :]
    B, m = prompt.shape
    if m >= cfg.seq_len:
        raise DomainError(f"prompt length {m} leaves nothing to generate (L={cfg.seq_len})")
    rng = np.random.default_rng() if rng is None else rng
    u = rng.random((B, cfg.seq_len - m)) if t > 0 else None
    out = np.empty((B, cfg.seq_len), dtype=np.int64)
    out[:, :m] = prompt
    for lo in range(0, B, chunk):
        rows = slice(lo, min(lo + chunk, B))
        for pos in range(m, cfg.seq_len):
            logits = next_logits(params, cfg, out[rows, :pos])
            if t == 0:
                out[rows, pos] = np.argmax(logits, axis=-1)
            else:
                probs = next_token_probs(logits, t, decoding)
                out[rows, pos] = sample_rows(probs, None, u=u[rows, pos - m])
    return out
