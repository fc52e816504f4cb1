"""A small decoder-only transformer with a hand-written backward pass.

Two block flavours share the code:

* ``llama``: pre-norm RMSNorm, rotary positions on queries and keys, and a
  SiLU-gated feed-forward;
* ``simple``: learned absolute positions and a ReLU feed-forward, kept as
  an easy-to-audit reference.

Inputs are prefixed with a beginning-of-sequence id ``V`` that only ever
appears on the input side, so ``logits[:, l]`` is the next-token
distribution after ``tokens[:, :l]``.

Parameters live in a flat ``dict`` of arrays keyed like ``"h0.wqkv"``.
"""
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import DomainError
from ..losses import weighted_nll, weighted_nll_grad
from . import ops

INIT_STD = 0.02
ROPE_BASE = 10000.0


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    seq_len: int
    n_layers: int = 4
    d_model: int = 32
    n_heads: int = 4
    d_ff: int = 128
    arch: str = "llama"
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "seq_len", "n_layers", "d_model", "n_heads", "d_ff"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise DomainError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.arch not in ("llama", "simple"):
            raise DomainError(f"arch must be 'llama' or 'simple', got {self.arch!r}")
        if self.arch == "llama" and self.head_dim % 2:
            raise DomainError("rotary positions need an even head dimension")
        if self.dtype not in ("float32", "float64"):
            raise DomainError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def head_dim(self):
        return self.d_model // self.n_heads

    @property
    def bos(self):
        return self.vocab_size

    def to_dict(self):
        return asdict(self)


def init_params(cfg, rng=None):
    """Normal(0, 0.02) matrices and unit norm gains."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    dt = np.dtype(cfg.dtype)
    d, f = cfg.d_model, cfg.d_ff

    def mat(*shape):
        return (rng.standard_normal(shape) * INIT_STD).astype(dt)

    params = {"tok_emb": mat(cfg.vocab_size + 1, d)}
    if cfg.arch == "simple":
        params["pos_emb"] = mat(cfg.seq_len, d)
    for i in range(cfg.n_layers):
        p = f"h{i}."
        params[p + "ln1"] = np.ones(d, dtype=dt)
        params[p + "wqkv"] = mat(d, 3 * d)
        params[p + "wo"] = mat(d, d)
        params[p + "ln2"] = np.ones(d, dtype=dt)
        # llama: gate and up projections side by side, (d, 2f)
        params[p + "w_in"] = mat(d, 2 * f if cfg.arch == "llama" else f)
        params[p + "w_down"] = mat(f, d)
    params["ln_f"] = np.ones(d, dtype=dt)
    params["w_out"] = mat(d, cfg.vocab_size)
    return params


def n_params(params):
    return int(sum(v.size for v in params.values()))


# --------------------------------------------------------------------------
# blocks on 2-D activations (batch * T, width)
# --------------------------------------------------------------------------

_ROPE_CACHE = {}


def rope_tables(T, hd, dtype):
    """``cos`` and ``sin`` of the rotary angles, shape ``(T, hd)``, halves repeated."""
    key = (T, hd, np.dtype(dtype).str)
    if key not in _ROPE_CACHE:
        freqs = ROPE_BASE ** (-np.arange(0, hd, 2) / hd)
        ang = np.arange(T)[:, None] * freqs[None, :]
        ang = np.concatenate([ang, ang], axis=1)
        _ROPE_CACHE[key] = (np.cos(ang).astype(dtype), np.sin(ang).astype(dtype))
    return _ROPE_CACHE[key]


def _ffn_fwd(x, p, prefix, cfg):
    z = x @ p[prefix + "w_in"]
    if cfg.arch == "llama":
        hid, sig = ops.swiglu_fwd(z)
    else:
        hid, sig = np.maximum(z, 0), None
    return hid @ p[prefix + "w_down"], (x, z, sig, hid)


def _ffn_bwd(dy, p, prefix, cache, cfg, grads):
    x, z, sig, hid = cache
    grads[prefix + "w_down"] = hid.T @ dy
    dhid = dy @ p[prefix + "w_down"].T
    if cfg.arch == "llama":
        dz = ops.swiglu_bwd(dhid, z, sig)
    else:
        dz = dhid * (z > 0)
    grads[prefix + "w_in"] = x.T @ dz
    return dz @ p[prefix + "w_in"].T


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------

def _inputs(cfg, tokens):
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.ndim != 2 or tokens.shape[1] < 1:
        raise DomainError(f"tokens must be (batch, T) with T >= 1, got shape {tokens.shape}")
    if tokens.shape[1] > cfg.seq_len:
        raise DomainError(f"sequence length {tokens.shape[1]} exceeds L={cfg.seq_len}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        raise DomainError(f"token id outside [0, {cfg.vocab_size})")
    bos = np.full((tokens.shape[0], 1), cfg.bos, dtype=np.int64)
    return np.concatenate([bos, tokens[:, :-1].astype(np.int64)], axis=1), tokens


def _trunk_fwd(params, cfg, inputs):
    B, T = inputs.shape
    H = cfg.n_heads
    use_rope = cfg.arch == "llama"
    dt = params["tok_emb"].dtype
    cos, sin = rope_tables(T, cfg.head_dim, dt)
    x = params["tok_emb"][inputs.reshape(-1)]
    if cfg.arch == "simple":
        x = (x.reshape(B, T, -1) + params["pos_emb"][:T]).reshape(B * T, -1)
    caches = []
    for i in range(cfg.n_layers):
        p = f"h{i}."
        xn, xhat1, inv1 = ops.rms_fwd(x, params[p + "ln1"])
        o, ca = ops.attn_fwd(xn @ params[p + "wqkv"], B, T, H, cos, sin, use_rope)
        x = x + o @ params[p + "wo"]
        xn2, xhat2, inv2 = ops.rms_fwd(x, params[p + "ln2"])
        ff, cf = _ffn_fwd(xn2, params, p, cfg)
        x = x + ff
        caches.append(((xhat1, inv1), xn, o, ca, (xhat2, inv2), cf))
    xf, xhatf, invf = ops.rms_fwd(x, params["ln_f"])
    logits = xf @ params["w_out"]
    return logits.reshape(B, T, -1), (inputs, caches, xf, (xhatf, invf))


def _trunk_bwd(params, cfg, cache, dlogits):
    inputs, caches, xf, cn = cache
    B, T = inputs.shape
    H = cfg.n_heads
    use_rope = cfg.arch == "llama"
    cos, sin = rope_tables(T, cfg.head_dim, xf.dtype)
    dlogits = dlogits.reshape(B * T, -1)
    grads = {"w_out": xf.T @ dlogits}
    dx, grads["ln_f"] = ops.rms_bwd(dlogits @ params["w_out"].T, params["ln_f"], *cn)
    for i in reversed(range(cfg.n_layers)):
        p = f"h{i}."
        c1, xn, o, ca, c2, cf = caches[i]
        dxn2 = _ffn_bwd(dx, params, p, cf, cfg, grads)
        dres, grads[p + "ln2"] = ops.rms_bwd(dxn2, params[p + "ln2"], *c2)
        dx = dx + dres
        grads[p + "wo"] = o.T @ dx
        dqkv = ops.attn_bwd(dx @ params[p + "wo"].T, ca, B, T, H, cos, sin, use_rope)
        grads[p + "wqkv"] = xn.T @ dqkv
        dres, grads[p + "ln1"] = ops.rms_bwd(dqkv @ params[p + "wqkv"].T, params[p + "ln1"], *c1)
        dx = dx + dres
    if cfg.arch == "simple":
        dpos = np.zeros_like(params["pos_emb"])
        dpos[:T] = dx.reshape(B, T, -1).sum(axis=0)
        grads["pos_emb"] = dpos
    onehot = np.zeros((B * T, cfg.vocab_size + 1), dtype=dx.dtype)
    onehot[np.arange(B * T), inputs.reshape(-1)] = 1
    grads["tok_emb"] = onehot.T @ dx
    return {name: grads[name] for name in params}


def forward(params, cfg, tokens):
    """Next-token logits, shape ``(batch, T, V)``; position ``l`` sees ``tokens[:, :l]``."""
    inputs, _ = _inputs(cfg, tokens)
    return _trunk_fwd(params, cfg, inputs)[0]


def next_logits(params, cfg, prefix):
    """Logits for the token after ``prefix`` (shape ``(batch, m)``, ``m`` may be 0)."""
    prefix = np.asarray(prefix, dtype=np.int64)
    B = prefix.shape[0]
    if prefix.shape[1] >= cfg.seq_len:
        raise DomainError(f"prefix length {prefix.shape[1]} leaves nothing to predict")
    inputs = np.concatenate([np.full((B, 1), cfg.bos, dtype=np.int64), prefix], axis=1)
    return _trunk_fwd(params, cfg, inputs)[0][:, -1]


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def token_logprobs(params, cfg, tokens, keep_cache=False):
    """``log Q(x_l | x_<l)`` for each position of ``tokens``, shape ``(batch, T)``.

    With ``keep_cache`` also returns the state :func:`backward` needs.
    """
    inputs, tokens = _inputs(cfg, tokens)
    logits, trunk = _trunk_fwd(params, cfg, inputs)
    logp = log_softmax(logits)
    lp = np.take_along_axis(logp, tokens[..., None].astype(np.int64), axis=-1)[..., 0]
    if keep_cache:
        return lp, (trunk, logp, tokens)
    return lp


def backward(params, cfg, cache, dlp):
    """Parameter gradients given ``d loss / d token_logprobs``."""
    trunk, logp, tokens = cache
    dlp = np.asarray(dlp, dtype=logp.dtype)
    # d lp / d logits = onehot - softmax
    dlogits = -np.exp(logp) * dlp[..., None]
    np.put_along_axis(
        dlogits,
        tokens[..., None].astype(np.int64),
        np.take_along_axis(dlogits, tokens[..., None].astype(np.int64), axis=-1) + dlp[..., None],
        axis=-1,
    )
    return _trunk_bwd(params, cfg, trunk, dlogits)


def loss_and_grads(params, cfg, tokens, weights):
    """Weighted NLL ``-mean_b sum_l w * log Q`` and its exact gradient."""
    lp, cache = token_logprobs(params, cfg, tokens, keep_cache=True)
    w = np.asarray(weights)
    if w.shape != lp.shape:
        raise DomainError(f"weights shape {w.shape} does not match tokens {lp.shape}")
    loss = weighted_nll(lp, w)
    return loss, backward(params, cfg, cache, weighted_nll_grad(lp, w))
