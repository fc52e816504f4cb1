"""The reweighted-NLL training loop."""
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .._accel import tune_allocator
from ..errors import DivergenceError, DomainError, TrainingError
from ..losses import LossSpec, QuantileBuffer, compute_weights, weighted_nll, weighted_nll_grad
from .model import backward, init_params, token_logprobs
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_EPOCHS = 3


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1.0
    epochs: int = 500
    batch_size: int = 512
    dataset_size: int = 25000
    loss: LossSpec = field(default_factory=LossSpec)
    seed: int = 0
    # epochs of plain NLL before switching to ``loss``
    warmup_epochs: int = 0

    def __post_init__(self):
        if not isinstance(self.loss, LossSpec):
            object.__setattr__(self, "loss", LossSpec(**self.loss))
        if not (self.learning_rate > 0 and self.batch_size > 0 and self.dataset_size > 0):
            raise DomainError("learning_rate, batch_size and dataset_size must be positive")
        if self.weight_decay < 0 or self.epochs < 0 or self.warmup_epochs < 0:
            raise DomainError("weight_decay, epochs and warmup_epochs must be non-negative")

    def to_dict(self):
        d = asdict(self)
        d["loss"]["method"] = self.loss.method.value
        return d


@dataclass
class EpochLog:
    epoch: int
    loss: float
    mean_weight: float
    kept_fraction: float
    seconds: float


@dataclass
class TrainResult:
    params: dict
    state: AdamState
    log: list
    buffer: QuantileBuffer = None


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def train(model_cfg, train_cfg, dataset, params=None, state=None, on_epoch=None):
    """Run the full loop and return a :class:`TrainResult`.

    ``dataset`` is an int array ``(N, L)``. Each epoch visits a fresh
    permutation in batches of ``batch_size`` (the last one may be short);
    each step recomputes the detached weights from the same forward pass
    that feeds the gradient. The first ``warmup_epochs`` epochs use plain
    NLL whatever the configured loss.
    """
    data = np.asarray(dataset, dtype=np.int64)
    if data.ndim != 2 or data.shape[1] != model_cfg.seq_len:
        raise DomainError(f"dataset must be (N, {model_cfg.seq_len}), got shape {data.shape}")
    tune_allocator()
    # copies, so the caller's params and optimizer state survive the in-place updates
    params = init_params(model_cfg) if params is None else {k: v.copy() for k, v in params.items()}
    if state is None:
        state = AdamState.zeros_like(params)
    else:
        state = replace(state, m={k: v.copy() for k, v in state.m.items()},
                        v={k: v.copy() for k, v in state.v.items()})
    rng = np.random.default_rng(train_cfg.seed)
    buffer = QuantileBuffer(train_cfg.loss.buffer_size)
    warmup_spec = LossSpec()
    lr, wd = train_cfg.learning_rate, train_cfg.weight_decay
    history = []
    first_loss = None
    n_high = 0

    for epoch in range(train_cfg.epochs):
        t0 = time.perf_counter()
        losses, weights, kept = [], [], []
        spec = warmup_spec if epoch < train_cfg.warmup_epochs else train_cfg.loss
        for bi, idx in enumerate(_batches(len(data), train_cfg.batch_size, rng)):
            lp, cache = token_logprobs(params, model_cfg, data[idx], keep_cache=True)
            w, info = compute_weights(spec, lp, buffer)
            w = w.astype(lp.dtype)
            loss = weighted_nll(lp, w)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} in epoch {epoch}, batch {bi}", batch_index=bi, epoch=epoch)
            grads = backward(params, model_cfg, cache, weighted_nll_grad(lp, w))
            adam_step(params, grads, state, lr, wd)
            if first_loss is None:
                first_loss = loss
            losses.append(loss)
            weights.append(info.mean_weight)
            kept.append(info.kept_fraction)
        entry = EpochLog(epoch, float(np.mean(losses)), float(np.mean(weights)),
                         float(np.mean(kept)), time.perf_counter() - t0)
        history.append(entry)
        log.info("epoch %d loss %.4f weight %.3f kept %.3f", epoch, entry.loss, entry.mean_weight, entry.kept_fraction)
        if on_epoch is not None:
            on_epoch(entry)
        n_high = n_high + 1 if entry.loss > DIVERGENCE_FACTOR * abs(first_loss) else 0
        if n_high >= DIVERGENCE_EPOCHS:
            raise DivergenceError(
                f"loss {entry.loss:.4g} above {DIVERGENCE_FACTOR:g}x the initial {first_loss:.4g} "
                f"for {DIVERGENCE_EPOCHS} epochs",
                epoch=epoch,
            )
    return TrainResult(params, state, history, buffer)
