"""Tiny decoder-only transformer, optimizer, training loop and sampler."""
from .checkpoint import Checkpoint, load, save
from .generate import PLAIN, Decoding, generate, next_token_probs
from .model import ModelConfig, forward, init_params, loss_and_grads, n_params, next_logits, token_logprobs
from .optim import AdamState, adam_step
from .train import EpochLog, TrainConfig, TrainResult, train

__all__ = [
    "AdamState", "Checkpoint", "Decoding", "EpochLog", "ModelConfig", "PLAIN", "TrainConfig",
    "TrainResult", "adam_step", "forward", "generate", "init_params", "load", "loss_and_grads",
    "n_params", "next_logits", "next_token_probs", "save", "token_logprobs", "train",
]
