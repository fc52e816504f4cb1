"""Experiment configuration: strict JSON with unknown keys rejected."""
import json
import os
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError, DomainError
from .losses import LossSpec
from .multask import N_PAIRS, SEQ_LEN, VOCAB, SkewSpec
from .nn.generate import Decoding
from .nn.model import ModelConfig
from .nn.train import TrainConfig

OUT_DIR_ENV = "PRCURVES_OUT_DIR"
DEFAULT_OUT_DIR = "runs"
DEFAULT_T_GRID = (0.2, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0)


def default_out_dir():
    return os.environ.get(OUT_DIR_ENV, DEFAULT_OUT_DIR)


@dataclass(frozen=True)
class TaskSection:
    b_level: float = 0.1
    dataset_size: int = 25000
    seed: int = 0
    n_pairs: int = N_PAIRS


@dataclass(frozen=True)
class ModelSection:
    n_layers: int = 4
    d_model: int = 32
    n_heads: int = 4
    d_ff: int = 128
    arch: str = "llama"
    dtype: str = "float32"
    seed: int = 0


@dataclass(frozen=True)
class LossSection:
    method: str = "NLL"
    delta_frac: float = 0.25
    alpha: float = 1.0
    gamma: float = 1e-5
    lam: float = 1.0
    buffer_size: int = 2048


@dataclass(frozen=True)
class TrainSection:
    learning_rate: float = 1e-3
    weight_decay: float = 1.0
    epochs: int = 500
    batch_size: int = 512
    seed: int = 0
    warmup_epochs: int = 0
    loss: LossSection = field(default_factory=LossSection)


@dataclass(frozen=True)
class EvalSection:
    t_grid: tuple = DEFAULT_T_GRID
    n: int = 20000
    decoding: str = "plain"
    top_p: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class OutputSection:
    dir: str = None
    run_id: str = None
    csv: str = "sweep.csv"


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskSection = field(default_factory=TaskSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output: OutputSection = field(default_factory=OutputSection)

    # -- views onto the library types --------------------------------------

    def skew(self):
        return SkewSpec(self.task.b_level)

    def model_config(self):
        m = self.model
        return ModelConfig(VOCAB, SEQ_LEN, m.n_layers, m.d_model, m.n_heads, m.d_ff, m.arch, m.dtype, m.seed)

    def loss_spec(self):
        return LossSpec(**_as_dict(self.train.loss))

    def train_config(self):
        t = self.train
        return TrainConfig(t.learning_rate, t.weight_decay, t.epochs, t.batch_size,
                           self.task.dataset_size, self.loss_spec(), t.seed, t.warmup_epochs)

    def decoding(self):
        e = self.eval
        return Decoding(e.decoding, e.top_p)

    def out_dir(self):
        return self.output.dir or default_out_dir()

    def run_id(self):
        if self.output.run_id:
            return self.output.run_id
        spec = self.loss_spec()
        tag = spec.params_str().replace("=", "").replace(";", "-")
        return "-".join(x for x in (spec.method.value, tag, f"s{self.train.seed}") if x)

    def with_seed(self, seed):
        """Same experiment with every seed set to ``seed``."""
        return replace(
            self,
            task=replace(self.task, seed=seed),
            model=replace(self.model, seed=seed),
            train=replace(self.train, seed=seed),
            eval=replace(self.eval, seed=seed),
        )

    def to_dict(self):
        return _as_dict(self)


def _as_dict(obj):
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        if hasattr(v, "__dataclass_fields__"):
            v = _as_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def _expect(value, kind, where):
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{where}: expected an integer, got {value!r}", field=where)
    if not isinstance(value, kind):
        raise ConfigError(f"{where}: expected {kind.__name__}, got {type(value).__name__}", field=where)
    return value


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object", field=path)
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(f"unknown key {where!r}", field=where)
    kwargs = {}
    for name, value in data.items():
        where = f"{path}.{name}" if path else name
        kind = known[name].type
        if hasattr(kind, "__dataclass_fields__"):
            kwargs[name] = _build(kind, value, where)
        elif kind is tuple:
            if not isinstance(value, list) or not value:
                raise ConfigError(f"{where}: expected a non-empty list", field=where)
            kwargs[name] = tuple(_expect(v, float, f"{where}[{i}]") for i, v in enumerate(value))
        elif value is None and known[name].default is None:
            kwargs[name] = None
        else:
            kwargs[name] = _expect(value, kind, where)
    return cls(**kwargs)


def from_dict(data):
    cfg = _build(ExperimentConfig, data, "")
    validate(cfg)
    return cfg


def validate(cfg):
    """Build every library object once so bad values fail here with a field name."""
    checks = [
        ("task", cfg.skew),
        ("model", cfg.model_config),
        ("train.loss", cfg.loss_spec),
        ("train", cfg.train_config),
        ("eval", cfg.decoding),
    ]
    for where, build in checks:
        try:
            build()
        except DomainError as exc:
            raise ConfigError(f"{where}: {exc}", field=where) from exc
    if cfg.eval.n < 1:
        raise ConfigError("eval.n: must be positive", field="eval.n")
    if any(t < 0 for t in cfg.eval.t_grid):
        raise ConfigError("eval.t_grid: temperatures must be non-negative", field="eval.t_grid")
    if cfg.task.n_pairs < 1:
        raise ConfigError("task.n_pairs: must be positive", field="task.n_pairs")


def load(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)


def dump(cfg, path):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
