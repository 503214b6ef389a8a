"""Deterministic mini-batch contrastive training."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from coattn.cascade import CascadeConfig
from coattn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from coattn.data_io import EmbeddingBundle
from coattn.errors import ConfigurationError, TrainingAborted, ValidationError
from coattn.model import CoAttentionModel
from coattn.numerics import Parameter, Tape
from coattn.objective import LossConfig, joint_batch_loss

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam")

__all__ = [
    "Adam", "Checkpoint", "SGD", "TrainConfig", "load_checkpoint", "model_from_checkpoint",
    "save_checkpoint", "step", "train",
]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 50
    learning_rate: float = 1e-3
    seed: int = 0
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: str = "adam"
    joint_dim: int | None = None

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigurationError(f"batch_size must be >= 2, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}; choose from {OPTIMIZERS}")
        if self.joint_dim is not None and self.joint_dim < 1:
            raise ConfigurationError(f"joint_dim must be positive, got {self.joint_dim}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["cascade"] = CascadeConfig(**d.get("cascade", {}))
        d["loss"] = LossConfig(**d.get("loss", {}))
        return cls(**d)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr
        self.t = 0

    def update(self, params: Sequence[Parameter]) -> None:
        self.t += 1
        for p in params:
            p.value = p.value - self.lr * p.grad

    def state(self) -> dict[str, np.ndarray]:
        return {}

    def load_state(self, t: int, state: dict[str, np.ndarray]) -> None:
        self.t = t


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def update(self, params: Sequence[Parameter]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in params:
            m = self.m.get(p.name)
            if m is None:
                m = np.zeros_like(p.value)
                v = np.zeros_like(p.value)
            else:
                v = self.v[p.name]
            m = self.beta1 * m + (1.0 - self.beta1) * p.grad
            v = self.beta2 * v + (1.0 - self.beta2) * (p.grad * p.grad)
            self.m[p.name], self.v[p.name] = m, v
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": v for k, v in self.m.items()}
        out.update({f"v/{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, t: int, state: dict[str, np.ndarray]) -> None:
        self.t = t
        self.m = {k[2:]: v.copy() for k, v in state.items() if k.startswith("m/")}
        self.v = {k[2:]: v.copy() for k, v in state.items() if k.startswith("v/")}


def make_optimizer(cfg: TrainConfig):
    return Adam(cfg.learning_rate) if cfg.optimizer == "adam" else SGD(cfg.learning_rate)


def batch_loss(batch: Sequence[tuple[np.ndarray, np.ndarray]], model: CoAttentionModel, loss_cfg: LossConfig):
    """Taped-or-not contrastive loss of aligned (audio frames, text vector) pairs."""
    return joint_batch_loss([model.encode_pair(a, t) for a, t in batch], loss_cfg)


def step(batch, model: CoAttentionModel, cfg: TrainConfig, optimizer, step_index: int = 0) -> float:
    """One forward/backward/update cycle; returns the loss before the update."""
    if len(batch) < 2:
        raise ConfigurationError(f"a training batch needs at least 2 pairs, got {len(batch)}")
    model.zero_grad()
    with Tape() as tape:
        loss = batch_loss(batch, model, cfg.loss)
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingAborted(step_index, value)
    tape.backward(loss)
    params = model.parameters()
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise TrainingAborted(step_index, value)
    optimizer.update(params)
    return value


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Pair visiting order for one epoch; a function of (seed, epoch) only."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def model_from_checkpoint(cp: Checkpoint) -> CoAttentionModel:
    cfg = TrainConfig.from_dict(cp.config)
    model = CoAttentionModel.init(cfg.cascade, cfg.joint_dim, cfg.seed)
    named = model.named_parameters()
    if set(named) != set(cp.params):
        missing = sorted(set(named) ^ set(cp.params))[:3]
        raise ValidationError(f"checkpoint parameters do not match the configured model (e.g. {missing})")
    for name, p in named.items():
        if cp.params[name].shape != p.value.shape:
            raise ValidationError(f"parameter {name} has shape {cp.params[name].shape}, expected {p.value.shape}")
        p.value = cp.params[name].copy()
    return model


def train(bundle: EmbeddingBundle, cfg: TrainConfig, resume: Checkpoint | None = None,
          on_epoch: Callable[[int, float], None] | None = None) -> Checkpoint:
    """Train for ``cfg.epochs`` epochs (continuing from ``resume`` if given).

    Each epoch visits a fresh permutation of the pairs in batches of
    ``cfg.batch_size``; the incomplete final batch is dropped.
    """
    pairs = list(bundle.pairs)
    if len(pairs) < cfg.batch_size:
        raise ConfigurationError(f"{len(pairs)} pairs cannot fill a batch of {cfg.batch_size}")
    if bundle.dim != cfg.cascade.dim:
        raise ConfigurationError(f"bundle dimension {bundle.dim} differs from model dimension {cfg.cascade.dim}")
    optimizer = make_optimizer(cfg)
    if resume is None:
        model = CoAttentionModel.init(cfg.cascade, cfg.joint_dim, cfg.seed)
        history: list[float] = []
        start = 0
    else:
        if TrainConfig.from_dict(resume.config).cascade != cfg.cascade:
            raise ConfigurationError("cannot resume: cascade configuration differs from the checkpoint")
        model = model_from_checkpoint(resume)
        optimizer.load_state(resume.optimizer_step, resume.optimizer_state)
        history = list(resume.loss_history)
        start = resume.epoch
    items = [(bundle.audio[aid], bundle.text[tid]) for tid, aid in pairs]
    steps_per_epoch = len(items) // cfg.batch_size
    for epoch in range(start, cfg.epochs):
        order = epoch_order(cfg.seed, epoch, len(items))
        total = 0.0
        for s in range(steps_per_epoch):
            idx = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            total += step([items[i] for i in idx], model, cfg, optimizer, epoch * steps_per_epoch + s)
        mean = total / steps_per_epoch
        history.append(mean)
        log.debug("epoch=%d loss=%r", epoch + 1, mean)
        if on_epoch is not None:
            on_epoch(epoch + 1, mean)
    return Checkpoint(
        params={name: p.value.copy() for name, p in model.named_parameters().items()},
        config=cfg.to_dict(),
        epoch=max(cfg.epochs, start),
        loss_history=history,
        optimizer_step=optimizer.t,
        optimizer_state=optimizer.state(),
    )
