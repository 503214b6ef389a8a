"""Joint-space projection, cosine similarities and the bidirectional NT-Xent loss."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from coattn import numerics as nx
from coattn.attention import uniform_init
from coattn.cascade import AttendedFeatures
from coattn.errors import ConfigurationError, ContractError, DegenerateInputError, DimensionError
from coattn.numerics import Parameter, Tensor

DENOMINATOR_MODES = ("literal_exclude_positive", "include_positive")


@dataclass
class JointProjection:
    l_a: Parameter
    l_t: Parameter

    @property
    def joint_dim(self) -> int:
        return self.l_a.cols

    def parameters(self) -> list[Parameter]:
        return [self.l_a, self.l_t]

    @classmethod
    def init(cls, dim: int, joint_dim: int, rng: np.random.Generator, prefix: str = "joint") -> "JointProjection":
        return cls(Parameter(uniform_init(rng, dim, joint_dim, dim), f"{prefix}.l_a"),
                   Parameter(uniform_init(rng, dim, joint_dim, dim), f"{prefix}.l_t"))


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.07
    lam: float = 0.5
    denominator_mode: str = "literal_exclude_positive"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigurationError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.denominator_mode not in DENOMINATOR_MODES:
            raise ConfigurationError(
                f"unknown denominator mode {self.denominator_mode!r}; choose from {DENOMINATOR_MODES}")

    @property
    def include_positive(self) -> bool:
        return self.denominator_mode == "include_positive"


def project_joint(features: AttendedFeatures, p: JointProjection) -> tuple[Tensor, Tensor]:
    """Mean-pool the audio frames, then apply the per-modality linear maps."""
    if features.audio.cols != p.l_a.rows or features.text.cols != p.l_t.rows:
        raise DimensionError(
            f"features of width {features.audio.cols}/{features.text.cols} do not match "
            f"projection input {p.l_a.rows}")
    pooled = nx.mean_rows(features.audio)
    return nx.matmul(pooled, p.l_a), nx.matmul(features.text, p.l_t)


def cosine_similarity(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    nx_, ny_ = math.sqrt(float(x @ x)), math.sqrt(float(y @ y))
    if nx_ == 0.0 or ny_ == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector is undefined")
    return float(x @ y) / (nx_ * ny_)


def batch_similarity(audio, text) -> Tensor:
    """B x B matrix with entry (i, j) = cos(audio_i, text_j).

    ``audio`` and ``text`` are each either a B x d tensor/array or a sequence
    of B single-row vectors.
    """
    a = _stack(audio)
    t = _stack(text)
    if a.rows != t.rows:
        raise ContractError(f"batch_similarity needs aligned batches, got {a.rows} audio and {t.rows} text")
    if a.cols != t.cols:
        raise DimensionError(f"joint dimensions differ: {a.cols} vs {t.cols}")
    return nx.matmul(nx.l2_normalize_rows(a), nx.transpose(nx.l2_normalize_rows(t)))


def _stack(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (list, tuple)) and x and isinstance(x[0], Tensor):
        return x[0] if len(x) == 1 else nx.concat_rows(x)
    return Tensor(np.asarray(x, dtype=np.float64).reshape(len(x), -1))


def _nt_xent(sim: Tensor, cfg: LossConfig) -> Tensor:
    if sim.rows != sim.cols:
        raise ContractError(f"similarity matrix must be square, got {sim.shape}")
    if not cfg.include_positive and sim.rows < 2:
        raise ContractError("literal NT-Xent needs a batch of at least 2 (no negatives otherwise)")
    return nx.nt_xent(sim, cfg.temperature, cfg.include_positive)


def nt_xent_a2t(sim, cfg: LossConfig) -> Tensor:
    """Audio-to-text loss: row i contrasts s(A_i, T_i) against s(A_i, T_j)."""
    sim = sim if isinstance(sim, Tensor) else Tensor(sim)
    return _nt_xent(sim, cfg)


def nt_xent_t2a(sim, cfg: LossConfig) -> Tensor:
    sim = sim if isinstance(sim, Tensor) else Tensor(sim)
    return _nt_xent(nx.transpose(sim), cfg)


def combined_loss(sim, cfg: LossConfig) -> Tensor:
    sim = sim if isinstance(sim, Tensor) else Tensor(sim)
    return nx.add(nx.scale(nt_xent_a2t(sim, cfg), cfg.lam),
                  nx.scale(nt_xent_t2a(sim, cfg), 1.0 - cfg.lam))


def joint_batch_loss(pairs: Sequence[tuple[Tensor, Tensor]], cfg: LossConfig) -> Tensor:
    """Loss of aligned (audio, text) joint-vector pairs."""
    return combined_loss(batch_similarity([p[0] for p in pairs], [p[1] for p in pairs]), cfg)
