"""Single co-attention module and its stacking / iterating cascades.

Every variant uses the same parameter layout: a list of
:class:`CoAttentionLayer`, each holding four attention blocks. The iterating
variant runs the text blocks of all layers first (the text tower) and then
the audio blocks of all layers, each guided by the final text features.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from coattn import numerics as nx
from coattn.attention import AttentionBlock, guided_attention_block, self_attention_block
from coattn.errors import ConfigurationError, DimensionError
from coattn.numerics import Parameter, Tensor

VARIANTS = ("single", "stacking", "iterating")
MAX_DEPTH = 8


@dataclass(frozen=True)
class CascadeConfig:
    variant: str = "iterating"
    depth: int = 5
    dim: int = 16
    heads: int = 4
    residual: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown cascade variant {self.variant!r}; choose from {VARIANTS}")
        if not 1 <= self.depth <= MAX_DEPTH:
            raise ConfigurationError(f"depth must be in [1, {MAX_DEPTH}], got {self.depth}")
        if self.variant == "single" and self.depth != 1:
            raise ConfigurationError(f"the single variant has depth 1, got {self.depth}")
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads:
            raise ConfigurationError(f"heads={self.heads} must divide dim={self.dim}")


@dataclass
class CoAttentionLayer:
    sa_audio: AttentionBlock
    sa_text: AttentionBlock
    ga_text: AttentionBlock   # audio-pooled queries over text keys/values
    ga_audio: AttentionBlock  # text queries over audio keys/values

    def parameters(self) -> list[Parameter]:
        return (self.sa_audio.parameters() + self.sa_text.parameters()
                + self.ga_text.parameters() + self.ga_audio.parameters())

    @classmethod
    def init(cls, dim, heads, rng, prefix, residual=True) -> "CoAttentionLayer":
        return cls(*(AttentionBlock.init(dim, heads, rng, f"{prefix}.{part}", residual)
                     for part in ("sa_audio", "sa_text", "ga_text", "ga_audio")))


@dataclass
class CascadeParams:
    layers: list[CoAttentionLayer]

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    @classmethod
    def init(cls, config: CascadeConfig, rng: np.random.Generator, prefix: str = "cascade") -> "CascadeParams":
        return cls([CoAttentionLayer.init(config.dim, config.heads, rng, f"{prefix}.layer{k}", config.residual)
                    for k in range(config.depth)])


@dataclass
class AttendedFeatures:
    audio: Tensor  # N x d
    text: Tensor   # 1 x d


@dataclass
class CascadeState:
    """Per-layer features; index 0 holds the inputs."""

    audio: list[Tensor] = field(default_factory=list)
    text: list[Tensor] = field(default_factory=list)


def _inputs(a, t, dim=None) -> tuple[Tensor, Tensor]:
    a = a if isinstance(a, Tensor) else Tensor(a)
    t = t if isinstance(t, Tensor) else Tensor(t)
    if t.rows != 1:
        raise DimensionError(f"text input must be a single row, got {t.shape}")
    if a.rows < 1 or a.cols != t.cols:
        raise DimensionError(f"audio {a.shape} and text {t.shape} must share the feature dimension")
    if dim is not None and a.cols != dim:
        raise DimensionError(f"inputs have dimension {a.cols}, cascade expects {dim}")
    return a, t


def text_layer(t: Tensor, layer: CoAttentionLayer, audio_guide: Tensor | None = None) -> Tensor:
    t1 = self_attention_block(t, layer.sa_text)
    # A single text row means one key: the weights are exactly 1 whatever the guide.
    return guided_attention_block(t1, t1 if audio_guide is None else audio_guide, layer.ga_text)


def audio_layer(a: Tensor, text_guide: Tensor, layer: CoAttentionLayer) -> Tensor:
    return guided_attention_block(self_attention_block(a, layer.sa_audio), text_guide, layer.ga_audio)


def single_module(a, t, layer: CoAttentionLayer) -> AttendedFeatures:
    a, t = _inputs(a, t, layer.sa_audio.dim)
    a1 = self_attention_block(a, layer.sa_audio)
    t1 = self_attention_block(t, layer.sa_text)
    t_out = guided_attention_block(t1, nx.mean_rows(a1), layer.ga_text)
    a_out = guided_attention_block(a1, t_out, layer.ga_audio)
    return AttendedFeatures(a_out, t_out)


def _check(config: CascadeConfig, params: CascadeParams, variant: str) -> None:
    if config.variant != variant:
        raise ConfigurationError(f"config variant is {config.variant!r}, expected {variant!r}")
    if config.depth < 1:
        raise ConfigurationError(f"depth must be >= 1, got {config.depth}")
    if len(params.layers) < config.depth:
        raise ConfigurationError(f"depth {config.depth} needs {config.depth} layers, have {len(params.layers)}")


def stacking_forward(a, t, config: CascadeConfig, params: CascadeParams,
                     state: CascadeState | None = None) -> AttendedFeatures:
    _check(config, params, "stacking")
    a, t = _inputs(a, t, config.dim)
    if state is not None:
        state.audio.append(a)
        state.text.append(t)
    for layer in params.layers[:config.depth]:
        out = single_module(a, t, layer)
        a, t = out.audio, out.text
        if state is not None:
            state.audio.append(a)
            state.text.append(t)
    return AttendedFeatures(a, t)


def text_tower(t, config: CascadeConfig, params: CascadeParams, state: CascadeState | None = None) -> Tensor:
    """T_n of the iterating cascade; depends on the text and text-side blocks only."""
    t = t if isinstance(t, Tensor) else Tensor(t)
    for layer in params.layers[:config.depth]:
        t = text_layer(t, layer)
        if state is not None:
            state.text.append(t)
    return t


def iterating_forward(a, t, config: CascadeConfig, params: CascadeParams,
                      state: CascadeState | None = None, text_final: Tensor | None = None) -> AttendedFeatures:
    """Text tower first, then every audio layer guided by the final text features.

    ``text_final`` may carry a precomputed :func:`text_tower` result.
    """
    _check(config, params, "iterating")
    a, t = _inputs(a, t, config.dim)
    if state is not None:
        state.audio.append(a)
        state.text.append(t)
    t_n = text_tower(t, config, params, state) if text_final is None else text_final
    for layer in params.layers[:config.depth]:
        a = audio_layer(a, t_n, layer)
        if state is not None:
            state.audio.append(a)
    return AttendedFeatures(a, t_n)


def cascade_forward(a, t, config: CascadeConfig, params: CascadeParams,
                    state: CascadeState | None = None) -> AttendedFeatures:
    if config.variant == "single":
        _check(config, params, "single")
        out = single_module(a, t, params.layers[0])
        if state is not None:
            a0, t0 = _inputs(a, t)
            state.audio += [a0, out.audio]
            state.text += [t0, out.text]
        return out
    if config.variant == "stacking":
        return stacking_forward(a, t, config, params, state)
    return iterating_forward(a, t, config, params, state)
