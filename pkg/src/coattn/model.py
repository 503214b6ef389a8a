"""Cascade plus joint projection: the full trainable retrieval model."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from coattn.cascade import CascadeConfig, CascadeParams, cascade_forward, iterating_forward, text_tower
from coattn.errors import DimensionError
from coattn.numerics import Parameter, Tensor
from coattn.objective import JointProjection, cosine_similarity, project_joint


@dataclass
class CoAttentionModel:
    config: CascadeConfig
    cascade: CascadeParams
    joint: JointProjection

    @classmethod
    def init(cls, config: CascadeConfig, joint_dim: int | None = None, seed: int = 0) -> "CoAttentionModel":
        rng = np.random.default_rng(seed)
        cascade = CascadeParams.init(config, rng)
        joint = JointProjection.init(config.dim, joint_dim or config.dim, rng)
        return cls(config, cascade, joint)

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def joint_dim(self) -> int:
        return self.joint.joint_dim

    def parameters(self) -> list[Parameter]:
        return self.cascade.parameters() + self.joint.parameters()

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def encode_pair(self, audio, text) -> tuple[Tensor, Tensor]:
        """Joint vectors (1 x joint_dim each) of an audio item and the text guiding it."""
        feats = cascade_forward(audio, text, self.config, self.cascade)
        return project_joint(feats, self.joint)

    def score(self, audio, text) -> float:
        e_a, e_t = self.encode_pair(audio, text)
        return cosine_similarity(e_a.value, e_t.value)

    def score_matrix(self, texts: Sequence[np.ndarray], audios: Sequence[np.ndarray], workers: int = 1) -> np.ndarray:
        """scores[q, c] = cos(E_a(audio_c guided by text_q), E_t(text_q)).

        Audio features depend on the guiding text, so every (text, audio)
        combination runs its own audio-side forward.
        """
        for x in list(texts) + list(audios):
            if np.shape(x)[-1] != self.dim:
                raise DimensionError(f"item of width {np.shape(x)[-1]} does not match model dimension {self.dim}")

        def row(t):
            if self.config.variant == "iterating":
                t_n = text_tower(t, self.config, self.cascade)
                e_t = (t_n.value @ self.joint.l_t.value)
                out = []
                for a in audios:
                    feats = iterating_forward(a, t, self.config, self.cascade, text_final=t_n)
                    e_a, _ = project_joint(feats, self.joint)
                    out.append(cosine_similarity(e_a.value, e_t))
                return out
            return [self.score(a, t) for a in audios]

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                rows = list(pool.map(row, texts))
        else:
            rows = [row(t) for t in texts]
        return np.array(rows, dtype=np.float64).reshape(len(texts), len(audios))
