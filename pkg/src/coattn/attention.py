"""Self-attention, guided attention and multi-head fusion.

Rows are sequence positions and columns are features, so a projection is
written ``LN(x) @ W``. A block owns one :class:`ProjectionSet` (input layer
norm plus the Q/K/V matrices), one :class:`MultiHeadParams` and an output
layer norm applied after the residual add.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from coattn import numerics as nx
from coattn.errors import ConfigurationError, DimensionError
from coattn.numerics import Parameter, Tensor


def uniform_init(rng: np.random.Generator, rows: int, cols: int, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass
class ProjectionSet:
    w_q: Parameter
    w_k: Parameter
    w_v: Parameter
    ln_scale: Parameter
    ln_shift: Parameter

    @property
    def dim(self) -> int:
        return self.w_q.rows

    def parameters(self) -> list[Parameter]:
        return [self.ln_scale, self.ln_shift, self.w_q, self.w_k, self.w_v]

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, prefix: str) -> "ProjectionSet":
        return cls(
            w_q=Parameter(uniform_init(rng, dim, dim, dim), f"{prefix}.w_q"),
            w_k=Parameter(uniform_init(rng, dim, dim, dim), f"{prefix}.w_k"),
            w_v=Parameter(uniform_init(rng, dim, dim, dim), f"{prefix}.w_v"),
            ln_scale=Parameter(np.ones((1, dim)), f"{prefix}.ln_scale"),
            ln_shift=Parameter(np.zeros((1, dim)), f"{prefix}.ln_shift"),
        )


@dataclass
class MultiHeadParams:
    w_q: list[Parameter]
    w_k: list[Parameter]
    w_v: list[Parameter]
    w_o: Parameter

    @property
    def heads(self) -> int:
        return len(self.w_q)

    def parameters(self) -> list[Parameter]:
        out = []
        for i in range(self.heads):
            out += [self.w_q[i], self.w_k[i], self.w_v[i]]
        return out + [self.w_o]

    @classmethod
    def init(cls, dim: int, heads: int, rng: np.random.Generator, prefix: str) -> "MultiHeadParams":
        if heads < 1 or dim % heads:
            raise ConfigurationError(f"heads={heads} must be positive and divide dim={dim}")
        dm = dim // heads
        wq, wk, wv = [], [], []
        for i in range(heads):
            wq.append(Parameter(uniform_init(rng, dim, dm, dim), f"{prefix}.head{i}.w_q"))
            wk.append(Parameter(uniform_init(rng, dim, dm, dim), f"{prefix}.head{i}.w_k"))
            wv.append(Parameter(uniform_init(rng, dim, dm, dim), f"{prefix}.head{i}.w_v"))
        w_o = Parameter(uniform_init(rng, heads * dm, dim, dim), f"{prefix}.w_o")
        return cls(wq, wk, wv, w_o)


@dataclass
class AttentionBlock:
    """Parameters of one SA or GA unit."""

    proj: ProjectionSet
    mh: MultiHeadParams
    out_scale: Parameter
    out_shift: Parameter
    residual: bool = True

    @property
    def dim(self) -> int:
        return self.proj.dim

    def parameters(self) -> list[Parameter]:
        return self.proj.parameters() + self.mh.parameters() + [self.out_scale, self.out_shift]

    @classmethod
    def init(cls, dim: int, heads: int, rng: np.random.Generator, prefix: str,
             residual: bool = True) -> "AttentionBlock":
        proj = ProjectionSet.init(dim, rng, f"{prefix}.proj")
        mh = MultiHeadParams.init(dim, heads, rng, f"{prefix}.mh")
        return cls(
            proj,
            mh,
            Parameter(np.ones((1, dim)), f"{prefix}.out_scale"),
            Parameter(np.zeros((1, dim)), f"{prefix}.out_shift"),
            residual,
        )


def scaled_dot_attention(q, k, v) -> Tensor:
    return nx.attention(q, k, v)


def _check_width(x: Tensor, dim: int, what: str) -> None:
    if x.cols != dim:
        raise DimensionError(f"{what} has {x.cols} features, block expects {dim}")


def project_qkv(x, p: ProjectionSet) -> tuple[Tensor, Tensor, Tensor]:
    x = x if isinstance(x, Tensor) else Tensor(x)
    _check_width(x, p.dim, "input")
    n = nx.layer_norm(x, p.ln_scale, p.ln_shift)
    return nx.matmul(n, p.w_q), nx.matmul(n, p.w_k), nx.matmul(n, p.w_v)


def multi_head(q_src, k_src, v_src, mh: MultiHeadParams) -> Tensor:
    """Concat(head_1..head_h) @ W_o with head_i = Attention(q W_i^Q, k W_i^K, v W_i^V)."""
    dim = mh.w_o.cols
    if mh.heads < 1 or dim % mh.heads or mh.w_o.rows != dim:
        raise ConfigurationError(f"{mh.heads} heads cannot split feature dimension {dim}")
    return nx.multi_head_attention(q_src, k_src, v_src, mh.w_q, mh.w_k, mh.w_v, mh.w_o)


def _finish(stream: Tensor, update: Tensor, block: AttentionBlock) -> Tensor:
    if block.residual:
        merged = nx.add(stream, update)
    elif update.rows == stream.rows:
        merged = update
    else:
        merged = nx.add(Tensor(np.zeros(stream.shape)), update)
    return nx.layer_norm(merged, block.out_scale, block.out_shift)


def self_attention_block(x, block: AttentionBlock) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    q, k, v = project_qkv(x, block.proj)
    return _finish(x, multi_head(q, k, v, block.mh), block)


def guided_attention_block(target, guide_q, block: AttentionBlock) -> Tensor:
    """Queries from ``guide_q``; keys, values and the residual stream from ``target``.

    The attended result has ``guide_q.rows`` rows. It is added to ``target``
    row by row when the row counts agree, and broadcast over every target row
    when the guide is a single row. The output always has ``target``'s shape.
    """
    target = target if isinstance(target, Tensor) else Tensor(target)
    guide_q = guide_q if isinstance(guide_q, Tensor) else Tensor(guide_q)
    _check_width(target, block.dim, "target")
    _check_width(guide_q, block.dim, "guide")
    if guide_q.rows not in (1, target.rows):
        raise DimensionError(
            f"guide has {guide_q.rows} rows; expected 1 or the target's {target.rows}"
        )
    p = block.proj
    nt = nx.layer_norm(target, p.ln_scale, p.ln_shift)
    ng = nx.layer_norm(guide_q, p.ln_scale, p.ln_shift)
    q = nx.matmul(ng, p.w_q)
    k = nx.matmul(nt, p.w_k)
    v = nx.matmul(nt, p.w_v)
    return _finish(target, multi_head(q, k, v, block.mh), block)
