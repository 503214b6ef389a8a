"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from coattn.numerics.tensor import Parameter, Tape, Tensor


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    worst_index: tuple[int, int]
    entries: int


def relative_error(analytic, numeric, floor: float = 1e-6):
    """|a - n| / max(|a|, |n|, floor), elementwise.

    The floor keeps structurally zero gradients (both sides ~0) from dividing
    rounding noise by zero.
    """
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def analytic_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Parameter]) -> dict[str, np.ndarray]:
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    return {p.name: p.grad.copy() for p in params}


def numeric_gradient(loss_fn: Callable[[], Tensor], p: Parameter, h: float = 1e-4) -> np.ndarray:
    out = np.zeros_like(p.value)
    for idx in np.ndindex(p.value.shape):
        orig = p.value[idx]
        p.value[idx] = orig + h
        up = loss_fn().item()
        p.value[idx] = orig - h
        down = loss_fn().item()
        p.value[idx] = orig
        out[idx] = (up - down) / (2.0 * h)
    return out


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    h: float = 1e-4,
    floor: float = 1e-6,
    analytic: dict[str, np.ndarray] | None = None,
) -> list[GradCheckResult]:
    """Compare taped gradients of ``loss_fn`` against central differences.

    ``loss_fn`` is called with and without an active tape and must be
    deterministic. Pass ``analytic`` to check precomputed gradients instead.
    """
    if analytic is None:
        analytic = analytic_gradients(loss_fn, params)
    results = []
    for p in params:
        num = numeric_gradient(loss_fn, p, h)
        err = relative_error(analytic[p.name], num, floor)
        worst = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else (0, 0)
        results.append(GradCheckResult(p.name, float(err.max(initial=0.0)), tuple(int(i) for i in worst), err.size))
    return results
