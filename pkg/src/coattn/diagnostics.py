"""Finite-difference gradient checks over the full retrieval model."""
from __future__ import annotations

import numpy as np

from coattn.cascade import CascadeConfig
from coattn.model import CoAttentionModel
from coattn.numerics.gradcheck import GradCheckResult, analytic_gradients, check_gradients
from coattn.objective import LossConfig, joint_batch_loss


def random_batch(rng: np.random.Generator, batch: int, frames: int, dim: int):
    return [(rng.standard_normal((frames, dim)), rng.standard_normal((1, dim))) for _ in range(batch)]


def model_gradcheck(variant: str = "iterating", depth: int = 1, dim: int = 8, frames: int = 3,
                    batch: int = 4, heads: int = 2, seed: int = 0,
                    loss: LossConfig | None = None, h: float = 1e-4,
                    corrupt: str | None = None) -> list[GradCheckResult]:
    """Check every parameter of a freshly initialised model on a random batch.

    ``corrupt`` names a parameter whose analytic gradient is deliberately
    perturbed before comparison, to confirm the checker can fail.
    """
    cfg = CascadeConfig(variant, depth, dim, heads)
    model = CoAttentionModel.init(cfg, seed=seed)
    rng = np.random.default_rng([seed, 1])
    data = random_batch(rng, batch, frames, dim)
    loss = loss or LossConfig()

    def fn():
        return joint_batch_loss([model.encode_pair(a, t) for a, t in data], loss)

    params = model.parameters()
    grads = analytic_gradients(fn, params)
    if corrupt is not None:
        g = grads[corrupt]
        g.flat[0] += 1.0 + abs(g.flat[0])
    return check_gradients(fn, params, h=h, analytic=grads)
