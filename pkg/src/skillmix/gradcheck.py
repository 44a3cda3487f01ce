"""Central finite-difference validation of every model parameter.

Rebuilds the forward pass around each perturbed scalar and compares the
two-sided numerical slope against the accumulated analytic gradient.  Slow by
construction; run at reduced dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .data import VecExample
from .training import example_loss


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_parameter: str
    per_parameter: dict[str, float]
    checked_scalars: int

    def ok(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance


def _total_loss(model, vecs: Sequence[VecExample], use_skill: bool) -> float:
    total = 0.0
    for vec in vecs:
        loss, _, _ = example_loss(model, vec, use_skill)
        total += loss.item()
    return total


def finite_difference_check(model, vecs: Sequence[VecExample],
                            step: float = 1e-5,
                            use_skill: bool | None = None,
                            max_per_tensor: int | None = None,
                            seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of the summed loss against central differences.

    Checks every scalar of every parameter unless ``max_per_tensor`` caps the
    (seeded) sample per tensor.  The relative error denominator is floored so
    near-zero gradients are compared absolutely at the same tolerance scale.
    """
    store = model.parameters()
    if use_skill is None:
        use_skill = getattr(model, "use_skill_loss", False)

    store.zero_grad()
    for vec in vecs:
        loss, _, _ = example_loss(model, vec, use_skill)
        ad.backward(loss)
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in store.items()}
    store.zero_grad()

    rng = np.random.default_rng(seed)
    per_parameter: dict[str, float] = {}
    worst = 0.0
    worst_name = ""
    checked = 0
    for name, tensor in store.items():
        flat = tensor.data.reshape(-1)
        an_flat = analytic[name].reshape(-1)
        indices = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            indices = rng.choice(flat.size, size=max_per_tensor, replace=False)
        tensor_worst = 0.0
        for i in indices:
            original = flat[i]
            flat[i] = original + step
            up = _total_loss(model, vecs, use_skill)
            flat[i] = original - step
            down = _total_loss(model, vecs, use_skill)
            flat[i] = original
            numeric = (up - down) / (2.0 * step)
            denom = max(abs(an_flat[i]), abs(numeric), 1e-4)
            rel = abs(an_flat[i] - numeric) / denom
            tensor_worst = max(tensor_worst, rel)
            checked += 1
        per_parameter[name] = tensor_worst
        if tensor_worst > worst:
            worst = tensor_worst
            worst_name = name
    return GradCheckReport(max_rel_error=worst, worst_parameter=worst_name,
                           per_parameter=per_parameter, checked_scalars=checked)
