"""Whole-model gradient verification against central finite differences.

Builds run at float64 so finite-difference noise stays orders of magnitude
below the pass threshold; elements are sampled across every parameter so
each branch of the architecture is exercised.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ContractError
from ..tensor import Tape, backward, tensor_sum
from ..tensor.gradcheck import GradCheckReport
from .assembly import Model, forward_arrays, stack_windows


@dataclass(frozen=True)
class ParamGradError:
    name: str
    index: int
    rel_err: float


def check_model_gradients(
    model: Model,
    windows: Sequence,
    eps: float = 1e-4,
    max_elements: int = 150,
    seed: int = 0,
    denom_floor: float = 1e-3,
) -> GradCheckReport:
    """Compare d(sum of output probabilities)/d(theta) against central
    differences on a random subset of parameter elements."""
    if not 1e-6 <= eps <= 1e-3:
        raise ContractError("eps must lie in [1e-6, 1e-3]")
    dtype = next(iter(model.params.values())).data.dtype
    nonvis, clips = stack_windows(model.spec, windows, dtype=dtype)

    def loss_value() -> float:
        return float(tensor_sum(forward_arrays(model, nonvis, clips, training=False)).data)

    with Tape():
        loss = tensor_sum(forward_arrays(model, nonvis, clips, training=False))
        backward(loss)
    grads = {name: np.array(p.grad, copy=True) for name, p in model.params.items()}

    names = list(model.params)
    sizes = np.array([model.params[n].data.size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(total, size=min(max_elements, total), replace=False))

    rel = np.empty(len(chosen))
    worst = ParamGradError("", -1, -1.0)
    for k, flat_idx in enumerate(chosen):
        p_i = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        name = names[p_i]
        local = int(flat_idx - offsets[p_i])
        data = model.params[name].data.ravel()
        saved = data[local]
        data[local] = saved + eps
        fp = loss_value()
        data[local] = saved - eps
        fm = loss_value()
        data[local] = saved
        fd = (fp - fm) / (2.0 * eps)
        ad = float(grads[name].ravel()[local])
        err = abs(ad - fd) / max(abs(ad), abs(fd), denom_floor)
        rel[k] = err
        if err > worst.rel_err:
            worst = ParamGradError(name, local, err)

    return GradCheckReport(
        max_rel_err=float(rel.max()),
        mean_rel_err=float(rel.mean()),
        n_checked=len(chosen),
        worst_index=worst.index,
        rel_errors=rel,
    )
