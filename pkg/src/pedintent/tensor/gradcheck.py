"""Central-finite-difference oracle for the autodiff kernel.

Runs the function under test twice to detect hidden nondeterminism, takes
one reverse pass for the analytic gradient, then perturbs elements one at a
time. Checking at float64 keeps finite-difference noise ~1e-12 so a failed
comparison means a wrong backward rule, not rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import ContractError, DeterminismError
from .core import Tape, Tensor, backward


@dataclass
class GradCheckReport:
    """Per-element relative errors between autodiff and finite differences."""

    max_rel_err: float
    mean_rel_err: float
    n_checked: int
    worst_index: int
    rel_errors: np.ndarray

    def ok(self, tol: float) -> bool:
        return self.max_rel_err < tol


def check_gradients(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-4,
    max_elements: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    denom_floor: float = 1e-3,
) -> GradCheckReport:
    """Compare autodiff gradients of scalar f(x) against central differences.

    `max_elements` limits the check to a random subset of coordinates (all
    by default). Relative error is |ad - fd| / max(|ad|, |fd|, denom_floor);
    the floor keeps genuinely-zero gradients from amplifying FD noise.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ContractError("eps must lie in [1e-6, 1e-3]")

    base = np.array(x.data, copy=True)

    def run(values: np.ndarray) -> np.ndarray:
        y = f(Tensor(values, dtype=values.dtype))
        if not isinstance(y, Tensor) or y.data.size != 1:
            raise ContractError("gradient check requires a scalar-valued function")
        return np.array(y.data, copy=True)

    if not np.array_equal(run(base), run(base)):
        raise DeterminismError("function under test is not deterministic")

    leaf = Tensor(base, requires_grad=True, dtype=base.dtype)
    with Tape():
        y = f(leaf)
        if not isinstance(y, Tensor) or y.data.size != 1:
            raise ContractError("gradient check requires a scalar-valued function")
        backward(y)
    ad = leaf.grad.ravel()

    n = base.size
    if max_elements is not None and max_elements < n:
        gen = rng if rng is not None else np.random.default_rng(0)
        idx = np.sort(gen.choice(n, size=max_elements, replace=False))
    else:
        idx = np.arange(n)

    flat = base.ravel()
    rel = np.empty(len(idx), dtype=np.float64)
    for k, i in enumerate(idx):
        saved = flat[i]
        flat[i] = saved + eps
        fp = float(run(base))
        flat[i] = saved - eps
        fm = float(run(base))
        flat[i] = saved
        fd = (fp - fm) / (2.0 * eps)
        a = float(ad[i])
        rel[k] = abs(a - fd) / max(abs(a), abs(fd), denom_floor)

    worst = int(np.argmax(rel)) if len(rel) else 0
    return GradCheckReport(
        max_rel_err=float(rel.max()) if len(rel) else 0.0,
        mean_rel_err=float(rel.mean()) if len(rel) else 0.0,
        n_checked=len(idx),
        worst_index=int(idx[worst]) if len(idx) else -1,
        rel_errors=rel,
    )
