"""
Central finite-difference oracle for the autodiff engine.
"""
import logging
from typing import Callable, Optional, Sequence

import numpy as np

from utils.errors import ContractError, NumericError
from utils.tensor import Tensor, backward, no_grad

logger = logging.getLogger("tensor_core")


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
                      indices: Optional[Sequence[int]] = None) -> float:
    """
    Compare autodiff gradients of a scalar function against central differences.

    Args:
        f: Function mapping `x` to a scalar tensor
        x: Tensor with requires_grad; perturbed in place and restored
        h: Finite-difference step
        indices: Flat coordinates to check (all coordinates when None)

    Returns:
        max_i |autodiff_i - centraldiff_i| / max(1, |centraldiff_i|)
    """
    if not x.requires_grad:
        raise ContractError("finite_diff_check needs a tensor with requires_grad")

    x.zero_grad()
    loss = f(x)
    if not np.all(np.isfinite(loss.data)):
        raise NumericError(f"function value is not finite: {loss.data}")
    backward(loss)
    analytic = x.grad.reshape(-1).copy()

    flat = x.data.reshape(-1)
    coords = range(flat.size) if indices is None else indices
    worst = 0.0
    with no_grad():
        for i in coords:
            original = flat[i]
            flat[i] = original + h
            plus = f(x).item()
            flat[i] = original - h
            minus = f(x).item()
            flat[i] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise NumericError(f"non-finite function value at coordinate {i}")
            numeric = (plus - minus) / (2.0 * h)
            worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(numeric)))
    return worst
