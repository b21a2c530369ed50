from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from relatt.errors import ContractError
from relatt.numeric.autograd import Tensor, as_tensor, evaluate_with_gradients


def _value(program, params: Mapping[str, np.ndarray]) -> float:
    out = program({k: as_tensor(v) for k, v in params.items()})
    return out.item()


def numeric_gradient(program: Callable[[dict[str, Tensor]], Tensor],
                     params: Mapping[str, np.ndarray], step: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences (f(x + step) - f(x - step)) / (2 step), per coordinate."""
    if step <= 0:
        raise ContractError("finite-difference step must be positive")
    params = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    out = {}
    for name, p in params.items():
        numeric = np.zeros_like(p)
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = _value(program, params)
            flat[i] = orig - step
            f_minus = _value(program, params)
            flat[i] = orig
            numeric.reshape(-1)[i] = (f_plus - f_minus) / (2.0 * step)
        out[name] = numeric
    return out


def finite_difference_gradcheck(program: Callable[[dict[str, Tensor]], Tensor],
                                params: Mapping[str, np.ndarray],
                                step: float = 1e-5,
                                return_details: bool = False):
    """Largest relative error between tape gradients and central differences.

    The relative error of each coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    _, analytic = evaluate_with_gradients(program, params)
    numeric = numeric_gradient(program, params, step)
    per_param = {}
    for name, n in numeric.items():
        a = analytic[name]
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        per_param[name] = float(np.max(np.abs(a - n) / denom)) if n.size else 0.0
    worst = max(per_param.values(), default=0.0)
    if return_details:
        return worst, per_param
    return worst
