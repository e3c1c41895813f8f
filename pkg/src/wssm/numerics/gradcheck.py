from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, leaf


def grad_check(f: Callable, point, step: float = 1e-5, coords=None) -> float:
    """Max relative error between an analytic gradient and central differences.

    ``f(x)`` returns ``(value, gradient)``. The error per coordinate is
    ``|analytic - fd| / max(1, |analytic|)``. ``coords`` restricts the probe to a
    subset of flat indices.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(point, dtype=np.float64, copy=True)
    _, analytic = f(x.copy())
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    flat = x.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        fp, _ = f(x.copy())
        flat[i] = orig - step
        fm, _ = f(x.copy())
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        fd = (fp - fm) / (2.0 * step)
        worst = max(worst, abs(analytic[i] - fd) / max(1.0, abs(analytic[i])))
    return worst


def check_tensor_fn(fn: Callable[[Mapping[str, Tensor]], Tensor], arrays: Mapping[str, np.ndarray],
                    step: float = 1e-4, max_coords: int | None = None, rng=None) -> dict:
    """grad_check every named input of a tape function returning a scalar Tensor.

    Returns the worst relative error per name. With ``max_coords`` set, a random
    subset of that many coordinates is probed per array.
    """
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
    rng = np.random.default_rng(0) if rng is None else rng
    errors = {}
    for name, base in arrays.items():
        def f(x, name=name):
            leaves = {k: leaf(x if k == name else v) for k, v in arrays.items()}
            out = fn(leaves)
            out.backward()
            g = leaves[name].grad
            return float(out.data), np.zeros_like(x) if g is None else g

        coords = None
        if max_coords is not None and base.size > max_coords:
            coords = rng.choice(base.size, size=max_coords, replace=False)
        errors[name] = grad_check(f, base, step, coords)
    return errors
