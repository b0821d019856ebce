from __future__ import annotations

import numpy as np

from .tape import ContractError, tape_backward


class GradientCheckError(FloatingPointError):
    pass


def gradient_check(f, params, step=1e-5):
    """Worst relative error between tape gradients and central differences.

    ``f`` takes no arguments and returns a scalar tensor built from the
    tensors in ``params`` (a name -> tensor mapping, or a list of tensors).
    The relative error per coordinate uses the denominator
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if not step > 0:
        raise ContractError(f"step must be positive, got {step}")
    tensors = list(params.values()) if isinstance(params, dict) else list(params)
    for t in tensors:
        t.grad = None
    tape_backward(f())
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    worst = 0.0
    for t, grad in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(f().data)
            flat[i] = orig - step
            down = float(f().data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise GradientCheckError(f"f is non-finite when perturbing {t.name or t.op}[{i}]")
            numeric = (up - down) / (2.0 * step)
            denom = max(abs(gflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst
