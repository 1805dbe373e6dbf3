"""Central finite-difference gradient checking (run inside ``float64_mode``)."""
import numpy as np

from .tensor import backward


def numeric_grad(fn, param, step=1e-4):
    g = np.zeros_like(param.data)
    it = np.nditer(param.data, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = param.data[i]
        param.data[i] = orig + step
        up = fn().item()
        param.data[i] = orig - step
        down = fn().item()
        param.data[i] = orig
        g[i] = (up - down) / (2 * step)
    return g


def relative_error(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def check_gradients(fn, params, step=1e-4):
    """Max relative error between analytic and numeric gradients over ``params``."""
    for p in params:
        p.zero_grad()
    backward(fn())
    analytic = [p.grad.copy() for p in params]
    return max(relative_error(a, numeric_grad(fn, p, step)) for a, p in zip(analytic, params))
