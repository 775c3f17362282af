"""Central finite-difference oracle for tape gradients."""
import numpy as np

from wge import autodiff as ad


def analytic_grads(build, params):
    for p in params:
        p.zero_grad()
    tape = ad.Tape()
    out = build(tape)
    tape.backward(out)
    return [p.grad.copy() for p in params]


def numeric_grads(build, params, step=1e-5):
    grads = []
    for p in params:
        g = np.zeros_like(p.value)
        flat, gflat = p.value.reshape(-1), g.reshape(-1)
        for n in range(flat.size):
            orig = flat[n]
            flat[n] = orig + step
            up = float(build(ad.Tape()).value)
            flat[n] = orig - step
            down = float(build(ad.Tape()).value)
            flat[n] = orig
            gflat[n] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def relative_error(a, b):
    a = np.concatenate([x.ravel() for x in a])
    b = np.concatenate([x.ravel() for x in b])
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check(build, params, step=1e-5):
    """Relative error between backward() and central differences over all params."""
    return relative_error(analytic_grads(build, params), numeric_grads(build, params, step))
