"""Central finite-difference gradient checking (float64 mode).

Shared by the op-level tests and the acceptance suite. The numeric side
re-runs the forward pass with perturbed plain-numpy inputs, so it stays
independent of the tape machinery it is checking.
"""

import numpy as np

from antispoof import autograd as ag


def scalarize(build, arrays, weights):
    """Forward pass on constants only; returns float(sum(out * weights))."""
    tensors = [ag.constant(a) for a in arrays]
    out = build(*tensors)
    return float(np.sum(out.data * weights))


def check_gradients(build, arrays, rng, h=1e-5, tol=1e-4, check=None):
    """Compare tape gradients of sum(build(*arrays) * w) with central FD.

    arrays must be float64. `check` selects which inputs to differentiate
    (default: all). Returns the maximum relative error observed.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [ag.parameter(a.copy()) for a in arrays]
    with ag.Tape() as tape:
        out = build(*tensors)
        weights = rng.standard_normal(out.data.shape)
        loss = ag.sum_(out * ag.constant(weights))
    grads = tape.backward(loss, tensors)

    if check is None:
        check = range(len(arrays))
    worst = 0.0
    for idx in check:
        numeric = np.zeros_like(arrays[idx])
        flat = numeric.reshape(-1)
        for j in range(flat.size):
            bumped = [a.copy() for a in arrays]
            bumped[idx].reshape(-1)[j] += h
            up = scalarize(build, bumped, weights)
            bumped[idx].reshape(-1)[j] -= 2 * h
            down = scalarize(build, bumped, weights)
            flat[j] = (up - down) / (2 * h)
        diff = np.abs(grads[idx] - numeric)
        denom = np.maximum(np.maximum(np.abs(grads[idx]), np.abs(numeric)), 1e-3)
        worst = max(worst, float(np.max(diff / denom)))
    assert worst < tol, f"gradient mismatch: max relative error {worst:.3e}"
    return worst


def separate_max_ties(x, margin=0.05):
    """Push apart near-ties between the two halves of axis 0 (for mfm)."""
    half = x.shape[0] // 2
    a, b = x[:half], x[half:]
    close = np.abs(a - b) < margin
    a[close] += 2 * margin
    return x


def separate_pool_ties(x, margin=0.05):
    """Ensure every 2x2 pooling window has a unique max with clearance."""
    c, h, w = x.shape
    for ci in range(c):
        for i in range(0, h - 1, 2):
            for j in range(0, w - 1, 2):
                block = x[ci, i : i + 2, j : j + 2]
                order = np.argsort(block.ravel())
                top, second = order[-1], order[-2]
                if block.ravel()[top] - block.ravel()[second] < margin:
                    block.ravel()[top] += 2 * margin
    return x
