"""Independent brute-force reference implementations used as test oracles.

These deliberately avoid the vectorized code paths of the package: block
means are accumulated with explicit Python loops, bits are packed by hand,
and gradients are estimated with central finite differences.
"""

import numpy as np
import torch


def oracle_block_mean(gray, rows, cols):
    h, w = gray.shape
    out = np.zeros((rows, cols), dtype=np.float64)
    for r in range(rows):
        r0, r1 = h * r // rows, h * (r + 1) // rows
        for c in range(cols):
            c0, c1 = w * c // cols, w * (c + 1) // cols
            total = 0.0
            count = 0
            for i in range(r0, r1):
                for j in range(c0, c1):
                    total += float(gray[i, j])
                    count += 1
            out[r, c] = total / count
    return out


def _pack(bits):
    value = 0
    for bit in bits:
        value = (value << 1) | int(bit)
    return value


def oracle_ahash(gray) -> int:
    small = oracle_block_mean(np.asarray(gray, dtype=np.float64), 8, 8)
    mean = sum(small.ravel().tolist()) / 64.0
    return _pack([1 if v > mean else 0 for v in small.ravel().tolist()])


def oracle_dhash(gray) -> int:
    small = oracle_block_mean(np.asarray(gray, dtype=np.float64), 8, 9)
    bits = []
    for r in range(8):
        for c in range(8):
            bits.append(1 if small[r][c] > small[r][c + 1] else 0)
    return _pack(bits)


def finite_difference_check(loss_fn, x0: torch.Tensor, n_coords: int = 24,
                            step: float = 1e-3, seed: int = 0):
    """Compare the analytic gradient of loss_fn at x0 against central
    finite differences on n_coords random coordinates. Returns the list of
    relative errors (one per checked coordinate)."""
    x = x0.detach().clone().requires_grad_(True)
    grad = torch.autograd.grad(loss_fn(x), x)[0].detach()

    rng = np.random.default_rng(seed)
    coords = rng.choice(x0.numel(), size=n_coords, replace=False)
    errors = []
    flat = x0.detach().clone().reshape(-1)
    for idx in coords:
        original = flat[idx].item()
        with torch.no_grad():
            flat[idx] = original + step
            f_plus = float(loss_fn(flat.reshape(x0.shape)))
            flat[idx] = original - step
            f_minus = float(loss_fn(flat.reshape(x0.shape)))
            flat[idx] = original
        numeric = (f_plus - f_minus) / (2.0 * step)
        analytic = grad.reshape(-1)[idx].item()
        denom = max(abs(numeric), abs(analytic), 1e-8)
        errors.append(abs(numeric - analytic) / denom)
    return errors
