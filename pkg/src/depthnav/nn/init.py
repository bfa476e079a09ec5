"""Weight initializers: orthogonal for dense layers, delta-orthogonal for convolutions."""

import numpy as np

from .. import rng as _rng


def init_orthogonal(rows: int, cols: int, seed: int, gain: float = 1.0) -> np.ndarray:
    """A (rows, cols) matrix with orthonormal rows (rows <= cols) or columns."""
    if rows < 1 or cols < 1:
        raise ValueError(f"orthogonal init needs positive shape, got ({rows}, {cols})")
    g = _rng.stream(seed, "orthogonal", rows, cols)
    big, small = max(rows, cols), min(rows, cols)
    a = g.standard_normal((big, small))
    q, r = np.linalg.qr(a)
    # sign fix makes the distribution uniform (Haar)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    q = q * d
    w = q if rows >= cols else q.T
    return gain * w


def init_delta_orthogonal(spec, seed: int, gain: float = 1.0) -> np.ndarray:
    """Convolution kernel that is zero except for an orthogonal channel map at the centre.

    Conv kernels are laid out (out, in, k, k), transposed-conv kernels (in, out, k, k).
    """
    if spec.kind not in ("conv", "deconv"):
        raise ValueError(f"delta-orthogonal init applies to conv/deconv, not {spec.kind!r}")
    k = spec.kernel
    if k % 2 == 0:
        raise ValueError(f"delta-orthogonal init needs an odd kernel size, got {k}")
    if spec.kind == "conv":
        a, b = spec.out_size, spec.in_size
    else:
        a, b = spec.in_size, spec.out_size
    w = np.zeros((a, b, k, k))
    w[:, :, k // 2, k // 2] = init_orthogonal(a, b, seed, gain)
    return w
