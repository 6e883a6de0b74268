"""Degradation pipeline: bicubic resampling and square occlusion masks.

A low-quality input is manufactured from a 128x128 ground truth by bicubic
downsampling (factor 1, 4 or 8) followed by zeroing a random axis-aligned
square covering the requested fraction of the downsampled area. Zeroing
happens in the [-1, 1] normalized domain.
"""
from dataclasses import dataclass

import numpy as np

from .backend import ShapeError, Tensor

VALID_SCALES = (1, 4, 8)
VALID_FRACTIONS = (0.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0)

BICUBIC_A = -0.5  # Keys kernel parameter


@dataclass
class DegradationSpec:
    scale: int = 4
    mask_fraction: float = 0.25
    rng_seed: int = 0

    def __post_init__(self):
        if self.scale not in VALID_SCALES:
            raise ValueError(f"scale must be one of {VALID_SCALES}, got {self.scale}")
        if not any(abs(self.mask_fraction - f) < 1e-12 for f in VALID_FRACTIONS):
            raise ValueError(
                f"mask_fraction must be one of {VALID_FRACTIONS}, got {self.mask_fraction}")


@dataclass
class MaskRealization:
    """A binary mask with one zeroed square; all-ones when side == 0."""
    row: int
    col: int
    side: int
    mask: np.ndarray  # (s, s) uint8 of {0, 1}

    @property
    def zero_fraction(self):
        return self.side * self.side / self.mask.size


def _cubic_weight(t):
    """Keys interpolation kernel with a = -0.5; W(0)=1, W(+-1)=W(+-2)=0."""
    a = BICUBIC_A
    t = abs(t)
    if t <= 1.0:
        return (a + 2.0) * t ** 3 - (a + 3.0) * t ** 2 + 1.0
    if t < 2.0:
        return a * t ** 3 - 5.0 * a * t ** 2 + 8.0 * a * t - 4.0 * a
    return 0.0


def resample_matrix(n_in, n_out):
    """(n_out, n_in) float64 matrix applying 1-d bicubic resampling.

    Output sample i reads the source at (i + 0.5) * n_in/n_out - 0.5
    (half-pixel centers); the four kernel taps clamp to the edges. Rows sum
    to 1 exactly up to float rounding, so constants are preserved.
    """
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        base = int(np.floor(src))
        frac = src - base
        for m in (-1, 0, 1, 2):
            w = _cubic_weight(m - frac)
            idx = min(max(base + m, 0), n_in - 1)
            mat[i, idx] += w
    return mat


def bicubic_resize(img, out_h, out_w):
    """Separable bicubic resize over the last two axes of a float array.

    Accepts a Tensor or ndarray shaped (..., H, W); the resize is computed
    in float64 and cast back to the input dtype. Deterministic: identical
    inputs give identical outputs bit for bit.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output extents must be >= 1, got {out_h}x{out_w}")
    is_tensor = isinstance(img, Tensor)
    arr = img.data if is_tensor else np.asarray(img)
    if arr.ndim < 2:
        raise ShapeError(f"expected at least 2 axes (H, W last), got shape {arr.shape}")
    h, w = arr.shape[-2], arr.shape[-1]
    work = arr.astype(np.float64, copy=False)
    rows = resample_matrix(h, out_h)
    cols = resample_matrix(w, out_w)
    out = np.matmul(np.matmul(rows, work), cols.T)
    out = out.astype(arr.dtype if arr.dtype != np.uint8 else np.float64, copy=False)
    if arr.dtype == np.uint8:
        out = np.clip(np.round(out), 0, 255).astype(np.uint8)
    return Tensor(out) if is_tensor else out


def sample_mask(s, fraction, rng):
    """Square occlusion over an s x s grid: side = round(sqrt(fraction) * s).

    Placement is uniform over valid top-left corners; fraction 0 gives the
    all-ones mask. Drawing order is fixed (row then column) so a seeded rng
    reproduces placements exactly.
    """
    if not 0 <= fraction < 1:
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    side = int(round(np.sqrt(fraction) * s))
    mask = np.ones((s, s), dtype=np.uint8)
    if side == 0:
        return MaskRealization(row=0, col=0, side=0, mask=mask)
    row = int(rng.integers(0, s - side + 1))
    col = int(rng.integers(0, s - side + 1))
    mask[row:row + side, col:col + side] = 0
    return MaskRealization(row=row, col=col, side=side, mask=mask)


def apply_degradation(images, spec):
    """Downsample then occlude a batch of (N, 3, 128, 128) images in [-1, 1].

    Per-item masks come from independent child streams of the spec seed, so
    degrading a batch equals degrading each item alone with its own stream.
    Returns (low-quality batch, list of MaskRealization).
    """
    is_tensor = isinstance(images, Tensor)
    arr = images.data if is_tensor else np.asarray(images)
    if arr.ndim != 4 or arr.shape[1] != 3 or arr.shape[2] != 128 or arr.shape[3] != 128:
        raise ShapeError(f"expected (N, 3, 128, 128) ground truth, got {arr.shape}")
    s = 128 // spec.scale
    lq = bicubic_resize(arr, s, s) if spec.scale != 1 else arr.copy()
    seeds = np.random.SeedSequence(spec.rng_seed).spawn(arr.shape[0])
    masks = []
    for i, child in enumerate(seeds):
        m = sample_mask(s, spec.mask_fraction, np.random.default_rng(child))
        lq[i] *= m.mask.astype(lq.dtype)
        masks.append(m)
    return (Tensor(lq) if is_tensor else lq), masks
