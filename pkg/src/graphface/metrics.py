"""PSNR and SSIM evaluation.

PSNR is computed jointly over RGB channels against a stated peak; SSIM is
computed on ITU-R 601 luma with the reference 11x11 Gaussian-window
formulation (sigma 1.5, K1 0.01, K2 0.03). Identical images report the
+inf PSNR sentinel and SSIM 1.
"""
import math
from dataclasses import dataclass

import numpy as np

from .backend import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # ITU-R 601


def psnr(a, b, peak=255.0):
    """10 * log10(peak^2 / MSE) in dB over all elements; inf when MSE is 0."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"psnr inputs differ in shape: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def to_luma(img):
    """(H, W, 3) -> (H, W) float64 via ITU-R 601 weights; grayscale passes through."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        r, g, b = LUMA_WEIGHTS
        return r * arr[:, :, 0] + g * arr[:, :, 1] + b * arr[:, :, 2]
    raise ShapeError(f"expected (H, W) or (H, W, 3) image, got shape {arr.shape}")


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g1 = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g1, g1)
    return win / win.sum()


def ssim(a, b, data_range=255.0):
    """Mean local SSIM over Gaussian-weighted 11x11 windows (valid positions)."""
    x = to_luma(a)
    y = to_luma(b)
    if x.shape != y.shape:
        raise ShapeError(f"ssim inputs differ in shape: {x.shape} vs {y.shape}")
    h, w = x.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(
            f"image extent {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")

    win = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    wx = _windows(x)
    wy = _windows(y)
    mu_x = np.einsum("hwij,ij->hw", wx, win)
    mu_y = np.einsum("hwij,ij->hw", wy, win)
    ex2 = np.einsum("hwij,ij->hw", wx * wx, win)
    ey2 = np.einsum("hwij,ij->hw", wy * wy, win)
    exy = np.einsum("hwij,ij->hw", wx * wy, win)
    var_x = ex2 - mu_x * mu_x
    var_y = ey2 - mu_y * mu_y
    cov = exy - mu_x * mu_y

    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def _windows(img):
    h, w = img.shape
    k = SSIM_WINDOW
    shape = (h - k + 1, w - k + 1, k, k)
    strides = img.strides + img.strides
    return np.lib.stride_tricks.as_strided(img, shape=shape, strides=strides)


@dataclass
class PairMetrics:
    name: str
    psnr_db: float
    ssim: float


@dataclass
class MetricReport:
    pairs: list

    @property
    def count(self):
        return len(self.pairs)

    @property
    def mean_psnr(self):
        return float(np.mean([p.psnr_db for p in self.pairs])) if self.pairs else math.nan

    @property
    def mean_ssim(self):
        return float(np.mean([p.ssim for p in self.pairs])) if self.pairs else math.nan

    def to_csv(self):
        lines = ["filename,psnr_db,ssim"]
        for p in self.pairs:
            lines.append(f"{p.name},{p.psnr_db!r},{p.ssim!r}")
        lines.append(f"mean,{self.mean_psnr!r},{self.mean_ssim!r}")
        return "\n".join(lines) + "\n"

    def format_table(self):
        lines = [f"{'image':<28s} {'PSNR (dB)':>10s} {'SSIM':>8s}"]
        for p in self.pairs:
            lines.append(f"{p.name:<28s} {p.psnr_db:>10.3f} {p.ssim:>8.4f}")
        lines.append(f"{'mean (' + str(self.count) + ' images)':<28s} "
                     f"{self.mean_psnr:>10.3f} {self.mean_ssim:>8.4f}")
        return "\n".join(lines)


def evaluate_pairs(dir_restored, dir_groundtruth):
    """Per-image and mean PSNR/SSIM over two directories matched by filename."""
    from .data import list_images, load_image

    restored = {p.name: p for p in list_images(dir_restored)}
    ground = {p.name: p for p in list_images(dir_groundtruth)}
    only_restored = sorted(set(restored) - set(ground))
    only_ground = sorted(set(ground) - set(restored))
    if only_restored or only_ground:
        raise ValueError(
            "directories do not match: "
            f"only in {dir_restored}: {only_restored}; only in {dir_groundtruth}: {only_ground}")

    pairs = []
    for name in sorted(restored):
        a = load_image(restored[name])
        b = load_image(ground[name])
        pairs.append(PairMetrics(name=name, psnr_db=psnr(a, b, peak=255.0),
                                 ssim=ssim(a, b, data_range=255.0)))
    return MetricReport(pairs=pairs)
