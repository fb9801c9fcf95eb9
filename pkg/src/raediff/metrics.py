"""MSE, PSNR and SSIM on the [0, 1] display range.

The metric functions expect arrays already in [0, 1]; use
:func:`to_display` to map diffusion-domain tensors in [-1, 1].

SSIM uses a uniform ``8 x 8`` window with stride 1 over valid positions,
population (biased) window statistics, ``C1 = 0.01**2`` and
``C2 = 0.03**2``; per-channel means are averaged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

SSIM_WINDOW = 8
C1 = 0.01 ** 2
C2 = 0.03 ** 2


def to_display(x) -> np.ndarray:
    """Map [-1, 1] to [0, 1] and clamp."""
    return np.clip((np.asarray(x, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit peak; ``inf`` when identical."""
    err = mse(a, b)
    if err == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / err))


def ssim(a, b, window: int = SSIM_WINDOW) -> float:
    """Mean structural similarity of two ``(C, H, W)`` (or ``(H, W)``) images."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ShapeError(f"expected (C, H, W) image, got shape {a.shape}")
    if a.shape[1] < window or a.shape[2] < window:
        raise ShapeError(f"image {a.shape[1]}x{a.shape[2]} smaller than {window}x{window} SSIM window")

    wa = sliding_window_view(a, (window, window), axis=(1, 2))
    wb = sliding_window_view(b, (window, window), axis=(1, 2))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = wa.var(axis=(-2, -1))
    var_b = wb.var(axis=(-2, -1))
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + C1) * (2 * cov + C2)) / ((mu_a ** 2 + mu_b ** 2 + C1) * (var_a + var_b + C2))
    return float(smap.mean(axis=(1, 2)).mean())


@dataclass
class MetricReport:
    """Per-image and mean MSE/PSNR/SSIM between two aligned image lists."""

    names: list[str]
    mse: list[float] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)

    @property
    def mean_mse(self) -> float:
        return float(np.mean(self.mse))

    @property
    def mean_psnr(self) -> float:
        # mean of an all-identical set stays at the +inf sentinel
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def rows(self):
        return list(zip(self.names, self.mse, self.psnr, self.ssim))


def compare(a_images, b_images, names=None) -> MetricReport:
    """Metric report for two aligned lists of [-1, 1] tensors."""
    if len(a_images) != len(b_images):
        raise ShapeError(f"misaligned image lists: {len(a_images)} vs {len(b_images)}")
    names = list(names) if names is not None else [str(i) for i in range(len(a_images))]
    report = MetricReport(names=names)
    for a, b in zip(a_images, b_images):
        da, db = to_display(a), to_display(b)
        report.mse.append(mse(da, db))
        report.psnr.append(psnr(da, db))
        report.ssim.append(ssim(da, db))
    return report
