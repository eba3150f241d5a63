"""PSNR and windowed SSIM over [0,1] images, plus per-scene reports.

SSIM uses the conventional 11x11 Gaussian window (sigma 1.5) with
C1=(0.01)^2, C2=(0.03)^2, computed per channel over valid windows and
averaged. Both metrics run in float64. Pure functions; parallel per image.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """-10 log10(MSE) against MAX=1; identical images report +inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shapes {a.shape} and {b.shape} differ")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable 2-D convolution, valid region only."""
    size = kernel.size
    out = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="valid"), 1, img)
    out = np.apply_along_axis(lambda col: np.convolve(col, kernel, mode="valid"), 0, out)
    assert out.shape == (img.shape[0] - size + 1, img.shape[1] - size + 1)
    return out


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity; channels handled independently."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shapes {a.shape} and {b.shape} differ")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"ssim: image {a.shape[:2]} smaller than {window}x{window} window")
    c1 = 0.01**2
    c2 = 0.03**2
    kernel = _gaussian_kernel(window, sigma)
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mu_x = _filter_valid(x, kernel)
        mu_y = _filter_valid(y, kernel)
        var_x = _filter_valid(x * x, kernel) - mu_x * mu_x
        var_y = _filter_valid(y * y, kernel) - mu_y * mu_y
        cov = _filter_valid(x * y, kernel) - mu_x * mu_y
        score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
            (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        )
        scores.append(score.mean())
    return float(np.mean(scores))


@dataclass
class MetricReport:
    """Per-view rows and their means; lpips stays empty (external tools may
    fill it in post hoc)."""

    scene: str
    views: list[str] = dc_field(default_factory=list)
    psnr_values: list[float] = dc_field(default_factory=list)
    ssim_values: list[float] = dc_field(default_factory=list)

    def add(self, view: str, psnr_db: float, ssim_value: float) -> None:
        self.views.append(view)
        self.psnr_values.append(psnr_db)
        self.ssim_values.append(ssim_value)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_values)) if self.psnr_values else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_values)) if self.ssim_values else math.nan

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("view,psnr,ssim,lpips\n")
        for view, p, s in zip(self.views, self.psnr_values, self.ssim_values):
            out.write(f"{view},{p:.6f},{s:.6f},\n")
        return out.getvalue()

    def to_text_table(self) -> str:
        """Aligned table, aggregate column first."""
        header = ["scene", "Avg."] + self.views
        psnr_row = ["PSNR", f"{self.mean_psnr:.2f}"] + [f"{v:.2f}" for v in self.psnr_values]
        ssim_row = ["SSIM", f"{self.mean_ssim:.3f}"] + [f"{v:.3f}" for v in self.ssim_values]
        name_row = [self.scene, "", *[""] * len(self.views)]
        widths = [max(len(r[i]) for r in (header, psnr_row, ssim_row, name_row)) for i in range(len(header))]
        lines = []
        for row in (header, psnr_row, ssim_row):
            lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        return "\n".join(lines) + "\n"


def comparison_table(reports: dict[str, MetricReport]) -> str:
    """Method-per-row comparison with Avg. first, per-view columns after."""
    any_report = next(iter(reports.values()))
    header = ["Method", "PSNR Avg.", "SSIM Avg."] + [f"psnr:{v}" for v in any_report.views]
    rows = [header]
    for method, rep in reports.items():
        rows.append(
            [method, f"{rep.mean_psnr:.2f}", f"{rep.mean_ssim:.3f}"]
            + [f"{v:.2f}" for v in rep.psnr_values]
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows) + "\n"


def evaluate_scene(
    coarse_fn,
    fine_fn,
    dataset,
    split: str,
    render_cfg,
    scene_name: str = "scene",
    seed: int = 0,
    max_views: Optional[int] = None,
) -> MetricReport:
    """Render every view of the split and score both metrics against the
    alpha-composited ground truth."""
    from .rendering import render_image

    report = MetricReport(scene=scene_name)
    frames = dataset.frames(split)
    if max_views is not None:
        frames = frames[:max_views]
    for i, frame in enumerate(frames):
        img, _ = render_image(
            coarse_fn, fine_fn, frame.camera, dataset.near, dataset.far, render_cfg, seed=seed
        )
        truth = dataset.target_rgb(frame)
        report.add(f"{split}_{i}", psnr(img, truth), ssim(img, truth))
    return report
