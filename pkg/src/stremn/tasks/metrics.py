"""Region similarity J, boundary F and frame-prediction quality metrics."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from ..errors import ContractError

PSNR_CAP = 99.0
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def metric_j(pred_mask, gt_mask) -> float:
    pred = np.asarray(pred_mask, dtype=bool)
    gt = np.asarray(gt_mask, dtype=bool)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def boundary(mask) -> np.ndarray:
    """Mask pixels with at least one 4-neighbour outside the mask."""
    mask = np.asarray(mask, dtype=bool)
    eroded = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(2, 1), border_value=0)
    return mask & ~eroded


def default_tolerance(shape) -> int:
    return max(1, math.ceil(0.008 * math.hypot(*shape[-2:])))


def _disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return yy * yy + xx * xx <= radius * radius


def metric_f(pred_mask, gt_mask, tol_px: int | None = None) -> float:
    """Boundary F-measure with matches allowed within ``tol_px`` pixels."""
    pred = np.asarray(pred_mask, dtype=bool)
    gt = np.asarray(gt_mask, dtype=bool)
    tol = default_tolerance(gt.shape) if tol_px is None else tol_px
    bp, bg = boundary(pred), boundary(gt)
    n_p, n_g = bp.sum(), bg.sum()
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    disk = _disk(tol)
    gt_zone = ndimage.binary_dilation(bg, structure=disk)
    pred_zone = ndimage.binary_dilation(bp, structure=disk)
    precision = (bp & gt_zone).sum() / n_p
    recall = (bg & pred_zone).sum() / n_g
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def sequence_jf(pred_labels, gt_labels, n_objects: int, skip_first: bool = True, tol_px: int | None = None) -> dict:
    """Per-object J and F averaged over frames, then over objects."""
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    start = 1 if skip_first and len(gt_labels) > 1 else 0
    js, fs = [], []
    per_frame_j = []
    for obj in range(1, n_objects + 1):
        j_obj = [metric_j(pred_labels[t] == obj, gt_labels[t] == obj) for t in range(start, len(gt_labels))]
        f_obj = [metric_f(pred_labels[t] == obj, gt_labels[t] == obj, tol_px) for t in range(start, len(gt_labels))]
        js.append(np.mean(j_obj))
        fs.append(np.mean(f_obj))
        per_frame_j.append(j_obj)
    return {
        "J": float(np.mean(js)),
        "F": float(np.mean(fs)),
        "JF": float((np.mean(js) + np.mean(fs)) / 2),
        "J_per_frame": np.mean(per_frame_j, axis=0).tolist(),
    }


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    half = len(win) // 2
    out = ndimage.correlate1d(img, win, axis=0, mode="constant")
    out = ndimage.correlate1d(out, win, axis=1, mode="constant")
    return out[half : img.shape[0] - half, half : img.shape[1] - half]


def ssim(x, y, window: int = 11, sigma: float = 1.5) -> float:
    """Gaussian-window SSIM on unit-range images (C×H×W or H×W), channel mean."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ContractError(f"ssim: shapes {x.shape} and {y.shape} differ")
    if x.ndim == 2:
        x, y = x[None], y[None]
    if min(x.shape[-2:]) < window:
        raise ContractError(f"ssim: image {x.shape[-2:]} smaller than the {window}×{window} window")
    win = _gaussian_window(window, sigma)
    vals = []
    for xc, yc in zip(x, y):
        mx, my = _filter_valid(xc, win), _filter_valid(yc, win)
        sxx = _filter_valid(xc * xc, win) - mx * mx
        syy = _filter_valid(yc * yc, win) - my * my
        sxy = _filter_valid(xc * yc, win) - mx * my
        num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
        vals.append((num / den).mean())
    return float(np.mean(vals))


def psnr(mse_value: float) -> float:
    if mse_value <= 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, -10.0 * math.log10(mse_value)))


def metric_prediction(pred_frames, gt_frames) -> dict:
    """Mean per-frame MSE, MAE, SSIM and PSNR over the predicted horizon."""
    pred = np.asarray(pred_frames, dtype=np.float64)
    gt = np.asarray(gt_frames, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ContractError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if len(pred) == 0:
        raise ContractError("empty prediction horizon")
    mses = [float(((p - g) ** 2).mean()) for p, g in zip(pred, gt)]
    maes = [float(np.abs(p - g).mean()) for p, g in zip(pred, gt)]
    ssims = [ssim(p, g) for p, g in zip(pred, gt)]
    psnrs = [psnr(m) for m in mses]
    return {
        "MSE": float(np.mean(mses)),
        "MAE": float(np.mean(maes)),
        "SSIM": float(np.mean(ssims)),
        "PSNR": float(np.mean(psnrs)),
        "MSE_per_frame": mses,
    }
