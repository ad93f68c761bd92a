"""Metrics, interpolation baselines and held-out evaluation."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from typing import Optional, Sequence

import numpy as np

from nesr.core.ops import interpolation_matrix
from nesr.core.tensor import Tensor, unwrap
from nesr.data.scene import SpectralImage, SpectralScene, sample_bands, uniform_grid, validate_wavelengths
from nesr.errors import UsageError
from nesr.model import NeSR
from nesr.training import TrainConfig, render_input

# Channel order of project_to_rgb is (R, G, B); anchors are the response peaks.
BI_ANCHORS = {"R": 600.0, "G": 550.0, "B": 450.0}


def mrae(pred, target, eps: float = 1e-3) -> float:
    pred = np.asarray(unwrap(pred), dtype=np.float64)
    target = np.asarray(unwrap(target), dtype=np.float64)
    if pred.shape != target.shape:
        raise UsageError(f"mrae: shapes differ {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target) / (target + eps)))


def rmse(pred, target) -> float:
    pred = np.asarray(unwrap(pred), dtype=np.float64)
    target = np.asarray(unwrap(target), dtype=np.float64)
    if pred.shape != target.shape:
        raise UsageError(f"rmse: shapes differ {pred.shape} vs {target.shape}")
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def error_map(pred, target, eps: float = 1e-3) -> np.ndarray:
    """Per-pixel MRAE averaged over bands, shape (H, W)."""
    pred = np.asarray(unwrap(pred), dtype=np.float64)
    target = np.asarray(unwrap(target), dtype=np.float64)
    return np.mean(np.abs(pred - target) / (target + eps), axis=0)


def interpolate_bands(volume: np.ndarray, source_wl, target_wl) -> np.ndarray:
    """Per-pixel piecewise-linear interpolation over wavelength, clamped outside the source range."""
    src = np.asarray(source_wl, dtype=np.float64)
    tgt = np.asarray(target_wl, dtype=np.float64)
    order = np.argsort(src)
    src, vol = src[order], np.asarray(volume, dtype=np.float64)[order]
    idx = np.clip(np.searchsorted(src, tgt, side="right") - 1, 0, max(src.size - 2, 0))
    if src.size == 1:
        return np.repeat(vol[:1], tgt.size, axis=0)
    t = np.clip((tgt - src[idx]) / (src[idx + 1] - src[idx]), 0.0, 1.0)
    return (1.0 - t)[:, None, None] * vol[idx] + t[:, None, None] * vol[idx + 1]


def baseline_bi(rgb, wavelengths) -> SpectralImage:
    """Interpolate (B, G, R) anchored at 450/550/600 nm over wavelength; clamp outside."""
    rgb = np.asarray(unwrap(rgb), dtype=np.float64)
    wl = validate_wavelengths(wavelengths)
    anchors = [BI_ANCHORS["B"], BI_ANCHORS["G"], BI_ANCHORS["R"]]
    vol = np.stack([rgb[2], rgb[1], rgb[0]])
    return SpectralImage(wl, interpolate_bands(vol, anchors, wl))


def spectral_bi(low: SpectralImage, wavelengths) -> SpectralImage:
    """Linear interpolation of a low-band spectral image to ``wavelengths``."""
    wl = validate_wavelengths(wavelengths)
    return SpectralImage(wl, interpolate_bands(low.volume, low.wavelengths, wl))


def two_step(model: NeSR, image, target_bands: int, dense_bands: int = 61) -> np.ndarray:
    """Reconstruct ``dense_bands`` then resize linearly to ``target_bands``."""
    dense = model.forward(image, uniform_grid(dense_bands)).data.astype(np.float64)
    m = interpolation_matrix(dense_bands, target_bands)
    b, h, w = dense.shape
    return (dense.reshape(b, -1).T @ m).T.reshape(target_bands, h, w)


def render_pair(scene: SpectralScene, wl, train_cfg: TrainConfig):
    return render_input(scene, train_cfg), sample_bands(scene, wl).volume


def predict_volume(method: str, model: Optional[NeSR], inp, wl, train_cfg: TrainConfig) -> np.ndarray:
    if method == "model":
        return model.forward(Tensor(inp.astype(model.dtype)), wl).data.astype(np.float64)
    if method == "two_step":
        return two_step(model, Tensor(inp.astype(model.dtype)), wl.size)
    if method == "bi":
        if train_cfg.input_mode == "rgb":
            return baseline_bi(inp, wl).volume
        low = SpectralImage(uniform_grid(train_cfg.input_bands), inp)
        return spectral_bi(low, wl).volume
    raise UsageError(f"unknown method {method!r}")


def _evaluate_one(args):
    method, model, scene, wl, train_cfg, eps = args
    inp, gt = render_pair(scene, wl, train_cfg)
    pred = predict_volume(method, model, inp, wl, train_cfg)
    return mrae(pred, gt, eps), rmse(pred, gt)


def evaluate(model: Optional[NeSR], scenes: Sequence[SpectralScene], wavelengths,
             train_cfg: Optional[TrainConfig] = None, method: str = "model",
             eps: float = 1e-3, workers: int = 1) -> dict:
    """Scene-averaged MRAE and RMSE of ``method`` at ``wavelengths``.

    Results are reduced in scene order, so the value does not depend on
    ``workers``.
    """
    if not scenes:
        raise UsageError("evaluate needs at least one scene")
    wl = validate_wavelengths(wavelengths)
    train_cfg = train_cfg or TrainConfig()
    jobs = [(method, model, s, wl, train_cfg, eps) for s in scenes]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate_one, jobs))
    else:
        results = [_evaluate_one(j) for j in jobs]
    m = [r[0] for r in results]
    r = [r[1] for r in results]
    # fsum is exactly rounded, so the average is independent of scene order
    return {"mrae": math.fsum(m) / len(m), "rmse": math.fsum(r) / len(r),
            "per_scene_mrae": m, "per_scene_rmse": r}
