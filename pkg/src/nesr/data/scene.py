"""Analytic linear-mixing spectral scenes and RGB projection."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from nesr.errors import DimensionError, DomainError

WL_MIN = 400.0
WL_MAX = 700.0

# Dense grid used to bound each endmember's peak value.
_BOUND_STEP = 0.25


def validate_wavelengths(wavelengths, strictly_increasing: bool = True) -> np.ndarray:
    wl = np.asarray(wavelengths, dtype=np.float64).reshape(-1)
    if wl.size == 0:
        raise DomainError("wavelength list is empty")
    if not np.all(np.isfinite(wl)):
        raise DomainError("wavelengths must be finite")
    if wl.min() < WL_MIN or wl.max() > WL_MAX:
        raise DomainError(
            f"wavelengths must lie in [{WL_MIN:g}, {WL_MAX:g}] nm, got range "
            f"[{wl.min():g}, {wl.max():g}]"
        )
    if strictly_increasing and np.any(np.diff(wl) <= 0):
        raise DomainError("wavelengths must be strictly increasing")
    return wl


def uniform_grid(bands: int) -> np.ndarray:
    """``bands`` evenly spaced wavelengths from 400 to 700 nm inclusive."""
    if bands < 1:
        raise DomainError(f"band count must be >= 1, got {bands}")
    if bands == 1:
        return np.array([WL_MIN])
    return np.linspace(WL_MIN, WL_MAX, bands)


@dataclass
class Endmember:
    centers: np.ndarray
    widths: np.ndarray
    amplitudes: np.ndarray
    offset: float = 0.0

    def __call__(self, wavelengths) -> np.ndarray:
        wl = np.asarray(wavelengths, dtype=np.float64)[..., None]
        z = (wl - self.centers) / self.widths
        return self.offset + (self.amplitudes * np.exp(-0.5 * z * z)).sum(axis=-1)

    def upper_bound(self) -> float:
        """Rigorous upper bound of the spectrum on [400, 700]."""
        grid = np.arange(WL_MIN, WL_MAX + _BOUND_STEP / 2, _BOUND_STEP)
        # |d/dl a*exp(-z^2/2)| <= a / (w * sqrt(e))
        lipschitz = float(np.sum(self.amplitudes / (self.widths * np.sqrt(np.e))))
        return float(self(grid).max()) + lipschitz * _BOUND_STEP / 2

    def to_dict(self) -> dict:
        return {"centers": self.centers.tolist(), "widths": self.widths.tolist(),
                "amplitudes": self.amplitudes.tolist(), "offset": self.offset}

    @classmethod
    def from_dict(cls, d: dict) -> "Endmember":
        arrays = (np.asarray(d[k], dtype=np.float64) for k in ("centers", "widths", "amplitudes"))
        return cls(*arrays, offset=float(d.get("offset", 0.0)))


@dataclass
class SpectralScene:
    """Radiance s(x, y, l) = sum_k a_k(x, y) s_k(l) / scale, bounded in [0, 1]."""

    endmembers: list
    abundances: np.ndarray  # (K, H, W), sums to 1 per pixel
    seed: int
    scale: float = field(default=0.0)

    def __post_init__(self):
        if self.scale <= 0:
            self.scale = max(e.upper_bound() for e in self.endmembers)

    @property
    def height(self) -> int:
        return self.abundances.shape[1]

    @property
    def width(self) -> int:
        return self.abundances.shape[2]

    def spectra(self, wavelengths) -> np.ndarray:
        """(B, K) endmember values at ``wavelengths``, already divided by the scene scale."""
        wl = np.asarray(wavelengths, dtype=np.float64)
        return np.stack([e(wl) for e in self.endmembers], axis=1) / self.scale


@dataclass
class SpectralImage:
    wavelengths: np.ndarray
    volume: np.ndarray  # (B, H, W)

    def __post_init__(self):
        self.wavelengths = validate_wavelengths(self.wavelengths)
        self.volume = np.asarray(self.volume)
        if self.volume.ndim != 3 or self.volume.shape[0] != self.wavelengths.size:
            raise DimensionError(
                f"volume shape {self.volume.shape} does not match {self.wavelengths.size} bands"
            )

    @property
    def bands(self) -> int:
        return self.wavelengths.size


@dataclass
class CameraResponse:
    """Three Gaussian channel sensitivities (R, G, B) with peaks and a shared width in nm."""

    peaks: tuple = (600.0, 550.0, 450.0)
    width: float = 40.0

    def raw(self, wavelengths) -> np.ndarray:
        wl = np.asarray(wavelengths, dtype=np.float64)
        z = (wl[None, :] - np.asarray(self.peaks)[:, None]) / self.width
        return np.exp(-0.5 * z * z)

    def weights(self, wavelengths) -> np.ndarray:
        """(3, B) nonnegative weights, each row summing to 1 over the sampled grid."""
        r = self.raw(wavelengths)
        return r / r.sum(axis=1, keepdims=True)


def generate_scene(seed: int, height: int, width: int, n_endmembers: int,
                   smoothness: Optional[float] = None, contrast: float = 3.0,
                   floor: tuple = (0.05, 0.2)) -> SpectralScene:
    """Seeded scene of ``n_endmembers`` Gaussian-mixture spectra and smooth abundances.

    Each spectrum sits on a constant pedestal drawn from ``floor`` so that
    radiance stays away from zero; pass ``floor=None`` for pure mixtures.
    """
    if height < 8 or width < 8:
        raise DomainError(f"scene must be at least 8x8, got {height}x{width}")
    if not 1 <= n_endmembers <= 8:
        raise DomainError(f"endmember count must be in 1..8, got {n_endmembers}")
    rng = np.random.default_rng(seed)
    endmembers = []
    for _ in range(n_endmembers):
        n = int(rng.integers(2, 5))
        endmembers.append(Endmember(
            centers=rng.uniform(WL_MIN, WL_MAX, n),
            widths=rng.uniform(15.0, 80.0, n),
            amplitudes=rng.uniform(0.2, 1.0, n),
            offset=float(rng.uniform(*floor)) if floor else 0.0,
        ))
    if n_endmembers == 1:
        abundances = np.ones((1, height, width))
    else:
        sigma = smoothness if smoothness is not None else max(height, width) / 8.0
        noise = rng.standard_normal((n_endmembers, height, width))
        fields = np.stack([gaussian_filter(f, sigma, mode="wrap") for f in noise])
        fields = fields - fields.mean(axis=(1, 2), keepdims=True)
        fields = contrast * fields / (fields.std(axis=(1, 2), keepdims=True) + 1e-12)
        fields = fields - fields.max(axis=0, keepdims=True)
        e = np.exp(fields)
        abundances = e / e.sum(axis=0, keepdims=True)
    return SpectralScene(endmembers, abundances, int(seed))


def sample_bands(scene: SpectralScene, wavelengths: Sequence[float],
                 region: Optional[tuple] = None) -> SpectralImage:
    """Evaluate the scene exactly at ``wavelengths``.

    ``region`` = (top, left, height, width) restricts the spatial window.
    Each band is computed independently of the others, so a wavelength
    yields identical values whatever grid it is sampled in.
    """
    wl = validate_wavelengths(wavelengths)
    ab = scene.abundances
    if region is not None:
        top, left, h, w = region
        if top < 0 or left < 0 or top + h > ab.shape[1] or left + w > ab.shape[2]:
            raise DomainError(f"region {region} exceeds scene extent {ab.shape[1:]}")
        ab = ab[:, top:top + h, left:left + w]
    spec = scene.spectra(wl)
    vol = np.zeros((wl.size,) + ab.shape[1:])
    for k in range(ab.shape[0]):
        vol += spec[:, k, None, None] * ab[k][None]
    return SpectralImage(wl, vol)


def project_to_rgb(img: SpectralImage, cam: Optional[CameraResponse] = None,
                   weights: Optional[np.ndarray] = None) -> np.ndarray:
    """(3, H, W) weighted band averages; ``weights`` (3, B) overrides the camera."""
    w = (cam or CameraResponse()).weights(img.wavelengths) if weights is None else np.asarray(weights)
    if w.shape != (3, img.bands):
        raise DimensionError(f"response weights {w.shape} do not match {img.bands} bands")
    return np.tensordot(w, img.volume, axes=(1, 0))
