"""Synthetic spectral scenes, RGB projection and file formats."""
from nesr.data.scene import (
    WL_MAX,
    WL_MIN,
    CameraResponse,
    Endmember,
    SpectralImage,
    SpectralScene,
    generate_scene,
    project_to_rgb,
    sample_bands,
    uniform_grid,
    validate_wavelengths,
)

__all__ = [
    "WL_MAX", "WL_MIN", "CameraResponse", "Endmember", "SpectralImage", "SpectralScene",
    "generate_scene", "project_to_rgb", "sample_bands", "uniform_grid", "validate_wavelengths",
]
