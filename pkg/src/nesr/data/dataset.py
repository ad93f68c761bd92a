"""Desk-scale synthetic datasets: generation, manifests and loading."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from nesr.data import io
from nesr.data.scene import (
    CameraResponse,
    Endmember,
    SpectralScene,
    generate_scene,
    project_to_rgb,
    sample_bands,
    uniform_grid,
)
from nesr.errors import UsageError

DEFAULT_SIZE = 64
MIN_ENDMEMBERS = 2
MAX_ENDMEMBERS = 6


def scene_seeds(seed: int, count: int, split: str) -> list[int]:
    """Per-scene seeds; train and test draw from disjoint streams."""
    stream = {"train": 0, "test": 1}[split]
    ss = np.random.SeedSequence([int(seed), stream])
    return [int(s) for s in ss.generate_state(count, dtype=np.uint32)]


def endmember_count(scene_seed: int) -> int:
    return MIN_ENDMEMBERS + scene_seed % (MAX_ENDMEMBERS - MIN_ENDMEMBERS + 1)


def make_scene(scene_seed: int, size: int = DEFAULT_SIZE) -> SpectralScene:
    return generate_scene(scene_seed, size, size, endmember_count(scene_seed))


def save_scene(directory: Path, scene_id: str, scene: SpectralScene,
               preview_wavelengths=None) -> dict:
    """Write one scene's analytic parameters plus a reference cube and RGB image."""
    directory.mkdir(parents=True, exist_ok=True)
    params = {
        "seed": scene.seed,
        "scale": scene.scale,
        "endmembers": [e.to_dict() for e in scene.endmembers],
    }
    files = {
        "params": f"{scene_id}.json",
        "abundances": f"{scene_id}.abund.nsrt",
        "reference": f"{scene_id}.ref.nsrt",
        "rgb": f"{scene_id}.rgb.nsrt",
    }
    (directory / files["params"]).write_text(json.dumps(params, sort_keys=True), encoding="utf-8")
    io.write_tensor(directory / files["abundances"], scene.abundances.astype(np.float64))
    wl = uniform_grid(31) if preview_wavelengths is None else np.asarray(preview_wavelengths)
    ref = sample_bands(scene, wl)
    io.write_spectral_image(directory / files["reference"], ref)
    io.write_tensor(directory / files["rgb"], project_to_rgb(ref, CameraResponse()))
    return {"files": files, "wavelengths": wl.tolist()}


def load_scene(manifest_path, entry: dict) -> SpectralScene:
    params = json.loads(io.resolve(manifest_path, entry["files"]["params"]).read_text("utf-8"))
    abundances = io.read_tensor(io.resolve(manifest_path, entry["files"]["abundances"]))
    endmembers = [Endmember.from_dict(d) for d in params["endmembers"]]
    return SpectralScene(endmembers, abundances, int(params["seed"]), float(params["scale"]))


def generate_dataset(out_dir, n_train: int, n_test: int, seed: int,
                     size: int = DEFAULT_SIZE, dataset: str = "synthetic") -> dict:
    """Generate both splits under ``out_dir``; returns {split: manifest path}."""
    out_dir = Path(out_dir)
    paths = {}
    for split, count in (("train", n_train), ("test", n_test)):
        entries = []
        for i, s in enumerate(scene_seeds(seed, count, split)):
            scene_id = f"{split}_{i:04d}"
            info = save_scene(out_dir / split, scene_id, make_scene(s, size))
            files = {k: f"{split}/{v}" for k, v in info["files"].items()}
            entries.append({"id": scene_id, "seed": s, "files": files,
                            "wavelengths": info["wavelengths"], "size": [size, size],
                            "endmembers": endmember_count(s)})
        manifest = {"dataset": dataset, "split": split, "base_seed": int(seed), "scenes": entries}
        path = out_dir / f"manifest_{split}.json"
        io.write_manifest(path, manifest)
        paths[split] = path
    return paths


def load_manifest_scenes(manifest_path, limit: Optional[int] = None) -> list[SpectralScene]:
    manifest = io.read_manifest(manifest_path)
    entries = manifest["scenes"][:limit] if limit else manifest["scenes"]
    if not entries:
        raise UsageError(f"manifest {manifest_path} lists no scenes")
    return [load_scene(manifest_path, e) for e in entries]


def in_memory_scenes(seed: int, count: int, split: str, size: int = DEFAULT_SIZE) -> list[SpectralScene]:
    """Same scenes ``generate_dataset`` would write, without touching disk."""
    return [make_scene(s, size) for s in scene_seeds(seed, count, split)]


def iter_ids(manifest: dict) -> Iterable[str]:
    return (e["id"] for e in manifest["scenes"])
