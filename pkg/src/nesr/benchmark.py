"""Protocol benchmarks (arbitrary, extreme, ssr, ablation) and their JSON reports."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from nesr.data import io
from nesr.data.scene import SpectralScene, uniform_grid
from nesr.errors import UsageError
from nesr.evaluation import error_map, evaluate, predict_volume, render_pair
from nesr.model import ModelConfig
from nesr.training import Checkpoint, TrainConfig, input_channels, train

MODES = ("arbitrary", "extreme", "ssr", "ablation")
ARBITRARY_BANDS = (31, 16, 11, 7)
EXTREME_BANDS = (41, 51, 61)
SSR_BANDS = (31, 61)
ABLATION_BANDS = 31

# Variant name -> ModelConfig overrides. "full" is SPI + NAM with spatial-spectral attention.
ABLATIONS = {
    "full": {},
    "no_spi": {"enable_spi": False},
    "no_nam": {"enable_nam": False},
    "spectral": {"attention_variant": "spectral"},
    "spatial": {"attention_variant": "spatial"},
}

# Error maps are written to PGM on a linear scale where 255 means this MRAE or more.
PGM_MAX_ERROR = 1.0


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    config_hash: str = ""
    seeds: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    ordering: Optional[dict] = None
    # Wall-clock seconds per stage; kept out of the report file so repeated
    # runs produce byte-identical reports.
    wall_clock: dict = field(default_factory=dict)

    def add(self, experiment: str, bands: int, method: str, result: dict) -> None:
        self.rows.append({
            "experiment": experiment, "bands": int(bands), "method": method,
            "mrae": result["mrae"], "rmse": result["rmse"],
        })

    def lookup(self, experiment: str, bands: int, method: str) -> dict:
        for r in self.rows:
            if (r["experiment"], r["bands"], r["method"]) == (experiment, bands, method):
                return r
        raise KeyError((experiment, bands, method))

    def to_dict(self) -> dict:
        d = {"rows": self.rows, "config_hash": self.config_hash, "seeds": self.seeds,
             "notes": self.notes}
        if self.ordering is not None:
            d["ordering"] = self.ordering
        return d

    def validate(self) -> None:
        for r in self.rows:
            if not (np.isfinite(r["mrae"]) and np.isfinite(r["rmse"])):
                raise UsageError(f"non-finite metric in report row {r}")

    def write(self, path) -> None:
        self.validate()
        path = Path(path)
        io.write_json(path, self.to_dict())
        io.write_json(path.with_name(path.stem + ".timing.json"), {"wall_clock": self.wall_clock})


def config_hash(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def write_error_map(base_path, emap: np.ndarray, vmax: float = PGM_MAX_ERROR) -> tuple[Path, Path]:
    """Write ``emap`` as ``<base>.nsrt`` (float64) and ``<base>.pgm`` (8-bit, 0..vmax -> 0..255)."""
    base = Path(base_path)
    tensor_path = base.with_suffix(".nsrt")
    pgm_path = base.with_suffix(".pgm")
    io.write_tensor(tensor_path, np.asarray(emap, dtype=np.float64))
    pixels = np.clip(np.rint(np.asarray(emap) / vmax * 255.0), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    header = f"P5\n# per-pixel MRAE, linear scale, 255 = {vmax:g}\n{w} {h}\n255\n".encode("ascii")
    pgm_path.write_bytes(header + pixels.tobytes())
    return tensor_path, pgm_path


def read_pgm(path) -> tuple[np.ndarray, str]:
    """Pixels and the comment line of a P5 file written by :func:`write_error_map`."""
    raw = Path(path).read_bytes()
    lines = raw.split(b"\n", 4)
    if lines[0] != b"P5":
        raise UsageError(f"{path} is not a binary PGM")
    comment = lines[1].decode("ascii")
    w, h = (int(v) for v in lines[2].split())
    return np.frombuffer(lines[4], dtype=np.uint8).reshape(h, w), comment


def _ckpt_doc(ckpt: Checkpoint) -> dict:
    return {"model": ckpt.model.config.to_dict(), "train": ckpt.train_config.to_dict(),
            "iteration": ckpt.iteration}


def _require(checkpoints: dict, name: str, mode: str) -> Checkpoint:
    ck = checkpoints.get(name)
    if ck is None:
        raise UsageError(f"bench mode {mode!r} needs a checkpoint named {name!r}")
    return Checkpoint.load(ck) if isinstance(ck, (str, Path)) else ck


def _eval_rows(report: EvalReport, experiment: str, ckpt: Checkpoint, scenes, bands_list,
               methods, workers: int, maps_dir: Optional[Path]) -> None:
    for bands in bands_list:
        wl = uniform_grid(bands)
        for method, label in methods:
            model = None if method == "bi" else ckpt.model
            res = evaluate(model, scenes, wl, ckpt.train_config, method=method, workers=workers)
            report.add(experiment, bands, label, res)
        if maps_dir is not None:
            inp, gt = render_pair(scenes[0], wl, ckpt.train_config)
            pred = predict_volume("model", ckpt.model, inp, wl, ckpt.train_config)
            write_error_map(maps_dir / f"{experiment}_{bands}_model_scene0", error_map(pred, gt))


def benchmark_suite(mode: str, checkpoints: dict, scenes: Sequence[SpectralScene],
                    train_scenes: Optional[Sequence[SpectralScene]] = None,
                    ablation_train: Optional[TrainConfig] = None,
                    ablation_model: Optional[dict] = None,
                    workers: int = 1, out_dir=None) -> EvalReport:
    """Evaluate one protocol and return its report.

    ``checkpoints`` maps names to :class:`Checkpoint` objects or paths:
      arbitrary -- "arbitrary" (band-agnostic model), optional "fixed_<B>"
                   dedicated checkpoints for B in 31/16/11/7
      extreme   -- "arbitrary"
      ssr       -- "ssr" (spectral-input model)
      ablation  -- one per ABLATIONS name; any that are missing are trained
                   from ``train_scenes`` with ``ablation_train``
    """
    if mode not in MODES:
        raise UsageError(f"unknown bench mode {mode!r}; choose from {', '.join(MODES)}")
    if not scenes:
        raise UsageError("bench needs at least one evaluation scene")
    maps_dir = None
    if out_dir is not None:
        maps_dir = Path(out_dir) / "error_maps"
        maps_dir.mkdir(parents=True, exist_ok=True)
    report = EvalReport(seeds={"scenes": [int(s.seed) for s in scenes]})
    t0 = time.perf_counter()
    docs = {}

    if mode in ("arbitrary", "extreme"):
        ck = _require(checkpoints, "arbitrary", mode)
        docs["arbitrary"] = _ckpt_doc(ck)
        bands_list = ARBITRARY_BANDS if mode == "arbitrary" else EXTREME_BANDS
        methods = [("model", "model"), ("bi", "bi")]
        if mode == "arbitrary":
            methods.append(("two_step", "two_step"))
            report.notes.append("two_step: 61-band reconstruction resized to the target "
                                "band count with the endpoint-aligned linear resize")
        _eval_rows(report, mode, ck, scenes, bands_list, methods, workers, maps_dir)
        if mode == "arbitrary":
            for bands in ARBITRARY_BANDS:
                name = f"fixed_{bands}"
                if name not in checkpoints:
                    continue
                fck = _require(checkpoints, name, mode)
                docs[name] = _ckpt_doc(fck)
                res = evaluate(fck.model, scenes, uniform_grid(bands), fck.train_config,
                               workers=workers)
                report.add(mode, bands, "fixed", res)
        report.seeds["train"] = {k: d["train"]["seed"] for k, d in docs.items()}

    elif mode == "ssr":
        ck = _require(checkpoints, "ssr", mode)
        if ck.train_config.input_mode != "spectral":
            raise UsageError("ssr checkpoint was not trained on spectral input")
        docs["ssr"] = _ckpt_doc(ck)
        _eval_rows(report, mode, ck, scenes, SSR_BANDS, [("model", "model"), ("bi", "spectral_bi")],
                   workers, maps_dir)
        report.seeds["train"] = {"ssr": ck.train_config.seed}

    else:
        results = {}
        for name, overrides in ABLATIONS.items():
            if name in checkpoints:
                ck = _require(checkpoints, name, mode)
            else:
                if train_scenes is None or ablation_train is None:
                    raise UsageError(f"bench mode 'ablation' needs a checkpoint named {name!r} "
                                     "or training scenes to build it")
                cfg = dict(ablation_model or {})
                cfg.update(overrides)
                cfg.setdefault("in_channels", input_channels(ablation_train))
                ck = train(train_scenes, ModelConfig(**cfg), ablation_train)
            docs[name] = _ckpt_doc(ck)
            res = evaluate(ck.model, scenes, uniform_grid(ABLATION_BANDS), ck.train_config,
                           workers=workers)
            report.add(mode, ABLATION_BANDS, name, res)
            results[name] = res["mrae"]
        violations = [n for n in ABLATIONS if n != "full" and results["full"] > results[n]]
        report.ordering = {"holds": not violations, "full": results["full"],
                           "violations": violations}
        if violations:
            report.notes.append("ablation ordering failed: full model is worse than "
                                + ", ".join(violations))
        report.seeds["train"] = {k: d["train"]["seed"] for k, d in docs.items()}

    report.config_hash = config_hash({"mode": mode, "checkpoints": docs,
                                      "scenes": report.seeds["scenes"]})
    report.wall_clock[mode] = time.perf_counter() - t0
    report.validate()
    if out_dir is not None:
        report.write(Path(out_dir) / f"report_{mode}.json")
    return report
