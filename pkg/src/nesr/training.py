"""Training loop, learning-rate schedule and checkpoints."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from nesr.core.optim import AdamState, adam_step
from nesr.core.tensor import backward, recording
from nesr.data import io
from nesr.data.scene import (
    CameraResponse,
    SpectralScene,
    project_to_rgb,
    sample_bands,
    uniform_grid,
)
from nesr.errors import ConfigurationError, NonFiniteInputError, NonFiniteLossError, UsageError
from nesr.model import ModelConfig, NeSR, mrae_loss

log = logging.getLogger(__name__)

BAND_SAMPLING = ("fixed", "uniform_random")
INPUT_MODES = ("rgb", "spectral")


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    decay_every: int = 500
    max_iters: int = 2000
    crop: int = 32
    batch_size: int = 4
    band_sampling: str = "uniform_random"
    bands: int = 31  # used by fixed sampling
    band_min: int = 7
    band_max: int = 31
    input_mode: str = "rgb"
    input_bands: int = 16  # spectral input band count
    rgb_grid_bands: int = 61  # grid the RGB input is integrated over
    query_samples: Optional[int] = None  # voxels decoded per sample; None = all
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    loss_eps: float = 1e-3
    seed: int = 0
    init_seed: Optional[int] = None  # weight init seed; defaults to seed
    log_every: int = 100

    def __post_init__(self):
        if self.decay_every < 1:
            raise ConfigurationError("decay_every must be >= 1")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.batch_size < 1 or self.crop < 1:
            raise ConfigurationError("batch_size and crop must be >= 1")
        if self.band_sampling not in BAND_SAMPLING:
            raise ConfigurationError(f"band_sampling must be one of {BAND_SAMPLING}")
        if self.input_mode not in INPUT_MODES:
            raise ConfigurationError(f"input_mode must be one of {INPUT_MODES}")
        if not 1 <= self.band_min <= self.band_max:
            raise ConfigurationError("need 1 <= band_min <= band_max")
        if self.query_samples is not None and self.query_samples < 1:
            raise ConfigurationError("query_samples must be >= 1 or None")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def paper_schedule(**overrides) -> TrainConfig:
    """Full-length optimisation constants (64x64 crops, 3e5 iterations)."""
    base = dict(decay_every=20_000, max_iters=300_000, crop=64)
    base.update(overrides)
    return TrainConfig(**base)


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """lr0 * 0.5 ** floor(iteration / decay_every)."""
    if iteration < 0:
        raise ConfigurationError("iteration must be >= 0")
    return cfg.lr0 * 0.5 ** (iteration // cfg.decay_every)


@dataclass
class Checkpoint:
    model: NeSR
    optimizer: AdamState
    iteration: int
    rng_state: dict
    train_config: TrainConfig
    loss_trace: list

    def save(self, path) -> None:
        tensors = dict(self.model.state_arrays())
        for name, m in self.optimizer.first_moment.items():
            tensors[f"adam.m/{name}"] = m
        for name, v in self.optimizer.second_moment.items():
            tensors[f"adam.v/{name}"] = v
        meta = {
            "config": self.model.config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "iteration": self.iteration,
            "rng_state": self.rng_state,
            "dtype": np.dtype(self.model.dtype).name,
            "adam": {"step_count": self.optimizer.step_count, "lr": self.optimizer.lr,
                     "beta1": self.optimizer.beta1, "beta2": self.optimizer.beta2,
                     "eps_opt": self.optimizer.eps_opt},
            "loss_trace": [float(x) for x in self.loss_trace],
        }
        io.write_container(path, meta, tensors)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        meta, tensors = io.read_container(path)
        cfg = ModelConfig.from_dict(meta["config"])
        dtype = np.dtype(meta.get("dtype", "float32")).type
        model = NeSR.create(cfg, seed=0, dtype=dtype)
        weights = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
        model.load_arrays(weights)
        opt = AdamState(**{k: meta["adam"][k] for k in ("lr", "beta1", "beta2", "eps_opt")})
        opt.step_count = int(meta["adam"]["step_count"])
        for k, v in tensors.items():
            if k.startswith("adam.m/"):
                opt.first_moment[k[7:]] = v.copy()
            elif k.startswith("adam.v/"):
                opt.second_moment[k[7:]] = v.copy()
        return cls(model, opt, int(meta["iteration"]), meta["rng_state"],
                   TrainConfig.from_dict(meta["train_config"]), list(meta.get("loss_trace", [])))


def sample_band_count(rng: np.random.Generator, cfg: TrainConfig) -> int:
    if cfg.band_sampling == "fixed":
        return cfg.bands
    return int(rng.integers(cfg.band_min, cfg.band_max + 1))


def render_input(scene: SpectralScene, cfg: TrainConfig, region=None,
                 camera: Optional[CameraResponse] = None) -> np.ndarray:
    """Model input for a scene window: RGB, or a low-band spectral cube."""
    if cfg.input_mode == "rgb":
        img = sample_bands(scene, uniform_grid(cfg.rgb_grid_bands), region)
        return project_to_rgb(img, camera or CameraResponse())
    return sample_bands(scene, uniform_grid(cfg.input_bands), region).volume


def input_channels(cfg: TrainConfig) -> int:
    return 3 if cfg.input_mode == "rgb" else cfg.input_bands


def train_step(model: NeSR, batch: Sequence[tuple], wavelengths: np.ndarray, rows_list,
               eps: float) -> float:
    """Accumulate gradients of the batch-mean MRAE; returns the loss value."""
    model.zero_grad()
    total = 0.0
    n = len(batch)
    for (inp, gt), rows in zip(batch, rows_list):
        with recording() as tape:
            if rows is None:
                y = model.forward(inp, wavelengths)
                loss = mrae_loss(y, gt, eps)
            else:
                y = model.forward(inp, wavelengths, rows=rows)
                loss = mrae_loss(y, gt.reshape(-1)[rows], eps)
            scaled = loss * (1.0 / n)
        backward(scaled, tape)
        tape.release()
        total += loss.item() / n
    return total


def train(scenes: Sequence[SpectralScene], model_cfg: ModelConfig, cfg: TrainConfig,
          resume: Optional[Checkpoint] = None, dtype=np.float32,
          callback: Optional[Callable[[int, float], None]] = None,
          checkpoint_path=None, checkpoint_every: int = 0) -> Checkpoint:
    """Optimise a model on random crops of ``scenes``; returns the final checkpoint.

    Each iteration draws one band grid, then ``batch_size`` (scene, crop)
    pairs. All randomness comes from one generator seeded by ``cfg.seed``
    whose state is stored in the checkpoint, so resuming reproduces the
    uninterrupted trajectory.
    """
    if not scenes:
        raise UsageError("training split is empty")
    if model_cfg.in_channels != input_channels(cfg):
        raise ConfigurationError(
            f"model in_channels={model_cfg.in_channels} but input_mode={cfg.input_mode!r} "
            f"yields {input_channels(cfg)} channels"
        )
    for s in scenes:
        if cfg.crop > min(s.height, s.width):
            raise ConfigurationError(f"crop {cfg.crop} exceeds scene extent {s.height}x{s.width}")

    if resume is None:
        init_seed = cfg.seed if cfg.init_seed is None else cfg.init_seed
        model = NeSR.create(model_cfg, seed=init_seed, dtype=dtype)
        opt = AdamState(lr=cfg.lr0, beta1=cfg.beta1, beta2=cfg.beta2, eps_opt=cfg.eps_opt)
        rng = np.random.default_rng(cfg.seed)
        start = 0
        trace: list = []
    else:
        model, opt = resume.model, resume.optimizer
        rng = np.random.default_rng()
        rng.bit_generator.state = resume.rng_state
        start = resume.iteration
        trace = list(resume.loss_trace)

    camera = CameraResponse()
    params = model.parameters()
    t0 = time.perf_counter()
    for it in range(start, cfg.max_iters):
        bands = sample_band_count(rng, cfg)
        wl = uniform_grid(bands)
        batch, rows_list = [], []
        for _ in range(cfg.batch_size):
            scene = scenes[int(rng.integers(len(scenes)))]
            top = int(rng.integers(scene.height - cfg.crop + 1))
            left = int(rng.integers(scene.width - cfg.crop + 1))
            region = (top, left, cfg.crop, cfg.crop)
            gt = sample_bands(scene, wl, region).volume
            inp = render_input(scene, cfg, region, camera).astype(dtype)
            n_vox = gt.size
            if cfg.query_samples is not None and cfg.query_samples < n_vox:
                rows = np.sort(rng.choice(n_vox, size=cfg.query_samples, replace=False))
            else:
                rows = None
            batch.append((inp, gt))
            rows_list.append(rows)
        lr = lr_at(it, cfg)
        try:
            loss = train_step(model, batch, wl, rows_list, cfg.loss_eps)
        except NonFiniteInputError as exc:
            raise NonFiniteLossError(
                f"non-finite activations at iteration {it} (lr={lr:g}, seed={cfg.seed}): {exc}"
            ) from exc
        if not np.isfinite(loss):
            raise NonFiniteLossError(
                f"non-finite loss {loss} at iteration {it} (lr={lr:g}, seed={cfg.seed})"
            )
        grads = {name: p.grad for name, p in params.items()}
        adam_step(params, grads, opt, lr=lr)
        trace.append(loss)
        if callback is not None:
            callback(it, loss)
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            recent = float(np.mean(trace[-cfg.log_every:]))
            log.info("iter %d/%d loss %.5f lr %.2e (%.1fs)", it + 1, cfg.max_iters, recent, lr,
                     time.perf_counter() - t0)
        if checkpoint_path and checkpoint_every and (it + 1) % checkpoint_every == 0:
            Checkpoint(model, opt, it + 1, rng.bit_generator.state, cfg, trace).save(checkpoint_path)

    ckpt = Checkpoint(model, opt, cfg.max_iters, rng.bit_generator.state, cfg, trace)
    if checkpoint_path:
        ckpt.save(checkpoint_path)
    return ckpt
