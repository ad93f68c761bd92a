"""Command-line entry point: gen-data, train, eval, bench, reconstruct.

Exit codes: 0 success, 1 usage error (bad flags, config, paths or band
grids), 2 runtime failure (corrupt files, non-finite loss, I/O errors).
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import platform
import sys
from pathlib import Path
from typing import Optional

import numpy as np

import nesr
from nesr.core.kernels import BACKEND
from nesr.data import io
from nesr.data.dataset import generate_dataset, load_manifest_scenes, load_scene
from nesr.data.scene import SpectralImage, sample_bands, uniform_grid, validate_wavelengths
from nesr.errors import ConfigurationError, DomainError, FormatError, NesrError, UsageError
from nesr.model import ModelConfig
from nesr.training import Checkpoint, TrainConfig, input_channels, render_input, train

log = logging.getLogger("nesr")

CONFIG_SECTIONS = ("model", "train", "seed", "workers", "strict")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_bands(text: str) -> np.ndarray:
    """``start:step:stop`` (stop included when it lands on the grid), a band count, or a comma list."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3:
                raise ValueError
            start, step, stop = parts
            if step <= 0:
                raise UsageError(f"--bands step must be positive, got {step:g}")
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            wl = start + step * np.arange(max(n, 0))
        elif "," in text:
            wl = np.array([float(p) for p in text.split(",")])
        else:
            wl = uniform_grid(int(text))
    except ValueError:
        raise UsageError(f"cannot parse --bands {text!r}; use start:step:stop, a count, "
                         "or a comma list of nm values") from None
    try:
        return validate_wavelengths(wl)
    except DomainError as exc:
        raise UsageError(f"--bands {text!r}: {exc}") from None


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def resolve_config(path: Optional[str], overrides: list, seed: Optional[int]) -> dict:
    """Merge defaults, the JSON config file, ``--set`` overrides and the seed."""
    doc: dict = {"model": {}, "train": {}}
    if path:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file {path} not found")
        try:
            loaded = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        unknown = set(loaded) - set(CONFIG_SECTIONS)
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}; allowed: {list(CONFIG_SECTIONS)}")
        for k, v in loaded.items():
            doc[k] = dict(v) if isinstance(v, dict) else v
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.split(".")
        if parts[0] not in CONFIG_SECTIONS or len(parts) > 2 or \
                (len(parts) == 2) != (parts[0] in ("model", "train")):
            raise UsageError(f"--set key {key!r} must be model.<field>, train.<field>, "
                             "seed, workers or strict")
        if len(parts) == 2:
            doc[parts[0]][parts[1]] = _coerce(value)
        else:
            doc[parts[0]] = _coerce(value)
    if seed is None and "seed" not in doc:
        env = os.environ.get("NESR_SEED")
        if env is not None:
            try:
                seed = int(env)
            except ValueError:
                raise UsageError(f"NESR_SEED must be an integer, got {env!r}") from None
    if seed is not None:
        doc["seed"] = int(seed)
    doc.setdefault("seed", 0)
    doc["train"]["seed"] = doc["seed"]
    try:
        train_cfg = TrainConfig.from_dict(doc["train"])
        model_doc = dict(doc["model"])
        model_doc.setdefault("in_channels", input_channels(train_cfg))
        model_cfg = ModelConfig.from_dict(model_doc)
    except TypeError as exc:
        raise UsageError(f"bad config value: {exc}") from None
    doc["train"] = train_cfg.to_dict()
    doc["model"] = model_cfg.to_dict()
    return doc


def version_info() -> dict:
    return {"nesr": nesr.__version__, "kernels": BACKEND, "numpy": np.__version__,
            "python": platform.python_version()}


def _echo(out: Path, command: str, argv: list, config: dict) -> None:
    """Record the resolved config, arguments and code version before any work starts."""
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "run.json", {"command": command, "argv": argv, "config": config,
                                     "version": version_info()})


def _manifest(path: str, split: str) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / f"manifest_{split}.json"
    if not p.is_file():
        raise UsageError(f"manifest {p} not found; run `nesr gen-data --out DIR` first")
    return p


def _load_ckpt(path: Optional[str]) -> Checkpoint:
    if not path:
        raise UsageError("--checkpoint is required")
    if not Path(path).is_file():
        raise UsageError(f"checkpoint {path} not found")
    return Checkpoint.load(path)


@contextlib.contextmanager
def _threads(strict: bool):
    if not strict:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


# --- subcommands --------------------------------------------------------------------

def cmd_gen_data(args, config) -> None:
    paths = generate_dataset(args.out, args.scenes, args.test_scenes, config["seed"], args.size)
    for split, p in paths.items():
        print(f"{split}: {p}")


def cmd_train(args, config) -> None:
    scenes = load_manifest_scenes(_manifest(args.data, "train"), args.limit)
    out = Path(args.out)
    resume = _load_ckpt(args.resume) if args.resume else None
    cfg = TrainConfig.from_dict(config["train"])
    if resume is not None:
        # keep the resumed run's settings, but allow extending max_iters
        cfg = TrainConfig.from_dict(dict(resume.train_config.to_dict(), max_iters=cfg.max_iters))
    ckpt = train(scenes, ModelConfig.from_dict(config["model"]), cfg, resume=resume,
                 checkpoint_path=out / "checkpoint.nsrk", checkpoint_every=args.checkpoint_every)
    io.write_tensor(out / "loss_trace.nsrt", np.asarray(ckpt.loss_trace, dtype=np.float64))
    print(f"checkpoint: {out / 'checkpoint.nsrk'} (final loss {ckpt.loss_trace[-1]:.5f})")


def cmd_eval(args, config) -> None:
    from nesr.benchmark import EvalReport, config_hash
    from nesr.evaluation import evaluate
    ckpt = _load_ckpt(args.checkpoint) if args.method != "bi" else None
    scenes = load_manifest_scenes(_manifest(args.data, "test"), args.limit)
    wl = parse_bands(args.bands)
    train_cfg = ckpt.train_config if ckpt else TrainConfig.from_dict(config["train"])
    res = evaluate(ckpt.model if ckpt else None, scenes, wl, train_cfg, method=args.method,
                   workers=args.workers)
    report = EvalReport(seeds={"scenes": [int(s.seed) for s in scenes]})
    report.add("eval", wl.size, args.method, res)
    # identify the checkpoint by content, not path, so reruns elsewhere hash the same
    ck_doc = None if ckpt is None else {"model": ckpt.model.config.to_dict(),
                                        "iteration": ckpt.iteration}
    report.config_hash = config_hash({"checkpoint": ck_doc, "bands": wl.tolist(),
                                      "method": args.method, "train": train_cfg.to_dict()})
    report.write(Path(args.out) / "report.json")
    print(f"MRAE {res['mrae']:.6f}  RMSE {res['rmse']:.6f}")


def cmd_bench(args, config) -> None:
    from nesr.benchmark import benchmark_suite
    checkpoints = {}
    for item in args.checkpoint or []:
        name, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"--checkpoint expects name=path, got {item!r}")
        checkpoints[name] = _load_ckpt(path)
    scenes = load_manifest_scenes(_manifest(args.data, "test"), args.limit)
    train_scenes = None
    train_cfg = None
    if args.mode == "ablation":
        train_scenes = load_manifest_scenes(_manifest(args.data, "train"))
        train_cfg = TrainConfig.from_dict(config["train"])
    report = benchmark_suite(args.mode, checkpoints, scenes, train_scenes=train_scenes,
                             ablation_train=train_cfg, ablation_model=config["model"],
                             workers=args.workers, out_dir=args.out)
    for r in report.rows:
        print(f"{r['experiment']:>9} {r['bands']:>3} {r['method']:>12}  "
              f"MRAE {r['mrae']:.5f}  RMSE {r['rmse']:.5f}")
    if report.ordering is not None:
        print("ordering holds" if report.ordering["holds"]
              else f"ordering FAILED: {report.ordering['violations']}")


def cmd_reconstruct(args, config) -> None:
    from nesr.benchmark import write_error_map
    from nesr.evaluation import error_map, mrae
    ckpt = _load_ckpt(args.checkpoint)
    wl = parse_bands(args.bands)
    gt = None
    if args.input:
        p = Path(args.input)
        if not p.is_file():
            raise UsageError(f"input {args.input} not found")
        inp, _, _ = io.decode_tensor(p.read_bytes())
        if args.gt:
            g = io.read_spectral_image(args.gt)
            if not np.array_equal(g.wavelengths, wl):
                raise UsageError("--gt wavelengths differ from --bands")
            gt = g.volume
    else:
        if not (args.data and args.scene_id):
            raise UsageError("reconstruct needs --input FILE or --data DIR --scene-id ID")
        manifest_path = None
        entry = None
        for split in ("test", "train"):
            p = Path(args.data) / f"manifest_{split}.json"
            if p.is_file():
                m = io.read_manifest(p)
                entry = next((e for e in m["scenes"] if e["id"] == args.scene_id), None)
                if entry is not None:
                    manifest_path = p
                    break
        if entry is None:
            raise UsageError(f"scene {args.scene_id!r} not listed in {args.data}")
        scene = load_scene(manifest_path, entry)
        inp = render_input(scene, ckpt.train_config)
        gt = sample_bands(scene, wl).volume
    expected = ckpt.model.config.in_channels
    if inp.ndim != 3 or inp.shape[0] != expected:
        raise UsageError(f"input shape {inp.shape} does not match the model's {expected} channels")
    pred = ckpt.model.predict(inp.astype(ckpt.model.dtype), wl)
    out = Path(args.out)
    io.write_spectral_image(out / "prediction.nsrt", SpectralImage(wl, pred.volume))
    print(f"prediction: {out / 'prediction.nsrt'} ({wl.size} bands)")
    if gt is not None:
        t, g = write_error_map(out / "error_map", error_map(pred.volume, gt))
        print(f"MRAE {mrae(pred.volume, gt):.6f}; error map: {g}")


# --- argument parsing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nesr", description="Continuous spectral reconstruction from RGB or low-band input.")
    p.add_argument("--version", action="version",
                   version=f"nesr {nesr.__version__} (kernels: {BACKEND})")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, needs_out=True):
        sp.add_argument("--config", help="JSON file with model/train sections")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted override, e.g. train.lr0=1e-3 (repeatable)")
        sp.add_argument("--seed", type=int, help="base seed (falls back to $NESR_SEED, then 0)")
        sp.add_argument("--out", required=needs_out, help="output directory")
        sp.add_argument("--workers", type=int, default=1, help="evaluation worker processes")
        sp.add_argument("--strict", action="store_true",
                        help="single-threaded BLAS and one worker, for bitwise reproducibility")
        sp.add_argument("-v", "--verbose", action="store_true")

    g = sub.add_parser("gen-data", help="generate synthetic train/test scenes")
    common(g)
    g.add_argument("--scenes", type=int, default=64, help="training scenes")
    g.add_argument("--test-scenes", type=int, default=8)
    g.add_argument("--size", type=int, default=64, help="scene height and width")

    t = sub.add_parser("train", help="train a model")
    common(t)
    t.add_argument("--data", required=True, help="dataset directory or train manifest")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--limit", type=int, help="use only the first N training scenes")

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    common(e)
    e.add_argument("--checkpoint", help="checkpoint file (not needed for --method bi)")
    e.add_argument("--data", required=True)
    e.add_argument("--bands", default="400:10:700")
    e.add_argument("--method", choices=("model", "bi", "two_step"), default="model")
    e.add_argument("--limit", type=int)

    b = sub.add_parser("bench", help="run a protocol benchmark")
    common(b)
    b.add_argument("--mode", required=True, choices=("arbitrary", "extreme", "ssr", "ablation"))
    b.add_argument("--checkpoint", action="append", metavar="NAME=PATH",
                   help="e.g. arbitrary=run/checkpoint.nsrk, fixed_31=..., ssr=...")
    b.add_argument("--data", required=True)
    b.add_argument("--limit", type=int)

    r = sub.add_parser("reconstruct", help="reconstruct one image at a band grid")
    common(r)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--bands", default="400:10:700")
    r.add_argument("--input", help="input tensor file (C x H x W)")
    r.add_argument("--gt", help="ground-truth spectral image for an error map")
    r.add_argument("--data", help="dataset directory (with --scene-id)")
    r.add_argument("--scene-id")
    return p


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "bench": cmd_bench, "reconstruct": cmd_reconstruct}


def main(argv: Optional[list] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand; choose one of " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        config = resolve_config(args.config, args.set, args.seed)
        if args.strict or config.get("strict"):
            args.strict = True
            args.workers = 1
        config["strict"] = bool(args.strict)
        config["workers"] = args.workers
        _echo(Path(args.out), args.command, argv, config)
        with _threads(args.strict):
            COMMANDS[args.command](args, config)
        return 0
    except (UsageError, ConfigurationError, DomainError) as exc:
        print(f"nesr: error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, NesrError, OSError) as exc:
        print(f"nesr: failed: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("nesr: interrupted", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
