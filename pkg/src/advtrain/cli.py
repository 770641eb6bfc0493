"""Command-line entry point.

Every command writes its outputs under ``--out`` together with a resolved
configuration snapshot (``config.resolved.yaml``) and a ``MANIFEST.json``
listing the sha256 of each artifact.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import data as dio
from . import network as nw
from . import training as tr
from . import transfer as tf
from . import video as vd
from .degrade import degrade_dataset, parse_spec

log = logging.getLogger("advtrain")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- configuration -------------------------------------------------------------------


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise dio.DataError(f"no such config file: {p}")
    cfg = yaml.safe_load(p.read_text()) or {}
    if not isinstance(cfg, dict):
        raise UsageError(f"config {p} must be a mapping at the top level")
    return cfg


def train_config(section: dict | None, seed: int) -> tr.TrainConfig:
    d = dict(section or {})
    d["seed"] = seed
    try:
        return tr.TrainConfig.from_dict(d)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad training options: {e}") from e


def model_spec_from_config(section, image_shape, num_classes) -> nw.ModelSpec:
    """``{preset: name, ...kwargs}`` or an explicit ``{convs, fcs}`` / ``{layers}`` description."""
    section = dict(section or {"preset": "desk"})
    if "preset" in section:
        name = section.pop("preset")
        if name not in nw.PRESETS:
            raise UsageError(f"unknown model preset {name!r}; choose from {sorted(nw.PRESETS)}")
        section.setdefault("num_classes", num_classes)
        if name in ("desk", "cifar"):
            section.setdefault("image_size", image_shape[-1])
        if "widths" in section:
            section["widths"] = tuple(section["widths"])
        spec = nw.PRESETS[name](**section)
    else:
        section.setdefault("input_shape", list(image_shape))
        spec = nw.ModelSpec.from_dict(section)
    if tuple(spec.input_shape) != tuple(image_shape):
        raise dio.DataError(f"model expects input {spec.input_shape}, data has {tuple(image_shape)}")
    return spec


def load_split(ref: str, split: str, data_cfg: dict | None = None) -> dio.LabeledDataset:
    """``ref`` is a dataset directory, a CIFAR-10 binary directory or file, or ``synth_shapes``."""
    data_cfg = data_cfg or {}
    if ref == "synth_shapes":
        counts = {"train": data_cfg.get("train", 2000), "test": data_cfg.get("test", 400)}
        return dio.synth_shapes(
            data_cfg.get("classes", 4), counts.get(split, counts["test"]), data_cfg.get("size", 32),
            data_cfg.get("seed", 0), split,
        )
    p = Path(ref)
    if p.is_dir() and (p / "manifest.json").exists():
        return dio.load_dataset(p, split)
    if (p.is_dir() and (p / "test_batch.bin").exists()) or p.suffix == ".bin":
        return dio.load_cifar10(p, split if p.is_dir() else None)
    raise dio.DataError(f"cannot find a dataset at {ref!r}")


def resolve_seed(args) -> int:
    for value in (getattr(args, "seed", None), getattr(args, "global_seed", None)):
        if value is not None:
            return value
    return int(os.environ.get("ADVTRAIN_SEED", "0"))


class Outputs:
    """Tracks artifacts written under ``--out`` and writes the manifest at the end."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.root / name
        self.files.append(p)
        return p

    def snapshot(self, resolved: dict) -> None:
        p = self.path("config.resolved.yaml")
        p.write_text(yaml.safe_dump(resolved, sort_keys=True))

    def finish(self) -> None:
        entries = {}
        for p in self.files:
            if p.is_file():
                entries[str(p.relative_to(self.root))] = hashlib.sha256(p.read_bytes()).hexdigest()
            elif p.is_dir():
                for f in sorted(p.rglob("*")):
                    if f.is_file():
                        entries[str(f.relative_to(self.root))] = hashlib.sha256(f.read_bytes()).hexdigest()
        dio.write_json(self.root / "MANIFEST.json", {"artifacts": entries})


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _degrade_arg(text: str | None, factor=None):
    if text is None:
        return None
    spec = parse_spec(text)
    return spec.with_factor(factor) if factor is not None else spec


# --- commands ------------------------------------------------------------------------


def cmd_synth(args) -> int:
    seed = resolve_seed(args)
    out = Outputs(args.out)
    splits = {
        "train": dio.synth_shapes(args.classes, args.train, args.size, seed, "train"),
        "test": dio.synth_shapes(args.classes, args.test, args.size, seed, "test"),
    }
    dio.save_dataset(args.out, splits, source_format="synth_shapes", seed=seed)
    for name in ("manifest.json", "train_images.tensor", "train_labels.tensor", "test_images.tensor", "test_labels.tensor"):
        out.path(name)
    if args.videos:
        for split, ds in splits.items():
            videos = dio.synth_videos(ds, args.videos, seed)
            dio.save_videos(out.path(f"videos_{split}"), videos, ds.class_names, seed=seed)
    out.snapshot({**vars_clean(args), "seed": seed})
    out.finish()
    return EXIT_OK


def cmd_degrade(args) -> int:
    spec = parse_spec(args.spec)
    seed = resolve_seed(args)
    out = Outputs(args.out)
    manifest = dio.read_manifest(args.inp) if (Path(args.inp) / "manifest.json").exists() else {}
    names = args.splits.split(",") if args.splits else list(manifest.get("splits", {"train": 0, "test": 0}))
    splits = {}
    for split in names:
        ds = load_split(args.inp, split)
        imgs = degrade_dataset(ds.images, spec, seed, split)
        splits[split] = dio.LabeledDataset(imgs, ds.labels, split, ds.name, ds.class_names)
    dio.save_dataset(args.out, splits, degrade={"spec": spec.to_string(), "seed": seed, "source": str(args.inp)}, seed=seed)
    out.path("manifest.json")
    for split in splits:
        out.path(f"{split}_images.tensor")
        out.path(f"{split}_labels.tensor")
    out.snapshot({"command": "degrade", "in": str(args.inp), "spec": spec.to_string(), "seed": seed, "splits": names})
    out.finish()
    return EXIT_OK


TRAIN_MODES = ("hq", "lq", "rap-non-joint", "rap", "arap")


def cmd_train(args) -> int:
    conf = load_config(args.config)
    seed = resolve_seed(args)
    mode = args.mode or conf.get("mode")
    if mode not in TRAIN_MODES:
        raise UsageError(f"--mode must be one of {TRAIN_MODES}")
    degrade_text = args.degrade or conf.get("degrade")
    alpha_val = args.alpha if args.alpha is not None else conf.get("alpha")
    beta_val = args.beta if args.beta is not None else conf.get("beta")
    k = args.k if args.k is not None else conf.get("k", 3)
    k_p = args.kp if args.kp is not None else conf.get("k_p", 2)
    if mode != "hq" and degrade_text is None:
        raise UsageError(f"--mode {mode} needs --degrade")
    if mode == "arap" and beta_val is None:
        raise UsageError("--mode arap needs --beta")
    alpha = _degrade_arg(degrade_text, alpha_val)
    data_ref = args.data or conf.get("data", {}).get("path", "synth_shapes")
    data_cfg = conf.get("data", {})
    train = load_split(data_ref, "train", data_cfg)
    test = load_split(data_ref, "test", data_cfg)
    spec = model_spec_from_config(conf.get("model"), train.image_shape, train.num_classes)
    cfg = train_config(conf.get("train"), seed)

    out = Outputs(args.out)
    metrics = dio.MetricsLog(out.path("metrics.jsonl"))
    if metrics.path.exists():
        metrics.path.unlink()
    resolved = {
        "command": "train", "mode": mode, "data": data_ref, "data_options": data_cfg,
        "degrade": alpha.to_string() if alpha else None, "beta": beta_val, "k": k, "k_p": k_p,
        "model": spec.to_dict(), "train": cfg.to_dict(), "seed": seed,
    }
    out.snapshot(resolved)

    sub = None
    if mode in ("rap", "arap", "rap-non-joint") and k_p:
        beta = tr.as_severity(alpha, beta_val) if mode == "arap" else alpha
        if mode == "arap" and beta.factor < alpha.factor:
            raise UsageError(f"--beta ({beta.factor}) must be at least --alpha ({alpha.factor})")
        sub = tr.pretrain_submodel(spec, train.images, beta, k, k_p, cfg, metrics)
        dio.save_checkpoint(out.path("submodel.ckpt"), sub)
    if mode == "rap":
        model = tr.rap(spec, train, alpha, k, k_p, cfg, metrics, submodel=sub)
    elif mode == "arap":
        model = tr.arap(spec, train, alpha, beta_val, k, k_p, cfg, metrics, submodel=sub)
    else:
        model = tr.train_baseline(spec, train, mode, alpha, cfg, k, k_p, metrics, submodel=sub)
    model.provenance["data"] = data_ref
    ckpt_hash = dio.save_checkpoint(out.path("model.ckpt"), model)
    report = tr.evaluate(model, test, alpha, seed=seed)
    report.provenance["checkpoint"] = ckpt_hash
    metrics({"stage": "eval", "split": "test", "iteration": cfg.tune_iters, "top1": report.top1, "top5": report.top5})
    dio.write_json(out.path("eval.json"), report.to_dict())
    out.finish()
    print(f"{mode}: top-1 {report.top1:.2f}  top-5 {report.top5:.2f}  ({len(test)} test images)")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = dio.load_checkpoint(args.ckpt)
    seed = resolve_seed(args)
    test = load_split(args.data, args.split)
    spec = parse_spec(args.degrade) if args.degrade else None
    report = tr.evaluate(model, test, spec, seed=seed)
    report.provenance["checkpoint_file"] = str(args.ckpt)
    _print_json(report.to_dict())
    if args.out:
        out = Outputs(args.out)
        dio.write_json(out.path("eval.json"), report.to_dict())
        out.snapshot({"command": "eval", "ckpt": str(args.ckpt), "data": args.data, "split": args.split,
                      "degrade": spec.to_string() if spec else None, "seed": seed})
        out.finish()
    return EXIT_OK


def cmd_fuse(args) -> int:
    single = dio.load_checkpoint(args.ckpt)
    fused = vd.fuse(single, args.kind, args.T)
    fused.provenance["parent_checkpoint"] = hashlib.sha256(Path(args.ckpt).read_bytes()).hexdigest()
    out = Outputs(args.out)
    dio.save_checkpoint(out.path("fused.ckpt"), fused)
    out.snapshot({"command": "fuse", "ckpt": str(args.ckpt), "kind": args.kind, "T": args.T})
    out.finish()
    print(f"{args.kind} fusion, {fused.spec.frames} frames, {fused.param_count()} parameters")
    return EXIT_OK


def _clip_T(model) -> int:
    if model.spec.fusion is None:
        raise dio.DataError("checkpoint is not a fused video model")
    return (model.spec.frames - 1) // 2


def cmd_video_train(args) -> int:
    conf = load_config(args.config)
    seed = resolve_seed(args)
    model = dio.load_checkpoint(args.ckpt)
    T = _clip_T(model)
    videos = dio.load_videos(args.videos)
    clips, labels = vd.video_clips(videos, T, args.stride)
    cfg = train_config(conf.get("train"), seed)
    out = Outputs(args.out)
    metrics = dio.MetricsLog(out.path("metrics.jsonl"))
    if metrics.path.exists():
        metrics.path.unlink()
    out.snapshot({"command": "video-train", "ckpt": str(args.ckpt), "videos": str(args.videos),
                  "stride": args.stride, "train": cfg.to_dict(), "seed": seed})
    tuned = vd.train_video(model, clips, labels, cfg, log=metrics)
    dio.save_checkpoint(out.path("model.ckpt"), tuned)
    report = vd.evaluate_clips(tuned, clips, labels)
    print(f"clip top-1 (train) {report.top1:.2f}; filter symmetry {'kept' if vd.frames_symmetric(tuned) else 'BROKEN'}")
    out.finish()
    return EXIT_OK


def cmd_video_eval(args) -> int:
    model = dio.load_checkpoint(args.ckpt)
    T = _clip_T(model)
    videos = dio.load_videos(args.videos)
    report = vd.evaluate_videos(model, videos, T, args.stride)
    result = {"video": report.to_dict()}
    if args.single:
        single = dio.load_checkpoint(args.single)
        frame = videos[0].frames[0]
        diff = vd.single_frame_equivalence(single, model, frame)
        tol = 1e-10 if model.dtype == np.float64 else 1e-4
        result["constant_clip_check"] = {"max_abs_diff": diff, "tolerance": tol, "passed": diff <= tol}
    _print_json(result)
    if args.out:
        out = Outputs(args.out)
        dio.write_json(out.path("video_eval.json"), result)
        out.snapshot({"command": "video-eval", "ckpt": str(args.ckpt), "videos": str(args.videos), "stride": args.stride})
        out.finish()
    if args.single and not result["constant_clip_check"]["passed"]:
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_transfer(args) -> int:
    conf = load_config(args.plan)
    seed = resolve_seed(args)
    try:
        p = conf["plan"]
        src_ref, tgt_ref = conf["source"], conf["target"]
    except KeyError as e:
        raise UsageError(f"transfer plan needs a {e.args[0]!r} section") from None
    src_opts = conf.get("source_data", {})
    tgt_opts = conf.get("target_data", {})
    source = load_split(src_ref, "train", src_opts)
    target_train = load_split(tgt_ref, "train", tgt_opts)
    target_test = load_split(tgt_ref, "test", tgt_opts)
    plan = tf.TransferPlan(
        source_id=str(src_ref), target_id=str(tgt_ref), degrade=p["degrade"], beta_prime=p["beta_prime"],
        k=p.get("k", 3), k_p=p.get("k_p", 2),
        source_cfg=train_config(conf.get("source_train"), seed),
        target_cfg=train_config(conf.get("target_train"), seed),
        target_degrade=p.get("target_degrade"),
    )
    s_spec = model_spec_from_config(conf.get("source_model"), source.image_shape, source.num_classes)
    t_spec = model_spec_from_config(conf.get("target_model", conf.get("source_model")), target_train.image_shape, target_train.num_classes)
    out = Outputs(args.out)
    metrics = dio.MetricsLog(out.path("metrics.jsonl"))
    if metrics.path.exists():
        metrics.path.unlink()
    out.snapshot({"command": "transfer", "plan": plan.to_dict(), "source_model": s_spec.to_dict(),
                  "target_model": t_spec.to_dict(), "seed": seed, "layerwise_iters": conf.get("layerwise_iters", 200)})
    result = tf.transfer_comparison(plan, s_spec, source, t_spec, target_train, target_test,
                                    conf.get("layerwise_iters", 200), metrics)
    for arm, m in result["models"].items():
        dio.save_checkpoint(out.path(f"{arm}.ckpt"), m)
    table = {arm: r.to_dict() for arm, r in result["rows"].items()}
    dio.write_json(out.path("comparison.json"), table)
    text = tf.format_comparison(result["rows"])
    out.path("comparison.txt").write_text(text + "\n")
    print(text)
    if args.sweep:
        betas = [float(b) for b in args.sweep.split(",")]
        curve = tf.beta_sweep(plan, betas, s_spec, source, t_spec, target_train, target_test, metrics)
        dio.write_json(out.path("beta_sweep.json"), curve)
        for row in curve:
            print(f"beta'={row['beta_prime']:g}: top-1 {row['top1']:.2f} top-5 {row['top5']:.2f}")
    out.finish()
    return EXIT_OK


def cmd_visualize(args) -> int:
    model = dio.load_checkpoint(args.ckpt)
    sub = dio.load_checkpoint(args.ms_ckpt)
    if not isinstance(sub.spec, nw.SubModelSpec):
        raise dio.DataError(f"{args.ms_ckpt} is not a sub-model checkpoint")
    seed = resolve_seed(args)
    ds = load_split(args.images, args.split)
    imgs = ds.images[: args.count]
    if args.degrade:
        imgs = degrade_dataset(imgs, parse_spec(args.degrade), seed, args.split)
    tuned = tr.visualize_features(model, sub, imgs)
    own = tr.reconstruct(sub, imgs)
    out = Outputs(args.out)
    ext = args.format
    rows = []
    for i in range(len(imgs)):
        for tag, arr in (("input", imgs[i]), ("tuned", tuned[i]), ("submodel", own[i])):
            dio.save_image(out.path(f"{i:04d}_{tag}.{ext}"), arr)
        rows.append({"index": i, "psnr_tuned": tr.psnr(tuned[i], ds.images[i]), "psnr_submodel": tr.psnr(own[i], ds.images[i])})
    summary = {
        "mean_psnr_tuned": float(np.mean([r["psnr_tuned"] for r in rows])),
        "mean_psnr_submodel": float(np.mean([r["psnr_submodel"] for r in rows])),
        "images": rows,
    }
    dio.write_json(out.path("psnr.json"), summary)
    out.snapshot({"command": "visualize", "ckpt": str(args.ckpt), "ms_ckpt": str(args.ms_ckpt), "images": args.images,
                  "split": args.split, "count": args.count, "degrade": args.degrade, "seed": seed})
    out.finish()
    print(f"mean PSNR vs clean: tuned features {summary['mean_psnr_tuned']:.2f} dB, "
          f"sub-model {summary['mean_psnr_submodel']:.2f} dB")
    return EXIT_OK


def vars_clean(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# --- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="advtrain", description="Robust adverse pre-training harness.")
    p.add_argument("--threads", type=int, default=None,
                   help="BLAS threads (default $ADVTRAIN_THREADS or library default); 1 gives the sequential path")
    p.add_argument("--seed", dest="global_seed", type=int, default=None, help="global seed (default $ADVTRAIN_SEED or 0)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic shapes dataset")
    s.add_argument("--out", required=True, help="output dataset directory")
    s.add_argument("--classes", type=int, default=4, help="number of shape classes (1-4)")
    s.add_argument("--train", type=int, default=2000, help="training images")
    s.add_argument("--test", type=int, default=400, help="test images")
    s.add_argument("--size", type=int, default=32, help="image side in pixels")
    s.add_argument("--videos", type=int, default=0, help="also write jittered videos with this many frames")
    s.add_argument("--seed", type=int, default=None, help="generator seed")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("degrade", help="degrade a dataset")
    s.add_argument("--in", dest="inp", required=True, help="input dataset (directory, CIFAR-10 path or synth_shapes)")
    s.add_argument("--out", required=True, help="output dataset directory")
    s.add_argument("--spec", required=True, help="degradation chain, e.g. 'lowres:2|gauss-noise:25'")
    s.add_argument("--splits", default=None, help="comma-separated splits (default: all in the manifest)")
    s.add_argument("--seed", type=int, default=None, help="seed for random degradations")
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("train", help="train a recognizer (baselines, RAP, ARAP)")
    s.add_argument("--mode", choices=TRAIN_MODES, default=None, help="training procedure")
    s.add_argument("--degrade", default=None, help="degradation kind or spec, e.g. 'salt-pepper:0.5'")
    s.add_argument("--alpha", type=float, default=None, help="severity of the training degradation")
    s.add_argument("--beta", type=float, default=None, help="severity used to pre-train the sub-model (arap)")
    s.add_argument("--k", type=int, default=None, help="sub-model depth")
    s.add_argument("--kp", type=int, default=None, help="shared prefix length")
    s.add_argument("--config", default=None, help="YAML config file")
    s.add_argument("--data", default=None, help="dataset (directory, CIFAR-10 path or synth_shapes)")
    s.add_argument("--seed", type=int, default=None, help="training seed")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="top-1/top-5 accuracy of a checkpoint")
    s.add_argument("--ckpt", required=True, help="model checkpoint")
    s.add_argument("--data", required=True, help="dataset")
    s.add_argument("--split", default="test", help="split to evaluate")
    s.add_argument("--degrade", default=None, help="degrade test images with this spec first")
    s.add_argument("--seed", type=int, default=None, help="seed for random test degradations")
    s.add_argument("--out", default=None, help="optional output directory for eval.json")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("fuse", help="build an early/slow fusion video model from a single-frame model")
    s.add_argument("--ckpt", required=True, help="single-frame checkpoint")
    s.add_argument("--kind", choices=vd.FUSIONS, required=True, help="fusion kind")
    s.add_argument("--T", type=int, required=True, help="clips hold 2T+1 frames")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("video-train", help="tune a fused model on video clips")
    s.add_argument("--ckpt", required=True, help="fused checkpoint")
    s.add_argument("--videos", required=True, help="video directory")
    s.add_argument("--stride", type=int, default=1, help="clip stride in frames")
    s.add_argument("--config", default=None, help="YAML config file (train section)")
    s.add_argument("--seed", type=int, default=None, help="training seed")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_video_train)

    s = sub.add_parser("video-eval", help="video-level accuracy from averaged clip predictions")
    s.add_argument("--ckpt", required=True, help="fused checkpoint")
    s.add_argument("--videos", required=True, help="video directory")
    s.add_argument("--stride", type=int, default=1, help="clip stride in frames")
    s.add_argument("--single", default=None, help="single-frame checkpoint for the constant-clip check")
    s.add_argument("--out", default=None, help="optional output directory")
    s.set_defaults(func=cmd_video_eval)

    s = sub.add_parser("transfer", help="transfer a robust prefix to a target set and compare baselines")
    s.add_argument("--plan", required=True, help="YAML transfer plan")
    s.add_argument("--sweep", default=None, help="comma-separated beta' values to scan")
    s.add_argument("--seed", type=int, default=None, help="seed")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_transfer)

    s = sub.add_parser("visualize", help="map prefix features back to image space")
    s.add_argument("--ckpt", required=True, help="tuned recognizer checkpoint")
    s.add_argument("--ms-ckpt", required=True, help="sub-model checkpoint whose tail is used")
    s.add_argument("--images", required=True, help="dataset to draw images from")
    s.add_argument("--split", default="test", help="split")
    s.add_argument("--count", type=int, default=8, help="number of images")
    s.add_argument("--degrade", default=None, help="degrade the images first")
    s.add_argument("--format", choices=("png", "pgm"), default="png", help="image format")
    s.add_argument("--seed", type=int, default=None, help="seed for random degradations")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_visualize)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    threads = args.threads if args.threads is not None else os.environ.get("ADVTRAIN_THREADS")
    try:
        if threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=int(threads)):
                return args.func(args)
        return args.func(args)
    except UsageError as e:
        print(f"advtrain: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except tr.DivergenceError as e:
        print(f"advtrain: diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (dio.DataError, FileNotFoundError, NotADirectoryError, KeyError, yaml.YAMLError) as e:
        print(f"advtrain: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"advtrain: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
