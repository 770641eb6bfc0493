"""Clip extraction, early/slow fusion of a single-frame model, and video-level prediction.

A clip of ``F = 2T + 1`` frames is fed to a fused model as one image whose
channels are the frames stacked frame-major: ``(F * C, H, W)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network as nw
from . import numeric as nc
from .data import VideoRecord
from .training import EvalReport, TrainConfig, _scaled, report_from_logits, run_sgd
from .seeding import stream

FUSIONS = ("early", "slow")


@dataclass
class Clip:
    frames: np.ndarray  # (2T + 1, C, H, W)
    video_id: str = ""
    start: int = 0

    @property
    def stacked(self) -> np.ndarray:
        f, c, h, w = self.frames.shape
        return self.frames.reshape(f * c, h, w)


def extract_clips(video, T: int, stride: int = 1, video_id: str = "") -> list[Clip]:
    """All windows of ``2T + 1`` consecutive frames, starting every ``stride`` frames."""
    frames = video.frames if isinstance(video, VideoRecord) else np.asarray(video)
    if isinstance(video, VideoRecord):
        video_id = video.video_id
    if T < 0 or stride < 1:
        raise ValueError(f"need T >= 0 and stride >= 1, got T={T}, stride={stride}")
    span = 2 * T + 1
    if len(frames) < span:
        raise ValueError(f"video has {len(frames)} frames, a clip needs {span}")
    return [Clip(frames[s:s + span], video_id, s) for s in range(0, len(frames) - span + 1, stride)]


def _fused_spec(single: nw.ModelSpec, frames: int, kind: str) -> nw.ModelSpec:
    layers = list(single.layers)
    first = next(i for i, l in enumerate(layers) if isinstance(l, nw.Conv))
    if kind == "slow":
        conv1 = layers[first]
        layers[first] = nw.BranchConv(frames, conv1.out_channels, conv1.kernel_size)
    c, h, w = single.input_shape
    return nw.ModelSpec(
        tuple(layers), (frames * c, h, w), single.num_classes,
        name=f"{single.name}-{kind}{frames}", fusion=kind, frames=frames,
    )


def _require_single(model: nw.WeightedModel, need: int):
    spec = model.spec
    if not isinstance(spec, nw.ModelSpec) or spec.fusion is not None:
        raise ValueError("fusion needs a single-frame recognition model")
    if spec.d1 < need:
        raise ValueError(f"fusion needs at least {need} conv layer(s), model has {spec.d1}")


def early_fuse(single: nw.WeightedModel, T: int) -> nw.WeightedModel:
    """conv1 sees every frame: its weights are tiled over the frames and divided by 2T+1."""
    _require_single(single, 1)
    f = 2 * T + 1
    spec = _fused_spec(single.spec, f, "early")
    params = [[w.copy(), b.copy()] for w, b in single.params]
    w1 = single.params[0][0]
    params[0][0] = np.concatenate([w1 / w1.dtype.type(f)] * f, axis=1)
    return nw.WeightedModel(spec, params, single.seed, {"fused_from": "single", "kind": "early", "T": T})


def slow_fuse(single: nw.WeightedModel, T: int) -> nw.WeightedModel:
    """conv1 runs unchanged on each frame; conv2 merges them with weights tiled and divided by 2T+1."""
    _require_single(single, 2)
    f = 2 * T + 1
    spec = _fused_spec(single.spec, f, "slow")
    params = [[w.copy(), b.copy()] for w, b in single.params]
    w1, b1 = single.params[0]
    params[0] = [np.stack([w1] * f), np.stack([b1] * f)]
    w2 = single.params[1][0]
    params[1][0] = np.concatenate([w2 / w2.dtype.type(f)] * f, axis=1)
    return nw.WeightedModel(spec, params, single.seed, {"fused_from": "single", "kind": "slow", "T": T})


def fuse(single: nw.WeightedModel, kind: str, T: int) -> nw.WeightedModel:
    if kind == "early":
        return early_fuse(single, T)
    if kind == "slow":
        return slow_fuse(single, T)
    raise ValueError(f"unknown fusion {kind!r}; choose from {FUSIONS}")


def frame_groups(model: nw.WeightedModel) -> list[tuple[int, int, int]]:
    """``(param_index, array_index, axis)`` of every tensor that holds one slice per frame."""
    spec = model.spec
    f = spec.frames
    if spec.fusion == "early":
        return [(0, 0, 1)]
    if spec.fusion == "slow":
        return [(0, 0, 0), (0, 1, 0), (1, 0, 1)]
    if f != 1:
        raise ValueError(f"unknown fusion {spec.fusion!r}")
    return []


def _split(a: np.ndarray, axis: int, f: int) -> np.ndarray:
    """View with the frame index moved to a new leading axis."""
    shape = a.shape[:axis] + (f, a.shape[axis] // f) + a.shape[axis + 1:]
    return np.moveaxis(a.reshape(shape), axis, 0)


def symmetrize(grads: list, model: nw.WeightedModel) -> None:
    """Replace every per-frame gradient slice by the mean over frames, in place."""
    f = model.spec.frames
    for p, j, axis in frame_groups(model):
        if grads[p] is None:
            continue
        mean = _split(grads[p][j], axis, f).mean(axis=0)
        grads[p][j] = np.concatenate([mean] * f, axis=axis)


def frames_symmetric(model: nw.WeightedModel) -> bool:
    f = model.spec.frames
    for p, j, axis in frame_groups(model):
        g = _split(model.params[p][j], axis, f)
        if not all(np.array_equal(g[0], g[i]) for i in range(1, f)):
            return False
    return True


def clip_inputs(clips: list[Clip]) -> np.ndarray:
    return np.stack([c.stacked for c in clips]) if clips else np.zeros((0,))


def clip_probabilities(model: nw.WeightedModel, clips: list[Clip], chunk: int = 128) -> np.ndarray:
    x = clip_inputs(clips)
    outs = [nc.softmax(nw.forward(model, _scaled(x[s:s + chunk], model.dtype)).astype(np.float64))
            for s in range(0, len(x), chunk)]
    return np.concatenate(outs)


def predict_video(model: nw.WeightedModel, video, T: int, stride: int = 1) -> np.ndarray:
    """Mean of per-clip softmax outputs, accumulated in clip order."""
    probs = clip_probabilities(model, extract_clips(video, T, stride))
    acc = np.zeros(probs.shape[1])
    for p in probs:
        acc += p
    return acc / len(probs)


def video_clips(videos: list[VideoRecord], T: int, stride: int = 1) -> tuple[list[Clip], np.ndarray]:
    clips, labels = [], []
    for v in videos:
        cs = extract_clips(v, T, stride)
        clips += cs
        labels += [v.label] * len(cs)
    return clips, np.asarray(labels, dtype=np.int64)


def train_video(
    model: nw.WeightedModel,
    clips: list[Clip],
    labels: np.ndarray,
    cfg: TrainConfig,
    iters: int | None = None,
    stage: str = "video",
    log=None,
) -> nw.WeightedModel:
    """Cross-entropy tuning of a fused model at ``lr_video`` with per-frame filter symmetry."""
    model = model.copy()
    iters = cfg.tune_iters if iters is None else iters
    x_all = clip_inputs(clips)
    labels = np.asarray(labels)

    def batches():
        epoch = 0
        while True:
            order = stream(cfg.seed, stage, "shuffle", epoch).permutation(len(x_all))
            for s in range(0, len(order), cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                yield _scaled(x_all[idx], model.dtype), labels[idx]
            epoch += 1

    hook = (lambda g: symmetrize(g, model)) if model.spec.fusion else None
    lrs = [cfg.lr_video] * len(model.params)
    return run_sgd(model, batches(), "ce", lrs, iters, cfg, stage, log, grad_hook=hook).model


def evaluate_clips(model: nw.WeightedModel, clips: list[Clip], labels) -> EvalReport:
    probs = clip_probabilities(model, clips)
    return report_from_logits(probs, labels, {"level": "clip"})


def evaluate_videos(model: nw.WeightedModel, videos: list[VideoRecord], T: int, stride: int = 1):
    probs = np.stack([predict_video(model, v, T, stride) for v in videos])
    labels = np.array([v.label for v in videos])
    return report_from_logits(probs, labels, {"level": "video", "T": T, "stride": stride})


def single_frame_equivalence(single: nw.WeightedModel, fused: nw.WeightedModel, frame: np.ndarray) -> float:
    """Max abs logit difference between the fused model on a constant clip and the single model."""
    f = fused.spec.frames
    clip = Clip(np.stack([frame] * f))
    a = nw.forward(fused, _scaled(clip.stacked[None], fused.dtype))
    b = nw.forward(single, _scaled(frame[None], single.dtype))
    return float(np.abs(a - b).max())
