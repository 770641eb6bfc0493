"""SGD training, the robust adverse pre-training procedures, baselines and evaluation.

Pixel data is kept on the [0, 255] scale and divided by 255 when fed to a
network; reconstruction targets are therefore on [0, 1]. Randomness is drawn
from named streams (see :mod:`advtrain.seeding`) keyed by stage, so two
procedures that share a stage name and seed see the same data order, the same
degraded images and the same dropout masks.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterator

import numpy as np

from . import network as nw
from . import numeric as nc
from .data import LabeledDataset, model_hash
from .degrade import degrade_batch
from .seeding import stream, sub_seed


class DivergenceError(RuntimeError):
    def __init__(self, stage: str, iteration: int, loss: float):
        super().__init__(f"{stage}: loss became {loss} at iteration {iteration}")
        self.stage, self.iteration, self.loss = stage, iteration, loss


@dataclass(frozen=True)
class TrainConfig:
    lr_submodel: float = 1e-4
    lr_prefix: float = 1e-3
    lr_rest: float = 1e-2
    lr_video: float = 1e-3
    decay_factor: float = 10.0
    decay_interval: int = 5000
    momentum: float = 0.9
    batch_size: int = 64
    pretrain_iters: int = 5000
    tune_iters: int = 5000
    seed: int = 0
    dtype: str = "float32"
    log_every: int = 50

    def __post_init__(self):
        for name in ("lr_submodel", "lr_prefix", "lr_rest", "lr_video"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.decay_interval <= 0:
            raise ValueError("decay_interval must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.pretrain_iters < 0 or self.tune_iters < 0:
            raise ValueError("iteration budgets must be non-negative")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


def lr_at(iteration: int, base: float, decay_interval: int = 5000, factor: float = 10.0) -> float:
    """Step schedule: ``base`` divided by ``factor`` once per ``decay_interval`` iterations."""
    return base / factor ** (iteration // decay_interval)


def sgd_step(weights, grads, velocity, lr: float, momentum: float) -> None:
    """In-place momentum SGD: ``v = momentum * v - lr * g; w = w + v``."""
    for w, g, v in zip(weights, grads, velocity):
        v *= momentum
        v -= lr * g
        w += v


def psnr(estimate: np.ndarray, reference: np.ndarray, peak: float = 255.0) -> float:
    mse = float(np.mean((np.asarray(estimate, np.float64) - np.asarray(reference, np.float64)) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(peak * peak / mse)


# --- data feeding -------------------------------------------------------------------


class EpochFeeder:
    """Yields mini-batch index arrays plus the (possibly degraded) inputs for each epoch.

    Random degradations are redrawn once per epoch, one stream per image, so the
    result does not depend on batch order. Deterministic ones are computed once.
    """

    def __init__(self, images: np.ndarray, spec, seed: int, stage: str, batch_size: int):
        self.images, self.spec, self.seed, self.stage = images, spec, seed, stage
        self.batch_size = batch_size
        self._fixed = None
        if spec is None:
            self._fixed = images
        elif not spec.random:
            self._fixed = degrade_batch(images, spec, None)

    def epoch_inputs(self, epoch: int) -> np.ndarray:
        if self._fixed is not None:
            return self._fixed
        rngs = [stream(self.seed, self.stage, "degrade", epoch, i) for i in range(len(self.images))]
        return degrade_batch(self.images, self.spec, rngs)

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        n, epoch = len(self.images), 0
        while True:
            inputs = self.epoch_inputs(epoch)
            order = stream(self.seed, self.stage, "shuffle", epoch).permutation(n)
            for s in range(0, n, self.batch_size):
                idx = order[s:s + self.batch_size]
                yield idx, inputs[idx]
            epoch += 1


def _scaled(x: np.ndarray, dtype) -> np.ndarray:
    return (x / 255.0).astype(dtype)


# --- the generic loop ---------------------------------------------------------------


@dataclass
class StageResult:
    model: nw.WeightedModel
    losses: list[float] = field(default_factory=list)


def run_sgd(
    model: nw.WeightedModel,
    batches: Iterator[tuple[np.ndarray, np.ndarray]],
    loss: str,
    layer_lrs: list[float | None],
    iters: int,
    cfg: TrainConfig,
    stage: str,
    log: Callable[[dict], None] | None = None,
    grad_hook: Callable[[list], None] | None = None,
) -> StageResult:
    """Train ``model`` in place for ``iters`` steps.

    ``batches`` yields ``(x, target)`` already scaled for the network.
    ``layer_lrs[i]`` is the base rate of parametric layer ``i``; ``None`` freezes it.
    ``grad_hook`` may edit the gradient list in place before the update.
    """
    if len(layer_lrs) != len(model.params):
        raise ValueError(f"{len(layer_lrs)} learning rates for {len(model.params)} layers")
    trainable = [lr is not None for lr in layer_lrs]
    velocity = [[np.zeros_like(w), np.zeros_like(b)] for w, b in model.params]
    drop_rng = stream(cfg.seed, stage, "dropout")
    losses: list[float] = []
    start = time.perf_counter()
    it = iter(batches)
    for i in range(iters):
        x, target = next(it)
        out, cache = nw.forward_train(model, x, drop_rng)
        if loss == "ce":
            value, g = nc.softmax_cross_entropy(out, target)
        elif loss == "mse":
            value, g = nc.mse_loss(out, target)
        else:
            raise ValueError(f"unknown loss {loss!r}")
        if not np.isfinite(value):
            raise DivergenceError(stage, i, value)
        grads = nw.backward(model, cache, g.astype(out.dtype, copy=False), trainable)
        if grad_hook is not None:
            grad_hook(grads)
        for p, lr in enumerate(layer_lrs):
            if lr is None:
                continue
            step = lr_at(i, lr, cfg.decay_interval, cfg.decay_factor)
            sgd_step(model.params[p], grads[p], velocity[p], model.dtype.type(step), model.dtype.type(cfg.momentum))
        losses.append(value)
        if log is not None and ((i + 1) % cfg.log_every == 0 or i + 1 == iters):
            window = losses[-cfg.log_every:]
            log({
                "stage": stage,
                "split": "train",
                "iteration": i + 1,
                "loss": float(np.mean(window)),
                "lr": lr_at(i, max(l for l in layer_lrs if l is not None), cfg.decay_interval, cfg.decay_factor),
                "wall_time": time.perf_counter() - start,
            })
    for w, b in model.params:
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise DivergenceError(stage, iters, float("nan"))
    return StageResult(model, losses)


# --- model construction helpers -------------------------------------------------------


def init_model(spec, cfg: TrainConfig, key: str = "init/model") -> nw.WeightedModel:
    return nw.init_weights(spec, sub_seed(cfg.seed, key), dtype=cfg.np_dtype)


def _classification_batches(ds: LabeledDataset, spec, cfg: TrainConfig, stage: str, dtype):
    feeder = EpochFeeder(ds.images, spec, cfg.seed, stage, cfg.batch_size)
    for idx, x in feeder:
        yield _scaled(x, dtype), ds.labels[idx]


def _reconstruction_batches(hq: np.ndarray, spec, cfg: TrainConfig, stage: str, dtype):
    feeder = EpochFeeder(hq, spec, cfg.seed, stage, cfg.batch_size)
    for idx, x in feeder:
        yield _scaled(x, dtype), _scaled(hq[idx], dtype)


def train_submodel(
    submodel: nw.WeightedModel,
    hq_images: np.ndarray,
    degrade_spec,
    cfg: TrainConfig,
    iters: int | None = None,
    stage: str = "pretrain",
    log=None,
) -> StageResult:
    """Fit the sub-model to map degraded images back to their clean versions (MSE)."""
    model = submodel.copy()
    iters = cfg.pretrain_iters if iters is None else iters
    batches = _reconstruction_batches(hq_images, degrade_spec, cfg, stage, model.dtype)
    lrs = [cfg.lr_submodel] * len(model.params)
    return run_sgd(model, batches, "mse", lrs, iters, cfg, stage, log)


def pretrain_submodel(model_spec, hq_images, degrade_spec, k, k_p, cfg, log=None) -> nw.WeightedModel:
    """Steps 1-3 of RAP: build the sub-model and train it on (degraded -> clean) pairs."""
    sub_spec = nw.build_submodel(model_spec, k, k_p, image_channels=model_spec.input_shape[0])
    sub = init_model(sub_spec, cfg, "init/submodel")
    result = train_submodel(sub, hq_images, degrade_spec, cfg, log=log)
    result.model.provenance = {
        "stage": "pretrain",
        "degrade": degrade_spec.to_string(),
        "iters": cfg.pretrain_iters,
        "seed": cfg.seed,
    }
    return result.model


def tune_classifier(
    model: nw.WeightedModel,
    ds: LabeledDataset,
    degrade_spec,
    cfg: TrainConfig,
    layer_lrs,
    iters: int | None = None,
    stage: str = "tune",
    log=None,
) -> nw.WeightedModel:
    model = model.copy()
    iters = cfg.tune_iters if iters is None else iters
    batches = _classification_batches(ds, degrade_spec, cfg, stage, model.dtype)
    return run_sgd(model, batches, "ce", layer_lrs, iters, cfg, stage, log).model


def group_lrs(n_layers: int, k_p: int, cfg: TrainConfig, freeze_prefix: bool = False) -> list:
    prefix = None if freeze_prefix else cfg.lr_prefix
    return [prefix] * k_p + [cfg.lr_rest] * (n_layers - k_p)


def _check_k(model_spec, k, k_p):
    if k_p < 0 or k_p > model_spec.d1:
        raise ValueError(f"k_p must be in [0, d1={model_spec.d1}], got {k_p}")
    if k_p and k <= k_p:
        raise ValueError(f"k ({k}) must exceed k_p ({k_p})")


def rap(
    model_spec: nw.ModelSpec,
    dataset: LabeledDataset,
    alpha,
    k: int,
    k_p: int,
    cfg: TrainConfig,
    log=None,
    submodel: nw.WeightedModel | None = None,
) -> nw.WeightedModel:
    """Robust adverse pre-training.

    The sub-model is pre-trained to undo ``alpha`` (unless ``submodel`` is given),
    its first ``k_p`` layers initialize the recognizer, and the recognizer is
    then tuned on ``alpha``-degraded data with the prefix at ``lr_prefix`` and
    the remaining layers at ``lr_rest``. ``k_p == 0`` skips pre-training.
    """
    return _pretrain_and_tune(model_spec, dataset, alpha, alpha, k, k_p, cfg, log, submodel, "rap")


def arap(
    model_spec: nw.ModelSpec,
    dataset: LabeledDataset,
    alpha,
    beta,
    k: int,
    k_p: int,
    cfg: TrainConfig,
    log=None,
    submodel: nw.WeightedModel | None = None,
) -> nw.WeightedModel:
    """Like :func:`rap` but the sub-model learns to undo the severer ``beta``.

    ``beta`` may be a spec or a bare severity applied to ``alpha``'s kind.
    With ``beta == alpha`` this is exactly :func:`rap`, provenance included.
    """
    beta = as_severity(alpha, beta)
    if beta.factor < alpha.factor:
        raise ValueError(f"beta ({beta.factor}) must be at least as severe as alpha ({alpha.factor})")
    method = "rap" if beta == alpha else "arap"
    return _pretrain_and_tune(model_spec, dataset, alpha, beta, k, k_p, cfg, log, submodel, method)


def as_severity(base_spec, value):
    if isinstance(value, (int, float, np.integer, np.floating)):
        return base_spec.with_factor(value)
    if type(value) is not type(base_spec):
        raise ValueError(f"beta must be the same degradation kind as alpha ({base_spec.name})")
    return value


def _pretrain_and_tune(model_spec, dataset, alpha, beta, k, k_p, cfg, log, submodel, method):
    _check_k(model_spec, k, k_p)
    model = init_model(model_spec, cfg)
    sub = None
    if k_p:
        sub = submodel if submodel is not None else pretrain_submodel(model_spec, dataset.images, beta, k, k_p, cfg, log)
        model = nw.export_layers(sub, model, k_p)
    model = tune_classifier(model, dataset, alpha, cfg, group_lrs(len(model.params), k_p, cfg), log=log)
    model.provenance = {
        "method": method,
        "alpha": alpha.to_string(),
        "beta": beta.to_string(),
        "k": k,
        "k_p": k_p,
        "config": cfg.to_dict(),
        "submodel_hash": model_hash(sub) if sub is not None else None,
    }
    return model


def train_baseline(
    model_spec: nw.ModelSpec,
    dataset: LabeledDataset,
    mode: str,
    degrade_spec=None,
    cfg: TrainConfig = TrainConfig(),
    k: int = 3,
    k_p: int = 2,
    log=None,
    submodel: nw.WeightedModel | None = None,
) -> nw.WeightedModel:
    """``hq``: clean data; ``lq``: degraded data; ``rap-non-joint``: pre-trained prefix frozen.

    All layers that train use ``lr_rest``.
    """
    model = init_model(model_spec, cfg)
    n = len(model.params)
    if mode == "hq":
        spec, lrs = None, [cfg.lr_rest] * n
    elif mode == "lq":
        spec, lrs = _need_spec(degrade_spec, mode), [cfg.lr_rest] * n
    elif mode == "rap-non-joint":
        spec = _need_spec(degrade_spec, mode)
        _check_k(model_spec, k, k_p)
        if k_p:
            sub = submodel if submodel is not None else pretrain_submodel(model_spec, dataset.images, spec, k, k_p, cfg, log)
            model = nw.export_layers(sub, model, k_p)
        lrs = group_lrs(n, k_p, cfg, freeze_prefix=True)
    else:
        raise ValueError(f"unknown baseline mode {mode!r}")
    model = tune_classifier(model, dataset, spec, cfg, lrs, log=log)
    model.provenance = {
        "method": mode,
        "alpha": spec.to_string() if spec is not None else None,
        "k": k,
        "k_p": k_p if mode == "rap-non-joint" else 0,
        "config": cfg.to_dict(),
    }
    return model


def _need_spec(spec, mode):
    if spec is None:
        raise ValueError(f"mode {mode!r} needs a degradation spec")
    return spec


# --- evaluation -----------------------------------------------------------------------


@dataclass
class EvalReport:
    top1: float
    top5: float
    count: int
    per_class: dict = field(default_factory=dict)  # class -> {"total", "top1", "top5"}
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def predict_logits(model: nw.WeightedModel, images: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Eval-mode logits for images on the [0, 255] scale."""
    outs = [nw.forward(model, _scaled(images[s:s + chunk], model.dtype)) for s in range(0, len(images), chunk)]
    return np.concatenate(outs) if outs else np.zeros((0, model.spec.num_classes))


def topk_hits(logits: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Whether each label ranks among the ``k`` largest logits; ties go to the lower class index."""
    k = min(k, logits.shape[1])
    order = np.argsort(-logits, axis=1, kind="stable")
    return (order[:, :k] == labels[:, None]).any(axis=1)


def report_from_logits(logits, labels, provenance=None, k_list=(1, 5)) -> EvalReport:
    labels = np.asarray(labels)
    hits = {k: topk_hits(logits, labels, k) for k in k_list}
    n = len(labels)
    pct = {k: (100.0 * hits[k].sum() / n if n else 0.0) for k in k_list}
    per_class = {}
    for c in np.unique(labels):
        sel = labels == c
        per_class[int(c)] = {"total": int(sel.sum()), **{f"top{k}": int(hits[k][sel].sum()) for k in k_list}}
    return EvalReport(float(pct.get(1, 0.0)), float(pct.get(5, 0.0)), n, per_class, dict(provenance or {}))


def evaluate(model: nw.WeightedModel, test: LabeledDataset, degrade_spec=None, seed: int = 0, k_list=(1, 5)) -> EvalReport:
    """Top-k accuracy on ``test``, optionally degraded with a seed-derived stream per image."""
    images = test.images
    if degrade_spec is not None:
        rngs = [stream(seed, "test", "degrade", i) for i in range(len(images))]
        images = degrade_batch(images, degrade_spec, rngs)
    prov = {
        "dataset": test.name,
        "split": test.split,
        "degrade": degrade_spec.to_string() if degrade_spec is not None else None,
        "checkpoint": model_hash(model),
    }
    return report_from_logits(predict_logits(model, images), test.labels, prov, k_list)


def degraded_test(test: LabeledDataset, degrade_spec, seed: int = 0) -> np.ndarray:
    rngs = [stream(seed, "test", "degrade", i) for i in range(len(test.images))]
    return degrade_batch(test.images, degrade_spec, rngs)


# --- reconstruction and feature visualization -----------------------------------------


def reconstruct(submodel: nw.WeightedModel, images: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Sub-model output on the [0, 255] scale, clamped."""
    outs = [nw.forward(submodel, _scaled(images[s:s + chunk], submodel.dtype)) for s in range(0, len(images), chunk)]
    return np.clip(np.concatenate(outs).astype(np.float64) * 255.0, 0.0, 255.0)


def visualize_features(model: nw.WeightedModel, submodel: nw.WeightedModel, images: np.ndarray) -> np.ndarray:
    """Map ``model``'s prefix features back to image space through the sub-model's fixed tail.

    ``images`` is ``(C, H, W)`` or ``(N, C, H, W)`` on the [0, 255] scale.
    """
    spec = submodel.spec
    single = images.ndim == 3
    x = _scaled(images[None] if single else images, submodel.dtype)
    feats = nw.prefix_features(model.astype(submodel.dtype) if model.dtype != submodel.dtype else model, x, spec.k_p)
    out = nw.run_layers(spec.tail, submodel.params, feats, "eval", start_param=spec.k_p)
    out = np.clip(out.astype(np.float64) * 255.0, 0.0, 255.0)
    return out[0] if single else out

