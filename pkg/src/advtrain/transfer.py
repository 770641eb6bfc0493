"""Transfer of a robust prefix learned on a clean source set to a degraded target set.

The source recognizer is trained with robust adverse pre-training under an
overestimated severity ``beta_prime``; its first ``k_p`` layers then
initialize the target model, which is tuned on the target data alone.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import network as nw
from .data import LabeledDataset, model_hash
from .degrade import parse_spec
from .training import (
    EpochFeeder,
    EvalReport,
    TrainConfig,
    evaluate,
    group_lrs,
    init_model,
    pretrain_submodel,
    rap,
    run_sgd,
    tune_classifier,
    _scaled,
)
from .seeding import sub_seed


@dataclass
class TransferPlan:
    """``degrade`` names the major degradation kind; its severity is replaced by ``beta_prime``.

    ``target_degrade`` optionally degrades the target images on the fly (for
    synthetic targets); real targets leave it unset and are used as given.
    """

    source_id: str
    target_id: str
    degrade: str
    beta_prime: float
    k: int = 3
    k_p: int = 2
    source_cfg: TrainConfig = field(default_factory=TrainConfig)
    target_cfg: TrainConfig = field(default_factory=TrainConfig)
    target_degrade: str | None = None

    def source_spec(self):
        return parse_spec(self.degrade).with_factor(self.beta_prime)

    def target_spec(self):
        return parse_spec(self.target_degrade) if self.target_degrade else None

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "target_id": self.target_id,
            "degrade": self.degrade,
            "beta_prime": self.beta_prime,
            "k": self.k,
            "k_p": self.k_p,
            "source_cfg": self.source_cfg.to_dict(),
            "target_cfg": self.target_cfg.to_dict(),
            "target_degrade": self.target_degrade,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransferPlan":
        d = dict(d)
        for key in ("source_cfg", "target_cfg"):
            if key in d and isinstance(d[key], dict):
                d[key] = TrainConfig.from_dict(d[key])
        return cls(**d)


def _target_model(prefix_src: nw.WeightedModel, target_spec: nw.ModelSpec, plan: TransferPlan, log):
    model = init_model(target_spec, plan.target_cfg)
    try:
        return nw.export_layers(prefix_src, model, plan.k_p)
    except ValueError as e:
        raise ValueError(f"source and target prefixes are not compatible: {e}") from e


def _tune_target(model, target: LabeledDataset, plan: TransferPlan, log):
    cfg = plan.target_cfg
    lrs = group_lrs(len(model.params), plan.k_p, cfg)
    return tune_classifier(model, target, plan.target_spec(), cfg, lrs, log=log)


def _provenance(kind, plan, source_model, exported):
    return {
        "method": kind,
        "plan": plan.to_dict(),
        "source_checkpoint": model_hash(source_model),
        "exported_from": exported,
    }


def t_arap(
    plan: TransferPlan,
    source_spec: nw.ModelSpec,
    source: LabeledDataset,
    target_spec: nw.ModelSpec,
    target: LabeledDataset,
    log=None,
    source_model: nw.WeightedModel | None = None,
) -> nw.WeightedModel:
    """Train the source recognizer under ``beta_prime``, export its prefix, tune on the target.

    The target set is only ever used with its own labels; no clean target
    images are read. ``source_model`` skips the source stage when given.
    """
    if source_model is None:
        beta = plan.source_spec()
        source_model = rap(source_spec, source, beta, plan.k, plan.k_p, plan.source_cfg, log)
    model = _target_model(source_model, target_spec, plan, log)
    model = _tune_target(model, target, plan, log)
    model.provenance = _provenance("t-arap", plan, source_model, "tuned source model")
    return model


def t_arap_non_joint(
    plan: TransferPlan,
    source_spec: nw.ModelSpec,
    source: LabeledDataset,
    target_spec: nw.ModelSpec,
    target: LabeledDataset,
    log=None,
    submodel: nw.WeightedModel | None = None,
) -> nw.WeightedModel:
    """As :func:`t_arap`, but the exported prefix comes from the untuned source sub-model."""
    if submodel is None:
        submodel = pretrain_submodel(source_spec, source.images, plan.source_spec(), plan.k, plan.k_p, plan.source_cfg, log)
    model = _target_model(submodel, target_spec, plan, log)
    model = _tune_target(model, target, plan, log)
    model.provenance = _provenance("t-arap-non-joint", plan, submodel, "untuned source sub-model")
    return model


def direct_baseline(plan: TransferPlan, target_spec: nw.ModelSpec, target: LabeledDataset, log=None) -> nw.WeightedModel:
    """Train the target model from scratch on the target data (all layers at ``lr_rest``)."""
    cfg = plan.target_cfg
    model = init_model(target_spec, cfg)
    model = tune_classifier(model, target, plan.target_spec(), cfg, [cfg.lr_rest] * len(model.params), log=log)
    model.provenance = {"method": "lq-direct", "plan": plan.to_dict()}
    return model


def layerwise_pretrain_baseline(
    plan: TransferPlan,
    target_spec: nw.ModelSpec,
    target: LabeledDataset,
    iters_per_layer: int = 200,
    log=None,
) -> nw.WeightedModel:
    """Greedy layer-wise autoencoding of each conv layer on the target data, then supervised tuning.

    Conv layer ``i`` learns to reconstruct its own input (the frozen output of
    the layers below it) through a linear conv decoder with the same kernel
    size; the decoder is discarded afterwards. All layers then tune at ``lr_rest``.
    """
    cfg = plan.target_cfg
    model = init_model(target_spec, cfg)
    layers = target_spec.layers
    spec_t = plan.target_spec()
    if iters_per_layer:
        conv_positions = [i for i, l in enumerate(layers) if isinstance(l, nw.Conv)]
        for li, pos in enumerate(conv_positions):
            lower = layers[:pos]
            in_shape = nw.output_shape(lower, target_spec.input_shape)
            ae_spec = _AutoencoderSpec((layers[pos], nw.ReLU(), nw.Conv(in_shape[0], layers[pos].kernel_size)), in_shape)
            decoder = nw.init_weights(ae_spec, sub_seed(cfg.seed, "init/layerwise", li), model.dtype).params[1]
            w, b = model.params[li]
            ae = nw.WeightedModel(ae_spec, [[w.copy(), b.copy()], decoder])
            feeder = EpochFeeder(target.images, spec_t, cfg.seed, f"layerwise/{li}", cfg.batch_size)

            def batches(feeder=feeder, lower=lower):
                for _, x in feeder:
                    feats = nw.run_layers(lower, model.params, _scaled(x, model.dtype), "eval")
                    yield feats, feats

            run_sgd(ae, batches(), "mse", [cfg.lr_rest, cfg.lr_rest], iters_per_layer, cfg, f"layerwise/{li}", log)
            model.params[li] = ae.params[0]
    model = tune_classifier(model, target, spec_t, cfg, [cfg.lr_rest] * len(model.params), log=log)
    model.provenance = {"method": "lq-layerwise", "plan": plan.to_dict(), "iters_per_layer": iters_per_layer}
    return model


@dataclass(frozen=True)
class _AutoencoderSpec:
    layers: tuple
    input_shape: tuple
    name: str = "layer-autoencoder"


COMPARISON_ROWS = ("LQ_d", "LQ_p", "T-ARAP-non-joint", "T-ARAP")


def transfer_comparison(
    plan: TransferPlan,
    source_spec: nw.ModelSpec,
    source: LabeledDataset,
    target_spec: nw.ModelSpec,
    target_train: LabeledDataset,
    target_test: LabeledDataset,
    layerwise_iters: int = 200,
    log=None,
) -> dict:
    """Train the four arms and evaluate each on ``target_test``.

    Returns ``{"rows": {arm: EvalReport}, "models": {arm: WeightedModel}}``.
    """
    beta = plan.source_spec()
    sub = pretrain_submodel(source_spec, source.images, beta, plan.k, plan.k_p, plan.source_cfg, log)
    source_model = rap(source_spec, source, beta, plan.k, plan.k_p, plan.source_cfg, log, submodel=sub)
    models = {
        "LQ_d": direct_baseline(plan, target_spec, target_train, log),
        "LQ_p": layerwise_pretrain_baseline(plan, target_spec, target_train, layerwise_iters, log),
        "T-ARAP-non-joint": t_arap_non_joint(plan, source_spec, source, target_spec, target_train, log, submodel=sub),
        "T-ARAP": t_arap(plan, source_spec, source, target_spec, target_train, log, source_model=source_model),
    }
    test_spec = plan.target_spec()
    rows = {k: evaluate(m, target_test, test_spec, seed=plan.target_cfg.seed) for k, m in models.items()}
    return {"rows": rows, "models": models}


def format_comparison(rows: dict[str, EvalReport]) -> str:
    names = [r for r in COMPARISON_ROWS if r in rows]
    width = max(len(n) for n in names) + 2
    head = " " * 7 + "".join(n.rjust(width) for n in names)
    top1 = "Top-1  " + "".join(f"{rows[n].top1:.2f}".rjust(width) for n in names)
    top5 = "Top-5  " + "".join(f"{rows[n].top5:.2f}".rjust(width) for n in names)
    return "\n".join([head, top1, top5])


def beta_sweep(
    plan: TransferPlan,
    betas,
    source_spec: nw.ModelSpec,
    source: LabeledDataset,
    target_spec: nw.ModelSpec,
    target_train: LabeledDataset,
    target_test: LabeledDataset,
    log=None,
) -> list[dict]:
    """T-ARAP accuracy for each ``beta_prime``, scanned from the largest down."""
    out = []
    for b in sorted(betas, reverse=True):
        p = replace(plan, beta_prime=b)
        m = t_arap(p, source_spec, source, target_spec, target_train, log)
        r = evaluate(m, target_test, p.target_spec(), seed=p.target_cfg.seed)
        out.append({"beta_prime": b, "top1": r.top1, "top5": r.top5})
    return out
