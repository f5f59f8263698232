# tcc/pipeline.py
"""
Training protocols.

    Phase 1  pretrain_tstcc          unlabeled temporal + contextual contrasting
    Phase 2  finetune                encoder + classifier on the few labeled samples
    Phase 3  generate_pseudo_labels  argmax labels for the unlabeled remainder
    Phase 4  train_catcc             temporal + supervised contextual contrasting

run_protocol chains them into the tstcc / catcc / supervised / random_init
recipes and writes the run directory (config.snapshot, phase*.ckpt,
metrics.csv, report.csv).
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import trange

from tcc.augment import ViewPair, check_window, make_view_pair
from tcc.checkpoint import Checkpoint, capture, checkpoint_fingerprint, restore, save_checkpoint
from tcc.config import DataConfig, RunConfig, TrainConfig, ablation_name, apply_overrides, dump_snapshot
from tcc.data import (
    UNLABELED,
    Batch,
    Dataset,
    batch_iterator,
    class_counts,
    compute_minmax_stats,
    concat_datasets,
    load_dataset,
    normalize_minmax,
    save_dataset,
    split_labeled_subset,
    subset,
)
from tcc.errors import ConfigError, DataFormatError, NumericError, ShapeError
from tcc.losses import (
    TemporalBatchViews,
    combine_semi,
    combine_unsup,
    contextual_contrast_loss,
    cross_entropy,
    same_view_temporal_loss,
    supervised_contextual_contrast_loss,
    temporal_contrast_loss,
)
from tcc.metrics import Metrics, evaluate_metrics
from tcc.nn import (
    ModelConfig,
    TCCModel,
    adam_step,
    build_model,
    compute_gradients,
    horizon,
    latent_length,
    make_optimizer,
    set_trainable,
)
from tcc.reports import write_metrics_csv, write_report_csv
from tcc.utils import draw_seed, make_rng, resolve_threads, seed_everything, split_rng

logger = logging.getLogger(__name__)

Protocol = Literal["tstcc", "catcc", "supervised", "random_init"]
PROTOCOLS: Tuple[str, ...] = ("tstcc", "catcc", "supervised", "random_init")

# substream ids under the run seed, one per phase
_PHASE_STREAMS = {"pretrain": 1, "finetune": 2, "linear": 3, "catcc": 4}


@dataclass
class PseudoLabeledDataset:
    """Unlabeled samples relabeled by a fine-tuned model."""
    dataset: Dataset
    provenance: str
    agreement: Optional[float]
    confidence: np.ndarray
    source_indices: np.ndarray

    def __len__(self) -> int:
        return len(self.dataset)


@dataclass
class RunReport:
    protocol: str
    seed: int
    labels_fraction: float
    ablation: str
    metrics: Metrics
    run_dir: Path
    checkpoints: Dict[str, Path] = field(default_factory=dict)
    pseudo_agreement: Optional[float] = None


# --------------------------------------------------------------------
# 1) Model plumbing
# --------------------------------------------------------------------
def _phase_rng(seed: int, phase: str) -> np.random.Generator:
    return make_rng(seed).spawn(len(_PHASE_STREAMS) + 1)[_PHASE_STREAMS[phase]]


def _model_from(ckpt: Checkpoint, prefixes: Optional[List[str]] = None) -> TCCModel:
    cfg = ModelConfig.model_validate(ckpt.config["model"])
    meta = ckpt.meta
    model = build_model(cfg, meta["input_channels"], meta["sequence_length"], meta["num_classes"])
    restore(model, ckpt, prefixes)
    return model


def _named_params(model: TCCModel, modules: Sequence[str]) -> Dict[str, torch.Tensor]:
    return {
        name: p
        for name, p in model.named_parameters()
        if name.split(".", 1)[0] in modules
    }


def _trainable_params(model: TCCModel) -> Dict[str, torch.Tensor]:
    return {name: p for name, p in model.named_parameters() if p.requires_grad}


def _norm_of(ckpt: Checkpoint) -> Dict[str, Optional[np.ndarray]]:
    return {"norm_min": ckpt.tensors.get("norm.min"), "norm_max": ckpt.tensors.get("norm.max")}


def _snapshot(
        model: TCCModel,
        optimizer,
        cfg: TrainConfig,
        phase: str,
        history: List[Dict[str, Any]],
        source: Optional[Checkpoint],
        classifier_trained: bool,
        **meta: Any,
) -> Checkpoint:
    norm = _norm_of(source) if source is not None else {}
    return capture(
        model,
        optimizer,
        cfg.model_dump(mode="json"),
        phase,
        history,
        dict(model.dims(), classifier_trained=classifier_trained, **meta),
        **norm,
    )


def initial_checkpoint(
        cfg: TrainConfig,
        d: Dataset,
        norm_min: Optional[np.ndarray] = None,
        norm_max: Optional[np.ndarray] = None,
) -> Checkpoint:
    """A freshly initialized model for the dims of ``d`` (random_init / supervised start point)."""
    seed_everything(cfg.seed)
    model = build_model(cfg.model, d.channels, d.length, d.num_classes)
    return capture(
        model,
        None,
        cfg.model_dump(mode="json"),
        "init",
        [],
        dict(model.dims(), classifier_trained=False),
        norm_min=norm_min,
        norm_max=norm_max,
    )


def _predict_logits(model: TCCModel, d: Dataset, batch_size: int) -> np.ndarray:
    if len(d) == 0:
        return np.zeros((0, model.num_classes), dtype=np.float32)
    model.eval()
    chunks = []
    with torch.no_grad():
        for batch in batch_iterator(d, batch_size, include_labels=False):
            chunks.append(model(torch.from_numpy(batch.x)))
    return torch.cat(chunks).numpy()


def _encode_all(model: TCCModel, d: Dataset, batch_size: int) -> torch.Tensor:
    model.eval()
    chunks = []
    with torch.no_grad():
        for batch in batch_iterator(d, batch_size, include_labels=False):
            chunks.append(model.encode(torch.from_numpy(batch.x)).flatten(1))
    return torch.cat(chunks)


# --------------------------------------------------------------------
# 2) Contrastive phases (1 and 4)
# --------------------------------------------------------------------
def _view_pairs(
        batches: List[Batch],
        rngs: Sequence[np.random.Generator],
        cfg: TrainConfig,
        threads: int,
) -> Iterator[Tuple[ViewPair, np.random.Generator]]:
    """View pairs in batch order with their anchor streams.

    Every batch owns a substream spawned in batch order, split into
    (augmentation, anchor), so the pairs do not depend on ``threads``.
    """
    jobs = [(batch, split_rng(rng, 2)) for batch, rng in zip(batches, rngs)]

    def build(job):
        batch, (view_rng, _) = job
        return make_view_pair(batch, cfg.augment, view_rng, cfg.ablation.views)

    if threads <= 1:
        for job in jobs:
            yield build(job), job[1][1]
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for job, pair in zip(jobs, pool.map(build, jobs)):
            yield pair, job[1][1]


def contrastive_loss_terms(
        model: TCCModel,
        x_w: torch.Tensor,
        x_s: torch.Tensor,
        t: int,
        cfg: TrainConfig,
        labels: Optional[torch.Tensor] = None,
) -> Dict[str, torch.Tensor]:
    """Weighted objective of one view pair at anchor t plus its terms.

    Without ``labels`` this is the unsupervised mix (lambda1, lambda2, NT-Xent);
    with labels the class-aware mix (lambda3, lambda4, supervised contrasting).
    """
    weights = cfg.loss
    ablation = cfg.ablation
    supervised = labels is not None
    z_w = model.encode(x_w)
    z_s = model.encode(x_s)
    c_w = model.context_vector(z_w[:, :, :t])
    c_s = model.context_vector(z_s[:, :, :t])

    if ablation.cross_view:
        views = TemporalBatchViews(z_w=z_w, z_s=z_s, c_w=c_w, c_s=c_s, t=t, k_steps=model.k_steps)
        tc_s = temporal_contrast_loss(views, model.predict_future, "strong_to_weak")
        tc_w = temporal_contrast_loss(views, model.predict_future, "weak_to_strong")
    else:
        tc_s = same_view_temporal_loss(z_s, c_s, model.predict_future, t, model.k_steps)
        tc_w = same_view_temporal_loss(z_w, c_w, model.predict_future, t, model.k_steps)

    if ablation.contextual == "off":
        cc = z_w.new_zeros(())
    else:
        # rows (2i, 2i+1) are the weak and strong projection of sample i
        proj = torch.stack([model.project(c_w), model.project(c_s)], dim=1).flatten(0, 1)
        if supervised:
            pair_labels = torch.as_tensor(labels).repeat_interleave(2)
            cc = supervised_contextual_contrast_loss(proj, pair_labels, weights.tau, weights.scc_reduction)
        else:
            cc = contextual_contrast_loss(proj, weights.tau)

    combine = combine_semi if supervised else combine_unsup
    return {"loss": combine(tc_s, tc_w, cc, weights), "tc_s": tc_s, "tc_w": tc_w, "cc": cc}


def _contrastive_training(
        model: TCCModel,
        d: Dataset,
        cfg: TrainConfig,
        phase: str,
        supervised: bool,
        epochs: int,
        rng: np.random.Generator,
) -> Tuple[torch.optim.Optimizer, List[Dict[str, Any]]]:
    params = _named_params(model, ("encoder", "context", "head"))
    optimizer = make_optimizer(params.values(), cfg.optim)
    threads = resolve_threads(cfg.threads)
    batch_size = min(cfg.batch_size, len(d))
    t_z, k_steps = model.latent_length, model.k_steps

    history: List[Dict[str, Any]] = []
    step = 0
    model.train()
    epoch_rngs = rng.spawn(epochs) if epochs else []
    for epoch in trange(epochs, desc=phase, disable=not cfg.progress, leave=False):
        epoch_rng = epoch_rngs[epoch]
        batches = list(batch_iterator(d, batch_size, draw_seed(epoch_rng), include_labels=supervised))
        losses = []
        for pair, anchor_rng in _view_pairs(batches, epoch_rng.spawn(len(batches)), cfg, threads):
            t = int(anchor_rng.integers(1, t_z - k_steps + 1))
            labels = torch.from_numpy(pair.source.y) if supervised else None
            terms = contrastive_loss_terms(
                model, torch.from_numpy(pair.weak.x), torch.from_numpy(pair.strong.x), t, cfg, labels
            )
            try:
                grads, values = compute_gradients(lambda _: terms, params)
            except NumericError as e:
                raise NumericError(f"{phase}: {e} at step {step}", term=e.term, step=step) from e
            adam_step(params, grads, optimizer)
            history.append({"phase": phase, "epoch": epoch, "step": step, "anchor": t, **values})
            losses.append(values["loss"])
            step += 1
        logger.info("🔄 %s epoch %d/%d loss %.4f", phase, epoch + 1, epochs, float(np.mean(losses)))
    return optimizer, history


def pretrain_tstcc(cfg: TrainConfig, d: Dataset, epochs: Optional[int] = None) -> Checkpoint:
    """Phase 1. Reads samples only; labels of ``d`` are never accessed."""
    if len(d) == 0:
        raise DataFormatError("pretraining needs a nonempty dataset")
    if cfg.ablation.contextual == "sup":
        raise ConfigError("supervised contextual contrasting needs labels; pretraining is unlabeled")
    epochs = cfg.epochs if epochs is None else epochs

    seed_everything(cfg.seed)
    model = build_model(cfg.model, d.channels, d.length, d.num_classes)
    logger.info("🔄 pretraining on %d samples, T_z=%d, K=%d", len(d), model.latent_length, model.k_steps)
    optimizer, history = _contrastive_training(
        model, d, cfg, "pretrain", supervised=False, epochs=epochs, rng=_phase_rng(cfg.seed, "pretrain")
    )
    return _snapshot(model, optimizer, cfg, "pretrain", history, None, classifier_trained=False)


def train_catcc(
        ckpt: Checkpoint,
        pseudo: PseudoLabeledDataset,
        cfg: TrainConfig,
        labeled: Optional[Dataset] = None,
        epochs: Optional[int] = None,
) -> Checkpoint:
    """Phase 4: class-aware contrasting over pseudo labels (plus the true-labeled
    samples when ``labeled`` is given). The encoder and classifier come from
    ``ckpt``; transformer, predictors and projection head start fresh."""
    if (pseudo.dataset.labels == UNLABELED).any():
        raise DataFormatError("pseudo-labeled dataset still contains unlabeled samples")
    parts = [pseudo.dataset] if labeled is None else [labeled, pseudo.dataset]
    if not sum(len(p) for p in parts):
        raise DataFormatError("class-aware training needs at least one labeled sample")
    d = concat_datasets(parts, name="catcc")
    epochs = cfg.epochs if epochs is None else epochs

    if cfg.loss.lambda3 == 0 and cfg.loss.lambda4 == 0:
        logger.warning("⚠️ lambda3 = lambda4 = 0, class-aware training leaves the model unchanged")
        return Checkpoint(
            config=cfg.model_dump(mode="json"),
            phase="catcc",
            tensors=dict(ckpt.tensors),
            history=[],
            meta=dict(ckpt.meta, pseudo_provenance=pseudo.provenance),
        )

    seed_everything(cfg.seed)
    model = _model_from(ckpt, prefixes=["encoder.", "classifier."])
    logger.info("🔄 class-aware training on %d samples (%d pseudo-labeled)", len(d), len(pseudo))
    optimizer, history = _contrastive_training(
        model, d, cfg, "catcc", supervised=True, epochs=epochs, rng=_phase_rng(cfg.seed, "catcc")
    )
    return _snapshot(
        model, optimizer, cfg, "catcc", history, ckpt,
        classifier_trained=ckpt.has_classifier,
        pseudo_provenance=pseudo.provenance,
    )


# --------------------------------------------------------------------
# 3) Supervised phases
# --------------------------------------------------------------------
def _check_labeled(d: Dataset, what: str) -> None:
    if len(d) == 0:
        raise DataFormatError(f"{what}: labeled set is empty")
    if (d.labels == UNLABELED).any():
        raise DataFormatError(f"{what}: dataset contains unlabeled samples")


def _supervised_training(
        d: Dataset,
        params: Dict[str, torch.Tensor],
        logits_of: Callable[[Batch], torch.Tensor],
        cfg: TrainConfig,
        phase: str,
        epochs: int,
        rng: np.random.Generator,
) -> Tuple[torch.optim.Optimizer, List[Dict[str, Any]]]:
    optimizer = make_optimizer(params.values(), cfg.optim)
    batch_size = min(cfg.batch_size, len(d))
    history: List[Dict[str, Any]] = []
    step = 0
    epoch_rngs = rng.spawn(epochs) if epochs else []
    for epoch in trange(epochs, desc=phase, disable=not cfg.progress, leave=False):
        losses, correct = [], 0
        for batch in batch_iterator(d, batch_size, draw_seed(epoch_rngs[epoch])):
            y = torch.from_numpy(batch.y)
            logits = logits_of(batch)
            loss = cross_entropy(logits, y)
            try:
                grads, values = compute_gradients(lambda _: {"loss": loss}, params)
            except NumericError as e:
                raise NumericError(f"{phase}: {e} at step {step}", term=e.term, step=step) from e
            adam_step(params, grads, optimizer)
            correct += int((logits.detach().argmax(dim=1) == y).sum())
            history.append({"phase": phase, "epoch": epoch, "step": step, "ce": values["loss"]})
            losses.append(values["loss"])
            step += 1
        logger.info(
            "🔄 %s epoch %d/%d loss %.4f train acc %.3f",
            phase, epoch + 1, epochs, float(np.mean(losses)), correct / len(d),
        )
    return optimizer, history


def finetune(ckpt: Checkpoint, labeled: Dataset, cfg: TrainConfig, epochs: Optional[int] = None) -> Checkpoint:
    """Phase 2: encoder + linear classifier with cross-entropy; transformer and heads frozen."""
    _check_labeled(labeled, "finetune")
    epochs = cfg.epochs if epochs is None else epochs

    seed_everything(cfg.seed)
    model = _model_from(ckpt)
    set_trainable([model.context, model.head], False)
    params = _trainable_params(model)
    model.train()
    optimizer, history = _supervised_training(
        labeled,
        params,
        lambda batch: model(torch.from_numpy(batch.x)),
        cfg,
        "finetune",
        epochs,
        _phase_rng(cfg.seed, "finetune"),
    )
    return _snapshot(model, optimizer, cfg, "finetune", history, ckpt, classifier_trained=True)


def linear_evaluate(
        ckpt: Checkpoint,
        train_labeled: Dataset,
        test: Dataset,
        cfg: TrainConfig,
        epochs: Optional[int] = None,
) -> Metrics:
    """Fresh linear classifier on the frozen encoder of ``ckpt``, scored on ``test``."""
    _check_labeled(train_labeled, "linear evaluation")
    _check_labeled(test, "linear evaluation test set")
    epochs = cfg.epochs if epochs is None else epochs
    missing = [k for k, n in enumerate(class_counts(train_labeled.labels, train_labeled.num_classes)) if n == 0]
    if missing:
        logger.warning("⚠️ classes %s have no training samples for the linear classifier", missing)

    seed_everything(cfg.seed)
    model = _model_from(ckpt, prefixes=["encoder."])
    batch_size = max(1, cfg.batch_size)
    features = _encode_all(model, train_labeled, batch_size)
    set_trainable([model.encoder, model.context, model.head], False)
    params = _trainable_params(model)
    _, history = _supervised_training(
        train_labeled,
        params,
        lambda batch: model.classifier(features[torch.from_numpy(batch.indices)]),
        cfg,
        "linear",
        epochs,
        _phase_rng(cfg.seed, "linear"),
    )
    pred = _predict_logits(model, test, batch_size).argmax(axis=1)
    return evaluate_metrics(pred, test.labels, test.num_classes)


def evaluate_model(ckpt: Checkpoint, test: Dataset, cfg: TrainConfig) -> Metrics:
    """Score the checkpoint's own classifier on ``test``."""
    if not ckpt.has_classifier:
        raise ConfigError(f"checkpoint of phase {ckpt.phase!r} has no trained classifier")
    _check_labeled(test, "evaluation")
    model = _model_from(ckpt)
    pred = _predict_logits(model, test, max(1, cfg.batch_size)).argmax(axis=1)
    return evaluate_metrics(pred, test.labels, test.num_classes)


def generate_pseudo_labels(
        ckpt: Checkpoint,
        unlabeled: Dataset,
        truth: Optional[np.ndarray] = None,
        threshold: Optional[float] = None,
        batch_size: int = 128,
) -> PseudoLabeledDataset:
    """Phase 3: argmax of the classifier logits (first index wins ties).

    With ``threshold`` only samples whose softmax confidence reaches it are
    kept; the rest are dropped. ``agreement`` is the fraction of kept labels
    matching ``truth`` and is diagnostic only.
    """
    if not ckpt.has_classifier:
        raise ConfigError(f"checkpoint of phase {ckpt.phase!r} has no trained classifier")
    model = _model_from(ckpt)
    logits = _predict_logits(model, unlabeled, batch_size)
    pred = np.argmax(logits, axis=1).astype(np.int64)
    confidence = torch.softmax(torch.from_numpy(logits).double(), dim=1).max(dim=1).values.numpy()

    kept = np.arange(len(unlabeled), dtype=np.int64)
    if threshold is not None:
        kept = kept[confidence >= threshold]
        logger.info("✅ kept %d of %d pseudo labels at confidence >= %.2f", len(kept), len(unlabeled), threshold)

    agreement = None
    if truth is not None and len(kept):
        truth = np.asarray(truth, dtype=np.int64)
        agreement = float(np.mean(pred[kept] == truth[kept]))
        logger.info("✅ pseudo-label agreement %.3f", agreement)

    return PseudoLabeledDataset(
        dataset=subset(unlabeled, kept, labels=pred[kept]),
        provenance=f"{ckpt.phase}:{checkpoint_fingerprint(ckpt)[:16]}",
        agreement=agreement,
        confidence=confidence[kept],
        source_indices=kept,
    )


# --------------------------------------------------------------------
# 4) Protocols
# --------------------------------------------------------------------
def _load(path: Optional[Path], what: str) -> Dataset:
    if path is None:
        raise ConfigError(f"data.{what}_path is not set")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{what} dataset not found: {path}")
    return load_dataset(path, name=what)


def load_inputs(paths: DataConfig) -> Tuple[Dataset, Dataset]:
    """Raw train/test pair with matching (C, T, K_cls)."""
    train = _load(paths.train_path, "train")
    test = _load(paths.test_path, "test")
    if (train.channels, train.length, train.num_classes) != (test.channels, test.length, test.num_classes):
        raise ShapeError(f"train {train!r} and test {test!r} dimensions differ")
    return train, test


def validate_run(cfg: RunConfig, paths: Optional[DataConfig] = None) -> Dict[str, Any]:
    """Dry run: config, data shapes, latent length, horizon and split, no training."""
    train, test = load_inputs(paths or cfg.data)
    tc = cfg.train
    check_window(tc.augment, train.length)
    t_z = latent_length(train.length, tc.model)
    k_steps = horizon(t_z, tc.model.k_fraction)
    split = split_labeled_subset(train, tc.labels_fraction, tc.seed)
    if tc.ablation.contextual == "sup":
        raise ConfigError("ablation.contextual=sup is only valid for class-aware training")
    return {
        "train": len(train),
        "test": len(test),
        "channels": train.channels,
        "length": train.length,
        "num_classes": train.num_classes,
        "latent_length": t_z,
        "horizon": k_steps,
        "labeled": len(split.labeled),
        "unlabeled": len(split.unlabeled),
        "threads": resolve_threads(tc.threads),
    }


def run_protocol(protocol: Protocol, cfg: RunConfig, paths: Optional[DataConfig] = None) -> RunReport:
    """Run one end-to-end recipe and write its run directory."""
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}, expected one of {PROTOCOLS}")
    paths = paths or cfg.data
    tc = cfg.train

    raw_train, raw_test = load_inputs(paths)
    check_window(tc.augment, raw_train.length)
    workers = resolve_threads(tc.threads)
    stats = compute_minmax_stats(raw_train)
    train, test = normalize_minmax(raw_train, stats), normalize_minmax(raw_test, stats)
    split = split_labeled_subset(train, tc.labels_fraction, tc.seed)
    run_dir = Path(paths.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    dump_snapshot(cfg, run_dir / "config.snapshot")
    logger.info(
        "🔄 %s seed %d: %d labeled / %d unlabeled / %d test, %d prefetch workers",
        protocol, tc.seed, len(split.labeled), len(split.unlabeled), len(test), workers,
    )

    saved: Dict[str, Path] = {}
    histories: List[Dict[str, Any]] = []

    def keep(name: str, ckpt: Checkpoint) -> Checkpoint:
        saved[name] = save_checkpoint(ckpt, run_dir / f"{name}.ckpt")
        histories.extend(ckpt.history)
        logger.info("💾 %s", saved[name])
        return ckpt

    def final_metrics(start: Checkpoint, tuned: Optional[Checkpoint] = None) -> Metrics:
        if tc.final_eval == "linear":
            return linear_evaluate(start, split.labeled, test, tc)
        if tuned is None:
            tuned = finetune(start, split.labeled, tc)
            histories.extend(tuned.history)
        return evaluate_model(tuned, test, tc)

    agreement = None
    init = initial_checkpoint(tc, train, stats.minimum, stats.maximum)
    if protocol == "random_init":
        metrics = linear_evaluate(init, split.labeled, test, tc)
    elif protocol == "supervised":
        tuned = keep("phase2", finetune(init, split.labeled, tc))
        metrics = evaluate_model(tuned, test, tc)
    else:
        pretrained = keep("phase1", _with_norm(pretrain_tstcc(tc, train), init))
        tuned = keep("phase2", finetune(pretrained, split.labeled, tc))
        if protocol == "tstcc":
            metrics = final_metrics(pretrained, tuned)
        else:
            truth = train.labels[split.unlabeled_indices]
            pseudo = generate_pseudo_labels(
                tuned, split.unlabeled, truth, tc.pseudo_label_threshold, max(1, tc.batch_size)
            )
            agreement = pseudo.agreement
            save_dataset(pseudo.dataset, run_dir / "pseudo_labels.tsd")
            keep("phase3", Checkpoint(
                config=tuned.config,
                phase="pseudo_label",
                tensors=dict(tuned.tensors),
                meta=dict(tuned.meta, pseudo_labels=len(pseudo), agreement=agreement, provenance=pseudo.provenance),
            ))
            class_aware = keep("phase4", train_catcc(tuned, pseudo, tc, labeled=split.labeled))
            metrics = final_metrics(class_aware)

    report = RunReport(
        protocol=protocol,
        seed=tc.seed,
        labels_fraction=tc.labels_fraction,
        ablation=ablation_name(tc.ablation),
        metrics=metrics,
        run_dir=run_dir,
        checkpoints=saved,
        pseudo_agreement=agreement,
    )
    write_metrics_csv(histories, run_dir / "metrics.csv")
    write_report_csv([report], run_dir / "report.csv")
    logger.info("✅ %s accuracy %.4f MF1 %.4f", protocol, metrics.accuracy, metrics.mf1)
    return report


def _with_norm(ckpt: Checkpoint, source: Checkpoint) -> Checkpoint:
    for name in ("norm.min", "norm.max"):
        if name in source.tensors:
            ckpt.tensors[name] = source.tensors[name]
    return ckpt


def run_sweep(
        protocol: Protocol,
        cfg: RunConfig,
        paths: Optional[DataConfig],
        key: str,
        values: Sequence[Any],
) -> List[RunReport]:
    """One run per value of the dotted config ``key`` (e.g. ``train.model.k_fraction``),
    each in ``<output_dir>/<leaf>=<value>``."""
    paths = paths or cfg.data
    if not values:
        raise ConfigError("sweep needs at least one value")
    leaf = key.rsplit(".", 1)[-1]
    reports = []
    for value in values:
        swept = apply_overrides(cfg, [f"{key}={value}"])
        run_paths = paths.model_copy(update={"output_dir": Path(paths.output_dir) / f"{leaf}={value}"})
        report = run_protocol(protocol, swept, run_paths)
        logger.info("✅ %s=%s MF1 %.4f", key, value, report.metrics.mf1)
        reports.append(report)
    return reports
