# app/services/training_service.py
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score, precision_score

from app.core.config import RunConfig
from app.core.errors import DatasetFormatError, ShapeError
from app.core.models import Dataset, EpochRecord, LossReport, Metrics
from app.model.model import ModelInputs, ModelOutput, build_model
from app.model.noise import GeneratorNoise, PerInstanceNoise, content_seed
from app.services.dataset_service import znormalize
from app.services.feature_service import (
    DEFAULT_REPEAT_EPS,
    ExpertStandardizer,
    expert_features,
    render_curve_image,
)

logger = logging.getLogger(__name__)

JS_EPS = 1e-12
TYPE_LOSS_FIELDS = {"ts": "ce_ts", "img": "ce_img", "exp": "ce_exp"}


# --- Losses ---

def js_divergence(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """
    Jensen-Shannon divergence in nats along the last axis, logs floored at 1e-12.

    Args:
        p (torch.Tensor): Probability vectors (..., C).
        q (torch.Tensor): Probability vectors of the same shape.

    Returns:
        torch.Tensor: One nonnegative value per vector pair.
    """
    m = 0.5 * (p + q)
    log_m = torch.log(m.clamp_min(JS_EPS))
    kl_pm = (p * (torch.log(p.clamp_min(JS_EPS)) - log_m)).sum(dim=-1)
    kl_qm = (q * (torch.log(q.clamp_min(JS_EPS)) - log_m)).sum(dim=-1)
    return 0.5 * kl_pm + 0.5 * kl_qm


def loss_terms(logits_final: torch.Tensor, type_logits: Mapping[str, torch.Tensor],
               labels: torch.Tensor) -> Dict[str, torch.Tensor]:
    """
    Batch-mean loss components: one cross-entropy per classifier and the summed JS
    terms between the final distribution and each intermediate one.

    Types absent from `type_logits` contribute zero.
    """
    zero = logits_final.new_zeros(())
    terms = {"ce_final": F.cross_entropy(logits_final, labels)}
    final_probs = F.softmax(logits_final, dim=-1)
    js_total = zero
    for tag, name in TYPE_LOSS_FIELDS.items():
        if tag not in type_logits:
            terms[name] = zero
            continue
        terms[name] = F.cross_entropy(type_logits[tag], labels)
        js_total = js_total + js_divergence(final_probs, F.softmax(type_logits[tag], dim=-1)).mean()
    terms["js_total"] = js_total
    return terms


def total_loss(logits_final: torch.Tensor, type_logits: Mapping[str, torch.Tensor],
               labels: torch.Tensor) -> LossReport:
    """Evaluates the composite loss (unit weights) as plain numbers."""
    terms = loss_terms(logits_final, type_logits, labels)
    return LossReport(**{name: float(value.detach()) for name, value in terms.items()})


# --- Inputs ---

@dataclass
class PreparedData:
    inputs: ModelInputs
    labels: torch.Tensor
    seeds: List[int]

    def __len__(self) -> int:
        return len(self.inputs)


def expert_matrix(values: np.ndarray, eps: float = DEFAULT_REPEAT_EPS) -> np.ndarray:
    """(N, 12) expert features of the raw series rows."""
    return np.stack([expert_features(row, eps).values for row in values]) if len(values) else np.zeros((0, 12))


def series_to_inputs(values: np.ndarray, standardizer: ExpertStandardizer, normalize: bool = True,
                     eps: float = DEFAULT_REPEAT_EPS, with_image: bool = True,
                     dtype: torch.dtype = torch.float32) -> ModelInputs:
    """
    Turns raw series rows into model inputs.

    Expert features and images come from the recorded values; the series branch
    reads the z-normalized values when `normalize` is set.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"Expected an (N, T) series matrix, got shape {values.shape}")
    n = values.shape[0]
    series = np.stack([znormalize(row) for row in values]) if normalize and n else values
    expert = standardizer.transform(expert_matrix(values, eps))
    if with_image:
        images = np.stack([render_curve_image(row).pixels.transpose(2, 0, 1) for row in values]) if n else \
            np.zeros((0, 3, 1, 1))
    else:
        images = np.zeros((n, 0))
    return ModelInputs(
        series=torch.as_tensor(series, dtype=dtype),
        image=torch.as_tensor(images, dtype=dtype),
        expert=torch.as_tensor(expert, dtype=dtype),
    )


def fit_standardizer(dataset: Dataset, eps: float = DEFAULT_REPEAT_EPS) -> ExpertStandardizer:
    values, _ = dataset.to_arrays()
    return ExpertStandardizer.fit(expert_matrix(values, eps))


def prepare_data(dataset: Dataset, standardizer: ExpertStandardizer, config: RunConfig) -> PreparedData:
    values, labels = dataset.to_arrays()
    inputs = series_to_inputs(
        values, standardizer, config.dataset.normalize, config.features.repeat_eps,
        with_image=config.features.use_image and config.model.architecture == "gfef",
    )
    return PreparedData(inputs, torch.as_tensor(labels, dtype=torch.long), [content_seed(row) for row in values])


# --- Metrics ---

def compute_metrics(y_true: Sequence[int], y_pred: Sequence[int], num_classes: int) -> Metrics:
    """
    Accuracy plus macro F1 and precision over all `num_classes` classes.

    Classes never predicted (or absent) contribute 0 to the macro means.
    """
    labels = list(range(num_classes))
    return Metrics(
        accuracy=float(accuracy_score(y_true, y_pred)),
        f1=float(f1_score(y_true, y_pred, labels=labels, average="macro", zero_division=0)),
        precision=float(precision_score(y_true, y_pred, labels=labels, average="macro", zero_division=0)),
        confusion=confusion_matrix(y_true, y_pred, labels=labels),
    )


@torch.no_grad()
def predict_logits(model: nn.Module, inputs: ModelInputs, seeds: Sequence[int], batch: int = 64) -> torch.Tensor:
    """
    Deterministic inference: thresholded masks and structure, reliability noise from
    one content-derived stream per instance.
    """
    model.eval()
    chunks = []
    for start in range(0, len(inputs), batch):
        idx = slice(start, start + batch)
        out = model(inputs.select(idx), PerInstanceNoise(seeds[idx]))
        chunks.append(out.logits)
    if not chunks:
        return torch.zeros(0, model.num_classes)
    return torch.cat(chunks)


def evaluate_model(model: nn.Module, data: PreparedData, batch: int = 64) -> Metrics:
    if len(data) == 0:
        raise DatasetFormatError("Cannot evaluate on an empty dataset")
    logits = predict_logits(model, data.inputs, data.seeds, batch)
    predicted = logits.argmax(dim=-1).numpy()
    return compute_metrics(data.labels.numpy(), predicted, model.num_classes)


# --- Training ---

@dataclass
class TrainResult:
    """A trained model with everything a checkpoint needs."""
    model: nn.Module
    standardizer: ExpertStandardizer
    config: RunConfig
    seed: int
    class_names: List[str]
    series_length: int
    history: List[EpochRecord] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def final_metrics(self) -> Optional[Metrics]:
        for record in reversed(self.history):
            if record.val_metrics is not None:
                return record.val_metrics
        return None


def set_determinism(enabled: bool) -> None:
    if enabled:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True, warn_only=True)


def history_frame(history: Sequence[EpochRecord]) -> pd.DataFrame:
    """Epoch log as a table: losses, training accuracy and validation metrics."""
    rows = []
    for record in history:
        row = {"epoch": record.epoch, "total": record.loss.total, **vars(record.loss),
               "train_accuracy": record.train_accuracy}
        metrics = record.val_metrics.as_dict() if record.val_metrics else {}
        row.update({f"val_{k}": v for k, v in metrics.items()})
        rows.append(row)
    return pd.DataFrame(rows)


def train(config: RunConfig, train_set: Dataset, validation: Optional[Dataset] = None,
          seed: Optional[int] = None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """
    Trains one model with Adam on the composite loss.

    Args:
        config (RunConfig): Validated configuration.
        train_set (Dataset): Raw training series; every class must be present.
        validation (Optional[Dataset]): Raw series evaluated every `train.log_every` epochs.
        seed (Optional[int]): Seed for initialization, batching and all noise; defaults
            to the first of `train.seeds`.
        on_epoch (Optional[Callable]): Called with each EpochRecord.

    Returns:
        TrainResult: The model (left in eval mode) and its epoch history.
    """
    if len(train_set) == 0:
        raise DatasetFormatError("Training set is empty")
    missing = train_set.missing_classes()
    if missing:
        names = [train_set.class_names[c] for c in missing]
        raise DatasetFormatError(f"Training split lacks classes {names}")
    if validation is not None and validation.series_length != train_set.series_length:
        raise ShapeError(
            f"Validation length {validation.series_length} != training length {train_set.series_length}"
        )

    seed = config.train.seeds[0] if seed is None else int(seed)
    set_determinism(config.train.deterministic)
    torch.manual_seed(seed)

    standardizer = fit_standardizer(train_set, config.features.repeat_eps)
    data = prepare_data(train_set, standardizer, config)
    val_data = prepare_data(validation, standardizer, config) if validation is not None and len(validation) else None

    model = build_model(config, train_set.series_length, train_set.num_classes)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.train.lr)
    noise = GeneratorNoise(seed)
    order = torch.Generator().manual_seed(seed)
    result = TrainResult(model, standardizer, config, seed, list(train_set.class_names), train_set.series_length)
    logger.info(
        "Training %s on '%s' (%d instances, T=%d, %d classes), seed %d",
        config.model.architecture, train_set.name, len(data), train_set.series_length, train_set.num_classes, seed,
    )

    for epoch in range(config.train.epochs):
        model.train()
        sums = dict.fromkeys(["ce_final", "ce_ts", "ce_img", "ce_exp", "js_total"], 0.0)
        correct = 0
        for idx in torch.randperm(len(data), generator=order).split(config.train.batch):
            labels = data.labels[idx]
            out: ModelOutput = model(data.inputs.select(idx), noise)
            terms = loss_terms(out.logits, out.type_logits, labels)
            optimizer.zero_grad()
            sum(terms.values()).backward()
            optimizer.step()
            for name, value in terms.items():
                sums[name] += float(value.detach()) * len(idx)
            correct += int((out.logits.argmax(dim=-1) == labels).sum())

        loss = LossReport(**{name: total / len(data) for name, total in sums.items()})
        record = EpochRecord(epoch=epoch, loss=loss, train_accuracy=correct / len(data))
        last = epoch == config.train.epochs - 1
        if val_data is not None and (last or (epoch + 1) % max(config.train.log_every, 1) == 0):
            record.val_metrics = evaluate_model(model, val_data, config.train.batch)
        result.history.append(record)
        logger.info(
            "epoch %d loss %.6f train_acc %.4f%s", epoch, loss.total, record.train_accuracy,
            f" val_acc {record.val_metrics.accuracy:.4f}" if record.val_metrics else "",
        )
        if on_epoch is not None:
            on_epoch(record)

    model.eval()
    return result


def train_many(config: RunConfig, train_set: Dataset,
               validation: Optional[Dataset]) -> Tuple[List[TrainResult], pd.DataFrame]:
    """
    Trains once per seed in `train.seeds` and summarizes the final validation metrics.

    Returns:
        Tuple[List[TrainResult], pd.DataFrame]: The runs, and a frame with one row per
        seed plus 'mean' and 'std' rows.
    """
    results = [train(config, train_set, validation, seed=s) for s in config.train.seeds]
    rows = {}
    for result in results:
        metrics = result.final_metrics()
        if metrics is not None:
            rows[f"seed {result.seed}"] = metrics.as_dict()
    frame = pd.DataFrame.from_dict(rows, orient="index")
    if not frame.empty:
        summary = pd.DataFrame([frame.mean(), frame.std(ddof=0)], index=["mean", "std"])
        frame = pd.concat([frame, summary])
    return results, frame


def evaluate_rotation(config: RunConfig, groups: Sequence[Dataset]) -> pd.DataFrame:
    """
    Trains on each experiment group in turn and tests on the union of the others.

    Returns:
        pd.DataFrame: One row per training group plus a 'mean' row.
    """
    if len(groups) < 2:
        raise ValueError("Rotation needs at least two groups")
    rows = {}
    for i, group in enumerate(groups):
        rest = [inst for j, g in enumerate(groups) if j != i for inst in g.instances]
        held_out = Dataset(rest, group.num_classes, f"not-{group.name}", list(group.class_names))
        result = train(config, group, None)
        metrics = evaluate_model(
            result.model, prepare_data(held_out, result.standardizer, config), config.train.batch
        )
        rows[group.name] = metrics.as_dict()
    frame = pd.DataFrame.from_dict(rows, orient="index")
    frame.loc["mean"] = frame.mean()
    return frame
