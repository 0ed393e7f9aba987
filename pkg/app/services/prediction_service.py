# app/services/prediction_service.py
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from app.core.config import RunConfig, config_from_dict
from app.core.errors import CheckpointError, InputValidationError
from app.core.models import Dataset, Metrics, Prediction, ReliabilityScores
from app.model.encoders import TYPE_TAGS
from app.model.model import build_model
from app.model.noise import PerInstanceNoise, content_seed
from app.repository.checkpoint_repository import Checkpoint, CheckpointRepository
from app.services.dataset_service import align_labels
from app.services.feature_service import ExpertStandardizer
from app.services.training_service import TrainResult, evaluate_model, prepare_data, series_to_inputs

logger = logging.getLogger(__name__)

MODEL_VERSION = "gfef-1"
STATS_MEAN = "stats.expert_mean"
STATS_STD = "stats.expert_std"


@dataclass
class LoadedModel:
    """A model restored from a checkpoint, with the statistics it was trained with."""
    model: nn.Module
    standardizer: ExpertStandardizer
    config: RunConfig
    class_names: List[str]
    series_length: int
    seed: int
    metadata: Dict[str, object] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def to_checkpoint(result: TrainResult) -> Checkpoint:
    metadata = {
        "model_version": MODEL_VERSION,
        "config": result.config.to_dict(),
        "num_classes": result.num_classes,
        "class_names": result.class_names,
        "series_length": result.series_length,
        "seed": result.seed,
    }
    tensors = {name: value.detach().cpu().numpy() for name, value in result.model.state_dict().items()}
    tensors[STATS_MEAN] = result.standardizer.mean
    tensors[STATS_STD] = result.standardizer.std
    return Checkpoint(metadata=metadata, tensors=tensors)


def save_result(result: TrainResult, path: str):
    CheckpointRepository().save(path, to_checkpoint(result))


def restore(checkpoint: Checkpoint) -> LoadedModel:
    meta = checkpoint.metadata
    try:
        config = config_from_dict(meta["config"])
        class_names = [str(name) for name in meta["class_names"]]
        series_length = int(meta["series_length"])
        seed = int(meta["seed"])
    except KeyError as exc:
        raise CheckpointError(f"Checkpoint metadata lacks '{exc.args[0]}'") from exc

    tensors = dict(checkpoint.tensors)
    try:
        standardizer = ExpertStandardizer(mean=tensors.pop(STATS_MEAN), std=tensors.pop(STATS_STD))
    except KeyError as exc:
        raise CheckpointError("Checkpoint lacks the expert standardization statistics") from exc

    model = build_model(config, series_length, len(class_names))
    try:
        model.load_state_dict({name: torch.from_numpy(value.copy()) for name, value in tensors.items()}, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"Checkpoint parameters do not fit the configured model: {exc}") from exc
    model.eval()
    return LoadedModel(model, standardizer, config, class_names, series_length, seed, meta)


def load_model(path: str) -> LoadedModel:
    loaded = restore(CheckpointRepository().load(path))
    logger.info(
        "Loaded %s model from %s (%d classes, T=%d)",
        loaded.config.model.architecture, path, loaded.num_classes, loaded.series_length,
    )
    return loaded


class Predictor:
    """
    Classifies single series with a loaded model.

    The model is only read, so one instance may serve concurrent callers. Reliability
    noise is seeded from each series' own bytes: equal inputs give equal answers.
    """

    def __init__(self, loaded: LoadedModel):
        self.loaded = loaded

    def validate(self, series) -> np.ndarray:
        if not isinstance(series, (list, tuple, np.ndarray)):
            raise InputValidationError("'series' must be an array of numbers")
        if not isinstance(series, np.ndarray):
            for position, item in enumerate(series):
                if isinstance(item, bool) or not isinstance(item, (int, float, np.integer, np.floating)):
                    raise InputValidationError(f"'series' item {position} is not a number: {item!r}")
        elif series.dtype.kind not in "iuf":
            raise InputValidationError("'series' must contain only numbers")
        try:
            values = np.asarray(series, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise InputValidationError("'series' must contain only numbers") from exc
        if values.ndim != 1:
            raise InputValidationError("'series' must be a flat array of numbers")
        if values.shape[0] != self.loaded.series_length:
            raise InputValidationError(
                f"Series length {values.shape[0]} does not match the model's {self.loaded.series_length}"
            )
        if not np.all(np.isfinite(values)):
            raise InputValidationError("Series contains NaN or infinite values")
        return values

    @torch.no_grad()
    def predict(self, series) -> Prediction:
        values = self.validate(series)
        config = self.loaded.config
        model = self.loaded.model
        inputs = series_to_inputs(
            values[None, :], self.loaded.standardizer, config.dataset.normalize, config.features.repeat_eps,
            with_image=config.features.use_image and config.model.architecture == "gfef",
        )
        out = model(inputs, PerInstanceNoise([content_seed(values)]))
        probabilities = F.softmax(out.logits.double(), dim=-1)[0].numpy()
        scores = {tag: (float(out.reliability[tag][0]) if tag in out.reliability else None) for tag in TYPE_TAGS}
        return Prediction(
            label=int(np.argmax(probabilities)),
            probabilities=[float(p) for p in probabilities],
            reliability=ReliabilityScores(scores),
        )

    def predict_many(self, batch: Sequence) -> List[Prediction]:
        return [self.predict(series) for series in batch]

    def evaluate(self, dataset: Dataset) -> Metrics:
        if dataset.series_length != self.loaded.series_length:
            raise InputValidationError(
                f"Dataset length {dataset.series_length} does not match the model's {self.loaded.series_length}"
            )
        dataset = align_labels(self.loaded.class_names, dataset)
        data = prepare_data(dataset, self.loaded.standardizer, self.loaded.config)
        return evaluate_model(self.loaded.model, data, self.loaded.config.train.batch)


def predict_offline(checkpoint_path: str, series) -> Prediction:
    return Predictor(load_model(checkpoint_path)).predict(series)
