# app/core/models.py
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.core.errors import DatasetFormatError, ShapeError

EXPERT_FEATURE_NAMES = (
    "range",
    "max_abs",
    "is_constant",
    "long_repeat",
    "max_step",
    "fit5_var_first_half",
    "fit5_var_second_half",
    "fit5_var_full",
    "fit5_var_last_three_quarters",
    "fit2_var_last_three_quarters",
    "quadratic_coef",
    "cubic_gamma",
)


@dataclass
class TimeSeriesInstance:
    """Represents one univariate series and its dense class index."""
    values: np.ndarray
    label: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ShapeError("A series must be one-dimensional")
        if not np.all(np.isfinite(self.values)):
            raise DatasetFormatError("A series contains NaN or Inf values")

    @property
    def length(self) -> int:
        return int(self.values.shape[0])


@dataclass
class Dataset:
    """A named collection of equal-length labelled series."""
    instances: List[TimeSeriesInstance]
    num_classes: int
    name: str
    class_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.num_classes < 1:
            raise DatasetFormatError("num_classes must be positive")
        lengths = {inst.length for inst in self.instances}
        if len(lengths) > 1:
            raise DatasetFormatError(f"Dataset '{self.name}' mixes series lengths {sorted(lengths)}")
        for inst in self.instances:
            if not 0 <= inst.label < self.num_classes:
                raise DatasetFormatError(
                    f"Label {inst.label} outside [0, {self.num_classes}) in dataset '{self.name}'"
                )
        if not self.class_names:
            self.class_names = [str(i) for i in range(self.num_classes)]

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def series_length(self) -> int:
        return self.instances[0].length if self.instances else 0

    def to_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        """Returns values as an (N, T) float64 matrix and labels as an (N,) int64 vector."""
        if not self.instances:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        values = np.stack([inst.values for inst in self.instances])
        labels = np.array([inst.label for inst in self.instances], dtype=np.int64)
        return values, labels

    def missing_classes(self) -> List[int]:
        present = {inst.label for inst in self.instances}
        return [c for c in range(self.num_classes) if c not in present]


@dataclass
class ExpertFeatureVector:
    """The twelve whole-series expert statistics, in fixed order."""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(EXPERT_FEATURE_NAMES),):
            raise ShapeError(f"Expected {len(EXPERT_FEATURE_NAMES)} expert features")

    def as_dict(self) -> Dict[str, float]:
        return {name: float(v) for name, v in zip(EXPERT_FEATURE_NAMES, self.values)}

    def __getitem__(self, index: int) -> float:
        """1-based access, matching the feature numbering f1..f12."""
        return float(self.values[index - 1])


@dataclass
class CurveImage:
    """A (64, 64, 3) raster: channel 0 unfolded, channel 1 folded, channel 2 zeros."""
    pixels: np.ndarray

    def lit(self, channel: int) -> set:
        rows, cols = np.nonzero(self.pixels[:, :, channel])
        return set(zip(rows.tolist(), cols.tolist()))


@dataclass
class ReliabilityScores:
    """Per-type reliability weights; types the model does not use map to None."""
    scores: Dict[str, Optional[float]]

    def total(self) -> float:
        return float(sum(v for v in self.scores.values() if v is not None))


@dataclass
class HypergraphStructure:
    """A learned hypergraph over the concatenated node set."""
    connection: np.ndarray
    relevance: np.ndarray
    hyperedges: List[List[int]]
    incidence: List[List[int]]

    @property
    def num_nodes(self) -> int:
        return len(self.hyperedges)


@dataclass
class LossReport:
    ce_final: float
    ce_ts: float
    ce_img: float
    ce_exp: float
    js_total: float

    @property
    def total(self) -> float:
        return self.ce_final + self.ce_ts + self.ce_img + self.ce_exp + self.js_total


@dataclass
class Metrics:
    accuracy: float
    f1: float
    precision: float
    confusion: np.ndarray

    def as_dict(self) -> Dict[str, float]:
        return {"accuracy": self.accuracy, "f1": self.f1, "precision": self.precision}


@dataclass
class Prediction:
    """The answer for one series: label, class probabilities and reliability weights."""
    label: int
    probabilities: List[float]
    reliability: ReliabilityScores

    def to_json(self) -> Dict[str, object]:
        return {
            "label": self.label,
            "class_probabilities": self.probabilities,
            "reliability_scores": self.reliability.scores,
        }


@dataclass
class EpochRecord:
    epoch: int
    loss: LossReport
    train_accuracy: float
    val_metrics: Optional[Metrics] = None
