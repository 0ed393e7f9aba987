# app/services/dataset_service.py
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import (
    SYNTHETIC_CLASS_NAMES,
    SYNTHETIC_SERIES_LENGTH,
    RunConfig,
)
from app.core.errors import DatasetFormatError
from app.core.models import Dataset, TimeSeriesInstance
from app.repository.dataset_repository import DatasetRepository

logger = logging.getLogger(__name__)

NORMAL, BUCKLING, STUCK = 0, 1, 2
ZNORM_EPS = 1e-8


def znormalize(series: Sequence[float]) -> np.ndarray:
    """
    Z-normalizes a series with the population standard deviation.

    A series whose deviation is below 1e-8 maps to all zeros.
    """
    values = np.asarray(series, dtype=np.float64)
    if values.size == 0:
        raise DatasetFormatError("Cannot normalize an empty series")
    sigma = values.std()
    if sigma < ZNORM_EPS:
        return np.zeros_like(values)
    return (values - values.mean()) / sigma


def _loading_ramp(rng: np.random.Generator, t: np.ndarray) -> np.ndarray:
    peak = rng.uniform(0.45, 0.55)
    amplitude = rng.uniform(0.5, 1.5)
    rising = t / peak
    falling = (1.0 - t) / (1.0 - peak)
    return amplitude * np.where(t <= peak, rising, falling)


def _normal_curve(rng: np.random.Generator, t: np.ndarray) -> np.ndarray:
    ramp = _loading_ramp(rng, t)
    return ramp + rng.normal(0.0, 0.01, size=t.shape) * ramp.max()


def _buckling_curve(rng: np.random.Generator, t: np.ndarray) -> np.ndarray:
    ramp = _loading_ramp(rng, t)
    scale = ramp.max()
    # Pronounced whole-curve bow: quadratic arch plus a cubic skew.
    bow = rng.uniform(0.3, 0.6) * 4.0 * t * (1.0 - t)
    skew = rng.uniform(-0.8, 0.8) * (t - 0.5) ** 3
    sign = rng.choice([-1.0, 1.0])
    return ramp + sign * scale * (bow + skew) + rng.normal(0.0, 0.01, size=t.shape) * scale


def _stuck_curve(rng: np.random.Generator, t: np.ndarray) -> np.ndarray:
    values = _normal_curve(rng, t)
    length = t.shape[0]
    # Frozen tail longer than T/2 + 1 so the repeated run exceeds T/2.
    freeze_at = int(rng.integers(int(0.15 * length), int(0.4 * length) + 1))
    values[freeze_at:] = values[freeze_at]
    return values


_CURVES = {NORMAL: _normal_curve, BUCKLING: _buckling_curve, STUCK: _stuck_curve}


def generate_strain_dataset(n_per_class: int, seed: int, name: Optional[str] = None) -> Dataset:
    """
    Synthesizes loading/unloading strain curves for three gauge states.

    Args:
        n_per_class (int): Instances per class; 0 yields an empty dataset with 3 classes.
        seed (int): Seed for numpy's Generator; identical seeds give identical datasets.
        name (Optional[str]): Dataset name, defaults to 'strain-<seed>'.

    Returns:
        Dataset: Series of length 101, classes NORMAL, BUCKLING, STUCK, shuffled.
    """
    if n_per_class < 0:
        raise DatasetFormatError("n_per_class must be >= 0")
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, SYNTHETIC_SERIES_LENGTH)

    instances: List[TimeSeriesInstance] = []
    for label in (NORMAL, BUCKLING, STUCK):
        for _ in range(n_per_class):
            instances.append(TimeSeriesInstance(values=_CURVES[label](rng, t), label=label))
    order = rng.permutation(len(instances))
    return Dataset(
        instances=[instances[i] for i in order],
        num_classes=len(SYNTHETIC_CLASS_NAMES),
        name=name or f"strain-{seed}",
        class_names=list(SYNTHETIC_CLASS_NAMES),
    )


def generate_strain_groups(n_per_class: int, seeds: Sequence[int]) -> List[Dataset]:
    """One synthetic 'experiment group' per seed, for rotation evaluation."""
    return [generate_strain_dataset(n_per_class, seed, name=f"group-{i + 1}") for i, seed in enumerate(seeds)]


def normalize_dataset(dataset: Dataset) -> Dataset:
    return Dataset(
        instances=[TimeSeriesInstance(znormalize(inst.values), inst.label) for inst in dataset.instances],
        num_classes=dataset.num_classes,
        name=dataset.name,
        class_names=list(dataset.class_names),
    )


def load_datasets(config: RunConfig) -> Tuple[Dataset, Optional[Dataset]]:
    """
    Loads (train, validation) according to `dataset.format`.

    Series stay raw here; normalization happens during input preparation so
    expert features see the recorded values.
    """
    ds = config.dataset
    repo = DatasetRepository()
    if ds.format == "synthetic":
        train = generate_strain_dataset(ds.synthetic.n_per_class, ds.synthetic.seed)
        validation = generate_strain_dataset(ds.synthetic.n_per_class, ds.synthetic.test_seed)
        return train, validation

    loader = repo.load_ucr if ds.format == "ucr" else repo.load_strain_csv
    train = loader(ds.path)
    validation = loader(ds.test_path) if ds.test_path else None
    if validation is not None:
        validation = align_labels(train.class_names, validation)
    return train, validation


def align_labels(class_names: List[str], other: Dataset) -> Dataset:
    """Re-expresses `other`'s labels in the indexing of `class_names`."""
    if other.class_names == list(class_names):
        return other
    index = {name: i for i, name in enumerate(class_names)}
    unknown = sorted(set(other.class_names) - set(index))
    if unknown:
        raise DatasetFormatError(f"Test split has classes {unknown} absent from the training split")
    instances = [
        TimeSeriesInstance(inst.values, index[other.class_names[inst.label]]) for inst in other.instances
    ]
    return Dataset(instances, len(class_names), other.name, list(class_names))
