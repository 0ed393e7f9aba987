# app/services/feature_service.py
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from app.core.config import IMAGE_SIZE, NUM_EXPERT_FEATURES
from app.core.errors import ShapeError
from app.core.models import (
    EXPERT_FEATURE_NAMES,
    CurveImage,
    Dataset,
    ExpertFeatureVector,
)

DEFAULT_REPEAT_EPS = 1e-9
A3_CLAMP = 1e-8
STD_GUARD = 1e-8


def _abscissa(length: int) -> np.ndarray:
    return np.arange(1, length + 1, dtype=np.float64) / length


def fit_polynomial(series: Sequence[float], degree: int) -> np.ndarray:
    """
    Least-squares polynomial fit over the abscissa i/T, i = 1..T.

    Args:
        series (Sequence[float]): The values X_1..X_T.
        degree (int): Polynomial degree, >= 0.

    Returns:
        np.ndarray: Coefficients a_0..a_degree, lowest order first.
    """
    values = np.asarray(series, dtype=np.float64)
    if degree < 0:
        raise ValueError("degree must be >= 0")
    if values.shape[0] < degree + 1:
        raise ValueError(f"A degree-{degree} fit needs at least {degree + 1} points, got {values.shape[0]}")
    return np.polynomial.polynomial.polyfit(_abscissa(values.shape[0]), values, degree)


def _fitted(values: np.ndarray, degree: int) -> np.ndarray:
    coefs = fit_polynomial(values, degree)
    return np.polynomial.polynomial.polyval(_abscissa(values.shape[0]), coefs)


def _longest_true_run(mask: np.ndarray) -> int:
    if not mask.any():
        return 0
    # Run lengths from the positions where the padded mask flips.
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return int((edges[1::2] - edges[0::2]).max())


def longest_repeated_len(series: Sequence[float], i: int, eps: float = DEFAULT_REPEAT_EPS) -> int:
    """
    Length of the longest subsequence occurring twice (distinct starts) in X_1..X_i.

    Occurrences may overlap. For each shift s, windows starting at j and j+s match
    for length l exactly when |X_k - X_{k+s}| <= eps holds on l consecutive k.
    """
    values = np.asarray(series, dtype=np.float64)[:i]
    best = 0
    for shift in range(1, values.shape[0]):
        matches = np.abs(values[:-shift] - values[shift:]) <= eps
        if matches.shape[0] <= best:
            break
        best = max(best, _longest_true_run(matches))
    return best


def _clamped_a3(a2: float, a3: float) -> float:
    floor = A3_CLAMP * max(1.0, abs(a2))
    sign = -1.0 if a3 < 0 else 1.0
    return sign * max(abs(a3), floor)


def expert_features(series: Sequence[float], eps: float = DEFAULT_REPEAT_EPS) -> ExpertFeatureVector:
    """
    Computes the twelve expert global features of a series (T >= 4).

    Residual sums use one whole-series fit; the half ranges share their
    boundary point [1, T//2] and [T//2, T], the tail range is [ceil(T/4), T].
    """
    x = np.asarray(series, dtype=np.float64)
    T = x.shape[0]
    if T < 4:
        raise ShapeError(f"Expert features need T >= 4, got {T}")

    half, quarter = T // 2, math.ceil(T / 4)
    res5 = (x - _fitted(x, 5)) ** 2 if T >= 6 else np.zeros(T)
    res2 = (x - _fitted(x, 2)) ** 2

    def span(residuals: np.ndarray, start: int, stop: int) -> float:
        # 1-based inclusive index range.
        return float(residuals[start - 1:stop].sum())

    a2 = float(fit_polynomial(x, 2)[2])
    cubic = fit_polynomial(x, 3)
    c2, c3 = float(cubic[2]), _clamped_a3(float(cubic[2]), float(cubic[3]))
    gamma = -c2 / (3.0 * c3) - c2 ** 2 / (3.0 * c3 ** 2)

    feats = [
        float(x.max() - x.min()),
        float(np.abs(x).max()),
        float(np.all(np.abs(x - x[0]) <= eps)),
        float(longest_repeated_len(x, T, eps) > T / 2),
        float(np.abs(np.diff(x)).max()),
        2.0 / T * span(res5, 1, half),
        2.0 / T * span(res5, half, T),
        1.0 / T * span(res5, 1, T),
        4.0 / (3.0 * T) * span(res5, quarter, T),
        4.0 / (3.0 * T) * span(res2, quarter, T),
        a2,
        gamma,
    ]
    return ExpertFeatureVector(np.array(feats))


# --- Curve rasterization ---

def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.floor(values + 0.5).astype(np.int64)


def _value_rows(x: np.ndarray, size: int) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.full(x.shape[0], size // 2, dtype=np.int64)
    # Highest value on the top row; rounded before the flip, like the columns.
    return (size - 1) - _round_half_up((x - lo) / (hi - lo) * (size - 1))


def _draw_line(canvas: np.ndarray, r0: int, c0: int, r1: int, c1: int) -> None:
    dc, sc = abs(c1 - c0), (1 if c0 < c1 else -1)
    dr, sr = -abs(r1 - r0), (1 if r0 < r1 else -1)
    err = dc + dr
    while True:
        canvas[r0, c0] = 1.0
        if r0 == r1 and c0 == c1:
            break
        e2 = 2 * err
        if e2 >= dr:
            err += dr
            c0 += sc
        if e2 <= dc:
            err += dc
            r0 += sr


def _draw_polyline(canvas: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> None:
    canvas[rows[0], cols[0]] = 1.0
    for k in range(rows.shape[0] - 1):
        _draw_line(canvas, int(rows[k]), int(cols[k]), int(rows[k + 1]), int(cols[k + 1]))


def render_curve_image(series: Sequence[float], size: int = IMAGE_SIZE) -> CurveImage:
    """
    Rasterizes the series curve into a (size, size, 3) image without axes.

    Channel 0 is the plain curve; channel 1 folds the second half back over
    the first around the central vertical line; channel 2 stays zero.
    """
    x = np.asarray(series, dtype=np.float64)
    T = x.shape[0]
    if T < 2:
        raise ShapeError("Rendering needs at least 2 points")
    pixels = np.zeros((size, size, 3), dtype=np.float32)
    rows = _value_rows(x, size)

    index = np.arange(1, T + 1)
    cols = _round_half_up((size - 1) * (index - 1) / (T - 1))
    _draw_polyline(pixels[:, :, 0], rows, cols)

    folded_index = np.minimum(index, T + 1 - index)
    span = math.ceil(T / 2) - 1
    folded_cols = _round_half_up((size - 1) * (folded_index - 1) / span) if span > 0 else np.zeros(T, dtype=np.int64)
    _draw_polyline(pixels[:, :, 1], rows, folded_cols)
    return CurveImage(pixels)


def curve_image_to_pixmap(image: CurveImage) -> str:
    """Exports the image as plain-text PPM (P3), 8-bit per channel."""
    pixels = np.clip(np.rint(image.pixels * 255), 0, 255).astype(np.int64)
    height, width, _ = pixels.shape
    lines = ["P3", f"{width} {height}", "255"]
    lines.extend(" ".join(str(v) for v in row.reshape(-1)) for row in pixels)
    return "\n".join(lines) + "\n"


# --- Tables and standardization ---

def build_feature_table(dataset: Dataset, eps: float = DEFAULT_REPEAT_EPS) -> pd.DataFrame:
    """Returns one row of expert features per instance, plus its label name."""
    rows = []
    for inst in dataset.instances:
        row = expert_features(inst.values, eps).as_dict()
        row["label"] = dataset.class_names[inst.label]
        rows.append(row)
    return pd.DataFrame(rows, columns=list(EXPERT_FEATURE_NAMES) + ["label"])


@dataclass
class ExpertStandardizer:
    """Training-set mean/std for the expert features; std below 1e-8 is replaced by 1."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "ExpertStandardizer":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != NUM_EXPERT_FEATURES:
            raise ShapeError(f"Expected an (N, {NUM_EXPERT_FEATURES}) feature matrix")
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        std = np.where(std < STD_GUARD, 1.0, std)
        return cls(mean=mean.astype(np.float32), std=std.astype(np.float32))

    def transform(self, features: np.ndarray) -> np.ndarray:
        out = (np.asarray(features, dtype=np.float64) - self.mean.astype(np.float64)) / self.std.astype(np.float64)
        return out.astype(np.float32)
