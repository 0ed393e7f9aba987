# app/repository/dataset_repository.py
import logging
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.errors import DatasetFormatError
from app.core.models import Dataset, TimeSeriesInstance

logger = logging.getLogger(__name__)


class DatasetRepository:
    """
    Reads and writes labelled series files: UCR text and strain CSV.
    """

    def load_ucr(self, path: str) -> Dataset:
        """
        Loads a UCR-format file: one instance per line, label first, then T values.

        Args:
            path (str): A tab- or comma-separated text file.

        Returns:
            Dataset: Labels remapped to 0..C-1 in sorted order of the original labels.
        """
        file_path = Path(path)
        if not file_path.exists():
            raise DatasetFormatError(f"Dataset file not found: {path}")
        try:
            raw = pd.read_csv(
                file_path,
                sep=r"[\t,]",
                header=None,
                engine="python",
                dtype=str,
                keep_default_na=False,
                skip_blank_lines=True,
            )
        except pd.errors.EmptyDataError as exc:
            raise DatasetFormatError(f"Dataset file {path} is empty") from exc
        except pd.errors.ParserError as exc:
            raise DatasetFormatError(f"Ragged rows in {path}: {exc}") from exc
        if raw.empty:
            raise DatasetFormatError(f"Dataset file {path} is empty")
        if raw.shape[1] < 2:
            raise DatasetFormatError(f"Line 1 of {path} has a label but no values")

        ragged = raw.isna().any(axis=1) | (raw == "").any(axis=1)
        if ragged.any():
            line = int(np.flatnonzero(ragged.to_numpy())[0]) + 1
            raise DatasetFormatError(f"Ragged row at line {line} of {path}")

        numeric = raw.apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
        bad = ~np.isfinite(numeric.to_numpy(dtype=np.float64))
        if bad.any():
            row, col = (int(i) for i in np.argwhere(bad)[0])
            token = raw.iat[row, col]
            raise DatasetFormatError(
                f"Non-numeric or non-finite token {token!r} at line {row + 1}, field {col + 1} of {path}"
            )

        labels = numeric.iloc[:, 0].to_numpy()
        values = numeric.iloc[:, 1:].to_numpy(dtype=np.float64)
        dataset = self._build(Path(path).stem, labels, values)
        logger.info("Loaded %s: N=%d, T=%d, C=%d", dataset.name, len(dataset), dataset.series_length, dataset.num_classes)
        return dataset

    def save_ucr(self, dataset: Dataset, path: str) -> None:
        """Writes the dataset as tab-separated UCR text with exact float round-trip."""
        values, labels = dataset.to_arrays()
        frame = pd.DataFrame(values)
        frame.insert(0, "label", labels)
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, sep="\t", header=False, index=False, float_format="%.17g")

    def load_strain_csv(self, path: str) -> Dataset:
        """
        Loads a strain CSV with a header: a 'label' column and one column per time point.

        Labels may be class names or integers; they are remapped in sorted order.
        """
        file_path = Path(path)
        if not file_path.exists():
            raise DatasetFormatError(f"Dataset file not found: {path}")
        try:
            df = pd.read_csv(file_path)
        except pd.errors.EmptyDataError as exc:
            raise DatasetFormatError(f"Dataset file {path} is empty") from exc
        df.columns = [str(col).strip().lower() for col in df.columns]
        if "label" not in df.columns:
            raise DatasetFormatError(f"{path} needs a 'label' column")
        if df.empty:
            raise DatasetFormatError(f"Dataset file {path} is empty")

        value_cols = [col for col in df.columns if col != "label"]
        numeric = df[value_cols].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
        bad = ~np.isfinite(numeric)
        if bad.any():
            row, col = (int(i) for i in np.argwhere(bad)[0])
            # +2: header line plus 1-based numbering.
            raise DatasetFormatError(
                f"Non-numeric or missing value at line {row + 2}, column '{value_cols[col]}' of {path}"
            )
        return self._build(file_path.stem, df["label"].to_numpy(), numeric)

    def save_strain_csv(self, dataset: Dataset, path: str) -> None:
        values, labels = dataset.to_arrays()
        frame = pd.DataFrame(values, columns=[f"t{i}" for i in range(values.shape[1])])
        frame.insert(0, "label", [dataset.class_names[i] for i in labels])
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.17g")

    def _build(self, name: str, raw_labels: Sequence, values: np.ndarray) -> Dataset:
        codes, uniques = _remap_labels(raw_labels)
        instances = [TimeSeriesInstance(values=row, label=int(code)) for row, code in zip(values, codes)]
        return Dataset(
            instances=instances,
            num_classes=len(uniques),
            name=name,
            class_names=[_label_text(u) for u in uniques],
        )


def _remap_labels(raw_labels: Sequence) -> Tuple[np.ndarray, List]:
    codes, uniques = pd.factorize(pd.Series(list(raw_labels)), sort=True)
    return codes.astype(np.int64), list(uniques)


def _label_text(label) -> str:
    if isinstance(label, (float, np.floating)) and float(label).is_integer():
        return str(int(label))
    return str(label)


def load_ucr_dataset(path: str) -> Dataset:
    return DatasetRepository().load_ucr(path)
