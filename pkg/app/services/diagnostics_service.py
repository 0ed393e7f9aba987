# app/services/diagnostics_service.py
from typing import List, Sequence

import numpy as np
import pandas as pd
import torch

from app.core.models import Dataset, HypergraphStructure, Metrics, Prediction
from app.model.encoders import TYPE_TAGS
from app.model.model import ModelOutput
from app.model.noise import PerInstanceNoise
from app.services.prediction_service import LoadedModel
from app.services.training_service import prepare_data


class DiagnosticsService:
    """
    Turns learned structures, reliability scores and metrics into tables.
    """

    def hyperedge_composition(self, structure: HypergraphStructure, type_tags: Sequence[str],
                              nodes_per_type: int) -> pd.DataFrame:
        """
        Computes, per hyperedge, the share of its members coming from each input type.

        Args:
            structure (HypergraphStructure): The hyperedges over the concatenated nodes.
            type_tags (Sequence[str]): Active types in concatenation order.
            nodes_per_type (int): Nodes contributed by each type.

        Returns:
            pd.DataFrame: One row per hyperedge; the ts/img/exp columns sum to 1.
        """
        rows = []
        for edge, members in enumerate(structure.hyperedges):
            owners = [type_tags[node // nodes_per_type] for node in members]
            row = {
                "hyperedge": edge,
                "anchor_type": type_tags[edge // nodes_per_type],
                "size": len(members),
                "members": " ".join(str(m) for m in members),
            }
            for tag in TYPE_TAGS:
                row[tag] = owners.count(tag) / len(members)
            rows.append(row)
        return pd.DataFrame(rows, columns=["hyperedge", "anchor_type", "size", "members", *TYPE_TAGS])

    def composition_by_family(self, composition: pd.DataFrame) -> pd.DataFrame:
        """Average type proportions of the hyperedges anchored in each type."""
        if composition.empty:
            return pd.DataFrame(columns=list(TYPE_TAGS))
        return composition.groupby("anchor_type", sort=False)[list(TYPE_TAGS)].mean()

    def export(self, frame: pd.DataFrame, path: str):
        frame.to_csv(path, sep="\t", index=False)

    def reliability_summary(self, predictions: Sequence[Prediction]) -> pd.DataFrame:
        """
        Dataset-average reliability score per input type, most reliable first.
        """
        records = [p.reliability.scores for p in predictions]
        frame = pd.DataFrame(records, columns=list(TYPE_TAGS)).astype(float)
        summary = frame.mean().dropna().rename("mean_score").to_frame()
        return summary.sort_values("mean_score", ascending=False)

    def confusion_frame(self, metrics: Metrics, class_names: List[str]) -> pd.DataFrame:
        return pd.DataFrame(
            metrics.confusion,
            index=pd.Index(class_names, name="true"),
            columns=pd.Index(class_names, name="predicted"),
        )

    @torch.no_grad()
    def capture(self, loaded: LoadedModel, dataset: Dataset, limit: int = 64) -> ModelOutput:
        """
        Runs the deterministic inference path on up to `limit` instances and returns
        every intermediate (structures, attention, masks, reliability).
        """
        subset = Dataset(dataset.instances[:limit], dataset.num_classes, dataset.name, list(dataset.class_names))
        data = prepare_data(subset, loaded.standardizer, loaded.config)
        loaded.model.eval()
        return loaded.model(data.inputs, PerInstanceNoise(data.seeds))

    def attention_frame(self, output: ModelOutput, type_tags: Sequence[str], nodes_per_type: int) -> pd.DataFrame:
        """Batch-mean node attention with each node's type."""
        if output.att_v is None:
            return pd.DataFrame(columns=["node", "type", "attention"])
        mean = output.att_v.mean(dim=0).numpy()
        nodes = np.arange(mean.shape[0])
        return pd.DataFrame({
            "node": nodes,
            "type": [type_tags[n // nodes_per_type] for n in nodes],
            "attention": mean,
        })
