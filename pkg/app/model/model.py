# app/model/model.py
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import torch
import torch.nn as nn

from app.core.config import ENCODER_FEATURE_SIZE, RunConfig
from app.core.errors import ShapeError
from app.core.models import HypergraphStructure
from app.model.encoders import ExpertEncoder, ImageEncoder, OmniScaleEncoder, PatchProjector
from app.model.hypergraph import (
    BuiltStructure,
    HypergraphLayer,
    SelfAttentionFusion,
    SharedStructure,
    build_structure,
)
from app.model.noise import NoiseSource
from app.model.robustness import RedundancyFilter, apply_reliability, reliability_scores


@dataclass
class ModelInputs:
    """One batch in model space: z-normalized series, curve images, standardized expert features."""
    series: torch.Tensor
    image: torch.Tensor
    expert: torch.Tensor

    def to(self, dtype: torch.dtype) -> "ModelInputs":
        return ModelInputs(self.series.to(dtype), self.image.to(dtype), self.expert.to(dtype))

    def select(self, index) -> "ModelInputs":
        return ModelInputs(self.series[index], self.image[index], self.expert[index])

    def __len__(self) -> int:
        return int(self.series.shape[0])


@dataclass
class ModelOutput:
    logits: torch.Tensor
    type_logits: Dict[str, torch.Tensor] = field(default_factory=dict)
    reliability: Dict[str, torch.Tensor] = field(default_factory=dict)
    masks: Dict[str, torch.Tensor] = field(default_factory=dict)
    att_v: Optional[torch.Tensor] = None
    att_e: Optional[torch.Tensor] = None
    structure: Optional[HypergraphStructure] = None
    dynamic_structure: Optional[HypergraphStructure] = None


class GFEFModel(nn.Module):
    """
    The full classifier: per-type encoders and patch projectors, redundancy filters,
    reliability weighting, hypergraph fusion and the final affine classifier.

    Only the input types enabled in `config.features` are built.
    """

    def __init__(self, config: RunConfig, series_length: int, num_classes: int):
        super().__init__()
        model, feats = config.model, config.features
        self.types: List[str] = feats.active_types()
        self.num_classes = num_classes
        self.series_length = series_length
        self.use_frf = feats.use_frf
        self.use_dra = feats.use_dra and len(self.types) > 1
        self.dynamic = feats.dynamic_hyperedges
        self.construction = feats.construction
        self.fusion_kind = feats.fusion
        self.top_k = model.top_k
        self.alpha = model.alpha
        self.walk_steps = model.walk_steps
        self.noise_levels = tuple(model.noise_levels)
        # Straight-through top-K membership; gradient checks switch it off.
        self.straight_through = True
        d, nodes = model.hidden_size, model.nodes_per_type
        self.total_nodes = nodes * len(self.types)

        encoders = {
            "ts": lambda: OmniScaleEncoder(series_length, out_features=ENCODER_FEATURE_SIZE),
            "img": lambda: ImageEncoder(ENCODER_FEATURE_SIZE),
            "exp": lambda: ExpertEncoder(ENCODER_FEATURE_SIZE),
        }
        self.encoders = nn.ModuleDict({t: encoders[t]() for t in self.types})
        self.projectors = nn.ModuleDict({t: PatchProjector(t, nodes, model.patch_len, d) for t in self.types})
        self.filters = nn.ModuleDict({t: RedundancyFilter(nodes, model.tau) for t in self.types}) if self.use_frf else None
        self.classifiers = nn.ModuleDict({t: nn.Linear(nodes * d, num_classes) for t in self.types})

        if self.fusion_kind == "self_attention":
            self.fusion = SelfAttentionFusion(d, model.layers)
        else:
            self.structure = SharedStructure(self.total_nodes, d, model.tau)
            self.dynamic_structure = SharedStructure(self.total_nodes, d, model.tau) if self.dynamic else None
            self.fusion = nn.ModuleList(
                HypergraphLayer(d, use_attention=feats.hypergraph_attention, shared_keys=feats.key_embedding)
                for _ in range(model.layers)
            )
        self.final = nn.Linear(self.total_nodes * d, num_classes)

    def _encode(self, tag: str, inputs: ModelInputs) -> torch.Tensor:
        if tag == "ts":
            if inputs.series.shape[-1] != self.series_length:
                raise ShapeError(f"Series length {inputs.series.shape[-1]} != model length {self.series_length}")
            return self.encoders[tag](inputs.series)
        if tag == "img":
            return self.encoders[tag](inputs.image)
        return self.encoders[tag](inputs.expert)

    def _second_stage(self, first: BuiltStructure, noise: Optional[NoiseSource]):
        if not self.dynamic:
            return lambda edges: first
        if self.construction == "knn":
            return lambda edges: build_structure(
                self.dynamic_structure, "knn", self.top_k, self.alpha, self.walk_steps, noise,
                knn_features=edges, straight_through=self.straight_through,
            )
        # Learned from the second-stage embeddings only, so one build serves every layer.
        built = build_structure(self.dynamic_structure, "rwhc", self.top_k, self.alpha, self.walk_steps, noise,
                                straight_through=self.straight_through)
        return lambda edges: built

    def forward(self, inputs: ModelInputs, noise: Optional[NoiseSource] = None,
                reliability: Optional[Dict[str, torch.Tensor]] = None) -> ModelOutput:
        """
        Runs one batch.

        Args:
            inputs (ModelInputs): The batch.
            noise (Optional[NoiseSource]): Source for Gumbel draws (training) and DRA
                perturbations (always, when DRA is on).
            reliability (Optional[Dict[str, torch.Tensor]]): Pinned reliability scores
                used in place of the computed ones; the draws are still consumed.

        Returns:
            ModelOutput: Final logits plus every intermediate the losses and diagnostics read.
        """
        out = ModelOutput(logits=torch.empty(0))
        nodes: Dict[str, torch.Tensor] = {}
        for tag in self.types:
            z = self.projectors[tag](self._encode(tag, inputs))
            if self.filters is not None:
                z, out.masks[tag] = self.filters[tag](z, noise)
            nodes[tag] = z
            out.type_logits[tag] = self.classifiers[tag](z.flatten(start_dim=1))

        batch = next(iter(nodes.values())).shape[0]
        if self.use_dra:
            if noise is None:
                raise ValueError("Reliability scoring needs a noise source")
            scores = reliability_scores(nodes, self.classifiers, noise, self.noise_levels)
            if reliability is not None:
                scores = {tag: reliability[tag] for tag in self.types}
        else:
            scores = {tag: torch.ones(batch, dtype=nodes[tag].dtype) for tag in self.types}
        out.reliability = scores

        z = torch.cat([apply_reliability(nodes[tag], scores[tag]) for tag in self.types], dim=1)

        if self.fusion_kind == "self_attention":
            z = self.fusion(z)
        else:
            first = build_structure(
                self.structure, self.construction, self.top_k, self.alpha, self.walk_steps, noise,
                knn_features=z, straight_through=self.straight_through,
            )
            second_for = self._second_stage(first, noise)
            second = first
            for layer in self.fusion:
                z, out.att_v, out.att_e, second = layer(z, first, second_for)
            out.structure = first.record
            out.dynamic_structure = second.record

        out.logits = self.final(z.flatten(start_dim=1))
        return out


class ConvBaseline(nn.Module):
    """Plain convolutional classifier: the multi-scale series encoder plus one affine head."""

    def __init__(self, series_length: int, num_classes: int):
        super().__init__()
        self.types: List[str] = []
        self.num_classes = num_classes
        self.series_length = series_length
        self.encoder = OmniScaleEncoder(series_length, out_features=ENCODER_FEATURE_SIZE)
        self.head = nn.Linear(ENCODER_FEATURE_SIZE, num_classes)

    def forward(self, inputs: ModelInputs, noise: Optional[NoiseSource] = None,
                reliability: Optional[Dict[str, torch.Tensor]] = None) -> ModelOutput:
        if inputs.series.shape[-1] != self.series_length:
            raise ShapeError(f"Series length {inputs.series.shape[-1]} != model length {self.series_length}")
        return ModelOutput(logits=self.head(self.encoder(inputs.series)))


def build_model(config: RunConfig, series_length: int, num_classes: int) -> nn.Module:
    if config.model.architecture == "conv_baseline":
        return ConvBaseline(series_length, num_classes)
    return GFEFModel(config, series_length, num_classes)
