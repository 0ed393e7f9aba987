# app/services/gradcheck_service.py
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F

from app.core.config import RunConfig
from app.model.encoders import ExpertEncoder, ImageEncoder, OmniScaleEncoder, PatchProjector
from app.model.hypergraph import HypergraphLayer, SharedStructure, build_structure
from app.model.model import GFEFModel, ModelInputs
from app.model.noise import GeneratorNoise, ReplayNoise
from app.model.robustness import RedundancyFilter
from app.services.feature_service import render_curve_image
from app.services.training_service import loss_terms

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
DENOMINATOR_FLOOR = 1e-6
SELECTORS = ("affine", "encoders", "robustness", "hypergraph", "model")
DEFAULT_TOLERANCE = {"affine": 1e-7}


@dataclass
class GradCheckEntry:
    parameter: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def relative_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.numeric), DENOMINATOR_FLOOR)
        return abs(self.analytic - self.numeric) / scale


@dataclass
class GradCheckReport:
    selector: str
    tolerance: float
    entries: List[GradCheckEntry] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max((e.relative_error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return all(np.isfinite(e.analytic) and e.relative_error <= self.tolerance for e in self.entries)

    def failing(self) -> List[str]:
        names = [e.parameter for e in self.entries if not (e.relative_error <= self.tolerance)]
        return sorted(set(names))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"parameter": e.parameter, "index": str(e.index), "analytic": e.analytic,
              "numeric": e.numeric, "relative_error": e.relative_error} for e in self.entries]
        )

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"{status} {self.selector}: {len(self.entries)} checks, max relative error "
                 f"{self.max_error:.3e} (tolerance {self.tolerance:.1e})"]
        if not self.passed:
            lines.append("failing parameters: " + ", ".join(self.failing()))
        return "\n".join(lines)


def check_gradients(named: Sequence[Tuple[str, nn.Parameter]], loss_fn: Callable[[], torch.Tensor],
                    trials: int, tolerance: float, seed: int = 0, selector: str = "custom") -> GradCheckReport:
    """
    Compares autograd gradients with central finite differences (step 1e-5).

    Sampled entries cycle through the parameter tensors in a shuffled order so
    every tensor is visited before any is revisited. `loss_fn` must be a pure
    function of the parameters (pinned noise).
    """
    named = [(n, p) for n, p in named if p.requires_grad]
    params = [p for _, p in named]
    for p in params:
        p.grad = None
    loss_fn().backward()
    grads = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(named))
    report = GradCheckReport(selector, tolerance)
    with torch.no_grad():
        for trial in range(trials):
            slot = int(order[trial % len(named)])
            name, p = named[slot]
            index = tuple(int(rng.integers(0, s)) for s in p.shape)
            original = p[index].item()
            p[index] = original + FD_STEP
            upper = loss_fn().item()
            p[index] = original - FD_STEP
            lower = loss_fn().item()
            p[index] = original
            numeric = (upper - lower) / (2 * FD_STEP)
            report.entries.append(GradCheckEntry(name, index, float(grads[slot][index]), numeric))
    logger.info(report.summary())
    return report


def _pinned(loss: Callable[[ReplayNoise], torch.Tensor], seed: int) -> Callable[[], torch.Tensor]:
    noise = ReplayNoise(GeneratorNoise(seed))
    loss(noise)
    noise.freeze()

    def replay() -> torch.Tensor:
        noise.rewind()
        return loss(noise)

    return replay


def _affine(seed: int):
    gen = torch.Generator().manual_seed(seed)
    layer = nn.Linear(8, 3).double()
    x = torch.randn(5, 8, generator=gen, dtype=torch.float64)
    w = torch.randn(5, 3, generator=gen, dtype=torch.float64)
    return list(layer.named_parameters()), lambda: (layer(x) * w).sum()


def _encoders(seed: int):
    gen = torch.Generator().manual_seed(seed)
    length = 24
    modules = nn.ModuleDict({
        "ts": OmniScaleEncoder(length, hidden=12),
        "img": ImageEncoder(),
        "exp": ExpertEncoder(),
    }).double()
    series = torch.randn(3, length, generator=gen, dtype=torch.float64)
    images = torch.as_tensor(
        np.stack([render_curve_image(row.numpy()).pixels.transpose(2, 0, 1) for row in series]), dtype=torch.float64
    )
    expert = torch.randn(3, 12, generator=gen, dtype=torch.float64)
    weights = torch.randn(3, 3, 128, generator=gen, dtype=torch.float64)

    def loss():
        outs = [modules["ts"](series), modules["img"](images), modules["exp"](expert)]
        return sum((out * weights[i]).sum() for i, out in enumerate(outs))

    return list(modules.named_parameters()), loss


def _robustness(seed: int):
    gen = torch.Generator().manual_seed(seed)
    modules = nn.ModuleDict({
        "projector": PatchProjector("ts", 16, 8, 32),
        "filter": RedundancyFilter(16),
        "classifier": nn.Linear(16 * 32, 3),
    }).double().train()
    feature = torch.randn(4, 128, generator=gen, dtype=torch.float64)
    labels = torch.tensor([0, 1, 2, 1])

    def loss(noise):
        z, _ = modules["filter"](modules["projector"](feature), noise)
        return F.cross_entropy(modules["classifier"](z.flatten(start_dim=1)), labels)

    return list(modules.named_parameters()), _pinned(loss, seed)


def _hypergraph(seed: int):
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    nodes, hidden = 12, 16
    modules = nn.ModuleDict({
        "first": SharedStructure(nodes, hidden),
        "second": SharedStructure(nodes, hidden),
        "layer": HypergraphLayer(hidden),
    }).double().train()
    z = torch.randn(3, nodes, hidden, generator=gen, dtype=torch.float64)
    weights = torch.randn(3, nodes, hidden, generator=gen, dtype=torch.float64)

    def loss(noise):
        first = build_structure(modules["first"], "rwhc", 4, 0.5, 1, noise, straight_through=False)
        second = build_structure(modules["second"], "rwhc", 4, 0.5, 1, noise, straight_through=False)
        out, _, _, _ = modules["layer"](z, first, lambda edges: second)
        return (out * weights).sum()

    return list(modules.named_parameters()), _pinned(loss, seed)


def _model(seed: int, config: RunConfig):
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    length, batch = 24, 4
    model = GFEFModel(config, length, 3).double().train()
    model.straight_through = False
    series = torch.randn(batch, length, generator=gen, dtype=torch.float64)
    images = torch.as_tensor(
        np.stack([render_curve_image(row.numpy()).pixels.transpose(2, 0, 1) for row in series]), dtype=torch.float64
    )
    inputs = ModelInputs(series, images, torch.randn(batch, 12, generator=gen, dtype=torch.float64))
    labels = torch.tensor([0, 1, 2, 0])
    pinned: Dict[str, torch.Tensor] = {}

    def loss(noise):
        out = model(inputs, noise, reliability=pinned or None)
        if not pinned:
            pinned.update({k: v.detach() for k, v in out.reliability.items()})
        return sum(loss_terms(out.logits, out.type_logits, labels).values())

    return list(model.named_parameters()), _pinned(loss, seed)


def gradient_check(selector: str, trials: int = 64, tolerance: float = None, seed: int = 0,
                   config: RunConfig = None) -> GradCheckReport:
    """
    Runs a 64-bit finite-difference check on one part of the model.

    Args:
        selector (str): One of affine, encoders, robustness, hypergraph, model.
        trials (int): Number of sampled parameter entries.
        tolerance (float): Maximum relative error; 1e-7 for affine, 1e-4 otherwise.
        seed (int): Seeds parameter init, inputs, noise and entry sampling.
        config (RunConfig): Model settings for the `model` selector.

    Returns:
        GradCheckReport: Per-entry comparison and pass/fail.
    """
    if selector not in SELECTORS:
        raise ValueError(f"Unknown selector '{selector}'; choose from {', '.join(SELECTORS)}")
    tolerance = DEFAULT_TOLERANCE.get(selector, 1e-4) if tolerance is None else tolerance
    torch.manual_seed(seed)
    if selector == "affine":
        named, loss = _affine(seed)
    elif selector == "encoders":
        named, loss = _encoders(seed)
    elif selector == "robustness":
        named, loss = _robustness(seed)
    elif selector == "hypergraph":
        named, loss = _hypergraph(seed)
    else:
        named, loss = _model(seed, config or RunConfig())
    return check_gradients(named, loss, trials, tolerance, seed, selector)
