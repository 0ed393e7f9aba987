# app/model/robustness.py
from typing import Dict, Mapping, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from app.model.noise import NoiseSource, gumbel


def bernoulli_relaxation(logits: torch.Tensor, tau: float, training: bool,
                         noise: NoiseSource = None, per_sample: bool = False) -> torch.Tensor:
    """
    Turns (..., 2) logits into a keep-value in [0, 1] for the class-1 outcome.

    The logits pass through a 2-way softmax to give c0 + c1 = 1. In training the
    value is the Gumbel-Softmax relaxation softmax((log c + g) / tau)[1]; at
    inference it is the deterministic threshold c1 >= 0.5.
    """
    log_c = F.log_softmax(logits, dim=-1)
    if not training:
        return (log_c[..., 1] >= log_c[..., 0]).to(logits.dtype)
    if noise is None:
        raise ValueError("Training-mode sampling needs a noise source")
    g = gumbel(noise, tuple(logits.shape), logits.dtype, per_sample)
    return F.softmax((log_c + g) / tau, dim=-1)[..., 1]


class RedundancyFilter(nn.Module):
    """
    Learnable per-dimension binary mask over a node set (one instance per input type).

    Logits come from the permuted node matrix: (B, d, P) @ Theta1 (P, 2) + b1.
    """

    def __init__(self, nodes: int, tau: float = 1.0):
        super().__init__()
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.head = nn.Linear(nodes, 2)
        self.tau = tau

    def probabilities(self, z: torch.Tensor) -> torch.Tensor:
        return F.softmax(self.head(z.transpose(-1, -2)), dim=-1)

    def forward(self, z: torch.Tensor, noise: NoiseSource = None) -> Tuple[torch.Tensor, torch.Tensor]:
        logits = self.head(z.transpose(-1, -2))
        mask = bernoulli_relaxation(logits, self.tau, self.training, noise, per_sample=True)
        return z * mask.unsqueeze(-2), mask


@torch.no_grad()
def reliability_scores(
    nodes: Mapping[str, torch.Tensor],
    classifiers: Mapping[str, nn.Module],
    noise: NoiseSource,
    levels: Sequence[int] = (1, 2, 3),
) -> Dict[str, torch.Tensor]:
    """
    Scores each input type by how stable its classifier is under multiplicative noise.

    For each level j the nodes become Z * (G + 1) * j with fresh standard Gaussian G;
    the classifier's softmax outputs are collected, the per-class population variance
    across levels is taken, and its max-min spread is the relative variance. Scores are
    1 - softmax(relative variances) across types, per sample, outside the autograd graph.

    Returns:
        Dict[str, torch.Tensor]: One (B,) tensor per type; they sum to (#types - 1).
    """
    types = list(nodes.keys())
    spreads = []
    for name in types:
        z = nodes[name]
        outputs = []
        for level in levels:
            g = noise.normal(tuple(z.shape), z.dtype, per_sample=True)
            perturbed = z * (g + 1.0) * level
            logits = classifiers[name](perturbed.flatten(start_dim=1))
            outputs.append(F.softmax(logits, dim=-1))
        stacked = torch.stack(outputs, dim=0)
        variance = stacked.var(dim=0, unbiased=False)
        spreads.append(variance.max(dim=-1).values - variance.min(dim=-1).values)
    scores = 1.0 - F.softmax(torch.stack(spreads, dim=-1), dim=-1)
    return {name: scores[:, i] for i, name in enumerate(types)}


def apply_reliability(z: torch.Tensor, score) -> torch.Tensor:
    """Scales every entry of a node set by its (per-sample or scalar) reliability score."""
    if isinstance(score, torch.Tensor) and score.dim() == 1:
        return z * score.view(-1, *([1] * (z.dim() - 1)))
    return z * score
