# app/model/hypergraph.py
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from app.core.models import HypergraphStructure
from app.model.noise import NoiseSource
from app.model.robustness import bernoulli_relaxation


class SharedStructure(nn.Module):
    """
    Learnable node embeddings E and the extractor (one MLP, three 1-D convolutions
    along the node axis) producing the shared node features M (d x P̂), plus the
    pairwise Bernoulli head that predicts the connection matrix from M.
    """

    def __init__(self, num_nodes: int, hidden: int, tau: float = 1.0):
        super().__init__()
        self.num_nodes = num_nodes
        self.tau = tau
        self.embeddings = nn.Parameter(torch.randn(num_nodes, hidden) * 0.1)
        self.mlp = nn.Sequential(nn.Linear(hidden, hidden), nn.ReLU(), nn.Linear(hidden, hidden))
        self.convs = nn.ModuleList(nn.Conv1d(hidden, hidden, kernel_size=3, padding=1) for _ in range(3))
        self.norms = nn.ModuleList(nn.LayerNorm(hidden) for _ in range(2))
        self.pair_head = nn.Linear(2 * hidden, 2)

    def node_features(self) -> torch.Tensor:
        x = self.mlp(self.embeddings).t().unsqueeze(0)
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.norms):
                x = F.relu(self.norms[i](x.transpose(1, 2)).transpose(1, 2))
        return x.squeeze(0)

    def connection_matrix(self, m: torch.Tensor, noise: Optional[NoiseSource] = None) -> torch.Tensor:
        return learn_connection_matrix(m, self.pair_head, self.tau, self.training, noise)


def learn_connection_matrix(m: torch.Tensor, head: nn.Module, tau: float, training: bool,
                            noise: Optional[NoiseSource] = None) -> torch.Tensor:
    """
    Predicts a P̂ x P̂ connection matrix from concatenated column pairs [M_i, M_j].

    Soft Gumbel-Softmax values in training, thresholded at 0.5 otherwise; the
    diagonal is always 1.
    """
    cols = m.t()
    n = cols.shape[0]
    pairs = torch.cat([cols.unsqueeze(1).expand(n, n, -1), cols.unsqueeze(0).expand(n, n, -1)], dim=-1)
    c = bernoulli_relaxation(head(pairs), tau, training, noise)
    eye = torch.eye(n, dtype=c.dtype)
    return c * (1.0 - eye) + eye


def random_walk_relevance(connection: torch.Tensor, alpha: float, steps: int) -> torch.Tensor:
    """
    Random walk with restart: sum_{k=0..steps} alpha (1 - alpha)^k P^k, P = D^-1 C.

    Rows of C must have a nonzero entry; forced self-loops guarantee it.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    transition = connection / connection.sum(dim=-1, keepdim=True)
    power = torch.eye(connection.shape[-1], dtype=connection.dtype)
    relevance = alpha * power
    for k in range(1, steps + 1):
        power = power @ transition
        relevance = relevance + alpha * (1.0 - alpha) ** k * power
    return relevance


def build_hyperedges(relevance, k: int) -> Tuple[List[List[int]], List[List[int]]]:
    """
    Forms one hyperedge per anchor node: the anchor plus its K most relevant other nodes.

    Ties go to the lower node index. Returns (hyperedges, incidence) where
    incidence[v] lists the hyperedges containing node v.
    """
    rel = relevance.detach().cpu().numpy() if isinstance(relevance, torch.Tensor) else np.asarray(relevance)
    n = rel.shape[0]
    if k > n - 1:
        raise ValueError(f"top_k={k} exceeds the {n - 1} non-anchor nodes")
    if k < 0:
        raise ValueError("top_k must be >= 0")
    hyperedges: List[List[int]] = []
    for anchor in range(n):
        others = np.array([j for j in range(n) if j != anchor], dtype=np.int64)
        order = np.argsort(-rel[anchor, others], kind="stable")
        hyperedges.append([anchor] + sorted(others[order[:k]].tolist()))
    incidence: List[List[int]] = [[] for _ in range(n)]
    for edge, members in enumerate(hyperedges):
        for node in members:
            incidence[node].append(edge)
    return hyperedges, incidence


def knn_relevance(features: torch.Tensor) -> torch.Tensor:
    """Negative Euclidean distances between node feature rows (nearest = most relevant)."""
    return -torch.cdist(features, features)


def knn_membership(features: torch.Tensor, k: int) -> torch.Tensor:
    """
    Per-instance KNN hyperedges as a (B, edges, nodes) 0/1 tensor.

    Row e of instance b holds anchor e and its K nearest other nodes in that
    instance's own features; ties go to the lower node index as in `build_hyperedges`.
    """
    rel = knn_relevance(features.detach()).cpu().numpy()
    n = rel.shape[-1]
    if not 0 <= k <= n - 1:
        raise ValueError(f"top_k={k} exceeds the {n - 1} non-anchor nodes")
    idx = np.arange(n)
    rel[:, idx, idx] = -np.inf
    nearest = np.argsort(-rel, axis=-1, kind="stable")[..., :k]
    member = np.zeros_like(rel)
    np.put_along_axis(member, nearest, 1.0, axis=-1)
    member[:, idx, idx] = 1.0
    return torch.as_tensor(member, dtype=features.dtype)


def membership_matrix(hyperedges: List[List[int]], num_nodes: int, dtype: torch.dtype) -> torch.Tensor:
    """(edges x nodes) 0/1 matrix; row e marks the members of hyperedge e."""
    h = torch.zeros(len(hyperedges), num_nodes, dtype=dtype)
    for edge, members in enumerate(hyperedges):
        h[edge, members] = 1.0
    return h


@dataclass
class BuiltStructure:
    """A structure ready for propagation: key features, membership and its numpy record."""
    keys: torch.Tensor
    membership: torch.Tensor
    record: HypergraphStructure


def build_structure(stage: SharedStructure, construction: str, top_k: int, alpha: float, steps: int,
                    noise: Optional[NoiseSource], knn_features: Optional[torch.Tensor] = None,
                    straight_through: bool = True) -> BuiltStructure:
    """
    Builds the hypergraph for one forward pass.

    `rwhc` learns C from the shared features. The top-K membership is discrete, so
    with `straight_through` each selected entry carries the gradient of its
    relevance Ĉ[e, member] while its value stays exactly 1.

    `knn` gives every instance its own hyperedges from the distances between its
    rows of `knn_features` (B, P̂, d); the record holds the first instance's.
    """
    m = stage.node_features()
    if construction == "knn":
        if knn_features is None or knn_features.dim() != 3:
            raise ValueError("KNN construction needs per-instance node features (B, nodes, d)")
        membership = knn_membership(knn_features, top_k)
        relevance = knn_relevance(knn_features[0].detach())
        connection = torch.ones_like(relevance)
        hyperedges, incidence = build_hyperedges(relevance, top_k)
    else:
        connection = stage.connection_matrix(m, noise)
        relevance = random_walk_relevance(connection, alpha, steps)
        hyperedges, incidence = build_hyperedges(relevance, top_k)
        membership = membership_matrix(hyperedges, m.shape[1], m.dtype)
        if straight_through and relevance.requires_grad:
            membership = membership + membership * (relevance - relevance.detach())
    record = HypergraphStructure(
        connection=connection.detach().cpu().numpy(),
        relevance=relevance.detach().cpu().numpy(),
        hyperedges=hyperedges,
        incidence=incidence,
    )
    return BuiltStructure(keys=m, membership=membership, record=record)


def attention_scores(queries: torch.Tensor, keys: torch.Tensor) -> torch.Tensor:
    """
    softmax over nodes of the row sums of the influence matrix queries @ keys.

    `keys` is either shared (d, P̂) or per-sample (B, d, P̂).
    """
    influence = queries @ keys
    return F.softmax(influence.sum(dim=-1), dim=-1)


class HypergraphLayer(nn.Module):
    """
    One round of hypergraph attention propagation: nodes -> hyperedges over the
    first structure, then hyperedges -> nodes over the (dynamic) second structure,
    each followed by an affine map and layer normalization.
    """

    def __init__(self, hidden: int, use_attention: bool = True, shared_keys: bool = True):
        super().__init__()
        self.hidden = hidden
        self.use_attention = use_attention
        self.shared_keys = shared_keys
        self.node_qv = nn.Linear(hidden, 2 * hidden)
        self.edge_proj = nn.Linear(hidden, hidden)
        self.edge_norm = nn.LayerNorm(hidden)
        self.edge_query = nn.Linear(hidden, hidden)
        self.node_proj = nn.Linear(hidden, hidden)
        self.node_norm = nn.LayerNorm(hidden)
        if not shared_keys:
            self.node_key = nn.Linear(hidden, hidden)
            self.edge_key = nn.Linear(hidden, hidden)

    def node_attention(self, z: torch.Tensor, keys: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Returns (Att^v of shape (B, P̂), value rows X^v of shape (B, P̂, d))."""
        queries, values = self.node_qv(z).chunk(2, dim=-1)
        if not self.use_attention:
            return _uniform(values), values
        if not self.shared_keys:
            keys = self.node_key(z).transpose(-1, -2)
        return attention_scores(queries, keys), values

    def edge_attention(self, edges: torch.Tensor, keys: torch.Tensor) -> torch.Tensor:
        if not self.use_attention:
            return _uniform(edges)
        if not self.shared_keys:
            keys = self.edge_key(edges).transpose(-1, -2)
        return attention_scores(self.edge_query(edges), keys)

    def forward(self, z: torch.Tensor, first: BuiltStructure,
                second_for: Callable[[torch.Tensor], BuiltStructure]):
        att_v, values = self.node_attention(z, first.keys)
        edges = self.edge_norm(self.edge_proj(first.membership @ (att_v.unsqueeze(-1) * values)))
        second = second_for(edges)
        att_e = self.edge_attention(edges, second.keys)
        messages = second.membership.transpose(-1, -2) @ (att_e.unsqueeze(-1) * edges)
        out = self.node_norm(self.node_proj(values + messages))
        return out, att_v, att_e, second


def _uniform(rows: torch.Tensor) -> torch.Tensor:
    n = rows.shape[-2]
    return torch.full(rows.shape[:-1], 1.0 / n, dtype=rows.dtype)


class SelfAttentionFusion(nn.Module):
    """Transformer encoder layers over the concatenated nodes (attention ablation)."""

    def __init__(self, hidden: int, layers: int, heads: int = 4):
        super().__init__()
        self.layers = nn.ModuleList(
            nn.TransformerEncoderLayer(hidden, heads, dim_feedforward=2 * hidden, dropout=0.0, batch_first=True)
            for _ in range(layers)
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            z = layer(z)
        return z
