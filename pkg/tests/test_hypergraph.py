import math

import numpy as np
import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F

from app.model.hypergraph import (
    BuiltStructure,
    HypergraphLayer,
    SharedStructure,
    attention_scores,
    build_hyperedges,
    build_structure,
    knn_membership,
    knn_relevance,
    learn_connection_matrix,
    membership_matrix,
    random_walk_relevance,
)
from app.model.noise import GeneratorNoise, ReplayNoise
from app.core.models import HypergraphStructure


def _random_connection(n: int, seed: int) -> torch.Tensor:
    rng = np.random.default_rng(seed)
    c = rng.random((n, n))
    np.fill_diagonal(c, 1.0)
    return torch.tensor(c, dtype=torch.float64)


# --- Random walk relevance ---

def test_alpha_one_gives_identity():
    c = _random_connection(6, 0)
    r = random_walk_relevance(c, alpha=1.0, steps=3)
    assert torch.equal(r, torch.eye(6, dtype=torch.float64))


@pytest.mark.parametrize("alpha,steps", [(0.5, 1), (0.3, 4), (0.0, 2), (0.9, 0)])
def test_row_sums_follow_geometric_series(alpha, steps):
    r = random_walk_relevance(_random_connection(7, 1), alpha, steps)
    expected = 1.0 - (1.0 - alpha) ** (steps + 1)
    torch.testing.assert_close(r.sum(dim=-1), torch.full((7,), expected, dtype=torch.float64))


def test_path_graph_by_hand():
    c = torch.tensor([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]], dtype=torch.float64)
    p = torch.tensor([[0.5, 0.5, 0.0], [1 / 3, 1 / 3, 1 / 3], [0.0, 0.5, 0.5]], dtype=torch.float64)
    r = random_walk_relevance(c, alpha=0.5, steps=1)
    torch.testing.assert_close(r, 0.5 * torch.eye(3, dtype=torch.float64) + 0.25 * p)


def test_two_steps_use_the_squared_transition():
    c = _random_connection(5, 2)
    p = c / c.sum(dim=-1, keepdim=True)
    r = random_walk_relevance(c, alpha=0.4, steps=2)
    expected = 0.4 * torch.eye(5, dtype=torch.float64) + 0.24 * p + 0.144 * p @ p
    torch.testing.assert_close(r, expected)


def test_invalid_walk_parameters():
    with pytest.raises(ValueError):
        random_walk_relevance(_random_connection(3, 0), alpha=1.5, steps=1)
    with pytest.raises(ValueError):
        random_walk_relevance(_random_connection(3, 0), alpha=0.5, steps=-1)


# --- Hyperedges ---

def test_full_top_k_gives_complete_hyperedges():
    r = random_walk_relevance(_random_connection(6, 3), 0.5, 1)
    hyperedges, incidence = build_hyperedges(r, 5)
    assert all(sorted(e) == list(range(6)) for e in hyperedges)
    assert all(len(edges) == 6 for edges in incidence)


def test_anchor_comes_first_and_ties_go_to_lower_index():
    hyperedges, _ = build_hyperedges(np.ones((5, 5)), 2)
    assert hyperedges[0] == [0, 1, 2]
    assert hyperedges[3] == [3, 0, 1]
    assert hyperedges[4] == [4, 0, 1]


def test_most_relevant_nodes_are_selected():
    rel = np.array([
        [9.0, 0.1, 0.8, 0.5],
        [0.3, 9.0, 0.2, 0.9],
        [0.4, 0.6, 9.0, 0.1],
        [0.7, 0.2, 0.3, 9.0],
    ])
    hyperedges, incidence = build_hyperedges(rel, 2)
    assert hyperedges == [[0, 2, 3], [1, 0, 3], [2, 0, 1], [3, 0, 2]]
    assert incidence[0] == [0, 1, 2, 3]
    assert incidence[1] == [1, 2]


def test_top_k_too_large_is_rejected():
    with pytest.raises(ValueError, match="top_k"):
        build_hyperedges(np.ones((4, 4)), 4)


def test_membership_matrix_marks_members():
    h = membership_matrix([[0, 2], [1, 0]], 3, torch.float32)
    assert h.tolist() == [[1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]


# --- Learned connection matrix ---

def _head(bias) -> nn.Linear:
    head = nn.Linear(8, 2).double()
    with torch.no_grad():
        head.weight.zero_()
        head.bias.copy_(torch.tensor(bias, dtype=torch.float64))
    return head


def test_diagonal_is_one_even_when_head_says_zero():
    m = torch.randn(4, 5, dtype=torch.float64)
    c = learn_connection_matrix(m, _head([1e4, -1e4]), 1.0, training=False)
    assert torch.equal(c, torch.eye(5, dtype=torch.float64))
    c = learn_connection_matrix(m, _head([1e4, -1e4]), 1.0, training=True, noise=GeneratorNoise(0))
    assert torch.equal(torch.diagonal(c), torch.ones(5, dtype=torch.float64))


def test_inference_connections_are_binary():
    m = torch.randn(4, 5, dtype=torch.float64)
    c = learn_connection_matrix(m, _head([-1e4, 1e4]), 1.0, training=False)
    assert torch.equal(c, torch.ones(5, 5, dtype=torch.float64))
    torch.manual_seed(0)
    c = learn_connection_matrix(m, nn.Linear(8, 2).double(), 1.0, training=False)
    assert set(c.flatten().tolist()) <= {0.0, 1.0}


def test_pairwise_entries_match_scalar_formula():
    torch.manual_seed(1)
    m = torch.randn(4, 5, dtype=torch.float64)
    head = nn.Linear(8, 2).double()
    recorder = ReplayNoise(GeneratorNoise(7))
    tau = 0.7
    c = learn_connection_matrix(m, head, tau, training=True, noise=recorder)
    g = -torch.log(-torch.log(recorder.tape[0] + 1e-20) + 1e-20)
    w, b = head.weight.tolist(), head.bias.tolist()
    for i in range(5):
        for j in range(5):
            if i == j:
                assert c[i, j] == 1.0
                continue
            pair = m[:, i].tolist() + m[:, j].tolist()
            logits = [sum(wk * x for wk, x in zip(w[r], pair)) + b[r] for r in range(2)]
            norm = math.log(sum(math.exp(v) for v in logits))
            scores = [(logits[r] - norm + float(g[i, j, r])) / tau for r in range(2)]
            expected = math.exp(scores[1]) / (math.exp(scores[0]) + math.exp(scores[1]))
            assert float(c[i, j]) == pytest.approx(expected, abs=1e-12)


def test_shared_node_features_shape():
    stage = SharedStructure(num_nodes=10, hidden=16)
    assert stage.node_features().shape == (16, 10)


def test_built_structure_record_is_consistent():
    torch.manual_seed(2)
    stage = SharedStructure(num_nodes=9, hidden=8).double().eval()
    built = build_structure(stage, "rwhc", top_k=3, alpha=0.5, steps=1, noise=None)
    assert built.keys.shape == (8, 9)
    assert built.membership.shape == (9, 9)
    assert built.membership.sum(dim=-1).tolist() == [4.0] * 9
    assert len(built.record.incidence) == 9
    knn = build_structure(stage, "knn", top_k=3, alpha=0.5, steps=1, noise=None,
                          knn_features=torch.randn(2, 9, 8, dtype=torch.float64))
    assert all(e[0] == i for i, e in enumerate(knn.record.hyperedges))
    assert knn.membership.shape == (2, 9, 9)


# --- Attention propagation ---

def test_attention_sums_to_one():
    att = attention_scores(torch.randn(3, 6, 8), torch.randn(8, 6))
    torch.testing.assert_close(att.sum(dim=-1), torch.ones(3))
    assert bool((att > 0).all())


def test_identical_queries_give_uniform_attention():
    q = torch.randn(1, 1, 8).expand(2, 5, 8)
    att = attention_scores(q, torch.randn(8, 5))
    torch.testing.assert_close(att, torch.full((2, 5), 0.2))


def _structure(hyperedges, keys):
    n = keys.shape[1]
    record = HypergraphStructure(np.ones((n, n)), np.ones((n, n)), hyperedges, [[] for _ in range(n)])
    return BuiltStructure(keys=keys, membership=membership_matrix(hyperedges, n, keys.dtype), record=record)


def _layer_norm(x, norm):
    return F.layer_norm(x, (x.shape[-1],), norm.weight, norm.bias, norm.eps)


def test_layer_matches_loop_oracle():
    torch.manual_seed(4)
    d, n, batch = 4, 5, 2
    layer = HypergraphLayer(d).double()
    first = _structure(build_hyperedges(np.random.default_rng(0).random((n, n)), 2)[0],
                       torch.randn(d, n, dtype=torch.float64))
    second = _structure(build_hyperedges(np.random.default_rng(1).random((n, n)), 3)[0],
                        torch.randn(d, n, dtype=torch.float64))
    z = torch.randn(batch, n, d, dtype=torch.float64)

    out, att_v, att_e, used = layer(z, first, lambda edges: second)
    assert used is second

    for b in range(batch):
        q, v = layer.node_qv(z[b]).chunk(2, dim=-1)
        row = torch.stack([sum(q[i] @ first.keys[:, j] for j in range(n)) for i in range(n)])
        node_att = torch.softmax(row, dim=0)
        torch.testing.assert_close(att_v[b], node_att, rtol=0, atol=1e-6)

        edges = []
        for members in first.record.hyperedges:
            pooled = sum(node_att[i] * v[i] for i in members)
            edges.append(_layer_norm(layer.edge_proj(pooled), layer.edge_norm))
        edges = torch.stack(edges)

        qe = layer.edge_query(edges)
        row = torch.stack([sum(qe[e] @ second.keys[:, j] for j in range(n)) for e in range(len(edges))])
        edge_att = torch.softmax(row, dim=0)
        torch.testing.assert_close(att_e[b], edge_att, rtol=0, atol=1e-6)

        for i in range(n):
            message = sum(edge_att[e] * edges[e] for e, members in enumerate(second.record.hyperedges)
                          if i in members)
            expected = _layer_norm(layer.node_proj(v[i] + message), layer.node_norm)
            torch.testing.assert_close(out[b, i], expected, rtol=0, atol=1e-6)


def test_uniform_attention_when_disabled():
    layer = HypergraphLayer(4, use_attention=False)
    first = _structure([[0, 1], [1, 2], [2, 0]], torch.randn(4, 3))
    _, att_v, att_e, _ = layer(torch.randn(2, 3, 4), first, lambda edges: first)
    torch.testing.assert_close(att_v, torch.full((2, 3), 1 / 3))
    torch.testing.assert_close(att_e, torch.full((2, 3), 1 / 3))


def test_per_sample_keys_variant_runs():
    layer = HypergraphLayer(4, shared_keys=False)
    first = _structure([[0, 1], [1, 2], [2, 0]], torch.randn(4, 3))
    out, att_v, _, _ = layer(torch.randn(2, 3, 4), first, lambda edges: first)
    assert out.shape == (2, 3, 4)
    torch.testing.assert_close(att_v.sum(dim=-1), torch.ones(2))


def test_attention_is_softmax_of_unscaled_row_sums():
    torch.manual_seed(5)
    q, m = torch.randn(48, 128, dtype=torch.float64), torch.randn(128, 48, dtype=torch.float64)
    torch.testing.assert_close(attention_scores(q, m), torch.softmax((q @ m).sum(dim=-1), dim=-1))


def test_single_attended_node_reaches_only_its_hyperedges():
    d, n = 4, 5
    layer = HypergraphLayer(d).double()
    with torch.no_grad():
        layer.node_qv.weight.copy_(torch.cat([torch.eye(d), torch.eye(d)]).double())
        layer.node_qv.bias.zero_()
        layer.edge_proj.bias.zero_()
    first = _structure([[0, 1], [1, 2], [2, 3], [3, 4], [4, 0]], torch.ones(d, n, dtype=torch.float64))
    z = torch.zeros(1, n, d, dtype=torch.float64)
    z[0, 2] = 100.0
    seen = {}

    def second_for(edges):
        seen["edges"] = edges
        return first

    _, att_v, _, _ = layer(z, first, second_for)
    assert att_v[0].tolist() == pytest.approx([0.0, 0.0, 1.0, 0.0, 0.0])
    edges = seen["edges"][0]
    expected = _layer_norm(layer.edge_proj(z[0, 2]), layer.edge_norm)
    torch.testing.assert_close(edges[1], expected)
    torch.testing.assert_close(edges[2], expected)
    assert float(edges[[0, 3, 4]].abs().max()) == 0.0


def test_degenerate_path_reduces_to_normalized_values():
    torch.manual_seed(6)
    d, n = 8, 9
    stage = SharedStructure(num_nodes=n, hidden=d).double().eval()
    built = build_structure(stage, "rwhc", top_k=3, alpha=1.0, steps=2, noise=None)
    assert built.record.hyperedges[5] == [5, 0, 1, 2]
    layer = HypergraphLayer(d).double()
    with torch.no_grad():
        layer.edge_proj.weight.zero_()
        layer.edge_proj.bias.zero_()
    z = torch.randn(2, n, d, dtype=torch.float64)
    out, _, _, _ = layer(z, built, lambda edges: built)
    _, values = layer.node_qv(z).chunk(2, dim=-1)
    torch.testing.assert_close(out, _layer_norm(layer.node_proj(values), layer.node_norm))


def test_knn_hyperedges_are_built_per_instance():
    torch.manual_seed(7)
    features = torch.randn(3, 6, 4, dtype=torch.float64)
    membership = knn_membership(features, 2)
    for b in range(3):
        hyperedges, _ = build_hyperedges(knn_relevance(features[b]), 2)
        assert torch.equal(membership[b], membership_matrix(hyperedges, 6, torch.float64))
    with pytest.raises(ValueError, match="top_k"):
        knn_membership(features, 6)


def _weighted_output(straight_through):
    torch.manual_seed(8)
    stage = SharedStructure(num_nodes=9, hidden=8).double().train()
    layer = HypergraphLayer(8).double()
    built = build_structure(stage, "rwhc", top_k=3, alpha=0.5, steps=1, noise=GeneratorNoise(0),
                            straight_through=straight_through)
    z = torch.randn(2, 9, 8, dtype=torch.float64)
    weights = torch.randn(2, 9, 8, dtype=torch.float64)
    out, _, _, _ = layer(z, built, lambda edges: built)
    (out * weights).sum().backward()
    return stage, built


def test_top_k_membership_passes_gradient_to_the_pair_head():
    stage, built = _weighted_output(straight_through=True)
    assert set(built.membership.detach().flatten().tolist()) <= {0.0, 1.0}
    assert float(stage.pair_head.weight.grad.abs().max()) > 0.0

    stage, _ = _weighted_output(straight_through=False)
    grad = stage.pair_head.weight.grad
    assert grad is None or not bool(grad.any())
