import math

import numpy as np
import pytest
import torch
import torch.nn as nn

from app.model.noise import GeneratorNoise, NoiseSource, PerInstanceNoise, ReplayNoise, content_seed, gumbel
from app.model.robustness import RedundancyFilter, apply_reliability, bernoulli_relaxation, reliability_scores


def _bernoulli_logits(c1: float, size: int) -> torch.Tensor:
    return torch.log(torch.tensor([1.0 - c1, c1], dtype=torch.float64)).expand(size, 2)


# --- Bernoulli relaxation / FRF ---

@pytest.mark.parametrize("c1", [0.1, 0.3, 0.5, 0.7, 0.9])
def test_hard_threshold_frequency_matches_probability(c1):
    noise = GeneratorNoise(seed=int(c1 * 10))
    samples = bernoulli_relaxation(_bernoulli_logits(c1, 10_000), tau=0.5, training=True, noise=noise)
    assert abs(float((samples > 0.5).double().mean()) - c1) < 0.02
    assert float(samples.min()) > 0.0 and float(samples.max()) < 1.0


def test_low_temperature_samples_approach_binary():
    noise = GeneratorNoise(seed=1)
    samples = bernoulli_relaxation(_bernoulli_logits(0.6, 5000), tau=0.01, training=True, noise=noise)
    distance = torch.minimum(samples, 1.0 - samples)
    assert float(distance.mean()) < 0.05


def test_infer_mode_thresholds_at_half():
    mask = bernoulli_relaxation(torch.log(torch.tensor([[0.6, 0.4], [0.4, 0.6], [0.5, 0.5]])), 1.0, False)
    assert mask.tolist() == [0.0, 1.0, 1.0]


def test_training_needs_a_noise_source():
    with pytest.raises(ValueError):
        bernoulli_relaxation(torch.zeros(3, 2), 1.0, True, None)


def test_filter_probabilities_sum_to_one():
    flt = RedundancyFilter(nodes=16)
    c = flt.probabilities(torch.randn(4, 16, 128))
    assert c.shape == (4, 128, 2)
    torch.testing.assert_close(c.sum(dim=-1), torch.ones(4, 128))


def test_filter_identity_mask_leaves_input_unchanged():
    flt = RedundancyFilter(nodes=16)
    with torch.no_grad():
        flt.head.weight.zero_()
        flt.head.bias.copy_(torch.tensor([-1e4, 1e4]))
    z = torch.randn(2, 16, 128)
    flt.eval()
    out, mask = flt(z)
    assert torch.equal(out, z)
    assert torch.equal(mask, torch.ones(2, 128))
    flt.train()
    out, _ = flt(z, GeneratorNoise(0))
    torch.testing.assert_close(out, z)


def test_filter_infer_mode_zeroes_low_probability_columns():
    flt = RedundancyFilter(nodes=1).eval()
    with torch.no_grad():
        flt.head.weight.copy_(torch.tensor([[0.0], [1.0]]))
        flt.head.bias.zero_()
    # Logits (0, z_i) give c1_i = sigmoid(z_i): 0.4 and 0.6.
    z = torch.tensor([[[math.log(0.4 / 0.6), math.log(0.6 / 0.4)]]])
    out, mask = flt(z)
    assert mask.tolist() == [[0.0, 1.0]]
    assert out[0, 0, 0] == 0.0
    assert out[0, 0, 1] == z[0, 0, 1]


def test_tau_must_be_positive():
    with pytest.raises(ValueError):
        RedundancyFilter(nodes=4, tau=0.0)


# --- Noise sources ---

def test_per_instance_draws_do_not_depend_on_batch_mates():
    alone = PerInstanceNoise([11]).normal((1, 3, 4), torch.float64, per_sample=True)
    paired = PerInstanceNoise([5, 11]).normal((2, 3, 4), torch.float64, per_sample=True)
    assert torch.equal(alone[0], paired[1])


def test_replay_returns_recorded_draws():
    noise = ReplayNoise(GeneratorNoise(3))
    first = gumbel(noise, (4, 2), torch.float64)
    noise.freeze()
    assert torch.equal(gumbel(noise, (4, 2), torch.float64), first)
    with pytest.raises(RuntimeError):
        noise.uniform((4, 2), torch.float64)


def test_noise_source_requires_both_draws():
    class UniformOnly(NoiseSource):
        def uniform(self, shape, dtype, per_sample=False):
            return torch.zeros(shape, dtype=dtype)

    with pytest.raises(TypeError):
        UniformOnly()
    with pytest.raises(TypeError):
        NoiseSource()


def test_content_seed_is_stable_and_content_sensitive():
    series = np.linspace(0.0, 1.0, 20)
    assert content_seed(series) == content_seed(list(series))
    assert content_seed(series) != content_seed(series + 1e-12)
    assert 0 <= content_seed(series) < 2 ** 63


# --- Reliability scores ---

def _constant_classifier(nodes: int, d: int, classes: int) -> nn.Linear:
    layer = nn.Linear(nodes * d, classes)
    with torch.no_grad():
        layer.weight.zero_()
        layer.bias.copy_(torch.arange(classes, dtype=torch.float32))
    return layer


def test_constant_classifiers_give_two_thirds_each():
    nodes = {t: torch.randn(5, 4, 8) for t in ("ts", "img", "exp")}
    classifiers = {t: _constant_classifier(4, 8, 3) for t in nodes}
    scores = reliability_scores(nodes, classifiers, GeneratorNoise(0))
    for value in scores.values():
        torch.testing.assert_close(value, torch.full((5,), 2.0 / 3.0))


def test_noisy_type_gets_the_smallest_score_and_scores_sum_to_two():
    torch.manual_seed(0)
    nodes = {t: torch.randn(6, 4, 8, dtype=torch.float64) for t in ("ts", "img", "exp")}
    classifiers = {t: _constant_classifier(4, 8, 3).double() for t in nodes}
    sensitive = nn.Linear(32, 3).double()
    with torch.no_grad():
        sensitive.weight.normal_(0.0, 0.3)
    classifiers["img"] = sensitive
    scores = reliability_scores(nodes, classifiers, GeneratorNoise(1))
    total = scores["ts"] + scores["img"] + scores["exp"]
    torch.testing.assert_close(total, torch.full((6,), 2.0, dtype=torch.float64))
    assert bool((scores["img"] < scores["ts"]).all())
    assert bool((scores["img"] < scores["exp"]).all())


def test_scores_follow_algorithm_step_by_step():
    torch.manual_seed(2)
    nodes = {t: torch.randn(1, 2, 3, dtype=torch.float64) for t in ("ts", "img", "exp")}
    classifiers = {t: nn.Linear(6, 2).double() for t in nodes}
    recorder = ReplayNoise(GeneratorNoise(4))
    scores = reliability_scores(nodes, classifiers, recorder)

    draws = iter(recorder.tape)
    spreads = []
    for t in ("ts", "img", "exp"):
        outputs = []
        for level in (1, 2, 3):
            g = next(draws)
            perturbed = nodes[t] * (g + 1.0) * level
            with torch.no_grad():
                logits = classifiers[t](perturbed.flatten(start_dim=1))[0]
            e = [math.exp(v) for v in logits.tolist()]
            outputs.append([v / sum(e) for v in e])
        variances = []
        for k in range(2):
            column = [o[k] for o in outputs]
            mean = sum(column) / 3
            variances.append(sum((v - mean) ** 2 for v in column) / 3)
        spreads.append(max(variances) - min(variances))
    exps = [math.exp(s) for s in spreads]
    expected = [1.0 - e / sum(exps) for e in exps]
    got = [float(scores[t][0]) for t in ("ts", "img", "exp")]
    assert got == pytest.approx(expected, abs=1e-9)


def test_scores_are_permutation_equivariant():
    torch.manual_seed(3)
    nodes = {t: torch.randn(2, 4, 8, dtype=torch.float64) for t in ("a", "b", "c")}
    classifiers = {t: nn.Linear(32, 3).double() for t in nodes}
    forward = reliability_scores(nodes, classifiers, PerInstanceNoise([1, 2]))
    swapped_nodes = {"b": nodes["b"], "a": nodes["a"], "c": nodes["c"]}
    # Same draws per type: give each type the stream it had before.
    recorder = ReplayNoise(PerInstanceNoise([1, 2]))
    reliability_scores(nodes, classifiers, recorder)
    tape = recorder.tape
    reordered = ReplayNoise(GeneratorNoise(0))
    reordered.tape = tape[3:6] + tape[0:3] + tape[6:9]
    reordered.freeze()
    swapped = reliability_scores(swapped_nodes, classifiers, reordered)
    for t in nodes:
        torch.testing.assert_close(swapped[t], forward[t])


def test_scores_carry_no_gradient():
    nodes = {t: torch.randn(2, 4, 8, requires_grad=True) for t in ("ts", "img")}
    classifiers = {t: nn.Linear(32, 3) for t in nodes}
    scores = reliability_scores(nodes, classifiers, GeneratorNoise(0))
    assert not scores["ts"].requires_grad


def test_apply_reliability():
    ones = torch.ones(2, 3, 4)
    assert torch.equal(apply_reliability(ones, 1.0), ones)
    assert torch.equal(apply_reliability(ones, 0.0), torch.zeros(2, 3, 4))
    assert torch.equal(apply_reliability(ones, 0.5), torch.full((2, 3, 4), 0.5))
    per_sample = apply_reliability(ones, torch.tensor([0.25, 1.0]))
    assert torch.equal(per_sample[0], torch.full((3, 4), 0.25))
    assert torch.equal(per_sample[1], ones[1])


def test_gumbel_values_are_finite():
    g = gumbel(GeneratorNoise(0), (1000,), torch.float32)
    assert torch.isfinite(g).all()
