import pytest
import torch

from app.core.errors import ShapeError
from app.model.encoders import ExpertEncoder, ImageEncoder, OmniScaleEncoder, PatchProjector


def test_series_encoder_output_shape():
    encoder = OmniScaleEncoder(series_length=101)
    assert encoder(torch.randn(4, 101)).shape == (4, 128)


def test_series_encoder_skips_kernels_longer_than_series():
    encoder = OmniScaleEncoder(series_length=4)
    assert encoder.kernel_sizes == [1, 2, 3]
    assert encoder(torch.randn(2, 4)).shape == (2, 128)


def test_series_encoder_is_per_sample():
    torch.manual_seed(0)
    encoder = OmniScaleEncoder(series_length=30)
    batch = torch.randn(5, 30)
    together = encoder(batch)
    alone = torch.cat([encoder(batch[i:i + 1]) for i in range(5)])
    torch.testing.assert_close(together, alone, rtol=1e-5, atol=1e-6)


def test_image_encoder_shape_and_validation():
    encoder = ImageEncoder()
    assert encoder(torch.rand(3, 3, 64, 64)).shape == (3, 128)
    with pytest.raises(ShapeError):
        encoder(torch.rand(3, 3, 32, 32))


def test_expert_encoder_shape_and_validation():
    encoder = ExpertEncoder()
    assert encoder(torch.randn(7, 12)).shape == (7, 128)
    with pytest.raises(ShapeError):
        encoder(torch.randn(7, 11))


def test_patches_are_contiguous_and_non_overlapping():
    projector = PatchProjector("ts", nodes=16, patch_len=8, hidden=8)
    with torch.no_grad():
        projector.proj.weight.copy_(torch.eye(8))
        projector.proj.bias.zero_()
    feature = torch.arange(256, dtype=torch.float32).reshape(2, 128)
    nodes = projector(feature)
    assert nodes.shape == (2, 16, 8)
    assert torch.equal(nodes[1, 3], feature[1, 24:32])


def test_projector_rejects_wrong_feature_length():
    projector = PatchProjector("img", nodes=16, patch_len=8, hidden=128)
    with pytest.raises(ShapeError):
        projector(torch.randn(2, 120))
    with pytest.raises(ValueError):
        PatchProjector("audio", 16, 8, 128)


def test_expert_encoder_is_affine():
    torch.manual_seed(3)
    encoder = ExpertEncoder().double()
    torch.testing.assert_close(encoder(torch.zeros(1, 12, dtype=torch.float64))[0], encoder.linear.bias)
    x, y = torch.randn(2, 12, dtype=torch.float64), torch.randn(2, 12, dtype=torch.float64)
    bias = encoder.linear.bias
    torch.testing.assert_close(encoder(2.0 * x - 0.5 * y) - bias, 2.0 * (encoder(x) - bias) - 0.5 * (encoder(y) - bias))
