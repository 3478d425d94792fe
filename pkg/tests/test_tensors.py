import pytest
import torch

from advgen.tensors import (
    AttackBudget,
    ImageBatch,
    NormalizationSpec,
    float32_budget,
    tensor2img,
    to_normalized,
)


def _single(value, mean=0.5, std=0.5):
    spec = NormalizationSpec(mean=(mean,) * 3, std=(std,) * 3)
    return torch.full((1, 3, 4, 4), value), spec


def test_to_normalized_centered_value():
    px, spec = _single(0.5)
    assert to_normalized(px, spec).data.abs().max() == 0.0


def test_to_normalized_direct_arithmetic():
    px, spec = _single(1.0)
    assert to_normalized(px, spec).data.allclose(torch.ones(1, 3, 4, 4))


def test_to_normalized_identity_spec():
    px, spec = torch.zeros(1, 3, 4, 4), NormalizationSpec(mean=(0.0,) * 3, std=(1.0,) * 3)
    assert to_normalized(px, spec).data.abs().max() == 0.0


def test_tensor2img_inverse_of_centered():
    spec = NormalizationSpec()
    batch = ImageBatch(torch.zeros(1, 3, 4, 4), spec)
    assert tensor2img(batch).allclose(torch.full((1, 3, 4, 4), 0.5))


@pytest.mark.parametrize("normalized,expected", [(1.2, 1.0), (-2.0, 0.0)])
def test_tensor2img_clips(normalized, expected):
    spec = NormalizationSpec()
    batch = ImageBatch(torch.full((1, 3, 4, 4), normalized), spec)
    out = tensor2img(batch)
    assert out.allclose(torch.full((1, 3, 4, 4), expected))


def test_round_trip_identity():
    torch.manual_seed(0)
    for _ in range(10):
        px = torch.rand(2, 3, 8, 8)
        spec = NormalizationSpec(
            mean=tuple(torch.rand(3).tolist()),
            std=tuple((0.2 + torch.rand(3)).tolist()),
        )
        back = tensor2img(to_normalized(px, spec))
        assert (back - px).abs().max() < 1e-6


def test_affine_per_channel():
    torch.manual_seed(1)
    spec = NormalizationSpec()
    p = torch.rand(1, 3, 8, 8) * 0.4
    a, b = 0.5, 0.1
    mean = torch.tensor(spec.mean).view(1, 3, 1, 1)
    std = torch.tensor(spec.std).view(1, 3, 1, 1)
    lhs = to_normalized(a * p + b, spec).data
    rhs = a * to_normalized(p, spec).data + (b + (a - 1) * mean) / std
    assert (lhs - rhs).abs().max() < 1e-6


def test_rejects_bad_std():
    with pytest.raises(ValueError, match="std"):
        NormalizationSpec(std=(0.5, 0.0, 0.5))


def test_rejects_shape_mismatch():
    spec = NormalizationSpec(mean=(0.5,), std=(0.5,))
    with pytest.raises(ValueError, match="channels"):
        to_normalized(torch.rand(1, 3, 4, 4), spec)


def test_rejects_out_of_range_pixels():
    with pytest.raises(ValueError, match="pixel"):
        to_normalized(torch.full((1, 3, 4, 4), 1.5))


def test_rejects_non_finite():
    data = torch.zeros(1, 3, 4, 4)
    data[0, 0, 0, 0] = float("nan")
    with pytest.raises(ValueError, match="finite"):
        ImageBatch(data)


def test_attack_budget_positive():
    with pytest.raises(ValueError):
        AttackBudget(0.0)
    assert AttackBudget(0.1).delta == 0.1


def test_float32_budget_never_exceeds():
    for delta in (0.01, 0.1, 0.3, 0.5, 1.0):
        b = float32_budget(delta)
        assert b <= delta
        assert delta - b < 1e-7
