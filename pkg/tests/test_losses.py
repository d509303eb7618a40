import logging
import math

import numpy as np
import pytest
import torch

import starnet as sn
from starnet.errors import ParamError, ShapeError

torch.set_num_threads(1)


def _const(v, shape=(1, 3, 4, 4), dtype=torch.float64):
    return torch.full(shape, float(v), dtype=dtype)


@pytest.fixture(scope="module")
def extractor():
    return sn.FeatureExtractor(seed=0).double()


## ---------------------------------------------------------------- smooth L1


@pytest.mark.parametrize(
    "diff,expected",
    [
        (0.0, 0.0),
        (0.5, 0.125),  # quadratic branch: 0.5 * 0.25
        (1.0, 0.5),  # boundary: |1| - 0.5
        (3.0, 2.5),  # linear branch: 3 - 0.5
        (-3.0, 2.5),
    ],
)
def test_smooth_l1_exact_values(diff, expected):
    loss = sn.smooth_l1(_const(diff), _const(0.0))
    assert float(loss) == pytest.approx(expected, abs=1e-12)


def test_smooth_l1_is_continuous_at_the_knee():
    eps = 1e-7
    below = float(sn.smooth_l1(_const(1.0 - eps), _const(0.0)))
    above = float(sn.smooth_l1(_const(1.0 + eps), _const(0.0)))
    assert abs(below - above) < 1e-6
    # exact agreement of the two branch formulas at |t| = beta
    assert 0.5 * 1.0**2 == 1.0 - 0.5


def test_smooth_l1_beta_scales_the_knee():
    # at beta=2, diff 1.0 sits in the quadratic branch: 0.5 * 1 = 0.5
    assert float(sn.smooth_l1(_const(1.0), _const(0.0), beta=2.0)) == pytest.approx(0.5)
    # and diff 3.0 in the linear branch: 3 - 1 = 2
    assert float(sn.smooth_l1(_const(3.0), _const(0.0), beta=2.0)) == pytest.approx(2.0)


def test_smooth_l1_mixed_elements_average():
    pred = torch.tensor([0.0, 0.5, 2.0], dtype=torch.float64)
    target = torch.zeros(3, dtype=torch.float64)
    expected = (0.0 + 0.125 + 1.5) / 3
    assert float(sn.smooth_l1(pred, target)) == pytest.approx(expected, abs=1e-12)


def test_smooth_l1_gradient_matches_finite_differences():
    torch.manual_seed(0)
    pred = torch.randn(2, 3, 4, 4, dtype=torch.float64, requires_grad=True)
    target = torch.randn(2, 3, 4, 4, dtype=torch.float64)
    loss = sn.smooth_l1(pred, target)
    loss.backward()
    h = 1e-6
    flat = pred.detach().clone().view(-1)
    for idx in [0, 17, 45, 95]:
        bumped = flat.clone()
        bumped[idx] += h
        up = float(sn.smooth_l1(bumped.view_as(pred), target))
        bumped[idx] -= 2 * h
        down = float(sn.smooth_l1(bumped.view_as(pred), target))
        fd = (up - down) / (2 * h)
        assert abs(fd - float(pred.grad.view(-1)[idx])) < 1e-6


def test_smooth_l1_errors():
    with pytest.raises(ShapeError):
        sn.smooth_l1(torch.zeros(2, 3), torch.zeros(3, 2))
    with pytest.raises(ParamError):
        sn.smooth_l1(_const(0.0), _const(0.0), beta=0.0)


## --------------------------------------------------------------- perceptual


def test_extractor_yields_three_taps_with_halving_resolution(extractor):
    taps = extractor(torch.rand(1, 3, 16, 16, dtype=torch.float64))
    assert [t.shape for t in taps] == [
        (1, 64, 16, 16),
        (1, 128, 8, 8),
        (1, 256, 4, 4),
    ]


def test_extractor_taps_are_nonnegative(extractor):
    taps = extractor(torch.rand(1, 3, 8, 8, dtype=torch.float64))
    for t in taps:
        assert float(t.min()) >= 0.0  # taps sit right after ReLUs


def test_extractor_is_frozen_and_stays_eval(extractor):
    assert all(not p.requires_grad for p in extractor.parameters())
    extractor.train()
    assert extractor.training is False


def test_extractor_warns_without_weights(caplog):
    with caplog.at_level(logging.WARNING, logger="starnet.losses"):
        sn.FeatureExtractor(seed=0)
    assert any("random features" in r.message for r in caplog.records)


def test_extractor_fallback_is_pinned(extractor):
    a = sn.FeatureExtractor(seed=0)
    b = sn.FeatureExtractor(seed=0)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    c = sn.FeatureExtractor(seed=1)
    assert any(
        not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters())
    )


def test_extractor_does_not_disturb_global_rng():
    torch.manual_seed(123)
    before = torch.rand(4)
    torch.manual_seed(123)
    sn.FeatureExtractor(seed=0)
    after = torch.rand(4)
    assert torch.equal(before, after)


def test_extractor_loads_npz_weights(tmp_path, extractor):
    ref = sn.FeatureExtractor(seed=5)
    path = str(tmp_path / "weights.npz")
    np.savez(
        path,
        **{
            f"features.{k}": v.numpy()
            for k, v in ref.features.state_dict().items()
        },
    )
    loaded = sn.FeatureExtractor(weights_path=path)
    for pa, pb in zip(ref.parameters(), loaded.parameters()):
        assert torch.equal(pa, pb)


def test_perceptual_zero_iff_inputs_match(extractor):
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    assert float(sn.perceptual_loss(x, x, extractor)) == 0.0
    y = x + 0.05 * torch.randn_like(x)
    assert float(sn.perceptual_loss(x, y.clamp(0, 1), extractor)) > 0.0


def test_perceptual_is_symmetric(extractor):
    torch.manual_seed(1)
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    y = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    assert float(sn.perceptual_loss(x, y, extractor)) == pytest.approx(
        float(sn.perceptual_loss(y, x, extractor)), rel=1e-12
    )


def test_perceptual_matches_per_tap_oracle(extractor):
    torch.manual_seed(2)
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    y = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    expected = sum(
        float(((fp - ft) ** 2).mean())
        for fp, ft in zip(extractor(x), extractor(y))
    )
    assert float(sn.perceptual_loss(x, y, extractor)) == pytest.approx(expected, rel=1e-12)


## -------------------------------------------------------------------- total


def test_total_loss_arithmetic(extractor):
    torch.manual_seed(3)
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    y = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    bundle = sn.total_loss(x, y, extractor, weight=0.04)
    assert float(bundle.total) == pytest.approx(
        float(bundle.smooth_l1) + 0.04 * float(bundle.perceptual), abs=1e-12
    )
    assert bundle.weight == 0.04


def test_total_loss_weight_zero_reduces_to_smooth(extractor):
    torch.manual_seed(4)
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    y = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    bundle = sn.total_loss(x, y, extractor, weight=0.0)
    assert float(bundle.total) == float(bundle.smooth_l1)


def test_total_loss_rejects_negative_weight(extractor):
    x = torch.zeros(1, 3, 16, 16, dtype=torch.float64)
    with pytest.raises(ParamError):
        sn.total_loss(x, x, extractor, weight=-0.1)


def test_total_loss_backpropagates_through_both_terms(extractor):
    torch.manual_seed(5)
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64, requires_grad=True)
    y = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    bundle = sn.total_loss(x, y, extractor)
    bundle.total.backward()
    assert x.grad is not None and float(x.grad.abs().max()) > 0
    # extractor parameters must stay grad-free
    assert all(p.grad is None for p in extractor.parameters())


def test_identical_inputs_give_zero_total(extractor):
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    bundle = sn.total_loss(x, x, extractor)
    assert float(bundle.total) == 0.0
    assert float(bundle.smooth_l1) == 0.0
    assert float(bundle.perceptual) == 0.0
