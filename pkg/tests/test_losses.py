import math

import pytest
import torch

from oracle_utils import finite_diff_grads, max_rel_grad_error, soft_dice
from vfslab.losses import LossConfig, bce_loss, combined_loss, tversky_loss


def test_tversky_perfect_prediction_is_zero():
    y = torch.tensor([1.0, 1.0, 0.0, 0.0])
    value, degenerate = tversky_loss(y.clone(), y)
    assert not degenerate
    assert value.item() == 0.0


def test_tversky_hand_computed_anchor():
    # TP=1, FP=1, FN=1 -> 1 - 1/(1 + 0.5 + 0.5) = 0.5, exactly
    p = torch.tensor([1.0, 0.0, 1.0, 0.0])
    y = torch.tensor([1.0, 1.0, 0.0, 0.0])
    value, _ = tversky_loss(p, y, cfg=LossConfig(alpha=0.5, beta=0.5))
    assert value.item() == 0.5


def test_tversky_equals_one_minus_soft_dice():
    g = torch.Generator().manual_seed(5)
    for _ in range(20):
        p = torch.rand((12, 9), generator=g, dtype=torch.float64)
        y = (torch.rand((12, 9), generator=g, dtype=torch.float64) > 0.5).double()
        ignore = (torch.rand((12, 9), generator=g) > 0.8).to(torch.uint8)
        value, _ = tversky_loss(p, y, ignore, LossConfig(alpha=0.5, beta=0.5))
        expected = 1.0 - soft_dice(p, y, (ignore == 0).double())
        assert abs(value.item() - expected.item()) <= 1e-9


def test_tversky_all_ignored_is_degenerate_zero():
    p = torch.rand(4, 4, requires_grad=True)
    y = torch.ones(4, 4)
    value, degenerate = tversky_loss(p, y, torch.ones(4, 4, dtype=torch.uint8))
    assert degenerate
    assert value.item() == 0.0
    value.backward()
    assert torch.all(p.grad == 0)


def test_tversky_empty_target_empty_prediction():
    p = torch.zeros(4, 4)
    y = torch.zeros(4, 4)
    value, degenerate = tversky_loss(p, y)
    assert not degenerate
    assert value.item() == 0.0


def test_bce_anchor_ln2():
    value, _ = bce_loss(torch.tensor([0.5], dtype=torch.float64), torch.tensor([1.0], dtype=torch.float64))
    assert abs(value.item() - math.log(2.0)) <= 1e-9


def test_bce_perfect_prediction_small():
    y = torch.tensor([1.0, 0.0, 1.0])
    value, _ = bce_loss(y.clone(), y)
    assert value.item() <= 1e-5


def test_bce_masked_mean_matches_brute_force():
    g = torch.Generator().manual_seed(9)
    p = torch.rand((8, 8), generator=g, dtype=torch.float64)
    y = (torch.rand((8, 8), generator=g) > 0.5).double()
    ignore = torch.zeros((8, 8), dtype=torch.uint8)
    ignore[:, :4] = 1
    value, _ = bce_loss(p, y, ignore)
    eps = 1e-6
    terms = []
    for r in range(8):
        for c in range(4, 8):
            pc = min(max(p[r, c].item(), eps), 1 - eps)
            yv = y[r, c].item()
            terms.append(-(yv * math.log(pc) + (1 - yv) * math.log(1 - pc)))
    assert abs(value.item() - sum(terms) / len(terms)) <= 1e-9


def test_combined_endpoints_exact():
    g = torch.Generator().manual_seed(3)
    p = torch.rand((6, 6), generator=g)
    y = (torch.rand((6, 6), generator=g) > 0.5).float()
    assert combined_loss(p, y, cfg=LossConfig(theta=0.0)).value.item() == bce_loss(p, y).value.item()
    assert combined_loss(p, y, cfg=LossConfig(theta=1.0)).value.item() == tversky_loss(p, y).value.item()


def test_combined_nonnegative_and_zero_iff_components_zero():
    g = torch.Generator().manual_seed(4)
    for _ in range(10):
        p = torch.rand((5, 7), generator=g)
        y = (torch.rand((5, 7), generator=g) > 0.5).float()
        value, _ = combined_loss(p, y)
        assert value.item() >= 0.0
    y = torch.tensor([[1.0, 0.0]])
    value, _ = combined_loss(y.clone(), y)
    # bce keeps a clamp-sized floor, tversky is exactly zero
    assert value.item() < 1e-5


def test_loss_invariant_to_ignored_pixels():
    g = torch.Generator().manual_seed(6)
    p = torch.rand((8, 8), generator=g, dtype=torch.float64)
    y = (torch.rand((8, 8), generator=g) > 0.5).double()
    ignore = (torch.rand((8, 8), generator=g) > 0.6).to(torch.uint8)
    assert int(ignore.sum()) > 0
    base = combined_loss(p, y, ignore).value.item()
    p2 = p.clone()
    y2 = y.clone()
    p2[ignore == 1] = torch.rand(int(ignore.sum()), generator=g, dtype=torch.float64)
    y2[ignore == 1] = (torch.rand(int(ignore.sum()), generator=g) > 0.5).double()
    assert combined_loss(p2, y2, ignore).value.item() == base


def test_theta_default_is_half():
    assert LossConfig().theta == 0.5
    assert LossConfig().alpha == 0.5 and LossConfig().beta == 0.5


@pytest.mark.parametrize("bad", [dict(theta=1.5), dict(alpha=-0.1), dict(epsilon=0.0)])
def test_loss_config_validation(bad):
    with pytest.raises(ValueError):
        LossConfig(**bad)


def test_combined_gradient_matches_finite_differences():
    g = torch.Generator().manual_seed(12)
    p = (0.05 + 0.9 * torch.rand((8, 8), generator=g, dtype=torch.float64)).requires_grad_(True)
    y = (torch.rand((8, 8), generator=g) > 0.5).double()
    ignore = (torch.rand((8, 8), generator=g) > 0.85).to(torch.uint8)
    value, _ = combined_loss(p, y, ignore)
    value.backward()

    p_probe = p.detach().clone()
    (numeric,) = finite_diff_grads(
        lambda: combined_loss(p_probe, y, ignore).value, [p_probe], step=1e-4
    )
    assert max_rel_grad_error(p.grad, numeric) <= 1e-4
