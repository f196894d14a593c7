from types import SimpleNamespace

import numpy as np
import pytest
import torch

import oracles
from pcnet.losses import (
    LossConfig,
    edge_weights,
    iteration_weights,
    total_loss,
    weighted_bce,
    weighted_iou,
)


def random_problem(seed, size=4, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    logits = torch.randn(size, size, generator=g, dtype=dtype) * 2
    gt = (torch.rand(size, size, generator=g) > 0.5).to(dtype)
    return logits, gt


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("window", [3, 5])
def test_losses_match_pixel_oracle(seed, window):
    logits, gt = random_problem(seed)
    assert weighted_bce(logits, gt, window).item() == pytest.approx(
        oracles.weighted_bce(logits.numpy(), gt.numpy(), window), abs=1e-12
    )
    assert weighted_iou(logits, gt, window).item() == pytest.approx(
        oracles.weighted_iou(logits.numpy(), gt.numpy(), window), abs=1e-12
    )


def test_interior_weights_are_one():
    gt = torch.zeros(40, 40, dtype=torch.float64)
    gt[:, :20] = 1
    w = edge_weights(gt, 5)[0, 0]
    assert torch.all(w[2:-2, 3:17] == 1) and torch.all(w[2:-2, 23:37] == 1)
    assert torch.all(w[:, 18:22] > 1)  # zero-padding also raises weights on the outer border


def test_perfect_prediction_losses_vanish():
    gt = torch.zeros(8, 8, dtype=torch.float64)
    gt[2:6, 2:6] = 1
    logits = (gt * 2 - 1) * 40
    assert weighted_bce(logits, gt, 3).item() < 1e-15
    assert weighted_iou(logits, gt, 3).item() < 1e-15


def test_inverted_prediction_iou_near_one():
    gt = torch.zeros(64, 64, dtype=torch.float64)
    gt[16:48, 16:48] = 1
    logits = (1 - 2 * gt) * 40
    assert weighted_iou(logits, gt, 31).item() > 0.999


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(seed):
    logits, gt = random_problem(seed)
    h = 1e-5
    for fn in (weighted_bce, weighted_iou):
        x = logits.clone().requires_grad_(True)
        fn(x, gt, 3).backward()
        numeric = torch.zeros_like(logits)
        for idx in np.ndindex(4, 4):
            e = torch.zeros_like(logits)
            e[idx] = h
            numeric[idx] = (fn(logits + e, gt, 3) - fn(logits - e, gt, 3)) / (2 * h)
        rel = (x.grad - numeric).norm() / numeric.norm()
        assert rel < 1e-3, (fn.__name__, rel.item())


def test_iou_permutation_invariant():
    logits, gt = random_problem(3, size=8)
    perm = torch.randperm(64, generator=torch.Generator().manual_seed(0))
    # pixels and their weights permuted together
    w = edge_weights(gt, 3)[0, 0].flatten()
    p = torch.sigmoid(logits).flatten()
    g = gt.flatten()

    def iou(p, g, w):
        return 1 - ((w * p * g).sum() + 1) / ((w * (p + g - p * g)).sum() + 1)

    assert iou(p, g, w).item() == pytest.approx(weighted_iou(logits, gt, 3).item(), abs=1e-12)
    assert iou(p[perm], g[perm], w[perm]).item() == pytest.approx(iou(p, g, w).item(), abs=1e-12)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        weighted_bce(torch.zeros(4, 4), torch.zeros(4, 5))


def test_iteration_weights():
    assert iteration_weights(2, LossConfig(mu=0.2, iteration_weighting="literal")) == [0.0, 0.2]
    assert iteration_weights(2, LossConfig(mu=0.2)) == [1.0, 1.2]
    for mode in ("literal", "offset"):
        w = iteration_weights(5, LossConfig(mu=0.1, iteration_weighting=mode))
        assert all(b > a for a, b in zip(w, w[1:]))


def fake_outputs(j, seed=0):
    g = torch.Generator().manual_seed(seed)
    return SimpleNamespace(
        en_logits=[torch.randn(2, 1, 16, 16, generator=g) for _ in range(j)],
        ref_logits=[torch.randn(2, 1, 16, 16, generator=g) for _ in range(j)],
    )


def test_literal_single_iteration_is_zero():
    gt = (torch.rand(2, 1, 16, 16) > 0.5).float()
    terms = total_loss(fake_outputs(1), gt, LossConfig(iteration_weighting="literal"))
    assert terms.total.item() == 0.0


def test_total_is_sum_of_parts():
    gt = (torch.rand(2, 1, 16, 16) > 0.5).float()
    terms = total_loss(fake_outputs(2), gt, LossConfig())
    assert terms.total.item() == pytest.approx(terms.enhance.item() + terms.refine.item())
    assert terms.enhance.item() > 0 and terms.refine.item() > 0


@pytest.mark.parametrize("kwargs", [dict(mu=-1), dict(iteration_weighting="x"), dict(edge_weight_window=4)])
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        LossConfig(**kwargs)
