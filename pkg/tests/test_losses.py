import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from app.core.errors import DimensionError, ValidationFailure
from app.engine import ops
from app.engine.gradcheck import gradcheck
from app.engine.losses import bce_loss, contrastive_loss, l1_loss
from app.engine.tensor import Tensor


def f64(values, grad=False):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def test_bce_symmetric_case_is_ln2():
    assert bce_loss(f64([0.5, 0.5]), [1.0, 0.0]).item() == pytest.approx(math.log(2.0), abs=1e-6)


def test_bce_accepts_soft_targets():
    pred = f64([0.2, 0.7])
    target = np.array([0.2, 0.7])
    expected = -np.mean(target * np.log(target) + (1 - target) * np.log(1 - target))
    assert bce_loss(pred, target).item() == pytest.approx(expected, rel=1e-12)


def test_bce_clamps_saturated_predictions():
    loss = bce_loss(f64([0.0, 1.0]), [1.0, 0.0])
    assert math.isfinite(loss.item())
    assert loss.item() == pytest.approx(-math.log(1e-7), rel=1e-6)


def test_bce_gradient():
    rng = np.random.default_rng(0)
    logits = f64(rng.normal(size=(4, 1)), grad=True)
    target = rng.uniform(size=(4, 1))
    errors = gradcheck(lambda: bce_loss(ops.sigmoid(logits), target), [logits])
    assert errors[0] < 1e-6


def test_bce_target_shape_mismatch():
    with pytest.raises(DimensionError):
        bce_loss(f64([[0.5], [0.5]]), [1.0, 0.0, 1.0])


@pytest.mark.parametrize("label,score,expected", [(0, 0.0, 0.0), (1, 0.0, 0.5), (1, 1.5, 0.0), (0, 0.6, 0.18)])
def test_contrastive_closed_form(label, score, expected):
    assert contrastive_loss(score, label, margin=1.0).item() == pytest.approx(expected, abs=1e-9)


def test_contrastive_batch_is_the_mean():
    scores = f64([0.0, 0.0, 1.5, 0.6])
    labels = np.array([0, 1, 1, 0])
    assert contrastive_loss(scores, labels).item() == pytest.approx((0.0 + 0.5 + 0.0 + 0.18) / 4, abs=1e-12)


def test_contrastive_gradient():
    rng = np.random.default_rng(1)
    scores = f64(rng.uniform(0.05, 0.95, size=6), grad=True)
    labels = np.array([0, 1, 0, 1, 1, 0])
    assert gradcheck(lambda: contrastive_loss(scores, labels, margin=1.0), [scores])[0] < 1e-6


@given(st.lists(st.floats(0.0, 2.0), min_size=1, max_size=8), st.integers(0, 255))
def test_flipping_labels_mirrors_scores_about_the_margin(scores, label_bits):
    margin = 2.0
    labels = [(label_bits >> i) & 1 for i in range(len(scores))]
    flipped = [1 - y for y in labels]
    mirrored = [margin - s for s in scores]
    same = contrastive_loss(f64(scores), labels, margin=margin).item()
    assert contrastive_loss(f64(mirrored), flipped, margin=margin).item() == pytest.approx(same, abs=1e-12)

    a, b = f64(scores, grad=True), f64(mirrored, grad=True)
    contrastive_loss(a, labels, margin=margin).backward()
    contrastive_loss(b, flipped, margin=margin).backward()
    np.testing.assert_allclose(a.grad, -b.grad, atol=1e-12)

def test_contrastive_rejects_bad_margin_and_labels():
    with pytest.raises(ValidationFailure):
        contrastive_loss(0.5, 1, margin=0.0)
    with pytest.raises(ValidationFailure):
        contrastive_loss(f64([0.5]), [2])


def test_l1_value_and_gradient():
    rng = np.random.default_rng(2)
    a = f64(rng.normal(size=(2, 3)), grad=True)
    b = rng.normal(size=(2, 3))
    assert l1_loss(a, b).item() == pytest.approx(np.abs(a.data - b).mean(), rel=1e-12)
    assert gradcheck(lambda: l1_loss(a, b), [a])[0] < 1e-6
