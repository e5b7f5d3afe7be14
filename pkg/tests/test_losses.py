import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slip.autodiff import Tensor, grad_check, grad_check_params, l2_normalize_rows
from slip.graph import HopMasks, build_masks
from slip.losses import (
    MAX_LOGIT_SCALE,
    Classifier,
    LossParts,
    LossWeights,
    Temperature,
    aux_classification_loss,
    alignment_score,
    clip_infonce,
    structural_loss,
    total_loss,
)


def unit(rng, b, d):
    x = rng.normal(size=(b, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def masks_from(m_pos):
    m_pos = np.asarray(m_pos, dtype=float)
    return HopMasks(1, m_pos, 1 - m_pos - np.eye(len(m_pos)))


# -- naive references ------------------------------------------------------------


def clip_reference(ev, et, s):
    b = len(ev)
    total = 0.0
    for i in range(b):
        row = [s * float(ev[i] @ et[j]) for j in range(b)]
        col = [s * float(ev[j] @ et[i]) for j in range(b)]
        total += -(row[i] - math.log(sum(math.exp(v) for v in row)))
        total += -(col[i] - math.log(sum(math.exp(v) for v in col)))
    return total / (2 * b)


def structural_reference(z, m_pos, s, eps=1e-8):
    b = len(z)
    num, cnt = 0.0, 0.0
    for i in range(b):
        logits = [s * float(z[i] @ z[k]) for k in range(b)]
        lse = math.log(sum(math.exp(v) for v in logits))
        for j in range(b):
            if m_pos[i][j]:
                num += -(logits[j] - lse)
                cnt += 1
    return num / (cnt + eps)


# -- CLIP ----------------------------------------------------------------------


def test_clip_single_pair_is_zero():
    ev = Tensor([[1.0, 0.0]])
    assert clip_infonce(ev, ev, Temperature.from_scale(5.0)).item() == 0.0


def test_clip_closed_form_orthonormal():
    e = Tensor(np.eye(2))
    got = clip_infonce(e, e, Temperature.from_scale(1.0)).item()
    assert abs(got - (math.log(math.e + 1) - 1)) <= 1e-9
    for b, s in [(3, 2.0), (5, 0.5)]:
        e = Tensor(np.eye(b))
        expected = math.log(math.exp(s) + b - 1) - s
        assert clip_infonce(e, e, Temperature.from_scale(s)).item() == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_clip_matches_per_row_reference(seed):
    rng = np.random.default_rng(seed)
    b = int(rng.integers(2, 17))
    ev, et = unit(rng, b, 6), unit(rng, b, 6)
    s = float(rng.uniform(1, 30))
    got = clip_infonce(Tensor(ev), Tensor(et), Temperature.from_scale(s)).item()
    assert abs(got - clip_reference(ev, et, s)) <= 1e-10


def test_clip_permutation_invariant():
    rng = np.random.default_rng(0)
    ev, et = unit(rng, 6, 4), unit(rng, 6, 4)
    p = rng.permutation(6)
    t = Temperature()
    a = clip_infonce(Tensor(ev), Tensor(et), t).item()
    b = clip_infonce(Tensor(ev[p]), Tensor(et[p]), t).item()
    assert a == pytest.approx(b, abs=1e-12)


def test_clip_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        clip_infonce(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))), Temperature())


def test_temperature_clamp():
    t = Temperature.from_scale(500.0)
    assert t.scale().item() == pytest.approx(MAX_LOGIT_SCALE)
    t.clamp_()
    assert math.exp(t.t.item()) == pytest.approx(MAX_LOGIT_SCALE)
    assert Temperature().scale().item() == pytest.approx(1 / 0.07)


# -- structural ------------------------------------------------------------------


def test_structural_no_positives_is_zero():
    z = Tensor(unit(np.random.default_rng(0), 4, 3))
    assert structural_loss(z, masks_from(np.zeros((4, 4))), Temperature()).item() == 0.0


def test_structural_closed_form():
    z = Tensor(np.eye(2))
    got = structural_loss(z, masks_from([[0, 1], [1, 0]]), Temperature.from_scale(1.0)).item()
    assert got == pytest.approx(math.log(1 + math.e), abs=1e-7)


def test_structural_exclude_self():
    z = Tensor(np.eye(2))
    got = structural_loss(z, masks_from([[0, 1], [1, 0]]), Temperature.from_scale(1.0), exclude_self=True)
    # only the positive remains in the denominator
    assert got.item() == pytest.approx(0.0, abs=1e-7)


@pytest.mark.parametrize("seed", range(10))
def test_structural_all_pairs_matches_double_loop(seed):
    rng = np.random.default_rng(seed)
    b = int(rng.integers(2, 17))
    z = unit(rng, b, 5)
    s = float(rng.uniform(1, 20))
    full = 1 - np.eye(b)
    got = structural_loss(Tensor(z), masks_from(full), Temperature.from_scale(s)).item()
    assert abs(got - structural_reference(z, full, s)) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_structural_random_masks_match_reference(b, seed):
    rng = np.random.default_rng(seed)
    a = np.triu(rng.random((b, b)) < 0.4, 1)
    m = (a | a.T).astype(float)
    z = unit(rng, b, 4)
    got = structural_loss(Tensor(z), masks_from(m), Temperature.from_scale(3.0)).item()
    assert abs(got - structural_reference(z, m, 3.0)) <= 1e-10


def test_structural_mean_over_positives():
    # orthonormal rows: every off-diagonal log-probability is the same value,
    # so doubling the number of positive pairs must not move the mean
    z = Tensor(np.eye(4))
    t = Temperature.from_scale(2.0)
    two = np.zeros((4, 4))
    two[0, 1] = two[1, 0] = 1
    four = two.copy()
    four[2, 3] = four[3, 2] = 1
    a = structural_loss(z, masks_from(two), t).item()
    b = structural_loss(z, masks_from(four), t).item()
    assert a == pytest.approx(b, abs=1e-7)
    assert a == pytest.approx(math.log(math.exp(2.0) + 3), abs=1e-7)


def test_structural_mask_shape_checked():
    with pytest.raises(ValueError):
        structural_loss(Tensor(np.eye(3)), masks_from(np.zeros((2, 2))), Temperature())


# -- auxiliary and total ---------------------------------------------------------


def test_aux_uniform_and_saturated():
    assert aux_classification_loss(Tensor(np.zeros((4, 5))), [0, 1, 2, 3]).item() == pytest.approx(math.log(5))
    logits = np.full((2, 3), -50.0)
    logits[0, 1] = logits[1, 2] = 50.0
    assert aux_classification_loss(Tensor(logits), [1, 2]).item() < 1e-30


def test_aux_rejects_bad_labels():
    with pytest.raises(ValueError):
        aux_classification_loss(Tensor(np.zeros((2, 3))), [0, 3])


@pytest.mark.parametrize("seed", range(5))
def test_aux_gradient(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, size=6)
    assert grad_check(lambda x: aux_classification_loss(x, labels), rng.normal(size=(6, 4))) <= 1e-6


def test_classifier_is_single_projection():
    rng = np.random.default_rng(0)
    c = Classifier.init(3, 2, rng)
    x = rng.normal(size=(4, 3))
    assert np.allclose(c(Tensor(x)).data, x @ c.weight.data + c.bias.data)


def _parts(rng):
    return LossParts(
        clip=Tensor(float(rng.uniform(0, 2))),
        graph=Tensor(float(rng.uniform(0, 2))),
        aux=Tensor(float(rng.uniform(0, 2))),
    )


def test_total_loss_weights():
    rng = np.random.default_rng(0)
    p = _parts(rng)
    assert total_loss(p, LossWeights(0.0, 0.0)).item() == p.clip.item()
    got = total_loss(p, LossWeights()).item()
    assert got == pytest.approx(p.clip.item() + 0.05 * p.graph.item() + 0.1 * p.aux.item(), abs=1e-15)
    one = total_loss(p, LossWeights(0.3, 0.1)).item()
    two = total_loss(p, LossWeights(0.6, 0.1)).item()
    assert two - one == pytest.approx(0.3 * p.graph.item(), abs=1e-12)
    assert p.values()[0] == p.total.item()


def test_alignment_score():
    rng = np.random.default_rng(0)
    e = unit(rng, 5, 3)
    assert alignment_score(e, e) == pytest.approx(1.0)
    assert alignment_score(e, -e) == pytest.approx(-1.0)
    for seed in range(10):
        r = np.random.default_rng(seed)
        assert abs(alignment_score(unit(r, 1000, 64), unit(r, 1000, 64))) < 0.15


def test_combined_gradient_through_temperature():
    rng = np.random.default_rng(3)
    ev = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    et = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    temp = Temperature.from_scale(3.0)
    m = build_masks(np.array([[0, 1, 2, 4, 4], [1, 0, 1, 4, 4], [2, 1, 0, 4, 4], [4, 4, 4, 0, 1], [4, 4, 4, 1, 0]]), 1)

    def loss():
        a, b = l2_normalize_rows(ev), l2_normalize_rows(et)
        parts = LossParts(clip=clip_infonce(a, b, temp), graph=structural_loss(a, m, temp))
        return total_loss(parts, LossWeights())

    assert grad_check_params(loss, [ev, et, temp.t]) <= 1e-6
