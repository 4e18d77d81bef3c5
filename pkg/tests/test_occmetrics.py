import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occnav._validation import DomainError, StructuralError
from occnav.occmetrics import (
    LossWeights,
    VectorQuantizer,
    bce,
    bce_grad,
    iou,
    lovasz_hinge,
    occupancy_report,
    tokenizer_loss,
    vq_quantize,
)
from oracles import exhaustive_vq, lovasz_hinge_direct


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        a, b = x.copy(), x.copy()
        a[i] += h
        b[i] -= h
        g[i] = (f(a) - f(b)) / (2 * h)
    return g


def untied_instance(rng, shape=(4, 4), gap=1e-3):
    """Random logits whose hinge errors are distinct and away from the kink."""
    while True:
        y = (rng.random(shape) < 0.4).astype(np.uint8)
        if not y.any():
            continue
        o = rng.normal(scale=1.5, size=shape)
        e = np.sort((1 - o * (2.0 * y - 1)).ravel())
        if np.diff(e).min() > gap and np.abs(e).min() > gap:
            return o, y


def rel_err(a, b):
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-300))


class TestIoU:
    def test_identical(self):
        a = np.random.default_rng(0).random((5, 5)) < 0.5
        assert iou(a, a) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4), np.uint8)
        b = a.copy()
        a[0] = 1
        b[1] = 1
        assert iou(a, b) == 0.0

    def test_superset(self):
        gt = np.zeros((4, 4), np.uint8)
        gt[0] = 1
        pred = gt.copy()
        pred[1] = 1
        assert iou(pred, gt) == 0.5

    def test_both_empty(self):
        assert iou(np.zeros(3), np.zeros(3)) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises((DomainError, StructuralError)):
            iou(np.zeros(3), np.zeros(4))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.random((6, 6)) < 0.3, rng.random((6, 6)) < 0.3
        assert iou(a, b) == iou(b, a)
        assert iou(a, a) == 1.0


class TestBCE:
    def test_zero_logits(self):
        assert bce(np.zeros((3, 3)), np.eye(3)) == pytest.approx(math.log(2))

    def test_saturated(self):
        y = np.eye(4)
        assert bce(np.where(y > 0, 20.0, -20.0), y) < 1e-8

    def test_single(self):
        assert bce([1.0], [1]) == pytest.approx(0.313262, abs=1e-6)

    def test_huge_logits_finite(self):
        assert math.isfinite(bce([1e4, -1e4], [0, 1]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_flip_invariance(self, seed):
        rng = np.random.default_rng(seed)
        o = rng.normal(scale=5, size=(5, 5))
        y = (rng.random((5, 5)) < 0.5).astype(np.uint8)
        assert bce(o, y) == pytest.approx(bce(-o, 1 - y), rel=1e-12)

    def test_grad(self):
        rng = np.random.default_rng(1)
        o = rng.normal(size=(3, 4))
        y = (rng.random((3, 4)) < 0.5).astype(np.uint8)
        assert rel_err(bce_grad(o, y), central_diff(lambda z: bce(z, y), o)) < 1e-6


class TestLovasz:
    def test_margins_met_is_zero(self):
        y = np.eye(4, dtype=np.uint8)
        loss, grad = lovasz_hinge(np.where(y > 0, 1.0, -1.5), y)
        assert loss == 0.0 and not grad.any()

    def test_single_positive(self):
        y = np.zeros((3, 3), np.uint8)
        y[1, 1] = 1
        o = np.full((3, 3), -5.0)
        o[1, 1] = 0.0
        assert lovasz_hinge(o, y)[0] == pytest.approx(1.0)

    def test_no_positives(self):
        loss, grad = lovasz_hinge(np.random.default_rng(0).normal(size=(4, 4)), np.zeros((4, 4)))
        assert loss == 0.0 and not grad.any()

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_matches_direct_set_function(self, seed):
        rng = np.random.default_rng(seed)
        y = (rng.random((4, 4)) < 0.4).astype(np.uint8)
        o = rng.normal(scale=2, size=(4, 4))
        assert lovasz_hinge(o, y)[0] == pytest.approx(lovasz_hinge_direct(o, y), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_gradient(self, seed):
        o, y = untied_instance(np.random.default_rng(seed))
        _, g = lovasz_hinge(o, y)
        assert rel_err(g, central_diff(lambda z: lovasz_hinge(z, y)[0], o)) <= 1e-5

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_zero_iff_margins(self, seed):
        rng = np.random.default_rng(seed)
        y = (rng.random((4, 4)) < 0.5).astype(np.uint8)
        y.flat[0] = 1
        o = rng.normal(scale=2, size=(4, 4))
        loss, _ = lovasz_hinge(o, y)
        margins = o * (2.0 * y - 1)
        assert loss >= 0.0
        assert (loss == 0.0) == bool(np.all(margins >= 1.0))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_piecewise_linear(self, seed):
        o, y = untied_instance(np.random.default_rng(seed))
        loss, g = lovasz_hinge(o, y)
        d = np.random.default_rng(seed + 1).normal(size=o.shape)
        d *= 1e-5 / np.abs(d).max()
        # the step is smaller than half the minimum gap, so the sort order holds
        assert lovasz_hinge(o + d, y)[0] == pytest.approx(loss + float((g * d).sum()), abs=1e-13)


class TestTokenizerLoss:
    def test_zero_weights(self):
        assert tokenizer_loss(0.5, 0.2, 0.1, LossWeights(0, 0, 0)) == 0.0

    def test_sum(self):
        assert tokenizer_loss(0.5, 0.2, 0.1, LossWeights(1, 1, 1)) == pytest.approx(0.8)

    def test_linear(self):
        a = tokenizer_loss(0.5, 0.2, 0.1, LossWeights(1, 2, 3))
        assert tokenizer_loss(0.5, 0.2, 0.1, LossWeights(2, 4, 6)) == pytest.approx(2 * a)

    def test_negative_weight(self):
        with pytest.raises(DomainError):
            LossWeights(-1, 0, 0)


class TestVQ:
    def test_exact_entry(self):
        C = np.random.default_rng(0).normal(size=(6, 4))
        idx, q, commit = vq_quantize(C[3:4], C)
        assert idx[0] == 3 and commit == 0.0 and np.array_equal(q[0], C[3])

    def test_tie_goes_low(self):
        idx, _, _ = vq_quantize([[0.0, 0.0]], [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        assert idx[0] == 0

    def test_empty_codebook(self):
        with pytest.raises(DomainError):
            vq_quantize([[0.0]], np.zeros((0, 1)))

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            vq_quantize([[0.0, 1.0]], [[0.0]])

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_matches_exhaustive_scan(self, seed):
        rng = np.random.default_rng(seed)
        C = rng.normal(size=(16, 5))
        X = rng.normal(size=(100, 5))
        # snap a few onto the lattice of entries so exact ties occur
        X[:10] = np.round(X[:10])
        C[:4] = np.round(C[:4])
        idx, _, commit = vq_quantize(X, C, chunk=7)
        e_idx, e_commit = exhaustive_vq(X, C)
        assert np.array_equal(idx, e_idx)
        assert commit == pytest.approx(e_commit, rel=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.booleans())
    def test_commitment_zero_iff_members(self, seed, members):
        rng = np.random.default_rng(seed)
        C = rng.normal(size=(8, 3))
        X = C[rng.integers(0, 8, 20)]
        if not members:
            X = X.copy()
            X[5] += 0.1
        assert (vq_quantize(X, C)[2] == 0.0) == members

    def test_estimator(self):
        C = np.eye(3)
        vq = VectorQuantizer(codebook=C).fit()
        assert list(vq.predict([[0.9, 0.1, 0.0], [0.0, 0.2, 0.8]])) == [0, 2]
        assert np.array_equal(vq.transform([[0.0, 1.1, 0.0]]), [[0.0, 1.0, 0.0]])
        assert vq.commitment([[1.0, 0.0, 0.0]]) == 0.0


class TestReport:
    def test_hard_prediction(self):
        y = np.eye(4, dtype=np.uint8)
        r = occupancy_report(y, y)
        assert r["iou"] == 1.0 and r["lovasz"] == 0.0
        assert r["bce"] == pytest.approx(bce([1.0], [1]))

    def test_with_logits(self):
        y = np.eye(4, dtype=np.uint8)
        o = np.where(y > 0, 3.0, -3.0)
        r = occupancy_report(None, y, o)
        assert r["iou"] == 1.0 and r["bce"] == pytest.approx(bce(o, y))
