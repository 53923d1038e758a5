import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adprog import tensor as T
from adprog.errors import ConfigurationError, InputError
from adprog.losses import (
    BinaryMetrics,
    FocalLossConfig,
    bce_from_logits,
    bce_loss,
    ce_from_logits,
    confusion_and_metrics,
    cross_entropy,
    focal_from_logits,
    focal_loss,
)


class TestCrossEntropy:
    def test_perfect_prediction_is_zero(self):
        assert cross_entropy([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]).item() == 0.0

    def test_uniform_three_class(self):
        val = cross_entropy([1 / 3] * 3, [0.0, 1.0, 0.0]).item()
        assert val == pytest.approx(math.log(3), abs=1e-12)

    def test_point_nine(self):
        val = cross_entropy([0.9, 0.1], [1.0, 0.0]).item()
        assert val == pytest.approx(-math.log(0.9), abs=1e-12)
        assert val == pytest.approx(0.10536, abs=1e-5)

    def test_invalid_distribution_rejected(self):
        with pytest.raises(InputError):
            cross_entropy([0.9, 0.3], [1.0, 0.0])
        with pytest.raises(InputError):
            cross_entropy([0.5, 0.5], [1.0, 1.0])


class TestFocalLoss:
    def test_gamma_zero_equals_cross_entropy(self):
        rng = np.random.default_rng(17)
        cfg = FocalLossConfig(alpha=1.0, gamma=0.0)
        for _ in range(1000):
            raw = rng.random(3) + 1e-3
            probs = raw / raw.sum()
            onehot = np.zeros(3)
            onehot[rng.integers(3)] = 1.0
            diff = abs(focal_loss(probs, onehot, cfg).item()
                       - cross_entropy(probs, onehot).item())
            assert diff <= 1e-12

    def test_hand_value_at_point_nine(self):
        val = focal_loss([0.9, 0.1], [1.0, 0.0], FocalLossConfig(1.0, 2.0)).item()
        want = 0.01 * -math.log(0.9)
        assert val == pytest.approx(want, abs=1e-12)
        assert val == pytest.approx(1.0536e-3, abs=1e-7)

    def test_certain_prediction_is_zero(self):
        assert focal_loss([1.0, 0.0], [1.0, 0.0]).item() == 0.0

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_focal_never_exceeds_cross_entropy(self, seed):
        rng = np.random.default_rng(seed)
        raw = rng.random(4) + 1e-3
        probs = raw / raw.sum()
        onehot = np.zeros(4)
        onehot[rng.integers(4)] = 1.0
        fl = focal_loss(probs, onehot, FocalLossConfig(1.0, 2.0)).item()
        ce = cross_entropy(probs, onehot).item()
        assert fl <= ce + 1e-15

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            FocalLossConfig(alpha=0.0)
        with pytest.raises(ConfigurationError):
            FocalLossConfig(gamma=-1.0)


class TestBce:
    def test_exact_prediction_is_zero(self):
        assert bce_loss(1.0, 1) .item() == 0.0
        assert bce_loss(0.0, 0).item() == 0.0

    def test_half_is_ln2_either_label(self):
        for y in (0, 1):
            assert bce_loss(0.5, y).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_equals_two_class_cross_entropy(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            p = float(rng.uniform(0.01, 0.99))
            y = int(rng.integers(2))
            onehot = np.array([1.0 - y, float(y)])
            ce = cross_entropy([1 - p, p], onehot).item()
            assert bce_loss(p, y).item() == pytest.approx(ce, abs=1e-12)


class TestLossGradients:
    """Gradients w.r.t. logits vs finite differences (rel err <= 1e-6)."""

    @pytest.mark.parametrize("trial", range(10))
    def test_softmax_cross_entropy_chain(self, trial):
        rng = np.random.default_rng(100 + trial)
        logits = T.Tensor(rng.standard_normal(3), requires_grad=True)
        onehot = np.zeros(3)
        onehot[rng.integers(3)] = 1.0

        def f():
            return cross_entropy(T.softmax(logits, axis=0), onehot)

        assert T.grad_check(f, {"logits": logits}) <= 1e-6

    @pytest.mark.parametrize("trial", range(10))
    def test_focal_from_logits(self, trial):
        rng = np.random.default_rng(200 + trial)
        logits = T.Tensor(rng.standard_normal((4, 1)), requires_grad=True)
        labels = rng.integers(2, size=4)
        assert T.grad_check(lambda: focal_from_logits(logits, labels),
                            {"logits": logits}) <= 1e-6

    @pytest.mark.parametrize("trial", range(10))
    def test_bce_from_logits(self, trial):
        rng = np.random.default_rng(300 + trial)
        logits = T.Tensor(rng.standard_normal((4, 1)), requires_grad=True)
        labels = rng.integers(2, size=4)
        assert T.grad_check(lambda: bce_from_logits(logits, labels),
                            {"logits": logits}) <= 1e-6

    def test_ce_from_logits_gradient(self):
        rng = np.random.default_rng(400)
        logits = T.Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        labels = rng.integers(3, size=5)
        assert T.grad_check(lambda: ce_from_logits(logits, labels),
                            {"logits": logits}) <= 1e-6


class TestMetrics:
    def test_hand_confusion(self):
        preds = [1] * 8 + [1] * 2 + [0] * 1 + [0] * 9
        labels = [1] * 8 + [0] * 2 + [1] * 1 + [0] * 9
        cm, m = confusion_and_metrics(preds, labels)
        assert (cm.tp, cm.fp, cm.fn, cm.tn) == (8, 2, 1, 9)
        assert m.accuracy == pytest.approx(0.85)
        assert m.precision == pytest.approx(0.8)
        assert m.recall == pytest.approx(8 / 9)
        assert m.f1 == pytest.approx(0.8421, abs=1e-4)

    def test_all_correct(self):
        cm, m = confusion_and_metrics([0, 1, 1, 0], [0, 1, 1, 0])
        assert cm.total == 4
        assert m.accuracy == m.precision == m.recall == m.f1 == 1.0

    def test_undefined_precision_flagged_not_nan(self):
        cm, m = confusion_and_metrics([0, 0, 0], [1, 0, 1])
        assert m.precision is None
        assert m.recall == 0.0
        assert m.f1 is None
        assert m.accuracy == pytest.approx(1 / 3)

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            confusion_and_metrics([1, 0], [1])

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            confusion_and_metrics([], [])

    def test_reported_target_profile_is_representable(self):
        # A confusion matrix lands within 0.1pp of the published headline
        # profile, and its F1 is the harmonic mean of its own prec/rec.
        cm, m = confusion_and_metrics(
            [1] * 406 + [1] * 26 + [0] * 14 + [0] * 362,
            [1] * 406 + [0] * 26 + [1] * 14 + [0] * 362,
        )
        assert m.accuracy == pytest.approx(0.9505, abs=1e-3)
        assert m.precision == pytest.approx(0.9398, abs=1e-3)
        assert m.recall == pytest.approx(0.9666, abs=1e-3)
        assert m.f1 == pytest.approx(0.9530, abs=1e-3)

    def test_f1_is_harmonic_mean_of_quoted_precision_recall(self):
        prec, rec = 0.9398, 0.9666
        f1 = 2 * prec * rec / (prec + rec)
        assert f1 == pytest.approx(0.9530, abs=5e-5)

    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)),
                    min_size=1, max_size=60))
    @settings(max_examples=100, deadline=None)
    def test_f1_harmonic_identity(self, pairs):
        preds = [p for p, _ in pairs]
        labels = [l for _, l in pairs]
        _, m = confusion_and_metrics(preds, labels)
        if m.f1 is not None:
            want = 2 * m.precision * m.recall / (m.precision + m.recall)
            assert abs(m.f1 - want) <= 1e-12
