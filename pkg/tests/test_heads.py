"""Tests for the implicit background head: compose, backward, closed form."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from softguard.heads import (
    BACKGROUND_INDEX,
    HeadKind,
    apply_head,
    apply_head_field,
    bg_membership_closed_form,
    implicit_backward,
    implicit_backward_field,
    implicit_compose,
    implicit_compose_field,
)
from softguard.numerics import finite_diff_grad, logsumexp, softmax


class TestImplicitCompose:
    def test_single_zero(self):
        out = implicit_compose([0.0])
        npt.assert_allclose(out, [0.0, 0.0], atol=0)
        npt.assert_allclose(softmax(out), [0.5, 0.5], rtol=1e-15)

    def test_log3(self):
        out = implicit_compose([math.log(3.0)])
        npt.assert_allclose(out, [-math.log(3.0), math.log(3.0)], rtol=1e-15)
        npt.assert_allclose(softmax(out), [0.1, 0.9], atol=1e-12)

    def test_background_slot_is_negated_lse(self):
        rng = np.random.default_rng(31)
        for _ in range(500):
            v = rng.normal(0.0, 20.0, size=int(rng.integers(1, 9)))
            out = implicit_compose(v)
            assert out.shape == (v.size + 1,)
            npt.assert_allclose(out[BACKGROUND_INDEX], -logsumexp(v), rtol=1e-12)
            npt.assert_allclose(out[1:], v, atol=0)

    def test_all_negative_inputs_can_still_lose_argmax(self):
        # With every class logit below zero the background slot is not
        # guaranteed to win: -LSE([-0.1, -0.1]) is about -0.593, smaller
        # than both inputs, so a real class takes the argmax.
        out = implicit_compose([-0.1, -0.1])
        npt.assert_allclose(
            out, [-0.5931471805599453, -0.1, -0.1], atol=1e-15
        )
        assert int(np.argmax(out)) != BACKGROUND_INDEX

    def test_two_class_composite_max_is_abs(self):
        rng = np.random.default_rng(33)
        for x in rng.normal(0.0, 10.0, size=200):
            out = implicit_compose([x])
            npt.assert_allclose(out.max(), abs(x), atol=0)
            assert out.max() >= 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            implicit_compose([])


class TestImplicitBackward:
    def test_single_dim_example(self):
        npt.assert_allclose(implicit_backward([0.0], [1.0, 0.0]), [-1.0], atol=0)

    def test_zero_upstream(self):
        npt.assert_allclose(
            implicit_backward([1.0, 2.0], [0.0, 0.0, 0.0]), [0.0, 0.0], atol=0
        )

    def test_passthrough_when_background_grad_zero(self):
        v = [0.3, -1.2, 4.0]
        g = [0.0, 1.5, -2.0, 0.25]
        npt.assert_allclose(implicit_backward(v, g), g[1:], atol=0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(41)
        for dim in (1, 2, 5, 20):
            for _ in range(100):
                v = rng.normal(0.0, 3.0, size=dim)
                g = rng.normal(0.0, 2.0, size=dim + 1)

                def scalar_through_head(vv):
                    return float(np.dot(g, implicit_compose(vv)))

                analytic = implicit_backward(v, g)
                numeric = finite_diff_grad(scalar_through_head, v, h=1e-4)
                npt.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-8)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            implicit_backward([0.0, 1.0], [1.0, 0.0])


class TestClosedFormBackground:
    def test_examples(self):
        assert bg_membership_closed_form([0.0]) == pytest.approx(0.5, abs=1e-15)
        assert bg_membership_closed_form([math.log(3.0)]) == pytest.approx(
            0.1, abs=1e-12
        )
        assert bg_membership_closed_form([0.0, 0.0]) == pytest.approx(0.2, abs=1e-15)

    def test_agrees_with_softmax_path(self):
        rng = np.random.default_rng(51)
        for _ in range(2000):
            v = rng.uniform(-50.0, 50.0, size=int(rng.integers(1, 17)))
            via_softmax = softmax(implicit_compose(v))[BACKGROUND_INDEX]
            assert bg_membership_closed_form(v) == pytest.approx(
                via_softmax, abs=1e-12
            )

    def test_limits(self):
        # All class evidence pushed down => background certainty; any one
        # class pushed up => background vanishes.  Checked at growing
        # scales (>= / <= because float64 saturates at exactly 1 and 0).
        for t in (10.0, 100.0, 500.0):
            low = bg_membership_closed_form([-t, -t, -t])
            assert low >= bg_membership_closed_form([-t / 2.0, -t / 2.0, -t / 2.0])
            high = bg_membership_closed_form([t, 0.0, 0.0])
            assert high <= bg_membership_closed_form([t / 2.0, 0.0, 0.0])
        assert bg_membership_closed_form([-500.0] * 3) == pytest.approx(1.0, abs=1e-9)
        assert bg_membership_closed_form([500.0, 0.0, 0.0]) == pytest.approx(
            0.0, abs=1e-9
        )

    def test_monotone_in_each_component(self):
        rng = np.random.default_rng(52)
        for _ in range(200):
            v = rng.normal(0.0, 5.0, size=4)
            base = bg_membership_closed_form(v)
            i = int(rng.integers(0, 4))
            bumped = v.copy()
            bumped[i] += 0.5
            assert bg_membership_closed_form(bumped) < base


class TestArgmaxAndConfidenceRestrictions:
    """Structural consequences of deriving the background score from -LSE."""

    def test_fuzzed_invariants(self):
        rng = np.random.default_rng(61)
        for _ in range(100_000):
            dim = int(rng.integers(1, 65))
            v = rng.uniform(-50.0, 50.0, size=dim)
            out = implicit_compose(v)
            probs = softmax(out)
            # Background can only win the argmax if every class logit is
            # strictly negative.
            if int(np.argmax(out)) == BACKGROUND_INDEX:
                assert v.max() < 0.0
            # Majority background confidence likewise requires all-negative
            # class logits.
            if probs[BACKGROUND_INDEX] > 0.5:
                assert (v < 0.0).all()
            assert probs[BACKGROUND_INDEX] == pytest.approx(
                bg_membership_closed_form(v), abs=1e-12
            )

    def test_positive_component_caps_background(self):
        rng = np.random.default_rng(62)
        for _ in range(1000):
            v = rng.uniform(-50.0, 50.0, size=int(rng.integers(1, 9)))
            v[int(rng.integers(0, v.size))] = abs(v[0]) + 0.1
            assert bg_membership_closed_form(v) < 0.5


class TestApplyHead:
    def test_explicit_is_identity(self):
        v = np.array([1.0, -2.0, 0.5])
        npt.assert_allclose(apply_head(HeadKind.EXPLICIT, v), v, atol=0)

    def test_implicit_composes(self):
        v = np.array([1.0, -2.0])
        npt.assert_allclose(
            apply_head(HeadKind.IMPLICIT, v), implicit_compose(v), atol=0
        )

    def test_explicit_needs_two_slots(self):
        with pytest.raises(ValueError):
            apply_head(HeadKind.EXPLICIT, [0.5])

    def test_implicit_needs_one_class(self):
        with pytest.raises(ValueError):
            apply_head(HeadKind.IMPLICIT, [])

    def test_parse(self):
        assert HeadKind.parse("explicit") is HeadKind.EXPLICIT
        assert HeadKind.parse("implicit") is HeadKind.IMPLICIT
        with pytest.raises(ValueError):
            HeadKind.parse("both")

    def test_out_channels(self):
        assert HeadKind.EXPLICIT.out_channels(5) == 5
        assert HeadKind.IMPLICIT.out_channels(5) == 4


class TestFieldVariants:
    def test_compose_matches_per_pixel(self):
        rng = np.random.default_rng(71)
        raw = rng.normal(0.0, 10.0, size=(4, 3, 5))
        out = implicit_compose_field(raw, axis=0)
        assert out.shape == (5, 3, 5)
        for i in range(3):
            for j in range(5):
                npt.assert_allclose(
                    out[:, i, j], implicit_compose(raw[:, i, j]), rtol=1e-14
                )

    def test_backward_matches_per_pixel(self):
        rng = np.random.default_rng(72)
        raw = rng.normal(0.0, 5.0, size=(4, 2, 3))
        up = rng.normal(0.0, 2.0, size=(5, 2, 3))
        out = implicit_backward_field(raw, up, axis=0)
        assert out.shape == raw.shape
        for i in range(2):
            for j in range(3):
                npt.assert_allclose(
                    out[:, i, j],
                    implicit_backward(raw[:, i, j], up[:, i, j]),
                    rtol=1e-12,
                    atol=1e-14,
                )

    def test_apply_head_field_batched(self):
        rng = np.random.default_rng(73)
        raw = rng.normal(0.0, 5.0, size=(2, 3, 4, 4))
        expl = apply_head_field(HeadKind.EXPLICIT, raw, axis=1)
        npt.assert_allclose(expl, raw, atol=0)
        impl = apply_head_field(HeadKind.IMPLICIT, raw, axis=1)
        assert impl.shape == (2, 4, 4, 4)
        npt.assert_allclose(
            impl[0, :, 1, 2], implicit_compose(raw[0, :, 1, 2]), rtol=1e-14
        )
