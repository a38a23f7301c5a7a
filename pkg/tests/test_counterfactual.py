"""Fusion, masked assembly, effect algebra, and inference-rule checks."""

import math

import numpy as np
import pytest

from cfmsa import (
    CParams,
    InferenceMode,
    ScoreBundle,
    assemble,
    fuse,
    log_sigmoid,
    predict,
    tie_image,
    tie_joint,
    tie_text,
    total_effect,
)
from conftest import random_bundle

LOG_HALF = -math.log(2)
# log(sigma(2)) by direct arithmetic: sigma(2) = 0.8807970779778823
LOG_SIGMA_2 = math.log(1.0 / (1.0 + math.exp(-2.0)))

MVSA_SINGLE_FREQS = (2683 / 4511, 470 / 4511, 1358 / 4511)


class TestFuse:
    def test_all_zero_inputs(self):
        out = fuse(np.zeros(3), np.zeros(3), np.zeros(3))
        np.testing.assert_allclose(out, np.full(3, LOG_HALF), atol=1e-15)

    def test_monotone_argmax(self, rng):
        for _ in range(1000):
            a, b, c = rng.standard_normal((3, 4)) * 3
            assert np.argmax(fuse(a, b, c)) == np.argmax(a + b + c)

    def test_known_value(self):
        out = fuse(np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0]))
        np.testing.assert_allclose(out, [LOG_SIGMA_2, LOG_SIGMA_2], atol=1e-15)
        assert out[0] == pytest.approx(-0.126928, abs=1e-6)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            fuse(np.zeros(2), np.zeros(3), np.zeros(3))

    def test_strictly_negative(self, rng):
        out = fuse(*(rng.uniform(-30, 30, size=(3, 5))))
        assert np.all(out < 0)


class TestCParams:
    def test_modes_and_learnability(self):
        assert CParams.make("random", 3, seed=1).learnable is False
        assert CParams.make("uniform", 3).learnable is True
        assert CParams.make("nonuniform", 3).learnable is True
        freqs = np.array(MVSA_SINGLE_FREQS)
        assert CParams.make("prior", 3, class_freqs=freqs).learnable is False

    def test_uniform_stores_single_scalar(self):
        c = CParams.make("uniform", 3)
        assert c.theta.shape == (1,)
        c.set_vector(np.array([0.7]))
        for vec in (c.c1, c.c2, c.c3, c.c4):
            np.testing.assert_array_equal(vec, np.full(3, 0.7))

    def test_random_is_seeded(self):
        a = CParams.make("random", 3, seed=5)
        b = CParams.make("random", 3, seed=5)
        np.testing.assert_array_equal(a.theta, b.theta)

    def test_prior_matches_log_frequency_oracle(self):
        # Corpus counts 2683/470/1358 of 4511; c rows are log(count/total).
        c = CParams.make("prior", 3, class_freqs=np.array(MVSA_SINGLE_FREQS))
        expected = np.log(MVSA_SINGLE_FREQS)
        for vec in (c.c1, c.c2, c.c3, c.c4):
            np.testing.assert_allclose(vec, expected, atol=1e-15)
        # the frequencies agree with their six-decimal approximations
        np.testing.assert_allclose(
            np.exp(expected), [0.594769, 0.104190, 0.301042], atol=1e-6
        )

    def test_prior_requires_frequencies(self):
        with pytest.raises(ValueError):
            CParams.make("prior", 3)
        with pytest.raises(ValueError):
            CParams.make("prior", 3, class_freqs=np.array([1.0, 0.0, 0.0]))

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            CParams.make("gaussian", 3)

    def test_collect_grad_uniform_sums_everything(self, rng):
        c = CParams.make("uniform", 3)
        gs = rng.standard_normal((4, 3))
        got = c.collect_grad(*gs)
        assert got.shape == (1,)
        assert got[0] == pytest.approx(gs.sum(), rel=1e-12)

    def test_collect_grad_nonuniform_stacks(self, rng):
        c = CParams.make("nonuniform", 3)
        gs = rng.standard_normal((4, 3))
        np.testing.assert_array_equal(c.collect_grad(*gs), gs.ravel())


class TestAssemble:
    def test_all_zero_everything(self):
        c = CParams.make("nonuniform", 3)
        b = assemble(np.zeros(3), np.zeros(3), np.zeros(3), c)
        for arr in (b.fused_full, b.fused_text_masked, b.fused_image_masked):
            np.testing.assert_allclose(arr, np.full(3, LOG_HALF), atol=1e-15)

    def test_text_masked_independent_of_image_and_joint(self, rng):
        c = CParams.make("random", 3, seed=0)
        z_t = rng.standard_normal(3)
        before = assemble(z_t, rng.standard_normal(3), rng.standard_normal(3), c)
        after = assemble(z_t, rng.standard_normal(3) * 9, rng.standard_normal(3) * 9, c)
        np.testing.assert_array_equal(before.fused_text_masked, after.fused_text_masked)

    def test_image_masked_independent_of_text_and_joint(self, rng):
        c = CParams.make("random", 3, seed=0)
        z_i = rng.standard_normal(3)
        before = assemble(rng.standard_normal(3), z_i, rng.standard_normal(3), c)
        after = assemble(rng.standard_normal(3) * 9, z_i, rng.standard_normal(3) * 9, c)
        np.testing.assert_array_equal(before.fused_image_masked, after.fused_image_masked)

    def test_masked_formulas(self, rng):
        c = CParams.make("random", 3, seed=3)
        z_t, z_i, z_k = rng.standard_normal((3, 3))
        b = assemble(z_t, z_i, z_k, c)
        np.testing.assert_allclose(b.fused_text_masked, fuse(z_t, c.c2, c.c3), atol=1e-15)
        np.testing.assert_allclose(b.fused_image_masked, fuse(c.c1, z_i, c.c4), atol=1e-15)
        np.testing.assert_allclose(b.fused_all_masked, fuse(c.c1, c.c2, c.c3), atol=1e-15)

    def test_class_count_mismatch(self, rng):
        c = CParams.make("nonuniform", 3)
        with pytest.raises(ValueError):
            assemble(np.zeros(2), np.zeros(2), np.zeros(2), c)


class TestEffects:
    def test_total_effect_zero_when_branches_equal_constants(self):
        c = CParams.make("random", 3, seed=2)
        b = assemble(c.c1, c.c2, c.c3, c)
        np.testing.assert_allclose(total_effect(b), np.zeros(3), atol=1e-15)

    def test_te_minus_nde_equals_tie(self, rng):
        # The all-masked reference cancels exactly in the subtraction.
        for _ in range(1000):
            b = random_bundle(rng)
            nde_text = b.fused_text_masked - b.fused_all_masked
            np.testing.assert_allclose(
                total_effect(b) - nde_text, tie_text(b), atol=1e-12
            )

    def test_tie_joint_is_sum_of_parts(self, rng):
        for _ in range(1000):
            b = random_bundle(rng)
            np.testing.assert_allclose(
                tie_joint(b), tie_text(b) + tie_image(b), atol=1e-12
            )

    def test_effects_match_brute_force_recomputation(self, rng):
        c = CParams.make("random", 3, seed=8)
        z_t, z_i, z_k = rng.standard_normal((3, 3)) * 2
        b = assemble(z_t, z_i, z_k, c)
        full = fuse(z_t, z_i, z_k)
        tm = fuse(z_t, c.c2, c.c3)
        im = fuse(c.c1, z_i, c.c4)
        np.testing.assert_allclose(tie_text(b), full - tm, atol=1e-15)
        np.testing.assert_allclose(tie_image(b), full - im, atol=1e-15)
        np.testing.assert_allclose(tie_joint(b), 2 * full - tm - im, atol=1e-15)
        np.testing.assert_allclose(total_effect(b), full - fuse(c.c1, c.c2, c.c3), atol=1e-15)

    def test_zero_when_fused_terms_coincide(self):
        vec = log_sigmoid(np.array([0.3, -0.2, 0.1]))
        b = ScoreBundle(np.zeros(3), np.zeros(3), np.zeros(3), vec, vec, vec, vec)
        np.testing.assert_array_equal(tie_text(b), np.zeros(3))
        np.testing.assert_array_equal(tie_image(b), np.zeros(3))
        np.testing.assert_array_equal(tie_joint(b), np.zeros(3))

    def test_tie_image_by_role_swap_symmetry(self, rng):
        c = CParams.make("nonuniform", 3)
        c.set_vector(rng.standard_normal(12))
        z_t, z_i, z_k = rng.standard_normal((3, 3))
        b = assemble(z_t, z_i, z_k, c)
        swapped = CParams(
            "nonuniform", 3, c.theta[[1, 0, 3, 2]].copy(), learnable=True
        )
        b_swapped = assemble(z_i, z_t, z_k, swapped)
        np.testing.assert_allclose(tie_image(b), tie_text(b_swapped), atol=1e-14)

    def test_constant_text_shift_moves_tie_but_not_argmax(self, rng):
        # Class-uniform z_t with a scalar-uniform c: both fused terms shift
        # identically across classes, so the argmax is stable.
        c = CParams.make("uniform", 3)
        z_i, z_k = rng.standard_normal((2, 3))
        base = assemble(np.full(3, 0.4), z_i, z_k, c)
        shifted = assemble(np.full(3, 0.4 + 1.3), z_i, z_k, c)
        assert not np.allclose(tie_text(base), tie_text(shifted))
        assert np.argmax(tie_text(base)) == np.argmax(tie_text(shifted))


class TestPredict:
    def test_baseline_monotone(self):
        c = CParams.make("uniform", 3)
        b = assemble(np.array([3.0, 1.0, 0.0]), np.zeros(3), np.zeros(3), c)
        assert predict(b, InferenceMode.TE_BASELINE) == 0

    def test_uniform_text_keeps_baseline_decision(self, rng):
        c = CParams.make("uniform", 3)
        b = assemble(np.full(3, 0.7), rng.standard_normal(3), rng.standard_normal(3), c)
        assert predict(b, InferenceMode.TIE_TEXT) == predict(b, InferenceMode.TE_BASELINE)

    def test_adversarial_text_bias_flips_under_tie(self):
        # Direct arithmetic oracle: fused argmax follows the biased text
        # branch (tie at 4 broken to index 0), while the text-debiased rule
        # picks the class the other branches support.
        c = CParams.make("uniform", 3)
        b = assemble(
            np.array([4.0, 0.0, 0.0]),
            np.array([0.0, 2.0, 0.0]),
            np.array([0.0, 2.0, 0.0]),
            c,
        )
        assert predict(b, InferenceMode.TE_BASELINE) == 0
        assert predict(b, InferenceMode.TIE_TEXT) == 1

    def test_tie_break_lowest_index(self):
        c = CParams.make("uniform", 2)
        b = assemble(np.zeros(2), np.zeros(2), np.zeros(2), c)
        assert predict(b, InferenceMode.TE_BASELINE) == 0

    def test_batched_predict(self, rng):
        c = CParams.make("nonuniform", 3)
        z = rng.standard_normal((3, 5, 3))
        b = assemble(z[0], z[1], z[2], c)
        out = predict(b, InferenceMode.TIE_JOINT)
        assert out.shape == (5,)

    def test_mode_enum_is_closed(self):
        assert {m.value for m in InferenceMode} == {"te", "tie-text", "tie-image", "tie-joint"}
        with pytest.raises(ValueError):
            InferenceMode("tie-audio")
