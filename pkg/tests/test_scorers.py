import numpy as np
import pytest

from launderkit import (
    FixtureConfig,
    ImageBuffer,
    LinearPatchScorer,
    Patch,
    SamplerConfig,
    calibrate,
    gen_laundered,
    gen_pristine,
    roc_auc,
    sample_patches,
)
from launderkit.metrics import ScoredItem


def fixed_scorer(weights, bias):
    scorer = LinearPatchScorer()
    scorer.weights_ = np.asarray(weights, dtype=np.float64)
    scorer.bias_ = float(bias)
    return scorer


def random_patch(rng, size=96):
    arr = np.clip(0.5 + 0.08 * rng.standard_normal((size, size, 3)), 0, 1)
    return Patch(ImageBuffer(arr), (0, 0))


def fixture_patches(gen, cfg, indices, per_image):
    patches = []
    for i in indices:
        patches.extend(
            sample_patches(gen(cfg, i), SamplerConfig(per_image, 96, 1000 + i))
        )
    return patches


class TestScorePatch:
    def test_constant_scorer(self, rng):
        scorer = fixed_scorer([0, 0, 0], -1.0)
        for _ in range(3):
            assert scorer.score_patch(random_patch(rng)) == -1.0

    def test_linear_in_features(self, rng):
        scorer = fixed_scorer([1.0, 0.0, 0.0], -3.0)
        patch = random_patch(rng)
        f = scorer.features([patch])[0]
        assert scorer.score_patch(patch) == pytest.approx(f[0] - 3.0)
        # a patch whose peak feature reaches 3 scores nonnegative
        assert scorer.score_features(np.array([[3.0, 0.2, 0.5]]))[0] >= 0.0

    def test_deterministic(self, rng):
        scorer = fixed_scorer([1.0, -5.0, 2.0], 0.25)
        patch = random_patch(rng)
        assert scorer.score_patch(patch) == scorer.score_patch(patch)

    def test_unfitted_raises(self, rng):
        with pytest.raises(ValueError, match="not fitted"):
            LinearPatchScorer().score_patch(random_patch(rng))

    def test_perturbation_stability(self, rng):
        # empirical local sensitivity bound from the build-time sweep
        # (max measured ratio 0.95 per unit L2 pixel change)
        cfg = FixtureConfig(count_per_class=3, size=256, seed=42)
        scorer = fixed_scorer([1.0, -50.0, -30.0], 20.0)
        for i in range(3):
            patch = sample_patches(gen_pristine(cfg, i), SamplerConfig(1, 96, i))[0]
            s0 = scorer.score_patch(patch)
            for eps in (1e-4, 1e-3, 1e-2):
                delta = rng.standard_normal(patch.pixels.pixels.shape) * eps
                bumped = Patch(
                    ImageBuffer(np.clip(patch.pixels.pixels + delta, 0, 1)),
                    patch.origin,
                )
                ratio = abs(scorer.score_patch(bumped) - s0) / np.linalg.norm(delta)
                assert ratio <= 3.0


class TestCalibrate:
    def synthetic_sets(self, rng, mu_pos, mu_neg, n=40, spread=0.05):
        pos = mu_pos + spread * rng.standard_normal((n, 3))
        neg = mu_neg + spread * rng.standard_normal((n, 3))
        return pos, neg

    def test_separable_single_feature(self, rng):
        pos, neg = self.synthetic_sets(rng, [4.0, 0.5, 0.5], [1.0, 0.5, 0.5], n=400)
        scorer = LinearPatchScorer()
        scorer._fit_features(pos, neg)
        w = np.abs(scorer.weights_)
        assert w[0] > 5 * w[1] and w[0] > 5 * w[2]
        assert scorer.score_features(pos).mean() > 0
        assert scorer.score_features(neg).mean() < 0

    def test_identical_distributions_near_zero(self, rng):
        pos, neg = self.synthetic_sets(rng, [1, 1, 1], [1, 1, 1], n=400)
        scorer = LinearPatchScorer()
        scorer._fit_features(pos, neg)
        items = [ScoredItem(s, True) for s in scorer.score_features(pos)]
        items += [ScoredItem(s, False) for s in scorer.score_features(neg)]
        assert 0.3 <= roc_auc(items) <= 0.7
        all_scores = scorer.score_features(np.vstack([pos, neg]))
        assert abs(all_scores.mean()) < 3 * all_scores.std() / np.sqrt(800) + 0.05

    def test_sign_convention(self, rng):
        pos, neg = self.synthetic_sets(rng, [2.5, 0.1, 0.3], [1.5, 0.3, 0.6])
        scorer = LinearPatchScorer()
        scorer._fit_features(pos, neg)
        assert scorer.score_features(pos).mean() > 0 > scorer.score_features(neg).mean()

    def test_scaling_preserves_signs(self, rng):
        pos, neg = self.synthetic_sets(rng, [2.0, 0.2, 0.8], [1.2, 0.4, 0.4])
        a = LinearPatchScorer()
        a._fit_features(pos, neg)
        b = LinearPatchScorer()
        b._fit_features(pos * 12.5, neg * 12.5)
        signs_a = np.sign(a.score_features(np.vstack([pos, neg])))
        signs_b = np.sign(b.score_features(np.vstack([pos, neg]) * 12.5))
        assert np.array_equal(signs_a, signs_b)

    def test_min_patches_enforced(self, rng):
        patches = [random_patch(rng, 96) for _ in range(12)]
        with pytest.raises(ValueError, match="at least 10"):
            LinearPatchScorer().fit(patches, [True] * 9 + [False] * 3)

    def test_degenerate_constant_features(self):
        pos = np.tile([1.0, 0.0, 0.0], (15, 1))
        neg = np.tile([1.0, 0.0, 0.0], (15, 1))
        with pytest.raises(ValueError, match="degenerate calibration set"):
            LinearPatchScorer()._fit_features(pos, neg)

    def test_fit_on_real_patches(self, rng):
        cfg = FixtureConfig(count_per_class=6, size=256, seed=31)
        pos = fixture_patches(gen_laundered, cfg, range(3), 8)
        neg = fixture_patches(gen_pristine, cfg, range(3), 8)
        scorer = calibrate(pos, neg)
        assert scorer.decision_function(pos).mean() > 0
        assert scorer.decision_function(neg).mean() < 0

    def test_heldout_patch_auc(self):
        # pristine vs laundered transfers to unseen fixtures
        cfg = FixtureConfig(count_per_class=12, size=256, seed=31)
        scorer = calibrate(
            fixture_patches(gen_laundered, cfg, range(6), 8),
            fixture_patches(gen_pristine, cfg, range(6), 8),
        )
        held_pos = fixture_patches(gen_laundered, cfg, range(6, 12), 8)
        held_neg = fixture_patches(gen_pristine, cfg, range(6, 12), 8)
        items = [ScoredItem(s, True) for s in scorer.decision_function(held_pos)]
        items += [ScoredItem(s, False) for s in scorer.decision_function(held_neg)]
        assert roc_auc(items) >= 0.9


class TestSerialization:
    def test_round_trip(self, rng):
        pos = [2.0, 0.2, 0.8] + 0.05 * rng.standard_normal((20, 3))
        neg = [1.0, 0.4, 0.4] + 0.05 * rng.standard_normal((20, 3))
        scorer = LinearPatchScorer(denoiser="gaussian", sigma=0.8, factor=4)
        scorer._fit_features(pos, neg)
        clone = LinearPatchScorer.from_dict(scorer.to_dict())
        assert clone.feature_params == scorer.feature_params
        f = rng.random((5, 3))
        assert np.allclose(clone.score_features(f), scorer.score_features(f))

    def test_get_set_params(self):
        scorer = LinearPatchScorer(denoiser="gaussian", sigma=2.0, factor=4)
        params = scorer.get_params()
        assert params == {"denoiser": "gaussian", "sigma": 2.0, "factor": 4}
        scorer.set_params(factor=16)
        assert scorer.factor == 16
        with pytest.raises(ValueError, match="invalid parameter"):
            scorer.set_params(nope=1)
