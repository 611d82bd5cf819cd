import numpy as np
import pytest

from errors import ConfigurationError, UndefinedMetricError
from synthesis.corpus import FeatureSequence, transpose_clip
from synthesis.reward import (
    RewardBundle,
    aggregate_reward,
    content_reward,
    fpc,
    group_advantage,
    melody_reward,
    score_sample,
    speaker_similarity_stub,
    wer,
)


def levenshtein(ref, hyp):
    """Row-by-row edit distance, written independently of the production backtrace."""
    previous = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        current = [i]
        for j, h in enumerate(hyp, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (r != h)))
        previous = current
    return previous[-1]


class TestWer:
    def test_substitution_and_deletion(self):
        result = wer([1, 2, 3, 4], [1, 9, 3])
        assert result.wer == 0.5
        assert (result.substitutions, result.deletions, result.insertions) == (1, 1, 0)

    def test_insertions_exceed_one(self):
        result = wer([1], [1, 2, 3])
        assert result.wer == 2.0
        assert result.insertions == 2

    def test_identical(self):
        assert wer([3, 1, 2], [3, 1, 2]).wer == 0.0

    def test_empty_hypothesis(self):
        result = wer([1, 2, 3], [])
        assert result.wer == 1.0
        assert result.deletions == 3

    def test_empty_reference(self):
        with pytest.raises(UndefinedMetricError):
            wer([], [1])

    def test_matches_independent_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            ref = rng.integers(0, 8, rng.integers(1, 21)).tolist()
            hyp = rng.integers(0, 8, rng.integers(0, 21)).tolist()
            result = wer(ref, hyp)
            assert result.errors == levenshtein(ref, hyp)
            assert result.wer == result.errors / len(ref)


class TestContentReward:
    @pytest.mark.parametrize("value, expected", [(0.0, 1.0), (0.5, 0.5), (2.0, -1.0)])
    def test_examples(self, value, expected):
        assert content_reward(value) == expected

    def test_complements_wer(self):
        rng = np.random.default_rng(1)
        for value in rng.uniform(0, 3, 200):
            assert content_reward(value) + value == pytest.approx(1.0, abs=1e-15)

    def test_negative_wer(self):
        with pytest.raises(ConfigurationError):
            content_reward(-0.1)


class TestMelodyReward:
    def test_hand_fixture(self):
        assert melody_reward([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)

    def test_transposed_contour(self):
        target = np.array([0, 12, 12, 15, 0, 0, 20, 20, 18, 0])
        up = np.where(target > 0, target + 5, 0)
        assert melody_reward(up, target) == pytest.approx(1.0, abs=1e-12)

    def test_positive_affine_invariance(self):
        rng = np.random.default_rng(4)
        g = rng.uniform(1, 40, 50)
        t = rng.uniform(1, 40, 50)
        base = melody_reward(g, t)
        assert melody_reward(3.0 * g + 7.0, t) == pytest.approx(base, abs=1e-9)

    def test_only_jointly_voiced_frames_count(self):
        g = [1, 2, 3, 4, 0, 30]
        t = [1, 3, 2, 4, 25, 0]
        assert melody_reward(g, t) == pytest.approx(0.8, abs=1e-12)

    def test_single_voiced_frame(self):
        with pytest.raises(UndefinedMetricError):
            melody_reward([0, 5, 0], [0, 7, 0])

    def test_constant_contour(self):
        with pytest.raises(UndefinedMetricError):
            melody_reward([5, 5, 5, 5], [1, 2, 3, 4])

    def test_fpc_is_none_when_undefined(self):
        assert fpc([0, 0, 0], [1, 2, 3]) is None
        assert fpc([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)

    def test_different_lengths_are_resampled(self):
        t = np.arange(1, 11, dtype=float)
        g = np.arange(1, 21, dtype=float)
        assert melody_reward(g, t) == pytest.approx(1.0, abs=1e-12)


class TestAggregate:
    def test_weighted_sum(self):
        assert aggregate_reward({"con": 0.5, "mel": 0.8}, {"con": 1, "mel": 1}) == pytest.approx(1.3)
        assert aggregate_reward({"con": 0.5, "mel": 0.8}, {"con": 1, "mel": 0}) == pytest.approx(0.5)

    def test_missing_weight(self):
        with pytest.raises(ConfigurationError):
            aggregate_reward({"con": 0.5, "mel": 0.8}, {"con": 1})

    def test_bundle_advantage(self):
        bundle = RewardBundle(r_con=0.5, r_mel=0.2).with_advantage(1.5)
        assert bundle.advantage == 1.5
        assert bundle.parts == {"con": 0.5, "mel": 0.2}


class TestGroupAdvantage:
    def test_three_point(self):
        adv = group_advantage([0.2, 0.5, 0.8])
        np.testing.assert_allclose(adv, [-1.2247449, 0.0, 1.2247449], atol=1e-6)

    def test_two_point(self):
        np.testing.assert_allclose(group_advantage([1.0, 3.0]), [-1.0, 1.0], atol=1e-6)

    def test_equal_rewards(self):
        assert group_advantage([0.4] * 8) == [0.0] * 8

    def test_mean_zero(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            assert abs(sum(group_advantage(rng.normal(size=8)))) < 1e-9

    def test_shift_and_scale_invariance(self):
        rng = np.random.default_rng(3)
        r = rng.normal(size=8)
        np.testing.assert_allclose(group_advantage(2.5 * r + 4.0), group_advantage(r), atol=1e-6)

    def test_group_too_small(self):
        with pytest.raises(ConfigurationError):
            group_advantage([1.0])


class TestScoreSample:
    def test_ground_truth_scores_perfectly(self, corpus_config, clips):
        for clip in clips:
            bundle, counts, raw_fpc = score_sample(clip.features, clip, corpus_config)
            assert counts.errors == 0
            assert bundle.r_con == 1.0
            if raw_fpc is not None:
                assert bundle.r_mel == pytest.approx(1.0)
            assert bundle.total == pytest.approx(bundle.r_con + bundle.r_mel)

    def test_transposed_features_keep_both_rewards(self, corpus_config, clips):
        up = transpose_clip(clips[0], 2, corpus_config)
        bundle, _, raw_fpc = score_sample(up.features, clips[0], corpus_config)
        assert bundle.r_con == 1.0
        assert raw_fpc is None or raw_fpc == pytest.approx(1.0)

    def test_silence_scores_zero_melody(self, corpus_config, clips):
        silence = FeatureSequence(np.zeros_like(clips[0].features.frames))
        bundle, counts, raw_fpc = score_sample(silence, clips[0], corpus_config)
        assert raw_fpc is None
        assert bundle.r_mel == 0.0
        assert counts.deletions == len(clips[0].lyrics.tokens)
        assert bundle.r_con == 0.0

    def test_reference_override(self, corpus_config, clips):
        clip = clips[0]
        other = [t for t in range(1, corpus_config.vocab_size) if t not in clip.lyrics.tokens][:1]
        bundle, counts, _ = score_sample(clip.features, clip, corpus_config, reference_tokens=other)
        assert counts.errors > 0
        assert bundle.r_con < 1.0


class TestSpeakerSimilarityStub:
    def test_identical_is_one(self, clips):
        assert speaker_similarity_stub(clips[0].features, clips[0].features) == pytest.approx(1.0)

    def test_zero_vector(self, clips):
        zeros = FeatureSequence(np.zeros_like(clips[0].features.frames))
        assert speaker_similarity_stub(zeros, clips[0].features) == 0.0
