import numpy as np
import pytest

from errors import ConfigurationError, ShapeError, SpanOverflowError
from synthesis.corpus import (
    FILLER,
    CorpusConfig,
    FeatureSequence,
    LyricSequence,
    codebook,
    edit_lyrics,
    generate_clip,
    generate_corpus,
    oracle_pitch,
    oracle_transcribe,
    pad_lyrics,
    render_features,
    restructure_lyrics,
    single_span_layout,
    transpose_clip,
)
from synthesis.reward import wer


class TestGenerateCorpus:
    def test_same_seed_is_byte_identical(self):
        a = generate_corpus(1, CorpusConfig(), seed=7)[0]
        b = generate_corpus(1, CorpusConfig(), seed=7)[0]
        assert a.features.frames.tobytes() == b.features.frames.tobytes()
        assert a.lyrics == b.lyrics
        np.testing.assert_array_equal(a.pitch_contour, b.pitch_contour)

    def test_different_seed_differs(self):
        a = generate_corpus(1, CorpusConfig(), seed=7)[0]
        b = generate_corpus(1, CorpusConfig(), seed=8)[0]
        assert a.features.frames.tobytes() != b.features.frames.tobytes()

    def test_zero_clips_rejected(self):
        with pytest.raises(ConfigurationError):
            generate_corpus(0, CorpusConfig(), seed=0)

    @pytest.mark.parametrize(
        "overrides",
        [{"vocab_size": 3}, {"feature_dim": 3}, {"frames": 16}, {"frames": 600}],
    )
    def test_invalid_config_rejected(self, overrides):
        with pytest.raises(ConfigurationError):
            generate_corpus(1, CorpusConfig(**overrides), seed=0)

    def test_clip_ids_and_shapes(self):
        config = CorpusConfig()
        clips = generate_corpus(3, config, seed=1)
        assert [c.clip_id for c in clips] == ["clip_00000", "clip_00001", "clip_00002"]
        for clip in clips:
            assert clip.features.frames.shape == (config.frames, config.feature_dim)
            assert clip.pitch_contour.shape == (config.frames,)
            clip.lyrics.validate(config.vocab_size)

    def test_no_consecutive_duplicate_tokens(self):
        for clip in generate_corpus(50, CorpusConfig(), seed=2):
            tokens = clip.lyrics.tokens
            assert all(a != b for a, b in zip(tokens, tokens[1:]))
            assert FILLER not in tokens

    def test_pitch_is_piecewise_constant_with_gaps(self):
        clips = generate_corpus(30, CorpusConfig(), seed=4)
        contours = np.concatenate([c.pitch_contour for c in clips])
        assert (contours == 0).any()
        assert contours.max() <= CorpusConfig().note_high


class TestRoundTrip:
    def test_oracles_invert_rendering(self):
        config = CorpusConfig()
        for clip in generate_corpus(200, config, seed=11):
            assert oracle_transcribe(clip.features, config) == clip.lyrics.tokens
            np.testing.assert_array_equal(oracle_pitch(clip.features, config), clip.pitch_contour)

    def test_small_config_round_trip(self, corpus_config, clips):
        for clip in clips:
            assert oracle_transcribe(clip.features, corpus_config) == clip.lyrics.tokens
            np.testing.assert_array_equal(oracle_pitch(clip.features, corpus_config), clip.pitch_contour)

    def test_features_are_function_of_tokens_pitch_seed(self):
        config = CorpusConfig()
        clip = generate_clip(0, config, seed=5)
        again = render_features(clip.lyrics, clip.pitch_contour, clip.render_seed, config)
        np.testing.assert_array_equal(again.frames, clip.features.frames)

    def test_all_filler_frames_transcribe_to_nothing(self):
        config = CorpusConfig()
        zeros = FeatureSequence(np.zeros((40, config.feature_dim), dtype=np.float32))
        assert oracle_transcribe(zeros, config) == []

    def test_all_zero_features_are_unvoiced(self):
        config = CorpusConfig()
        zeros = FeatureSequence(np.zeros((40, config.feature_dim), dtype=np.float32))
        assert (oracle_pitch(zeros, config) == 0).all()

    def test_noise_breaks_transcription(self):
        config = CorpusConfig()
        clip = generate_clip(0, config, seed=9)
        rng = np.random.default_rng(0)
        noisy = FeatureSequence(clip.features.frames + rng.normal(0, 0.5, clip.features.frames.shape))
        assert wer(clip.lyrics.tokens, oracle_transcribe(noisy, config)).wer > 0

    def test_dimension_mismatch(self):
        config = CorpusConfig()
        wrong = FeatureSequence(np.zeros((10, config.feature_dim + 1), dtype=np.float32))
        with pytest.raises(ShapeError):
            oracle_transcribe(wrong, config)
        with pytest.raises(ShapeError):
            oracle_pitch(wrong, config)

    def test_transpose_shifts_contour(self):
        config = CorpusConfig()
        clip = generate_clip(3, config, seed=0)
        up = transpose_clip(clip, 2, config)
        expected = np.where(clip.pitch_contour > 0, clip.pitch_contour + 2, 0)
        np.testing.assert_array_equal(oracle_pitch(up.features, config), expected)
        assert oracle_transcribe(up.features, config) == clip.lyrics.tokens

    def test_transpose_out_of_range(self):
        config = CorpusConfig()
        clip = generate_clip(3, config, seed=0)
        with pytest.raises(ConfigurationError):
            transpose_clip(clip, 60, config)


class TestFeatureSequence:
    def test_rejects_non_finite(self):
        frames = np.zeros((4, 4), dtype=np.float32)
        frames[1, 2] = np.nan
        with pytest.raises(ShapeError):
            FeatureSequence(frames)

    def test_rejects_empty(self):
        with pytest.raises(ShapeError):
            FeatureSequence(np.zeros((0, 4), dtype=np.float32))


class TestPadLyrics:
    def test_direct_placement(self):
        lyrics = LyricSequence(((5, 6),), ((0, 4),), 6)
        assert pad_lyrics(lyrics).tolist() == [5, 6, FILLER, FILLER, FILLER, FILLER]

    def test_empty(self):
        assert pad_lyrics(LyricSequence((), (), 4)).tolist() == [FILLER] * 4

    def test_overflow(self):
        with pytest.raises(SpanOverflowError):
            pad_lyrics(LyricSequence(((1, 2, 3),), ((0, 2),), 6))

    def test_length_and_filler_count(self):
        for clip in generate_corpus(50, CorpusConfig(), seed=6):
            grid = pad_lyrics(clip.lyrics)
            assert grid.shape == (clip.lyrics.total_frames,)
            assert (grid == FILLER).sum() == clip.lyrics.total_frames - len(clip.lyrics.tokens)

    def test_single_span_layout(self):
        lyrics = LyricSequence(((1, 2), (3,)), ((0, 4), (8, 12)), 16)
        single = single_span_layout(lyrics, 2)
        assert single.sentence_spans == ((2, 16),)
        assert pad_lyrics(single).tolist()[:5] == [FILLER, FILLER, 1, 2, 3]


class TestEditLyrics:
    def test_keeps_structure_changes_every_token(self):
        config = CorpusConfig()
        clip = generate_clip(1, config, seed=0)
        edited = edit_lyrics(clip.lyrics, seed=3, vocab_size=config.vocab_size)
        assert edited.sentence_spans == clip.lyrics.sentence_spans
        assert [len(s) for s in edited.sentences] == [len(s) for s in clip.lyrics.sentences]
        assert all(a != b for a, b in zip(edited.tokens, clip.lyrics.tokens))
        assert all(a != b for a, b in zip(edited.tokens, edited.tokens[1:]))
        edited.validate(config.vocab_size)


class TestRestructureLyrics:
    def test_changes_structure_inside_original_region(self):
        config = CorpusConfig()
        for clip in generate_corpus(50, config, seed=4):
            original = clip.lyrics
            edited = restructure_lyrics(original, seed=9, config=config)
            assert edited.total_frames == original.total_frames
            assert edited.sentence_spans[0][0] == original.sentence_spans[0][0]
            assert edited.sentence_spans[-1][1] == original.sentence_spans[-1][1]
            assert all(a[1] == b[0] for a, b in zip(edited.sentence_spans, edited.sentence_spans[1:]))
            assert [len(s) for s in edited.sentences] != [len(s) for s in original.sentences]
            assert all(1 <= tok < config.vocab_size for tok in edited.tokens)
            assert all(a != b for a, b in zip(edited.tokens, edited.tokens[1:]))

    def test_renders_and_transcribes(self):
        config = CorpusConfig()
        clip = generate_clip(2, config, seed=1)
        edited = restructure_lyrics(clip.lyrics, seed=5, config=config)
        features = render_features(edited, clip.pitch_contour, clip.render_seed, config)
        assert oracle_transcribe(features, config) == edited.tokens
        assert pad_lyrics(edited).shape == (clip.lyrics.total_frames,)

    def test_deterministic(self):
        config = CorpusConfig()
        clip = generate_clip(0, config, seed=2)
        assert restructure_lyrics(clip.lyrics, 3, config) == restructure_lyrics(clip.lyrics, 3, config)

    def test_needs_sentences(self):
        with pytest.raises(ConfigurationError):
            restructure_lyrics(LyricSequence((), (), 32), 0, CorpusConfig())


class TestCodebook:
    def test_filler_is_zero_and_rows_normalized(self):
        book = codebook(32, 8)
        assert not book[FILLER].any()
        np.testing.assert_allclose(np.linalg.norm(book[1:], axis=1), np.sqrt(8), rtol=1e-5)
        assert not book.flags.writeable
