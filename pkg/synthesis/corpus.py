# synthesis/corpus.py
"""
Synthetic singing corpus.

Every clip is rendered into disjoint channel groups so that the lyric and
pitch content can be decoded back exactly:

    [ token codeword channels | voicing, note | residual "timbre" channels ]

The filler token (ID 0) renders as the zero codeword; unvoiced frames carry a
zero voicing flag and a zero note channel.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigurationError, ShapeError, SpanOverflowError

FILLER = 0
NOTE_MAX = 48
PITCH_SCALE = 0.1
VOICING_LEVEL = 1.0
CODEBOOK_SEED = 20240611

# per-clip RNG streams
_STREAM_LAYOUT = 0
_STREAM_SEGMENTS = 1
_STREAM_TIMBRE = 2
_STREAM_NOISE = 3
_STREAM_PITCH = 4
_STREAM_STRUCTURE = 5


# --------------------------------------------------
# Types
# --------------------------------------------------
@dataclass(frozen=True)
class CorpusConfig:
    vocab_size: int = 32
    feature_dim: int = 16
    frames: int = 64
    frame_rate: float = 50.0
    min_sentences: int = 1
    max_sentences: int = 3
    min_tokens: int = 1
    max_tokens: int = 4
    note_low: int = 12
    note_high: int = 40
    breath_prob: float = 0.2
    residual_std: float = 0.05

    def validate(self) -> "CorpusConfig":
        if self.vocab_size < 4:
            raise ConfigurationError(f"vocab_size must be >= 4, got {self.vocab_size}")
        if self.feature_dim < 4:
            raise ConfigurationError(f"feature_dim must be >= 4, got {self.feature_dim}")
        if not 32 <= self.frames <= 512:
            raise ConfigurationError(f"frames must be in [32, 512], got {self.frames}")
        if not 1 <= self.min_sentences <= self.max_sentences:
            raise ConfigurationError("sentence count range is empty")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ConfigurationError("tokens-per-sentence range is empty")
        if self.max_tokens > (self.frames // self.max_sentences) // 2:
            raise ConfigurationError("max_tokens does not fit the sentence regions")
        if not 1 <= self.note_low <= self.note_high <= NOTE_MAX:
            raise ConfigurationError(f"note range must lie in [1, {NOTE_MAX}]")
        if not 0.0 <= self.breath_prob <= 1.0:
            raise ConfigurationError("breath_prob must be a probability")
        if self.frame_rate <= 0 or self.residual_std < 0:
            raise ConfigurationError("frame_rate must be positive, residual_std >= 0")
        return self

    @property
    def token_channels(self) -> int:
        return max(2, self.feature_dim // 2)

    @property
    def voicing_channel(self) -> int:
        return self.token_channels

    @property
    def note_channel(self) -> int:
        return self.token_channels + 1

    @property
    def residual_channels(self) -> int:
        return self.feature_dim - self.token_channels - 2


@dataclass(frozen=True)
class LyricSequence:
    """
    Sentences of token IDs with their (start, end) frame spans.
    Spans are half-open: a sentence owns frames start .. end-1.
    """
    sentences: Tuple[Tuple[int, ...], ...]
    sentence_spans: Tuple[Tuple[int, int], ...]
    total_frames: int

    @property
    def tokens(self) -> List[int]:
        return [tok for sentence in self.sentences for tok in sentence]

    def validate(self, vocab_size: int) -> "LyricSequence":
        if self.total_frames < 1:
            raise ConfigurationError("total_frames must be >= 1")
        if len(self.sentences) != len(self.sentence_spans):
            raise ConfigurationError("one span is required per sentence")
        prev_end = 0
        for start, end in self.sentence_spans:
            if start < prev_end or end <= start or end > self.total_frames:
                raise ConfigurationError(
                    f"span ({start}, {end}) is unsorted, overlapping or outside [0, {self.total_frames})"
                )
            prev_end = end
        for tok in self.tokens:
            if not 0 <= tok < vocab_size:
                raise ConfigurationError(f"token {tok} outside [0, {vocab_size})")
        return self


@dataclass(frozen=True)
class FeatureSequence:
    frames: np.ndarray
    frame_rate: float = 50.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ShapeError(f"features must be a non-empty T x D_f matrix, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ShapeError("features contain non-finite values")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class GroundTruthClip:
    lyrics: LyricSequence
    pitch_contour: np.ndarray
    features: FeatureSequence
    clip_id: str
    render_seed: int = field(default=0)


# --------------------------------------------------
# Helpers
# --------------------------------------------------
def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def clip_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


@lru_cache(maxsize=None)
def codebook(vocab_size: int, channels: int) -> np.ndarray:
    """
    Fixed token codewords, one row per token ID. Row 0 (filler) is zero;
    the others have norm sqrt(channels).
    """
    rng = np.random.default_rng(CODEBOOK_SEED + 7919 * vocab_size + channels)
    book = rng.standard_normal((vocab_size, channels))
    book /= np.linalg.norm(book, axis=1, keepdims=True)
    book *= np.sqrt(channels)
    book[FILLER] = 0.0
    book = book.astype(np.float32)
    book.setflags(write=False)
    return book


def _check_dim(features: FeatureSequence, config: CorpusConfig) -> np.ndarray:
    frames = features.frames
    if frames.shape[1] != config.feature_dim:
        raise ShapeError(
            f"feature dim {frames.shape[1]} does not match corpus D_f={config.feature_dim}"
        )
    return frames


def token_segments(lyrics: LyricSequence, seed: int) -> List[Tuple[int, int, int]]:
    """
    Split each sentence span into one contiguous segment per token.
    Returns (token, start, end) triples; a pure function of (lyrics, seed).
    """
    rng = _rng(seed, _STREAM_SEGMENTS)
    segments = []
    for sentence, (start, end) in zip(lyrics.sentences, lyrics.sentence_spans):
        n = len(sentence)
        if n == 0:
            continue
        width = end - start
        if n > width:
            raise SpanOverflowError(f"{n} tokens do not fit span ({start}, {end})")
        cuts = np.sort(rng.choice(np.arange(1, width), size=n - 1, replace=False)) if n > 1 else []
        bounds = [0, *[int(c) for c in cuts], width]
        for tok, a, b in zip(sentence, bounds[:-1], bounds[1:]):
            segments.append((int(tok), start + a, start + b))
    return segments


# --------------------------------------------------
# Lyric padding
# --------------------------------------------------
def pad_lyrics(lyrics: LyricSequence) -> np.ndarray:
    """
    Place each sentence's tokens at the start of its span; every other frame
    holds the filler token. Output length is exactly total_frames.
    """
    grid = np.full(lyrics.total_frames, FILLER, dtype=np.int64)
    for sentence, (start, end) in zip(lyrics.sentences, lyrics.sentence_spans):
        if len(sentence) > end - start:
            raise SpanOverflowError(
                f"sentence of {len(sentence)} tokens overflows span ({start}, {end})"
            )
        grid[start:start + len(sentence)] = sentence
    return grid


def single_span_layout(lyrics: LyricSequence, start_frame: int) -> LyricSequence:
    """Inference layout: all tokens in one span after the prompt."""
    if not 0 <= start_frame < lyrics.total_frames:
        raise ConfigurationError(f"start_frame {start_frame} outside [0, {lyrics.total_frames})")
    return LyricSequence(
        sentences=(tuple(lyrics.tokens),),
        sentence_spans=((start_frame, lyrics.total_frames),),
        total_frames=lyrics.total_frames,
    )


def edit_lyrics(lyrics: LyricSequence, seed: int, vocab_size: int) -> LyricSequence:
    """
    Replace every token by a different one, keeping the sentence structure
    (same spans and counts) and never repeating a token back to back.
    """
    rng = _rng(seed, _STREAM_LAYOUT)
    originals = lyrics.tokens
    edited, prev = [], None
    for original in originals:
        choices = [t for t in range(1, vocab_size) if t != original and t != prev]
        tok = int(rng.choice(choices))
        edited.append(tok)
        prev = tok
    it = iter(edited)
    sentences = tuple(tuple(next(it) for _ in s) for s in lyrics.sentences)
    return replace(lyrics, sentences=sentences)


def restructure_lyrics(lyrics: LyricSequence, seed: int, config: CorpusConfig) -> LyricSequence:
    """
    Structural edit: new sentence count, spans and tokens-per-sentence inside
    the region the original sentences cover. The count pattern differs from
    the original whenever the region leaves room for another one.
    """
    if not lyrics.sentences:
        raise ConfigurationError("cannot restructure lyrics without sentences")
    region_start = lyrics.sentence_spans[0][0]
    width = lyrics.sentence_spans[-1][1] - region_start
    rng = _rng(seed, _STREAM_STRUCTURE)

    original = tuple(len(s) for s in lyrics.sentences)
    counts = [m for m in range(config.min_sentences, config.max_sentences + 1) if 2 * m <= width] or [1]
    others = [m for m in counts if m != len(original)]
    m = int(rng.choice(others or counts))

    spans, start = [], region_start
    for chunk in np.array_split(np.arange(width), m):
        spans.append((start, start + len(chunk)))
        start += len(chunk)

    caps = [max(1, min(config.max_tokens, (b - a) // 2)) for a, b in spans]
    sizes = [int(rng.integers(min(config.min_tokens, cap), cap + 1)) for cap in caps]
    if tuple(sizes) == original:
        i = next((i for i, cap in enumerate(caps) if sizes[i] < cap), None)
        if i is not None:
            sizes[i] += 1
        else:
            i = next((i for i, n in enumerate(sizes) if n > 1), None)
            if i is not None:
                sizes[i] -= 1

    sentences, prev = [], None
    for n in sizes:
        sentence = []
        for _ in range(n):
            tok = int(rng.choice([t for t in range(1, config.vocab_size) if t != prev]))
            sentence.append(tok)
            prev = tok
        sentences.append(tuple(sentence))
    return LyricSequence(tuple(sentences), tuple(spans), lyrics.total_frames).validate(config.vocab_size)


# --------------------------------------------------
# Rendering
# --------------------------------------------------
def render_features(
    lyrics: LyricSequence,
    pitch_contour: np.ndarray,
    seed: int,
    config: CorpusConfig,
) -> FeatureSequence:
    """Features as a pure function of (tokens, pitch contour, seed)."""
    T = lyrics.total_frames
    pitch = np.asarray(pitch_contour, dtype=np.int64)
    if pitch.shape != (T,):
        raise ShapeError(f"pitch contour length {pitch.shape} != ({T},)")

    grid = np.full(T, FILLER, dtype=np.int64)
    for tok, a, b in token_segments(lyrics, seed):
        grid[a:b] = tok

    K = config.token_channels
    frames = np.zeros((T, config.feature_dim), dtype=np.float32)
    frames[:, :K] = codebook(config.vocab_size, K)[grid]
    frames[:, config.voicing_channel] = np.where(pitch > 0, VOICING_LEVEL, 0.0)
    frames[:, config.note_channel] = pitch * PITCH_SCALE

    R = config.residual_channels
    if R:
        timbre = _rng(seed, _STREAM_TIMBRE).standard_normal(R)
        noise = _rng(seed, _STREAM_NOISE).standard_normal((T, R)) * config.residual_std
        frames[:, K + 2:] = timbre + noise

    return FeatureSequence(frames, frame_rate=config.frame_rate)


def _draw_lyrics(rng: np.random.Generator, config: CorpusConfig) -> LyricSequence:
    T = config.frames
    n_sent = int(rng.integers(config.min_sentences, config.max_sentences + 1))
    region = T // n_sent
    sentences, spans, prev = [], [], None
    for j in range(n_sent):
        n_tok = int(rng.integers(config.min_tokens, config.max_tokens + 1))
        sentence = []
        for _ in range(n_tok):
            tok = int(rng.integers(1, config.vocab_size))
            while tok == prev:
                tok = int(rng.integers(1, config.vocab_size))
            sentence.append(tok)
            prev = tok
        width = int(rng.integers(max(n_tok, region // 2), region + 1))
        start = j * region + int(rng.integers(0, region - width + 1))
        sentences.append(tuple(sentence))
        spans.append((start, start + width))
    return LyricSequence(tuple(sentences), tuple(spans), T)


def _draw_pitch(
    rng: np.random.Generator,
    lyrics: LyricSequence,
    seed: int,
    config: CorpusConfig,
) -> np.ndarray:
    pitch = np.zeros(lyrics.total_frames, dtype=np.int64)
    note = int(rng.integers(config.note_low, config.note_high + 1))
    for _, a, b in token_segments(lyrics, seed):
        note = int(np.clip(note + rng.integers(-4, 5), config.note_low, config.note_high))
        pitch[a:b] = note
        if b - a >= 3 and rng.random() < config.breath_prob:
            pitch[b - 1] = 0
    return pitch


def generate_clip(index: int, config: CorpusConfig, seed: int) -> GroundTruthClip:
    cseed = clip_seed(seed, index)
    lyrics = _draw_lyrics(_rng(cseed, _STREAM_LAYOUT), config)
    pitch = _draw_pitch(_rng(cseed, _STREAM_PITCH), lyrics, cseed, config)
    features = render_features(lyrics, pitch, cseed, config)
    return GroundTruthClip(
        lyrics=lyrics,
        pitch_contour=pitch,
        features=features,
        clip_id=f"clip_{index:05d}",
        render_seed=cseed,
    )


def generate_corpus(n_clips: int, config: CorpusConfig, seed: int) -> List[GroundTruthClip]:
    """Deterministic corpus: a pure function of (n_clips, config, seed)."""
    config.validate()
    if n_clips < 1:
        raise ConfigurationError(f"n_clips must be >= 1, got {n_clips}")
    return [generate_clip(i, config, seed) for i in range(n_clips)]


def transpose_clip(clip: GroundTruthClip, semitones: int, config: CorpusConfig) -> GroundTruthClip:
    pitch = np.where(clip.pitch_contour > 0, clip.pitch_contour + semitones, 0)
    voiced = pitch[pitch > 0]
    if voiced.size and (voiced.min() < 1 or voiced.max() > NOTE_MAX):
        raise ConfigurationError(f"transposition by {semitones} leaves the note range")
    features = render_features(clip.lyrics, pitch, clip.render_seed, config)
    return replace(clip, pitch_contour=pitch, features=features)


# --------------------------------------------------
# Oracles
# --------------------------------------------------
def decode_token_grid(features: FeatureSequence, config: CorpusConfig) -> np.ndarray:
    """Nearest-codeword token per frame."""
    frames = _check_dim(features, config)
    K = config.token_channels
    book = codebook(config.vocab_size, K)
    d = ((frames[:, None, :K] - book[None, :, :]) ** 2).sum(axis=-1)
    return d.argmin(axis=1)


def oracle_transcribe(features: FeatureSequence, config: CorpusConfig) -> List[int]:
    """Decoded tokens with consecutive duplicates and filler frames removed."""
    grid = decode_token_grid(features, config)
    tokens, prev = [], None
    for tok in grid.tolist():
        if tok != prev and tok != FILLER:
            tokens.append(tok)
        prev = tok
    return tokens


def oracle_pitch(features: FeatureSequence, config: CorpusConfig) -> np.ndarray:
    """Per-frame note index, 0 = unvoiced."""
    frames = _check_dim(features, config)
    voiced = frames[:, config.voicing_channel] > 0.5 * VOICING_LEVEL
    notes = np.clip(np.rint(frames[:, config.note_channel] / PITCH_SCALE), 1, NOTE_MAX)
    return np.where(voiced, notes, 0).astype(np.int64)
