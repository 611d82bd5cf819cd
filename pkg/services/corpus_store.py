# services/corpus_store.py
"""
On-disk corpus layout:

    <dir>/corpus.json                 config echo, seed, clip index
    <dir>/<clip_id>/lyrics.json       tokens, sentences, spans, total_frames
    <dir>/<clip_id>/pitch.json        per-frame note index (0 = unvoiced)
    <dir>/<clip_id>/features.bin      "MFLW" + u32 T + u32 D_f, then float32 rows (LE)
"""
from __future__ import annotations

import dataclasses
import json
import logging
import struct
from pathlib import Path
from typing import List, Tuple

import numpy as np
from marshmallow import Schema, ValidationError, fields, validate

from errors import CorpusFormatError
from synthesis.corpus import CorpusConfig, FeatureSequence, GroundTruthClip, LyricSequence

log = logging.getLogger(__name__)

MAGIC = b"MFLW"
HEADER = struct.Struct("<4sII")
INDEX_NAME = "corpus.json"


# --------------------------------------------------
# Schemas
# --------------------------------------------------
class LyricsSchema(Schema):
    tokens = fields.List(fields.Integer(), required=True)
    sentences = fields.List(fields.List(fields.Integer()), required=True)
    spans = fields.List(fields.List(fields.Integer(), validate=validate.Length(equal=2)), required=True)
    total_frames = fields.Integer(required=True, validate=validate.Range(min=1))


class PitchSchema(Schema):
    contour = fields.List(fields.Integer(validate=validate.Range(min=0)), required=True)


class ClipEntrySchema(Schema):
    clip_id = fields.String(required=True)
    render_seed = fields.Integer(required=True)


class IndexSchema(Schema):
    config = fields.Dict(keys=fields.String(), required=True)
    seed = fields.Integer(required=True)
    clips = fields.List(fields.Nested(ClipEntrySchema), required=True)


def _read_json(path: Path, schema: Schema) -> dict:
    if not path.is_file():
        raise FileNotFoundError(f"missing corpus file: {path}")
    try:
        return schema.load(json.loads(path.read_text()))
    except (json.JSONDecodeError, ValidationError) as exc:
        raise CorpusFormatError(f"{path}: {exc}") from exc


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


# --------------------------------------------------
# features.bin
# --------------------------------------------------
def write_features(path, features: FeatureSequence) -> None:
    T, D = features.frames.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, T, D))
        fh.write(np.ascontiguousarray(features.frames, dtype="<f4").tobytes())


def read_features(path, frame_rate: float = 50.0) -> FeatureSequence:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing features file: {path}")
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise CorpusFormatError(f"{path}: truncated header")
    magic, T, D = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorpusFormatError(f"{path}: bad magic {magic!r}")
    if T < 1 or D < 1:
        raise CorpusFormatError(f"{path}: empty feature matrix ({T}x{D})")
    body = raw[HEADER.size:]
    if len(body) != 4 * T * D:
        raise CorpusFormatError(f"{path}: expected {T}x{D} floats, found {len(body)} bytes")
    frames = np.frombuffer(body, dtype="<f4").reshape(T, D).astype(np.float32)
    return FeatureSequence(frames, frame_rate=frame_rate)


# --------------------------------------------------
# Clips
# --------------------------------------------------
def write_clip(clip_dir, clip: GroundTruthClip) -> None:
    clip_dir = Path(clip_dir)
    clip_dir.mkdir(parents=True, exist_ok=True)
    lyrics = clip.lyrics
    _write_json(clip_dir / "lyrics.json", {
        "tokens": lyrics.tokens,
        "sentences": [list(s) for s in lyrics.sentences],
        "spans": [list(s) for s in lyrics.sentence_spans],
        "total_frames": lyrics.total_frames,
    })
    _write_json(clip_dir / "pitch.json", {"contour": clip.pitch_contour.tolist()})
    write_features(clip_dir / "features.bin", clip.features)


def read_clip(clip_dir, config: CorpusConfig, render_seed: int = 0) -> GroundTruthClip:
    clip_dir = Path(clip_dir)
    raw = _read_json(clip_dir / "lyrics.json", LyricsSchema())
    try:
        lyrics = LyricSequence(
            sentences=tuple(tuple(s) for s in raw["sentences"]),
            sentence_spans=tuple((a, b) for a, b in raw["spans"]),
            total_frames=raw["total_frames"],
        ).validate(config.vocab_size)
    except ValueError as exc:
        raise CorpusFormatError(f"{clip_dir}: {exc}") from exc
    if lyrics.tokens != raw["tokens"]:
        raise CorpusFormatError(f"{clip_dir}: tokens disagree with sentences")

    contour = np.asarray(_read_json(clip_dir / "pitch.json", PitchSchema())["contour"], dtype=np.int64)
    features = read_features(clip_dir / "features.bin", config.frame_rate)
    if contour.shape != (lyrics.total_frames,) or features.num_frames != lyrics.total_frames:
        raise CorpusFormatError(f"{clip_dir}: lyrics, pitch and features disagree on T")
    if features.dim != config.feature_dim:
        raise CorpusFormatError(f"{clip_dir}: features have D_f={features.dim}, corpus {config.feature_dim}")
    return GroundTruthClip(lyrics, contour, features, clip_dir.name, render_seed)


# --------------------------------------------------
# Corpus
# --------------------------------------------------
def save_corpus(clips: List[GroundTruthClip], config: CorpusConfig, seed: int, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for clip in clips:
        write_clip(out / clip.clip_id, clip)
    _write_json(out / INDEX_NAME, {
        "config": dataclasses.asdict(config),
        "seed": int(seed),
        "clips": [{"clip_id": c.clip_id, "render_seed": int(c.render_seed)} for c in clips],
    })
    log.info("wrote %d clips to %s", len(clips), out)
    return out


def load_config(corpus_dir) -> Tuple[CorpusConfig, int]:
    index = _read_json(Path(corpus_dir) / INDEX_NAME, IndexSchema())
    try:
        config = CorpusConfig(**index["config"]).validate()
    except (TypeError, ValueError) as exc:
        raise CorpusFormatError(f"{corpus_dir}: bad config echo: {exc}") from exc
    return config, index["seed"]


def load_corpus(corpus_dir) -> Tuple[List[GroundTruthClip], CorpusConfig, int]:
    corpus_dir = Path(corpus_dir)
    config, seed = load_config(corpus_dir)
    index = _read_json(corpus_dir / INDEX_NAME, IndexSchema())
    clips = [
        read_clip(corpus_dir / entry["clip_id"], config, entry["render_seed"])
        for entry in index["clips"]
    ]
    return clips, config, seed
