# synthesis/reward.py
"""
Content-accuracy and melodic-similarity rewards, their weighted sum and
the group-relative advantage used by post-training.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigurationError, UndefinedMetricError
from synthesis.corpus import (
    CorpusConfig,
    FeatureSequence,
    GroundTruthClip,
    oracle_pitch,
    oracle_transcribe,
)

ADVANTAGE_EPS = 1e-8
DEFAULT_WEIGHTS = {"con": 1.0, "mel": 1.0}


@dataclass(frozen=True)
class WerResult:
    wer: float
    substitutions: int
    deletions: int
    insertions: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


@dataclass(frozen=True)
class RewardBundle:
    r_con: float
    r_mel: float
    weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    total: float = 0.0
    advantage: float = 0.0

    @property
    def parts(self) -> Dict[str, float]:
        return {"con": self.r_con, "mel": self.r_mel}

    def with_advantage(self, advantage: float) -> "RewardBundle":
        return replace(self, advantage=float(advantage))


# --------------------------------------------------
# Content accuracy
# --------------------------------------------------
def wer(reference: Sequence[int], hypothesis: Sequence[int]) -> WerResult:
    """
    Minimum-edit-distance alignment with unit costs. Among equally cheap
    alignments the backtrace prefers match/substitution, then deletion.
    """
    ref, hyp = list(reference), list(hypothesis)
    N, M = len(ref), len(hyp)
    if N == 0:
        raise UndefinedMetricError("WER is undefined for an empty reference")

    d = np.zeros((N + 1, M + 1), dtype=np.int64)
    d[:, 0] = np.arange(N + 1)
    d[0, :] = np.arange(M + 1)
    for i in range(1, N + 1):
        for j in range(1, M + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            d[i, j] = min(d[i - 1, j - 1] + cost, d[i - 1, j] + 1, d[i, j - 1] + 1)

    S = D = I = 0
    i, j = N, M
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            S += int(ref[i - 1] != hyp[j - 1])
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            D += 1
            i -= 1
        else:
            I += 1
            j -= 1

    return WerResult((S + D + I) / N, S, D, I)


def content_reward(wer_value: float) -> float:
    """R_con = 1 - WER, unclamped."""
    if wer_value < 0:
        raise ConfigurationError(f"WER cannot be negative: {wer_value}")
    return 1.0 - wer_value


# --------------------------------------------------
# Melodic similarity
# --------------------------------------------------
def _resample_contour(contour: np.ndarray, length: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Linear resampling of values; a resampled frame counts as voiced only when
    every source frame it draws from is voiced.
    """
    contour = np.asarray(contour, dtype=np.float64)
    if contour.size == length:
        return contour, contour > 0
    src = np.linspace(0.0, 1.0, contour.size)
    dst = np.linspace(0.0, 1.0, length)
    values = np.interp(dst, src, contour)
    voicing = np.interp(dst, src, (contour > 0).astype(np.float64))
    return values, voicing >= 1.0 - 1e-9


def melody_reward(generated_f0: Sequence[float], target_f0: Sequence[float]) -> float:
    """Pearson correlation over frames voiced in both contours."""
    g, t = np.asarray(generated_f0, dtype=np.float64), np.asarray(target_f0, dtype=np.float64)
    n = max(g.size, t.size)
    g, g_voiced = _resample_contour(g, n)
    t, t_voiced = _resample_contour(t, n)

    mask = g_voiced & t_voiced
    if mask.sum() < 2:
        raise UndefinedMetricError("fewer than 2 jointly voiced frames")
    gv, tv = g[mask] - g[mask].mean(), t[mask] - t[mask].mean()
    denom = np.sqrt((gv ** 2).sum() * (tv ** 2).sum())
    if denom == 0:
        raise UndefinedMetricError("a contour is constant on the voiced frames")
    return float(np.clip((gv * tv).sum() / denom, -1.0, 1.0))


def fpc(generated_f0, target_f0) -> Optional[float]:
    """Evaluation-time F0 Pearson correlation; None where undefined."""
    try:
        return melody_reward(generated_f0, target_f0)
    except UndefinedMetricError:
        return None


# --------------------------------------------------
# Aggregation
# --------------------------------------------------
def aggregate_reward(parts: Mapping[str, float], weights: Mapping[str, float]) -> float:
    missing = set(parts) - set(weights)
    if missing:
        raise ConfigurationError(f"no weight for reward terms: {sorted(missing)}")
    return float(sum(weights[k] * v for k, v in parts.items()))


def group_advantage(rewards: Sequence[float]) -> List[float]:
    """(R - mean) / (population std + 1e-8) over one prompt's group."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ConfigurationError(f"group size must be >= 2, got {r.size}")
    adv = (r - r.mean()) / (r.std() + ADVANTAGE_EPS)
    return adv.tolist()


# --------------------------------------------------
# Scoring generated features
# --------------------------------------------------
def speaker_similarity_stub(generated: FeatureSequence, reference: FeatureSequence) -> float:
    """
    Cosine between mean feature vectors. A deterministic stand-in only; not
    comparable to embedding-based speaker similarity.
    """
    a = generated.frames.astype(np.float64).mean(axis=0)
    b = reference.frames.astype(np.float64).mean(axis=0)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / denom) if denom > 0 else 0.0


def score_sample(
    features: FeatureSequence,
    target: GroundTruthClip,
    corpus_config: CorpusConfig,
    weights: Mapping[str, float] = DEFAULT_WEIGHTS,
    reference_tokens: Optional[Sequence[int]] = None,
) -> Tuple[RewardBundle, WerResult, Optional[float]]:
    """
    Oracle transcription against the target tokens, oracle pitch against the
    target contour. Returns the reward bundle, the WER counts and the raw FPC.
    """
    tokens = target.lyrics.tokens if reference_tokens is None else list(reference_tokens)
    counts = wer(tokens, oracle_transcribe(features, corpus_config))
    r_con = content_reward(counts.wer)
    raw_fpc = fpc(oracle_pitch(features, corpus_config), target.pitch_contour)
    r_mel = 0.0 if raw_fpc is None else raw_fpc
    bundle = RewardBundle(r_con=r_con, r_mel=r_mel, weights=dict(weights))
    bundle = replace(bundle, total=aggregate_reward(bundle.parts, weights))
    return bundle, counts, raw_fpc
