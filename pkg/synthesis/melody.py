# synthesis/melody.py
"""
Melody conditioning: frozen teacher, online student extractor E_phi,
projection head and the distillation loss that ties them together.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from errors import AlignmentError, ConfigurationError, ShapeError
from synthesis.corpus import NOTE_MAX, CorpusConfig, FeatureSequence, oracle_pitch


@dataclass(frozen=True)
class MelodyConfig:
    student_dim: int = 32
    hidden: int = 64
    hidden_layers: int = 2
    teacher_bins: int = NOTE_MAX + 1
    epsilon: float = 0.05
    teacher_rate_ratio: float = 1.5

    def validate(self) -> "MelodyConfig":
        if self.student_dim < 1 or self.hidden < 1 or self.hidden_layers < 1:
            raise ConfigurationError("melody extractor dimensions must be positive")
        if self.teacher_bins != NOTE_MAX + 1:
            raise ConfigurationError(f"teacher_bins must be {NOTE_MAX + 1}")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigurationError("epsilon must be in (0, 1)")
        if self.teacher_rate_ratio <= 0:
            raise ConfigurationError("teacher_rate_ratio must be positive")
        return self


@dataclass(frozen=True)
class MelodyRepresentation:
    """
    Frame-level melody matrix (..., T_m, D). Teacher outputs are note-bin
    distributions (is_distribution=True); student outputs are raw features.
    """
    values: torch.Tensor
    is_distribution: bool = False

    @property
    def frame_count(self) -> int:
        return self.values.shape[-2]


# --------------------------------------------------
# Teacher (frozen, gradient-free)
# --------------------------------------------------
def teacher_frame_count(frames: int, config: MelodyConfig) -> int:
    return max(1, int(round(frames * config.teacher_rate_ratio)))


@torch.no_grad()
def teacher_extract(
    features: FeatureSequence,
    corpus_config: CorpusConfig,
    config: MelodyConfig = MelodyConfig(),
    dtype: torch.dtype = torch.float32,
) -> MelodyRepresentation:
    """
    Softened one-hot note-bin rows at the teacher frame rate:
    mass 1 - eps on the pitch bin plus eps spread uniformly over all bins.
    """
    pitch = oracle_pitch(features, corpus_config)
    T = pitch.shape[0]
    T_t = teacher_frame_count(T, config)
    src = np.minimum(((np.arange(T_t) + 0.5) / config.teacher_rate_ratio).astype(np.int64), T - 1)
    bins = torch.from_numpy(pitch[src])

    D_t = config.teacher_bins
    rows = torch.full((T_t, D_t), config.epsilon / D_t, dtype=dtype)
    rows[torch.arange(T_t), bins] += 1.0 - config.epsilon
    return MelodyRepresentation(rows, is_distribution=True)


# --------------------------------------------------
# Student extractor
# --------------------------------------------------
class MelodyExtractor(nn.Module):
    """Frame-wise encoder: D_f -> hidden (x hidden_layers) -> D_m."""

    def __init__(self, feature_dim: int, config: MelodyConfig = MelodyConfig(), zero_init_output: bool = False):
        super().__init__()
        layers = []
        width = feature_dim
        for _ in range(config.hidden_layers):
            layers += [nn.Linear(width, config.hidden), nn.GELU()]
            width = config.hidden
        self.hidden = nn.Sequential(*layers)
        self.output = nn.Linear(width, config.student_dim)
        self.feature_dim = feature_dim
        if zero_init_output:
            nn.init.zeros_(self.output.weight)
            nn.init.zeros_(self.output.bias)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-1] != self.feature_dim:
            raise ShapeError(f"extractor expects D_f={self.feature_dim}, got {features.shape[-1]}")
        return self.output(self.hidden(features))


def student_extract(
    features: Union[FeatureSequence, torch.Tensor],
    extractor: MelodyExtractor,
) -> MelodyRepresentation:
    """m_e = E_phi(x); gradients flow to the extractor parameters."""
    if isinstance(features, FeatureSequence):
        param = next(extractor.parameters())
        features = torch.as_tensor(features.frames, dtype=param.dtype, device=param.device)
    return MelodyRepresentation(extractor(features), is_distribution=False)


def make_projection(config: MelodyConfig = MelodyConfig()) -> nn.Linear:
    """Proj(.) aligning D_m with the teacher's note bins."""
    return nn.Linear(config.student_dim, config.teacher_bins)


# --------------------------------------------------
# Resampling and distillation
# --------------------------------------------------
def resample_melody(rep: MelodyRepresentation, target_frames: int) -> MelodyRepresentation:
    """Linear interpolation along time; distributions are re-normalized."""
    if target_frames < 1:
        raise ConfigurationError(f"target_frames must be >= 1, got {target_frames}")
    values = rep.values
    if values.shape[-2] < 1:
        raise ShapeError("cannot resample an empty representation")
    if values.shape[-2] == target_frames:
        return rep

    lead = values.shape[:-2]
    T, D = values.shape[-2:]
    flat = values.reshape(-1, T, D).transpose(1, 2)
    out = F.interpolate(flat, size=target_frames, mode="linear", align_corners=True)
    out = out.transpose(1, 2).reshape(*lead, target_frames, D)
    if rep.is_distribution:
        out = out / out.sum(dim=-1, keepdim=True)
    return MelodyRepresentation(out, rep.is_distribution)


def kd_loss(
    student: MelodyRepresentation,
    teacher: MelodyRepresentation,
    proj: nn.Module,
) -> torch.Tensor:
    """
    Mean over frames of KL(softmax(Proj(m_e)) || m_teacher).
    """
    if student.frame_count != teacher.frame_count:
        raise AlignmentError(
            f"student has {student.frame_count} frames, teacher {teacher.frame_count}"
        )
    log_p = F.log_softmax(proj(student.values), dim=-1)
    log_q = torch.log(teacher.values.to(log_p))
    kl = (log_p.exp() * (log_p - log_q)).sum(dim=-1)
    return kl.mean()


def melody_kd(
    features: FeatureSequence,
    student: MelodyRepresentation,
    proj: nn.Module,
    corpus_config: CorpusConfig,
    config: MelodyConfig = MelodyConfig(),
    teacher: MelodyRepresentation = None,
) -> torch.Tensor:
    """teacher_extract -> resample student to the teacher rate -> kd_loss."""
    if teacher is None:
        teacher = teacher_extract(features, corpus_config, config, dtype=student.values.dtype)
    aligned = resample_melody(student, teacher.frame_count)
    return kd_loss(aligned, teacher, proj)
