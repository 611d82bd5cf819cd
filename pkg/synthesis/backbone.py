# synthesis/backbone.py
"""
Conditional flow-matching synthesis model G_theta.

Lyrics, audio prompt and melody are summed into the frame embeddings of a
small transformer. Dropped conditions are replaced by learned null
embeddings, which is what classifier-free guidance samples against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from errors import (
    AlignmentError,
    ConfigurationError,
    DegenerateInputError,
    DomainError,
    ShapeError,
)
from synthesis.corpus import GroundTruthClip, LyricSequence, pad_lyrics
from synthesis.melody import (
    MelodyConfig,
    MelodyExtractor,
    MelodyRepresentation,
    make_projection,
    resample_melody,
    student_extract,
)

LYRICS, PROMPT, MELODY = 0, 1, 2


# --------------------------------------------------
# Configuration
# --------------------------------------------------
@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    hidden: int = 64
    heads: int = 4
    feature_dim: int = 16
    vocab_size: int = 32
    cka_layer_index: Optional[int] = None
    prompt_fraction: float = 0.125
    melody: MelodyConfig = field(default_factory=MelodyConfig)

    @classmethod
    def reference(cls, **overrides) -> "ModelConfig":
        """Reference dimensions (12 layers, 1024 hidden, 16 heads)."""
        return cls(**{"layers": 12, "hidden": 1024, "heads": 16, **overrides})

    @property
    def melody_dim(self) -> int:
        return self.melody.student_dim

    @property
    def cka_layer(self) -> int:
        return self.layers // 2 if self.cka_layer_index is None else self.cka_layer_index

    def prompt_frames(self, total_frames: int) -> int:
        return max(1, int(total_frames * self.prompt_fraction))

    def validate(self) -> "ModelConfig":
        if self.layers < 1 or self.hidden < 1 or self.heads < 1:
            raise ConfigurationError("layers, hidden and heads must be positive")
        if self.hidden % self.heads:
            raise ConfigurationError(f"heads ({self.heads}) must divide hidden ({self.hidden})")
        if not 0 <= self.cka_layer < self.layers:
            raise ConfigurationError(f"cka_layer_index must be in [0, {self.layers})")
        if not 0.0 < self.prompt_fraction < 1.0:
            raise ConfigurationError("prompt_fraction must be in (0, 1)")
        self.melody.validate()
        return self


@dataclass(frozen=True)
class ConditionBundle:
    padded_lyrics: torch.Tensor          # (T,) token grid
    prompt: torch.Tensor                 # (P, D_f) prefix of a reference clip
    melody: MelodyRepresentation         # (T, D_m) student output at rate T
    drop_flags: Tuple[bool, bool, bool] = (False, False, False)

    @property
    def num_frames(self) -> int:
        return self.padded_lyrics.shape[0]

    def dropped(self, lyrics: bool = True, prompt: bool = True, melody: bool = True) -> "ConditionBundle":
        return replace(self, drop_flags=(lyrics, prompt, melody))


@dataclass(frozen=True)
class LossWeights:
    lambda_kd: float = 1.0
    lambda_cka: float = 0.3
    step: int = 0

    @classmethod
    def at_step(
        cls,
        step: int,
        lambda_kd: float = 1.0,
        cka_start: float = 0.3,
        cka_end: float = 0.01,
        cka_decay_steps: int = 2500,
        cka_enabled: bool = True,
    ) -> "LossWeights":
        lam = lambda_cka_schedule(step, cka_start, cka_end, cka_decay_steps) if cka_enabled else 0.0
        return cls(lambda_kd=lambda_kd, lambda_cka=lam, step=step)


# --------------------------------------------------
# Network
# --------------------------------------------------
def sinusoidal_embedding(positions: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=positions.dtype, device=positions.device) / max(half, 1)
    )
    args = positions[..., None] * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class Block(nn.Module):
    def __init__(self, hidden: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(hidden)
        self.qkv = nn.Linear(hidden, 3 * hidden)
        self.out = nn.Linear(hidden, hidden)
        self.norm2 = nn.LayerNorm(hidden)
        self.mlp = nn.Sequential(nn.Linear(hidden, 4 * hidden), nn.GELU(), nn.Linear(4 * hidden, hidden))
        self.time_shift = nn.Linear(hidden, hidden)

    def attention(self, h: torch.Tensor) -> torch.Tensor:
        B, T, H = h.shape
        d = H // self.heads
        q, k, v = self.qkv(h).view(B, T, 3, self.heads, d).permute(2, 0, 3, 1, 4)
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d), dim=-1)
        return self.out((att @ v).transpose(1, 2).reshape(B, T, H))

    def forward(self, h: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = h + self.time_shift(temb)[:, None, :]
        h = h + self.attention(self.norm1(h))
        return h + self.mlp(self.norm2(h))


class VelocityNetwork(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        H, D_f = config.hidden, config.feature_dim
        self.config = config
        self.x_in = nn.Linear(D_f, H)
        self.lyrics_in = nn.Embedding(config.vocab_size, H)
        self.prompt_in = nn.Linear(D_f + 1, H)
        self.melody_in = nn.Linear(config.melody_dim, H)
        self.null_lyrics = nn.Parameter(torch.randn(H) * 0.02)
        self.null_prompt = nn.Parameter(torch.randn(H) * 0.02)
        self.null_melody = nn.Parameter(torch.randn(H) * 0.02)
        self.time_mlp = nn.Sequential(nn.Linear(H, H), nn.GELU(), nn.Linear(H, H))
        self.blocks = nn.ModuleList(Block(H, config.heads) for _ in range(config.layers))
        self.norm_out = nn.LayerNorm(H)
        self.head = nn.Linear(H, D_f)

    def forward(
        self,
        x_t: torch.Tensor,
        t: torch.Tensor,
        lyrics: torch.Tensor,
        prompt: torch.Tensor,
        melody: torch.Tensor,
        drops: torch.Tensor,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        x_t (B,T,D_f), t (B,), lyrics (B,T), prompt (B,T,D_f+1) with mask
        channel, melody (B,T,D_m), drops (B,3) bool.
        Returns velocity (B,T,D_f) and z_l (B,T,H).
        """
        B, T, _ = x_t.shape
        H = self.config.hidden

        def gated(emb, null, which):
            return torch.where(drops[:, which, None, None], null.expand(B, T, H), emb)

        pos = sinusoidal_embedding(torch.arange(T, dtype=x_t.dtype, device=x_t.device), H)
        temb = self.time_mlp(sinusoidal_embedding(t * 1000.0, H))
        h = (
            self.x_in(x_t)
            + gated(self.lyrics_in(lyrics), self.null_lyrics, LYRICS)
            + gated(self.prompt_in(prompt), self.null_prompt, PROMPT)
            + gated(self.melody_in(melody), self.null_melody, MELODY)
            + pos
        )

        z_l = None
        for i, block in enumerate(self.blocks):
            h = block(h, temb)
            if i == self.config.cka_layer:
                z_l = h
        return self.head(self.norm_out(h)), z_l


class SingerModel(nn.Module):
    """Extractor E_phi, projection and velocity network G_theta, trained jointly."""

    def __init__(self, config: ModelConfig = ModelConfig(), zero_init_extractor: bool = False):
        super().__init__()
        config.validate()
        self.config = config
        self.extractor = MelodyExtractor(config.feature_dim, config.melody, zero_init_extractor)
        self.projection = make_projection(config.melody)
        self.network = VelocityNetwork(config)

    @property
    def dtype(self) -> torch.dtype:
        return self.network.head.weight.dtype

    @property
    def device(self) -> torch.device:
        return self.network.head.weight.device

    def as_tensor(self, array) -> torch.Tensor:
        return torch.as_tensor(array, dtype=self.dtype, device=self.device)

    def extract_melody(self, features) -> MelodyRepresentation:
        if not torch.is_tensor(features):
            features = self.as_tensor(features.frames)
        return student_extract(features, self.extractor)

    def _batch(self, conds: Sequence[ConditionBundle], T: int):
        D_f = self.config.feature_dim
        lyrics, prompts, melodies, drops = [], [], [], []
        for cond in conds:
            if cond.num_frames != T or cond.melody.frame_count != T:
                raise ShapeError(
                    f"condition lengths (lyrics {cond.num_frames}, melody {cond.melody.frame_count}) != T={T}"
                )
            P = cond.prompt.shape[0]
            if P > T or cond.prompt.shape[-1] != D_f:
                raise ShapeError(f"prompt of shape {tuple(cond.prompt.shape)} does not fit ({T}, {D_f})")
            grid = torch.zeros(T, D_f + 1, dtype=self.dtype, device=self.device)
            grid[:P, :D_f] = cond.prompt.to(self.dtype)
            grid[:P, D_f] = 1.0
            lyrics.append(cond.padded_lyrics.to(self.device))
            prompts.append(grid)
            melodies.append(cond.melody.values.to(self.dtype))
            drops.append(torch.tensor(cond.drop_flags, dtype=torch.bool, device=self.device))
        return torch.stack(lyrics), torch.stack(prompts), torch.stack(melodies), torch.stack(drops)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, conds: Sequence[ConditionBundle]):
        if x_t.dim() != 3 or x_t.shape[-1] != self.config.feature_dim:
            raise ShapeError(f"x_t must be (B, T, {self.config.feature_dim}), got {tuple(x_t.shape)}")
        if len(conds) != x_t.shape[0]:
            raise ShapeError("one condition bundle is required per batch row")
        lyrics, prompt, melody, drops = self._batch(conds, x_t.shape[1])
        return self.network(x_t, t, lyrics, prompt, melody, drops)

    def velocity(self, x_t: torch.Tensor, t, cond: ConditionBundle):
        """Single sequence: returns (velocity (T,D_f), z_l (T,hidden))."""
        t = float(t) if not torch.is_tensor(t) else float(t.item())
        if not 0.0 <= t <= 1.0:
            raise DomainError(f"t must be in [0, 1], got {t}")
        if x_t.dim() != 2:
            raise ShapeError(f"x_t must be (T, D_f), got {tuple(x_t.shape)}")
        tt = torch.full((1,), t, dtype=self.dtype, device=self.device)
        v, z = self(x_t[None].to(self.dtype), tt, [cond])
        return v[0], z[0]

    def predict(self, x_t: torch.Tensor, t, cond: ConditionBundle) -> torch.Tensor:
        return self.velocity(x_t, t, cond)[0]


# --------------------------------------------------
# Conditions
# --------------------------------------------------
def prepare_conditions(
    clip: GroundTruthClip,
    model: SingerModel,
    lyrics: Optional[LyricSequence] = None,
    prompt_clip: Optional[GroundTruthClip] = None,
    melody_clip: Optional[GroundTruthClip] = None,
    melody: Optional[MelodyRepresentation] = None,
) -> ConditionBundle:
    """
    Build the conditions for generating `clip`: lyrics (default its own),
    the first P frames of `prompt_clip` and the student melody of
    `melody_clip` (both default to `clip`).
    """
    lyrics = lyrics or clip.lyrics
    T = lyrics.total_frames
    P = model.config.prompt_frames(T)
    prompt_src = prompt_clip or clip
    if melody is None:
        melody = model.extract_melody((melody_clip or clip).features)
    melody = resample_melody(melody, T)
    return ConditionBundle(
        padded_lyrics=torch.from_numpy(pad_lyrics(lyrics)),
        prompt=model.as_tensor(prompt_src.features.frames[:P]),
        melody=melody,
    )


def apply_condition_dropout(cond: ConditionBundle, rate: float, rng: np.random.Generator) -> ConditionBundle:
    """Drop lyrics, prompt and melody independently with probability `rate`."""
    if not 0.0 <= rate <= 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1], got {rate}")
    draws = rng.random(3) < rate
    flags = tuple(bool(old or new) for old, new in zip(cond.drop_flags, draws))
    return replace(cond, drop_flags=flags)


# --------------------------------------------------
# Losses
# --------------------------------------------------
def flow_matching_terms(
    model: SingerModel,
    x1: torch.Tensor,
    conds: Sequence[ConditionBundle],
    t: torch.Tensor,
    noise: torch.Tensor,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Batched rectified flow: x_t = (1-t) noise + t x1, target u = x1 - noise.
    Returns per-sample MSE (B,) and z_l (B,T,H).
    """
    if x1.shape != noise.shape:
        raise ShapeError(f"noise {tuple(noise.shape)} does not match data {tuple(x1.shape)}")
    tb = t.reshape(-1, 1, 1)
    x_t = (1.0 - tb) * noise + tb * x1
    u = x1 - noise
    v, z_l = model(x_t, t, conds)
    return ((v - u) ** 2).mean(dim=(1, 2)), z_l


def flow_matching_loss(
    clip: GroundTruthClip,
    cond: ConditionBundle,
    t: float,
    noise: torch.Tensor,
    model: SingerModel,
) -> torch.Tensor:
    if not 0.0 < float(t) < 1.0:
        raise DomainError(f"t must be in (0, 1), got {t}")
    x1 = model.as_tensor(clip.features.frames)[None]
    tt = torch.full((1,), float(t), dtype=model.dtype, device=model.device)
    loss, _ = flow_matching_terms(model, x1, [cond], tt, noise.to(model.dtype)[None])
    return loss[0]


def linear_cka(A: Union[torch.Tensor, np.ndarray], B: Union[torch.Tensor, np.ndarray]) -> torch.Tensor:
    """
    ||K^T L||_F^2 / (||K^T K||_F ||L^T L||_F) with K, L the centered Gram
    matrices of A (n x p) and B (n x q).
    """
    A = torch.as_tensor(A)
    B = torch.as_tensor(B, dtype=A.dtype)
    if A.dim() != 2 or B.dim() != 2:
        raise ShapeError("linear_cka expects two matrices")
    if A.shape[0] != B.shape[0]:
        raise AlignmentError(f"row counts differ: {A.shape[0]} vs {B.shape[0]}")
    if A.shape[0] < 2:
        raise ShapeError("linear_cka needs at least 2 rows")

    def centered_gram(X):
        Xc = X - X.mean(dim=0, keepdim=True)
        norm = torch.linalg.matrix_norm(Xc)
        tol = 100 * torch.finfo(X.dtype).eps * torch.linalg.matrix_norm(X).detach()
        if norm.detach() <= tol:
            raise DegenerateInputError("input has zero variance across rows")
        Xc = Xc / norm
        return Xc @ Xc.T

    K, L = centered_gram(A), centered_gram(B)
    KL = K.T @ L
    num = (KL * KL).sum()
    den = torch.linalg.matrix_norm(K.T @ K) * torch.linalg.matrix_norm(L.T @ L)
    return num / den


def cka_loss(melody: Union[MelodyRepresentation, torch.Tensor], z_l: torch.Tensor) -> torch.Tensor:
    """1 - CKA(m_e, z_l), averaged over the batch for (B,T,.) inputs."""
    m = melody.values if isinstance(melody, MelodyRepresentation) else melody
    if m.shape[-2] != z_l.shape[-2]:
        raise AlignmentError(f"melody has {m.shape[-2]} frames, z_l {z_l.shape[-2]}")
    if m.dim() == 2:
        return 1.0 - linear_cka(m, z_l)
    if m.shape[0] != z_l.shape[0]:
        raise ShapeError("batch sizes differ")
    return torch.stack([1.0 - linear_cka(a, b) for a, b in zip(m, z_l)]).mean()


def lambda_cka_schedule(step: int, start: float = 0.3, end: float = 0.01, decay_steps: int = 2500) -> float:
    """Linear decay from `start` at step 0 to `end` at `decay_steps`, then flat."""
    if step < 0:
        raise DomainError(f"step must be >= 0, got {step}")
    if decay_steps <= 0 or step >= decay_steps:
        return end
    return start + (end - start) * (step / decay_steps)


def total_loss(diffusion, kd, cka, weights: LossWeights):
    return diffusion + weights.lambda_kd * kd + weights.lambda_cka * cka
