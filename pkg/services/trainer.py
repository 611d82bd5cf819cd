# services/trainer.py
"""
Pre-training: joint flow-matching, melody distillation and CKA alignment.

Each step draws a batch from a per-step RNG, then per-clip timestep, noise
and condition dropout from (seed, step, clip_id), so a run (and a resumed
run) is a pure function of its inputs.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from marshmallow import RAISE, Schema, ValidationError, fields, validate
from tqdm import tqdm

from config import read_config_file
from errors import ConfigurationError, DegenerateInputError, DomainError
from services.checkpoints import Checkpoint, save_checkpoint
from synthesis.backbone import (
    LossWeights,
    ModelConfig,
    SingerModel,
    apply_condition_dropout,
    cka_loss,
    flow_matching_terms,
    prepare_conditions,
    total_loss,
)
from synthesis.corpus import CorpusConfig, GroundTruthClip
from synthesis.melody import MelodyConfig, MelodyRepresentation, melody_kd, teacher_extract

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    total_steps: int = 2000
    warmup_steps: int = 100
    peak_lr: float = 5e-4
    weight_decay: float = 0.0
    dropout_rate: float = 0.2
    lambda_kd: float = 1.0
    cka_start: float = 0.3
    cka_end: float = 0.01
    cka_decay_steps: int = 2500
    cka_enabled: bool = True
    seed: int = 0
    checkpoint_every: int = 0

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1 or self.total_steps < 1:
            raise ConfigurationError("batch_size and total_steps must be >= 1")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigurationError("warmup_steps must be in [0, total_steps]")
        if self.peak_lr < 0 or self.weight_decay < 0:
            raise ConfigurationError("peak_lr and weight_decay must be >= 0")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ConfigurationError("dropout_rate must be in [0, 1]")
        return self

    def loss_weights(self, step: int) -> LossWeights:
        return LossWeights.at_step(
            step, self.lambda_kd, self.cka_start, self.cka_end, self.cka_decay_steps, self.cka_enabled
        )


# --------------------------------------------------
# Flat config file
# --------------------------------------------------
class TrainFileSchema(Schema):
    """Keys of the KEY=VALUE pre-training file (lower-cased)."""

    class Meta:
        unknown = RAISE

    batch_size = fields.Integer(validate=validate.Range(min=1))
    total_steps = fields.Integer(validate=validate.Range(min=1))
    warmup_steps = fields.Integer(validate=validate.Range(min=0))
    peak_lr = fields.Float(validate=validate.Range(min=0))
    weight_decay = fields.Float(validate=validate.Range(min=0))
    dropout_rate = fields.Float(validate=validate.Range(min=0, max=1))
    lambda_kd = fields.Float()
    cka_start = fields.Float()
    cka_end = fields.Float()
    cka_decay_steps = fields.Integer()
    cka_enabled = fields.Boolean()
    seed = fields.Integer()
    checkpoint_every = fields.Integer(validate=validate.Range(min=0))

    model_layers = fields.Integer(validate=validate.Range(min=1))
    model_hidden = fields.Integer(validate=validate.Range(min=1))
    model_heads = fields.Integer(validate=validate.Range(min=1))
    model_cka_layer_index = fields.Integer(validate=validate.Range(min=0))
    model_prompt_fraction = fields.Float()
    model_melody_dim = fields.Integer(validate=validate.Range(min=1))
    model_melody_hidden = fields.Integer(validate=validate.Range(min=1))


def load_train_file(path, corpus_config: CorpusConfig):
    """
    Parse a flat KEY=VALUE file into (TrainConfig, ModelConfig). MODEL_*
    keys configure the network; D_f and V always come from the corpus.
    """
    raw = read_config_file(path)
    try:
        values = TrainFileSchema().load(raw)
    except ValidationError as exc:
        raise ConfigurationError(f"{path}: {exc.messages}") from exc

    model_keys = {k: values.pop(k) for k in list(values) if k.startswith("model_")}
    melody = MelodyConfig(
        student_dim=model_keys.pop("model_melody_dim", MelodyConfig.student_dim),
        hidden=model_keys.pop("model_melody_hidden", MelodyConfig.hidden),
    )
    model = ModelConfig(
        feature_dim=corpus_config.feature_dim,
        vocab_size=corpus_config.vocab_size,
        melody=melody,
        **{k[len("model_"):]: v for k, v in model_keys.items()},
    ).validate()
    return TrainConfig(**values).validate(), model


# --------------------------------------------------
# Schedules and RNG
# --------------------------------------------------
def lr_schedule(step: int, config: TrainConfig) -> float:
    """Linear warm-up to peak_lr, then linear decay to 0 at total_steps."""
    if not 0 <= step <= config.total_steps:
        raise DomainError(f"step {step} outside [0, {config.total_steps}]")
    if step < config.warmup_steps:
        return config.peak_lr * step / config.warmup_steps
    span = config.total_steps - config.warmup_steps
    if span == 0:
        return config.peak_lr
    return config.peak_lr * (config.total_steps - step) / span


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(step)]))


def clip_rng(seed: int, step: int, clip_id: str) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), int(step), zlib.crc32(clip_id.encode())])
    )


def draw_batch(clips: Sequence[GroundTruthClip], step: int, config: TrainConfig) -> List[GroundTruthClip]:
    size = min(config.batch_size, len(clips))
    idx = step_rng(config.seed, step).choice(len(clips), size=size, replace=False)
    return [clips[i] for i in sorted(idx)]


def make_optimizer(model: SingerModel, config: TrainConfig, lr: Optional[float] = None) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(),
        lr=config.peak_lr if lr is None else lr,
        betas=(0.9, 0.95),
        weight_decay=config.weight_decay,
    )


# --------------------------------------------------
# One step
# --------------------------------------------------
class TeacherCache:
    """Frozen teacher outputs per clip id; the teacher never changes."""

    def __init__(self, corpus_config: CorpusConfig, melody_config: MelodyConfig):
        self.corpus_config = corpus_config
        self.melody_config = melody_config
        self._cache: Dict[str, MelodyRepresentation] = {}

    def get(self, clip: GroundTruthClip, dtype: torch.dtype) -> MelodyRepresentation:
        rep = self._cache.get(clip.clip_id)
        if rep is None or rep.values.dtype != dtype:
            rep = teacher_extract(clip.features, self.corpus_config, self.melody_config, dtype)
            self._cache[clip.clip_id] = rep
        return rep


def train_step(
    batch: Sequence[GroundTruthClip],
    model: SingerModel,
    optimizer: torch.optim.Optimizer,
    step: int,
    config: TrainConfig,
    corpus_config: CorpusConfig,
    teachers: Optional[TeacherCache] = None,
) -> Dict[str, float]:
    """
    One joint update of extractor, projection and velocity network.
    Returns the loss breakdown; `skipped` is set when the loss is not finite.
    """
    teachers = teachers or TeacherCache(corpus_config, model.config.melody)
    lr = lr_schedule(step, config)
    for group in optimizer.param_groups:
        group["lr"] = lr

    model.train()
    x1 = model.as_tensor(np.stack([c.features.frames for c in batch]))
    m_e = model.extract_melody(x1).values                       # (B, T, D_m)

    ts, noises, conds = [], [], []
    for i, clip in enumerate(batch):
        rng = clip_rng(config.seed, step, clip.clip_id)
        ts.append(rng.uniform(1e-5, 1.0 - 1e-5))
        gen = torch.Generator().manual_seed(int(rng.integers(2 ** 63 - 1)))
        noises.append(torch.randn(x1.shape[1:], generator=gen, dtype=model.dtype))
        cond = prepare_conditions(clip, model, melody=MelodyRepresentation(m_e[i]))
        conds.append(apply_condition_dropout(cond, config.dropout_rate, rng))

    t = torch.tensor(ts, dtype=model.dtype, device=model.device)
    noise = torch.stack(noises).to(model.device)
    diff_per, z_l = flow_matching_terms(model, x1, conds, t, noise)
    diff = diff_per.mean()

    kd = torch.stack([
        melody_kd(
            clip.features,
            MelodyRepresentation(m_e[i]),
            model.projection,
            corpus_config,
            model.config.melody,
            teacher=teachers.get(clip, model.dtype),
        )
        for i, clip in enumerate(batch)
    ]).mean()

    weights = config.loss_weights(step)
    try:
        cka = cka_loss(m_e, z_l)
    except DegenerateInputError as exc:
        log.warning("step %d: CKA undefined (%s); step skipped", step, exc)
        return {"step": step, "skipped": True, "lr": lr}

    total = total_loss(diff, kd, cka, weights)
    if not torch.isfinite(total):
        log.warning("step %d: non-finite loss; step skipped", step)
        return {"step": step, "skipped": True, "lr": lr}

    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()

    parts = {"diff": float(diff.detach()), "kd": float(kd.detach()), "cka": float(cka.detach())}
    return {
        "step": step,
        "loss_total": total_loss(parts["diff"], parts["kd"], parts["cka"], weights),
        "loss_diff": parts["diff"],
        "loss_kd": parts["kd"],
        "loss_cka": parts["cka"],
        "kd_term": weights.lambda_kd * parts["kd"],
        "cka_term": weights.lambda_cka * parts["cka"],
        "lr": lr,
        "lambda_cka": weights.lambda_cka,
        "cka": 1.0 - parts["cka"],
        "skipped": False,
    }


# --------------------------------------------------
# Loop
# --------------------------------------------------
LOG_KEYS = ("step", "loss_total", "loss_diff", "loss_kd", "loss_cka", "lr", "lambda_cka", "cka")


def pretrain(
    clips: Sequence[GroundTruthClip],
    corpus_config: CorpusConfig,
    model_config: ModelConfig,
    config: TrainConfig,
    out_dir,
    resume: Optional[Checkpoint] = None,
    device: str = "cpu",
    progress: bool = True,
) -> SingerModel:
    """
    Train for steps [start, total_steps). Writes train_log.jsonl and
    checkpoint.zip (plus step_<n>.zip snapshots when checkpoint_every > 0).
    """
    config.validate()
    if not clips:
        raise ConfigurationError("cannot train on an empty corpus")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(config.seed)
    model = SingerModel(model_config).to(device)
    optimizer = make_optimizer(model, config)
    start = 0
    if resume is not None:
        model.load_state_dict(resume.model_state)
        if resume.optimizer_state is not None:
            optimizer.load_state_dict(resume.optimizer_state)
        start = resume.step
        log.info("resuming from step %d", start)

    extra = {
        "corpus_config": dataclasses.asdict(corpus_config),
        "train_config": dataclasses.asdict(config),
    }
    teachers = TeacherCache(corpus_config, model_config.melody)
    log_path = out / "train_log.jsonl"
    mode = "a" if resume is not None else "w"

    with open(log_path, mode) as fh:
        for step in tqdm(range(start, config.total_steps), disable=not progress, desc="pretrain"):
            record = train_step(draw_batch(clips, step, config), model, optimizer, step, config, corpus_config, teachers)
            if not record["skipped"]:
                fh.write(json.dumps({k: record[k] for k in LOG_KEYS}, sort_keys=True) + "\n")
            if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
                save_checkpoint(out / f"step_{step + 1}.zip", model, step + 1, optimizer, extra)

    save_checkpoint(out / "checkpoint.zip", model, config.total_steps, optimizer, extra)
    return model
