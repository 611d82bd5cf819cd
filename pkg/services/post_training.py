# services/post_training.py
"""
GRPO post-training loop around synthesis.grpo.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path
from typing import List, Sequence

import numpy as np
import torch
from tqdm import tqdm

from errors import ConfigurationError
from services.checkpoints import Checkpoint, save_checkpoint
from synthesis.backbone import SingerModel
from synthesis.corpus import CorpusConfig, GroundTruthClip
from synthesis.grpo import GrpoConfig, PolicySnapshot, collect_group, grpo_step

log = logging.getLogger(__name__)

CURVE_KEYS = ("step", "mean_reward", "mean_r_con", "mean_r_mel", "mean_kl")


def prompt_pool(clips: Sequence[GroundTruthClip], holdout: int) -> List[GroundTruthClip]:
    """Training prompts: everything except the last `holdout` clips."""
    if holdout < 0:
        raise ConfigurationError("holdout must be >= 0")
    pool = list(clips[: len(clips) - holdout]) if holdout else list(clips)
    if not pool:
        raise ConfigurationError(f"holdout={holdout} leaves no prompts out of {len(clips)} clips")
    return pool


def group_seed(seed: int, step: int, slot: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(step), int(slot), 11]).generate_state(1)[0])


def post_train(
    checkpoint: Checkpoint,
    clips: Sequence[GroundTruthClip],
    corpus_config: CorpusConfig,
    config: GrpoConfig,
    out_dir,
    holdout: int = 0,
    device: str = "cpu",
    progress: bool = True,
) -> SingerModel:
    """
    Refresh pi_old each outer step, collect one group per sampled prompt,
    then run `inner_epochs` updates against the frozen reference policy.
    Writes grpo_curves.jsonl and grpo.zip under out_dir.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    model = checkpoint.build_model(device)
    reference = PolicySnapshot.take(model, "reference")
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.learning_rate, betas=(0.9, 0.95), weight_decay=0.0
    )
    pool = prompt_pool(clips, holdout)

    with open(out / "grpo_curves.jsonl", "w") as fh:
        for step in tqdm(range(config.steps), disable=not progress, desc="grpo"):
            old = PolicySnapshot.take(model, "old")
            rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), step, 5]))
            chosen = rng.choice(len(pool), size=min(config.prompts_per_step, len(pool)), replace=False)

            groups = []
            for slot, i in enumerate(sorted(chosen)):
                group = collect_group(pool[i], config, old.model, corpus_config, group_seed(config.seed, step, slot))
                if group is not None:
                    groups.append(group)
            if not groups:
                log.warning("step %d: every group was discarded", step)
                continue

            for _ in range(config.inner_epochs):
                metrics = grpo_step(groups, config, model, {"old": old, "reference": reference}, optimizer)
            fh.write(json.dumps({"step": step, **{k: metrics[k] for k in CURVE_KEYS[1:]}}, sort_keys=True) + "\n")
            fh.flush()

    extra = dict(checkpoint.extra)
    extra["grpo_config"] = dataclasses.asdict(config)
    save_checkpoint(out / "grpo.zip", model, checkpoint.step, extra=extra)
    return model
