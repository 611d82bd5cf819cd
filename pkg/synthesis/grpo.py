# synthesis/grpo.py
"""
Group relative policy optimization over single-step-stochastic rollouts.

Only the one stochastic transition t' of each rollout carries a density,
so the policy ratio and the KL to the reference policy are both evaluated
on that transition.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import torch

from errors import ConfigurationError, ContractError, MelodyFlowError
from synthesis.backbone import ConditionBundle, SingerModel, prepare_conditions
from synthesis.corpus import CorpusConfig, FeatureSequence, GroundTruthClip
from synthesis.reward import (
    DEFAULT_WEIGHTS,
    RewardBundle,
    WerResult,
    group_advantage,
    score_sample,
)
from synthesis.sampler import (
    RolloutRecord,
    SamplerConfig,
    sample_sde_rollout,
    transition_log_prob,
    transition_mean,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    kl_weight: float = 0.04
    inner_epochs: int = 1
    ratio_clip: Optional[float] = 0.2
    noise_level_a: float = 0.7
    learning_rate: float = 1e-5
    steps: int = 300
    prompts_per_step: int = 2
    sampling_steps: int = 32
    cfg_scale: float = 2.0
    reward_weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    seed: int = 0

    def validate(self) -> "GrpoConfig":
        if self.group_size < 2:
            raise ConfigurationError(f"group_size must be >= 2, got {self.group_size}")
        if self.kl_weight < 0:
            raise ConfigurationError("kl_weight must be >= 0")
        if self.inner_epochs < 1 or self.prompts_per_step < 1 or self.steps < 0:
            raise ConfigurationError("inner_epochs and prompts_per_step must be >= 1, steps >= 0")
        if self.ratio_clip is not None and not 0.0 < self.ratio_clip < 1.0:
            raise ConfigurationError("ratio_clip must be in (0, 1) or disabled")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")
        if set(self.reward_weights) != set(DEFAULT_WEIGHTS):
            raise ConfigurationError(
                f"reward_weights must name exactly {sorted(DEFAULT_WEIGHTS)}, got {sorted(self.reward_weights)}"
            )
        if not all(np.isfinite(w) and w >= 0 for w in self.reward_weights.values()):
            raise ConfigurationError("reward weights must be finite and >= 0")
        self.sampler().validate()
        return self

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(
            steps=self.sampling_steps,
            cfg_scale=self.cfg_scale,
            noise_level_a=self.noise_level_a,
        )


@dataclass(frozen=True)
class PolicySnapshot:
    """Frozen parameter copy used as pi_old or pi_ref."""
    model: SingerModel
    tag: str

    @classmethod
    def take(cls, model: SingerModel, tag: str) -> "PolicySnapshot":
        if tag not in ("old", "reference"):
            raise ConfigurationError(f"unknown snapshot tag {tag!r}")
        frozen = copy.deepcopy(model)
        frozen.requires_grad_(False)
        frozen.eval()
        return cls(frozen, tag)


@dataclass(frozen=True)
class ScoredRollout:
    record: RolloutRecord
    reward: RewardBundle
    counts: WerResult
    prompt: GroundTruthClip


def member_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index), 7]).generate_state(1)[0])


def policy_conditions(prompt: GroundTruthClip, model: SingerModel) -> ConditionBundle:
    """
    Lyrics and pitch target come from the prompt clip; its singing is also
    the melody source, read through the policy's own extractor.
    """
    return prepare_conditions(prompt, model)


# --------------------------------------------------
# Rollouts
# --------------------------------------------------
@torch.no_grad()
def collect_group(
    prompt: GroundTruthClip,
    config: GrpoConfig,
    model_old: SingerModel,
    corpus_config: CorpusConfig,
    seed: int,
    member_seeds: Optional[Sequence[int]] = None,
) -> Optional[List[ScoredRollout]]:
    """
    G rollouts of one prompt under pi_old, scored and group-normalized.
    Returns None (and logs) when any member fails.
    """
    config.validate()
    sampler = config.sampler()
    seeds = list(member_seeds) if member_seeds is not None else [
        member_seed(seed, i) for i in range(config.group_size)
    ]
    if len(seeds) != config.group_size:
        raise ConfigurationError("one seed is required per group member")

    cond = policy_conditions(prompt, model_old)
    members = []
    try:
        for s in seeds:
            record = sample_sde_rollout(cond, sampler, model_old, s)
            features = FeatureSequence(record.final.detach().cpu().numpy(), corpus_config.frame_rate)
            bundle, counts, _ = score_sample(features, prompt, corpus_config, config.reward_weights)
            members.append((record, bundle, counts))
    except MelodyFlowError as exc:
        log.warning("discarding group for %s: %s", prompt.clip_id, exc)
        return None

    advantages = group_advantage([b.total for _, b, _ in members])
    return [
        ScoredRollout(record, bundle.with_advantage(a), counts, prompt)
        for (record, bundle, counts), a in zip(members, advantages)
    ]


# --------------------------------------------------
# Ratio, KL, objective
# --------------------------------------------------
def _log_prob(record, prompt, sampler, model, cond=None):
    cond = cond if cond is not None else policy_conditions(prompt, model)
    return transition_log_prob(record, cond, sampler, model)


def policy_ratio(
    record: RolloutRecord,
    model_new: SingerModel,
    model_old: SingerModel,
    prompt: GroundTruthClip,
    sampler: SamplerConfig,
) -> torch.Tensor:
    """exp(logp_new - logp_old) of the recorded stochastic transition."""
    if record.std <= 0:
        raise ContractError("rollout has no stochastic transition")
    logp_new = _log_prob(record, prompt, sampler, model_new)
    with torch.no_grad():
        logp_old = _log_prob(record, prompt, sampler, model_old)
    return torch.exp(logp_new - logp_old)


def kl_penalty(
    record: RolloutRecord,
    model_new: SingerModel,
    model_ref: SingerModel,
    prompt: GroundTruthClip,
    sampler: SamplerConfig,
    cond_new: Optional[ConditionBundle] = None,
) -> torch.Tensor:
    """KL of two equal-variance Gaussians: ||mu_new - mu_ref||^2 / (2 s^2)."""
    if record.std <= 0:
        raise ContractError("rollout has no stochastic transition")
    mu_new = transition_mean(record, cond_new or policy_conditions(prompt, model_new), sampler, model_new)
    with torch.no_grad():
        mu_ref = transition_mean(record, policy_conditions(prompt, model_ref), sampler, model_ref)
    return ((mu_new - mu_ref) ** 2).sum() / (2 * record.std ** 2)


def surrogate_objective(
    log_ratio: torch.Tensor,
    advantages: torch.Tensor,
    kl: torch.Tensor,
    kl_weight: float,
    ratio_clip: Optional[float],
) -> torch.Tensor:
    """Group mean of (ratio * A, PPO-clipped when enabled) - beta * KL."""
    ratio = torch.exp(log_ratio)
    surrogate = ratio * advantages
    if ratio_clip is not None:
        clipped = torch.clamp(ratio, 1.0 - ratio_clip, 1.0 + ratio_clip) * advantages
        surrogate = torch.minimum(surrogate, clipped)
    return (surrogate - kl_weight * kl).mean()


def group_objective(
    group: Sequence[ScoredRollout],
    model: SingerModel,
    old: PolicySnapshot,
    ref: PolicySnapshot,
    config: GrpoConfig,
):
    sampler = config.sampler()
    prompt = group[0].prompt
    cond_new = policy_conditions(prompt, model)
    with torch.no_grad():
        cond_old = policy_conditions(prompt, old.model)

    log_ratios, kls = [], []
    for member in group:
        if member.record.std <= 0:
            # no density: ratio 1, KL 0, no gradient
            zero = torch.zeros((), dtype=member.record.final.dtype, device=member.record.final.device)
            log_ratios.append(zero)
            kls.append(zero)
            continue
        logp_new = _log_prob(member.record, prompt, sampler, model, cond_new)
        with torch.no_grad():
            logp_old = _log_prob(member.record, prompt, sampler, old.model, cond_old)
        log_ratios.append(logp_new - logp_old)
        if config.kl_weight > 0:
            kls.append(kl_penalty(member.record, model, ref.model, prompt, sampler, cond_new))
        else:
            kls.append(torch.zeros((), dtype=logp_new.dtype))

    log_ratio = torch.stack(log_ratios)
    kl = torch.stack(kls)
    adv = torch.tensor([m.reward.advantage for m in group], dtype=log_ratio.dtype)
    objective = surrogate_objective(log_ratio, adv, kl, config.kl_weight, config.ratio_clip)
    return objective, log_ratio.detach(), kl.detach()


def grpo_step(
    groups: Sequence[Sequence[ScoredRollout]],
    config: GrpoConfig,
    model: SingerModel,
    snapshots: Mapping[str, PolicySnapshot],
    optimizer: torch.optim.Optimizer,
) -> Dict[str, float]:
    """
    One gradient-ascent step on the mean group objective. Non-finite
    gradients skip the update.
    """
    groups = [g for g in groups if g]
    if not groups:
        raise ConfigurationError("grpo_step needs at least one valid group")

    optimizer.zero_grad(set_to_none=True)
    objectives, ratios, kls = [], [], []
    for group in groups:
        objective, log_ratio, kl = group_objective(group, model, snapshots["old"], snapshots["reference"], config)
        objectives.append(objective)
        ratios.append(torch.exp(log_ratio))
        kls.append(kl)
    J = torch.stack(objectives).mean()
    if not J.requires_grad:
        log.warning("no stochastic transition in this step; update skipped")
        finite = False
    else:
        (-J).backward()
        grads = [p.grad for p in model.parameters() if p.grad is not None]
        finite = all(torch.isfinite(g).all() for g in grads)
        if finite:
            optimizer.step()
        else:
            log.warning("non-finite GRPO gradient; step skipped")
            optimizer.zero_grad(set_to_none=True)

    members = [m for g in groups for m in g]
    return {
        "objective": float(J.detach()),
        "mean_reward": float(np.mean([m.reward.total for m in members])),
        "mean_r_con": float(np.mean([m.reward.r_con for m in members])),
        "mean_r_mel": float(np.mean([m.reward.r_mel for m in members])),
        "mean_ratio": float(torch.cat(ratios).mean()),
        "mean_kl": float(torch.cat(kls).mean()),
        "skipped": not finite,
    }
