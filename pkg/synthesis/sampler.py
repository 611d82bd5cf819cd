# synthesis/sampler.py
"""
Euler ODE sampling with classifier-free guidance, and the stochastic
variant used for post-training rollouts: noise is injected at exactly one
step t' and every other step stays deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Protocol, Tuple

import numpy as np
import torch

from errors import ConfigurationError, ContractError, DomainError
from synthesis.backbone import ConditionBundle
from synthesis.corpus import FeatureSequence

T_MAX = 1.0 - 1e-4


class VelocityModel(Protocol):
    def predict(self, x_t: torch.Tensor, t: float, cond: ConditionBundle) -> torch.Tensor: ...


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 32
    cfg_scale: float = 2.0
    noise_level_a: float = 0.7
    stochastic_step_index: Optional[int] = None

    def validate(self) -> "SamplerConfig":
        if self.steps < 1:
            raise ConfigurationError(f"steps must be >= 1, got {self.steps}")
        if self.cfg_scale < 0:
            raise ConfigurationError("cfg_scale must be >= 0")
        if self.noise_level_a < 0:
            raise ConfigurationError("noise_level_a must be >= 0")
        if self.stochastic_step_index is not None and not 0 <= self.stochastic_step_index < self.steps:
            raise ConfigurationError(
                f"stochastic_step_index must be in [0, {self.steps}), got {self.stochastic_step_index}"
            )
        return self

    @property
    def dt(self) -> float:
        return 1.0 / self.steps

    def time(self, k: int) -> float:
        return k / self.steps


@dataclass(frozen=True)
class RolloutRecord:
    """
    Everything needed to replay a rollout and to re-evaluate the Gaussian
    density of its single stochastic transition under other parameters.
    states[0] is x_0, states[-1] is the final sample x_1.
    """
    initial_noise: torch.Tensor
    states: Tuple[torch.Tensor, ...]
    step_index: int
    injected_noise: torch.Tensor
    sigma: float
    dt: float
    log_prob: float
    seed: int

    @property
    def final(self) -> torch.Tensor:
        return self.states[-1]

    @property
    def std(self) -> float:
        return self.sigma * math.sqrt(self.dt)

    def transition(self) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.states[self.step_index], self.states[self.step_index + 1]


# --------------------------------------------------
# Guidance and schedule
# --------------------------------------------------
def cfg_velocity(x_t, t, cond: ConditionBundle, cfg_scale: float, model: VelocityModel) -> torch.Tensor:
    """v_uncond + s (v_cond - v_uncond); the unconditional pass drops all conditions."""
    if cfg_scale < 0:
        raise ConfigurationError("cfg_scale must be >= 0")
    if cfg_scale == 1.0:
        return model.predict(x_t, t, cond)
    v_uncond = model.predict(x_t, t, cond.dropped())
    if cfg_scale == 0.0:
        return v_uncond
    v_cond = model.predict(x_t, t, cond)
    return v_uncond + cfg_scale * (v_cond - v_uncond)


def sigma_schedule(t: float, a: float) -> float:
    """sigma_t = a sqrt(t / (1 - t)), with t clamped to 1 - 1e-4."""
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}")
    t = min(float(t), T_MAX)
    return a * math.sqrt(t / (1.0 - t))


def initial_noise(cond: ConditionBundle, seed: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(int(seed))
    shape = (cond.num_frames, cond.prompt.shape[-1])
    return torch.randn(shape, generator=gen, dtype=cond.prompt.dtype).to(cond.prompt.device)


def _drift(x, k: int, cond, config: SamplerConfig, model) -> torch.Tensor:
    return x + config.dt * cfg_velocity(x, config.time(k), cond, config.cfg_scale, model)


def _gaussian_log_prob(x_next: torch.Tensor, mean: torch.Tensor, std: float) -> torch.Tensor:
    if std <= 0:
        raise ContractError("stochastic transition has zero noise; its density is undefined")
    d = x_next.numel()
    return -((x_next - mean) ** 2).sum() / (2 * std ** 2) - d * math.log(std) - 0.5 * d * math.log(2 * math.pi)


# --------------------------------------------------
# Sampling
# --------------------------------------------------
@torch.no_grad()
def integrate_ode(cond: ConditionBundle, config: SamplerConfig, model: VelocityModel, x0: torch.Tensor) -> torch.Tensor:
    x = x0
    for k in range(config.steps):
        x = _drift(x, k, cond, config, model)
    return x


def sample_ode(
    cond: ConditionBundle,
    config: SamplerConfig,
    model: VelocityModel,
    seed: int,
    frame_rate: float = 50.0,
) -> FeatureSequence:
    config.validate()
    if config.stochastic_step_index is not None:
        raise ConfigurationError("sample_ode is deterministic; unset stochastic_step_index")
    x1 = integrate_ode(cond, config, model, initial_noise(cond, seed))
    return FeatureSequence(x1.detach().cpu().numpy(), frame_rate=frame_rate)


def draw_step_index(config: SamplerConfig, seed: int) -> int:
    """
    Uniform over steps 1 .. steps-1 (step 0 has sigma_0 = 0 and would give a
    degenerate transition).
    """
    if config.stochastic_step_index is not None:
        return config.stochastic_step_index
    if config.steps == 1:
        return 0
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    return int(rng.integers(1, config.steps))


@torch.no_grad()
def sample_sde_rollout(
    cond: ConditionBundle,
    config: SamplerConfig,
    model: VelocityModel,
    seed: int,
) -> RolloutRecord:
    config.validate()
    k_star = draw_step_index(config, seed)
    x0 = initial_noise(cond, seed)
    eps_gen = torch.Generator().manual_seed(int(np.random.SeedSequence([int(seed), 2]).generate_state(1)[0]))
    eps = torch.randn(x0.shape, generator=eps_gen, dtype=x0.dtype).to(x0.device)

    sigma = sigma_schedule(config.time(k_star), config.noise_level_a)
    std = sigma * math.sqrt(config.dt)

    states = [x0]
    x = x0
    for k in range(config.steps):
        x = _drift(x, k, cond, config, model)
        if k == k_star:
            x = x + std * eps
        states.append(x)

    log_prob = float("nan")
    if std > 0:
        log_prob = float(_gaussian_log_prob(states[k_star + 1], states[k_star + 1] - std * eps, std))

    return RolloutRecord(
        initial_noise=x0,
        states=tuple(states),
        step_index=k_star,
        injected_noise=eps,
        sigma=sigma,
        dt=config.dt,
        log_prob=log_prob,
        seed=int(seed),
    )


@torch.no_grad()
def replay_rollout(record: RolloutRecord, cond: ConditionBundle, config: SamplerConfig, model: VelocityModel) -> torch.Tensor:
    x = record.initial_noise
    for k in range(config.steps):
        x = _drift(x, k, cond, config, model)
        if k == record.step_index:
            x = x + record.std * record.injected_noise
    return x


def transition_mean(record: RolloutRecord, cond: ConditionBundle, config: SamplerConfig, model: VelocityModel) -> torch.Tensor:
    """Drift mean of x_{t'+1} given the recorded x_{t'}; differentiable in the model."""
    x_k, _ = record.transition()
    return _drift(x_k, record.step_index, cond, config, model)


def transition_log_prob(record: RolloutRecord, cond: ConditionBundle, config: SamplerConfig, model: VelocityModel) -> torch.Tensor:
    _, x_next = record.transition()
    return _gaussian_log_prob(x_next, transition_mean(record, cond, config, model), record.std)
