#!/usr/bin/env python3
import os
import sys

# -------------------------------------------------
# Ensure project root is on PYTHONPATH
# -------------------------------------------------
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

import argparse
import json
from pathlib import Path

import numpy as np

from config import configure_logging, get_device, parse_weights
from services.checkpoints import load_checkpoint
from services.evaluation import evaluate
from services.post_training import post_train
from services.trainer import TrainConfig, pretrain
from synthesis.backbone import ModelConfig
from synthesis.corpus import CorpusConfig, generate_corpus
from synthesis.grpo import GrpoConfig
from synthesis.reward import DEFAULT_WEIGHTS
from synthesis.sampler import SamplerConfig


def log(msg):
    print(f"[GRPO-SANITY] {msg}", flush=True)


def mean_rewards(report):
    rows = report["clips"]
    return (
        float(np.mean([r["r_con"] + r["r_mel"] for r in rows])),
        float(np.mean([r["r_mel"] for r in rows])),
    )


def run_seed(seed, args, out):
    corpus_config = CorpusConfig()
    clips = generate_corpus(args.clips, corpus_config, seed)
    heldout = clips[-args.holdout:]
    training = clips[:-args.holdout]
    model_config = ModelConfig(feature_dim=corpus_config.feature_dim, vocab_size=corpus_config.vocab_size)
    train_config = TrainConfig(total_steps=args.pretrain_steps, seed=seed)

    log(f"seed {seed}: pre-training {args.pretrain_steps} steps")
    pretrain(training, corpus_config, model_config, train_config, out / "pretrain", device=get_device())
    checkpoint = load_checkpoint(out / "pretrain" / "checkpoint.zip")

    sampler = SamplerConfig()
    before = evaluate(checkpoint.build_model(get_device()), heldout, corpus_config, sampler, seed)

    log(f"seed {seed}: GRPO {args.grpo_steps} steps")
    grpo_config = GrpoConfig(steps=args.grpo_steps, reward_weights=args.reward_weights, seed=seed)
    model = post_train(
        checkpoint, clips, corpus_config, grpo_config, out / "grpo",
        holdout=args.holdout, device=get_device(),
    )
    after = evaluate(model, heldout, corpus_config, sampler, seed)

    (out / "before.json").write_text(json.dumps(before, sort_keys=True, indent=1))
    (out / "after.json").write_text(json.dumps(after, sort_keys=True, indent=1))
    return mean_rewards(before), mean_rewards(after)


def main():
    parser = argparse.ArgumentParser(description="post-training should raise held-out reward")
    parser.add_argument("--clips", type=int, default=200)
    parser.add_argument("--holdout", type=int, default=30)
    parser.add_argument("--pretrain-steps", type=int, default=2000)
    parser.add_argument("--grpo-steps", type=int, default=300)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--out", default="runs/grpo_sanity")
    parser.add_argument("--reward-weights", type=parse_weights, default=dict(DEFAULT_WEIGHTS))
    args = parser.parse_args()
    if not 1 <= args.holdout < args.clips:
        parser.error("--holdout must leave both training and held-out clips")
    configure_logging()

    improved, mel_ok = 0, True
    for seed in args.seeds:
        out = Path(args.out) / f"seed_{seed}"
        (total_0, mel_0), (total_1, mel_1) = run_seed(seed, args, out)
        log(f"seed {seed}: reward {total_0:.4f} -> {total_1:.4f}, r_mel {mel_0:.4f} -> {mel_1:.4f}")
        improved += total_1 > total_0
        mel_ok &= mel_1 >= mel_0 - 0.02

    need = len(args.seeds) - 1 if len(args.seeds) > 1 else 1
    passed = improved >= need and mel_ok
    log(f"improved in {improved}/{len(args.seeds)} seeds; r_mel held: {mel_ok} -> {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
