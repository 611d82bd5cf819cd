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

from config import configure_logging, get_device
from services.trainer import TrainConfig, pretrain
from synthesis.backbone import ModelConfig
from synthesis.corpus import CorpusConfig, generate_corpus


def log(msg):
    print(f"[CKA-ABLATION] {msg}", flush=True)


def cka_at(log_path, step):
    for line in Path(log_path).read_text().splitlines():
        row = json.loads(line)
        if row["step"] == step:
            return row["cka"]
    raise SystemExit(f"step {step} missing from {log_path}")


def main():
    parser = argparse.ArgumentParser(description="CKA alignment on vs off, same seed")
    parser.add_argument("--clips", type=int, default=200)
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--measure-step", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/cka_ablation")
    args = parser.parse_args()
    configure_logging()

    corpus_config = CorpusConfig()
    clips = generate_corpus(args.clips, corpus_config, args.seed)
    model_config = ModelConfig(feature_dim=corpus_config.feature_dim, vocab_size=corpus_config.vocab_size)

    values = {}
    for enabled in (True, False):
        name = "with_cka" if enabled else "without_cka"
        out = Path(args.out) / name
        config = TrainConfig(total_steps=args.steps, seed=args.seed, cka_enabled=enabled)
        log(f"{name}: {args.steps} steps")
        pretrain(clips, corpus_config, model_config, config, out, device=get_device())
        values[name] = cka_at(out / "train_log.jsonl", args.measure_step)
        log(f"{name}: CKA at step {args.measure_step} = {values[name]:.4f}")

    passed = values["with_cka"] > values["without_cka"]
    log("PASS" if passed else "FAIL")
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
