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
import tempfile
from pathlib import Path

from melodyflow import run


def log(msg):
    print(f"[PIPELINE] {msg}", flush=True)


def pipeline(root, args):
    root = Path(root)
    cfg = root / "train.cfg"
    cfg.write_text(f"TOTAL_STEPS={args.steps}\nWARMUP_STEPS=50\nBATCH_SIZE=8\n")
    seed = ["--seed", str(args.seed)]
    steps = [
        ["corpus", "generate", "--n", str(args.clips), "--out", str(root / "corpus"), *seed],
        ["train", "pretrain", "--corpus", str(root / "corpus"), "--config", str(cfg),
         "--out", str(root / "train"), *seed],
        ["sample", "--checkpoint", str(root / "train" / "checkpoint.zip"),
         "--clip", str(root / "corpus" / "clip_00000"), "--out", str(root / "sample"), *seed],
        ["eval", "--checkpoint", str(root / "train" / "checkpoint.zip"), "--corpus", str(root / "corpus"),
         "--limit", str(args.eval_clips), "--out", str(root / "eval.json"), *seed],
    ]
    for argv in steps:
        code = run(argv)
        if code:
            raise SystemExit(f"`{' '.join(argv[:2])}` exited with {code}")
    return (root / "eval.json").read_bytes(), (root / "sample" / "features.bin").read_bytes()


def main():
    parser = argparse.ArgumentParser(description="corpus -> pretrain -> sample -> eval, twice")
    parser.add_argument("--clips", type=int, default=50)
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--eval-clips", type=int, default=10)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        log("run 1")
        first = pipeline(a, args)
        log("run 2")
        second = pipeline(b, args)

    same = first == second
    log(f"eval JSON and sample identical: {same}")
    return 0 if same else 1


if __name__ == "__main__":
    sys.exit(main())
