# commands/train.py
import dataclasses
import logging
import sys

from config import get_device, guard_output_dir, parse_weights, resolve_seed
from services.checkpoints import load_checkpoint
from services.corpus_store import load_corpus
from services.manifest import ExperimentManifest, write_manifest
from services.post_training import post_train
from services.trainer import TrainConfig, load_train_file, pretrain
from synthesis.backbone import ModelConfig
from synthesis.grpo import GrpoConfig
from synthesis.reward import DEFAULT_WEIGHTS

log = logging.getLogger(__name__)


def register(subparsers):
    p = subparsers.add_parser("train", help="pre-training and GRPO post-training")
    sub = p.add_subparsers(dest="stage", required=True)

    pre = sub.add_parser("pretrain", help="joint flow-matching / KD / CKA pre-training")
    pre.add_argument("--corpus", required=True)
    pre.add_argument("--config", help="flat KEY=VALUE training config")
    pre.add_argument("--out", required=True)
    pre.add_argument("--steps", type=int, help="override TOTAL_STEPS")
    pre.add_argument("--seed", type=int, default=None)
    pre.add_argument("--resume", help="checkpoint to continue from")
    pre.add_argument("--force", action="store_true")
    pre.set_defaults(func=run_pretrain)

    grpo = sub.add_parser("grpo", help="GRPO post-training from a checkpoint")
    grpo.add_argument("--checkpoint", required=True)
    grpo.add_argument("--corpus", required=True)
    grpo.add_argument("--out", required=True)
    grpo.add_argument("--group-size", type=int, default=GrpoConfig.group_size)
    grpo.add_argument("--beta", type=float, default=GrpoConfig.kl_weight)
    grpo.add_argument("--noise-a", type=float, default=GrpoConfig.noise_level_a)
    grpo.add_argument("--steps", type=int, default=GrpoConfig.steps)
    grpo.add_argument("--lr", type=float, default=GrpoConfig.learning_rate)
    grpo.add_argument("--prompts-per-step", type=int, default=GrpoConfig.prompts_per_step)
    grpo.add_argument("--inner-epochs", type=int, default=GrpoConfig.inner_epochs)
    grpo.add_argument("--clip", type=float, default=GrpoConfig.ratio_clip, help="ratio clip epsilon")
    grpo.add_argument("--no-clip", action="store_true", help="use the unclipped ratio")
    grpo.add_argument("--sampling-steps", type=int, default=GrpoConfig.sampling_steps)
    grpo.add_argument("--cfg-scale", type=float, default=GrpoConfig.cfg_scale)
    grpo.add_argument("--holdout", type=int, default=0, help="trailing clips never used as prompts")
    grpo.add_argument(
        "--reward-weights", type=parse_weights, default=dict(DEFAULT_WEIGHTS),
        help="reward term weights, e.g. con=1,mel=0",
    )
    grpo.add_argument("--seed", type=int, default=None)
    grpo.add_argument("--force", action="store_true")
    grpo.set_defaults(func=run_grpo)


def run_pretrain(args):
    seed = resolve_seed(args.seed)
    clips, corpus_config, _ = load_corpus(args.corpus)
    if args.config:
        train_config, model_config = load_train_file(args.config, corpus_config)
    else:
        train_config = TrainConfig()
        model_config = ModelConfig(
            feature_dim=corpus_config.feature_dim, vocab_size=corpus_config.vocab_size
        ).validate()
    overrides = {"seed": seed}
    if args.steps is not None:
        overrides["total_steps"] = args.steps
        overrides["warmup_steps"] = min(train_config.warmup_steps, args.steps)
    train_config = dataclasses.replace(train_config, **overrides).validate()

    resume = load_checkpoint(args.resume, expected_config=model_config) if args.resume else None
    out = guard_output_dir(args.out, args.force or resume is not None)
    manifest = ExperimentManifest(
        "train pretrain",
        seed,
        {"train": dataclasses.asdict(train_config), "model": dataclasses.asdict(model_config)},
        inputs=[args.corpus] + ([args.config] if args.config else []),
    )

    pretrain(
        clips, corpus_config, model_config, train_config, out,
        resume=resume, device=get_device(), progress=sys.stderr.isatty(),
    )

    manifest.outputs = [str(out / "checkpoint.zip"), str(out / "train_log.jsonl")]
    write_manifest(out / "manifest.json", manifest.finish())
    log.info("[OK] pre-training finished -> %s", out / "checkpoint.zip")
    return 0


def run_grpo(args):
    seed = resolve_seed(args.seed)
    clips, corpus_config, _ = load_corpus(args.corpus)
    checkpoint = load_checkpoint(args.checkpoint, corpus_config=corpus_config)
    config = GrpoConfig(
        group_size=args.group_size,
        kl_weight=args.beta,
        inner_epochs=args.inner_epochs,
        ratio_clip=None if args.no_clip else args.clip,
        noise_level_a=args.noise_a,
        learning_rate=args.lr,
        steps=args.steps,
        prompts_per_step=args.prompts_per_step,
        sampling_steps=args.sampling_steps,
        cfg_scale=args.cfg_scale,
        reward_weights=args.reward_weights,
        seed=seed,
    ).validate()
    out = guard_output_dir(args.out, args.force)
    manifest = ExperimentManifest(
        "train grpo", seed, {"grpo": dataclasses.asdict(config), "holdout": args.holdout},
        inputs=[args.checkpoint, args.corpus],
    )

    post_train(
        checkpoint, clips, corpus_config, config, out,
        holdout=args.holdout, device=get_device(), progress=sys.stderr.isatty(),
    )

    manifest.outputs = [str(out / "grpo.zip"), str(out / "grpo_curves.jsonl")]
    write_manifest(out / "manifest.json", manifest.finish())
    log.info("[OK] GRPO finished -> %s", out / "grpo.zip")
    return 0
