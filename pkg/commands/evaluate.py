# commands/evaluate.py
import json
import logging
import sys
from pathlib import Path

from config import get_device, resolve_seed
from services.checkpoints import load_checkpoint
from services.corpus_store import load_corpus
from services.evaluation import TASKS, evaluate
from services.manifest import ExperimentManifest, write_manifest
from synthesis.sampler import SamplerConfig

log = logging.getLogger(__name__)


def register(subparsers):
    p = subparsers.add_parser("eval", help="score generated clips with the exact oracles")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--task", choices=TASKS, default="synthesis")
    p.add_argument("--offset", type=int, default=0, help="first clip to evaluate")
    p.add_argument("--limit", type=int, default=None, help="number of clips to evaluate")
    p.add_argument("--steps", type=int, default=SamplerConfig.steps)
    p.add_argument("--cfg-scale", type=float, default=SamplerConfig.cfg_scale)
    p.add_argument("--single-span", action="store_true")
    p.add_argument("--zero-shot", action="store_true", help="prompt each clip with the next clip's audio")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=run_eval)


def run_eval(args):
    seed = resolve_seed(args.seed)
    clips, corpus_config, _ = load_corpus(args.corpus)
    end = None if args.limit is None else args.offset + args.limit
    clips = clips[args.offset:end]

    checkpoint = load_checkpoint(args.checkpoint, corpus_config=corpus_config)
    model = checkpoint.build_model(get_device())
    sampler = SamplerConfig(steps=args.steps, cfg_scale=args.cfg_scale).validate()
    manifest = ExperimentManifest(
        "eval", seed,
        {"task": args.task, "offset": args.offset, "limit": args.limit, "zero_shot": args.zero_shot},
        inputs=[args.checkpoint, args.corpus],
    )

    report = evaluate(
        model, clips, corpus_config, sampler, seed,
        task=args.task, single_span=args.single_span, zero_shot=args.zero_shot,
        progress=sys.stderr.isatty(),
    )

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    manifest.outputs = [str(out)]
    write_manifest(out.with_name(out.name + ".manifest.json"), manifest.finish())
    log.info("[OK] %d clips scored -> %s", len(report["clips"]), out)
    return 0
