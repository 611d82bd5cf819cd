# commands/corpus.py
import logging

from config import guard_output_dir, resolve_seed
from services.corpus_store import save_corpus
from services.manifest import ExperimentManifest, write_manifest
from synthesis.corpus import CorpusConfig, generate_corpus

log = logging.getLogger(__name__)


def register(subparsers):
    p = subparsers.add_parser("corpus", help="synthetic corpus tools")
    sub = p.add_subparsers(dest="action", required=True)

    gen = sub.add_parser("generate", help="render a synthetic singing corpus")
    gen.add_argument("--n", type=int, required=True, help="number of clips")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--frames", type=int, default=CorpusConfig.frames)
    gen.add_argument("--vocab", type=int, default=CorpusConfig.vocab_size)
    gen.add_argument("--feature-dim", type=int, default=CorpusConfig.feature_dim)
    gen.add_argument("--force", action="store_true")
    gen.set_defaults(func=generate)


def generate(args):
    seed = resolve_seed(args.seed)
    config = CorpusConfig(
        vocab_size=args.vocab,
        feature_dim=args.feature_dim,
        frames=args.frames,
    ).validate()
    out = guard_output_dir(args.out, args.force)
    manifest = ExperimentManifest("corpus generate", seed, {"n": args.n, "frames": args.frames})

    clips = generate_corpus(args.n, config, seed)
    save_corpus(clips, config, seed, out)

    manifest.outputs = [str(out)]
    write_manifest(out / "manifest.json", manifest.finish())
    log.info("[OK] %d clips -> %s", len(clips), out)
    return 0
