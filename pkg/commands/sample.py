# commands/sample.py
import logging

import torch

from config import get_device, guard_output_dir, resolve_seed
from errors import ConfigurationError
from services.checkpoints import check_corpus, load_checkpoint
from services.corpus_store import read_clip, write_features
from services.manifest import ExperimentManifest, write_manifest
from services.render import render_sine_wav
from synthesis.backbone import prepare_conditions
from synthesis.corpus import CorpusConfig, oracle_pitch, single_span_layout
from synthesis.sampler import SamplerConfig, sample_ode

log = logging.getLogger(__name__)


def register(subparsers):
    p = subparsers.add_parser("sample", help="generate features for one clip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", required=True, help="clip directory (lyrics + pitch target)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--steps", type=int, default=SamplerConfig.steps)
    p.add_argument("--cfg-scale", type=float, default=SamplerConfig.cfg_scale)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--prompt-from", help="clip directory supplying the audio prompt")
    p.add_argument("--melody-from", help="clip directory supplying the melody")
    p.add_argument("--single-span", action="store_true", help="place all tokens after the prompt")
    p.add_argument("--wav", action="store_true", help="also write a debug sine rendering")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=run_sample)


def corpus_config_of(checkpoint) -> CorpusConfig:
    echo = checkpoint.extra.get("corpus_config")
    if not echo:
        raise ConfigurationError("checkpoint carries no corpus config")
    corpus_config = CorpusConfig(**echo).validate()
    check_corpus(checkpoint.config, corpus_config)
    return corpus_config


def run_sample(args):
    seed = resolve_seed(args.seed)
    checkpoint = load_checkpoint(args.checkpoint)
    corpus_config = corpus_config_of(checkpoint)
    model = checkpoint.build_model(get_device()).eval()
    sampler = SamplerConfig(steps=args.steps, cfg_scale=args.cfg_scale).validate()

    clip = read_clip(args.clip, corpus_config)
    prompt_clip = read_clip(args.prompt_from, corpus_config) if args.prompt_from else None
    melody_clip = read_clip(args.melody_from, corpus_config) if args.melody_from else None
    lyrics = clip.lyrics
    if args.single_span:
        lyrics = single_span_layout(lyrics, model.config.prompt_frames(lyrics.total_frames))

    out = guard_output_dir(args.out, args.force)
    manifest = ExperimentManifest(
        "sample", seed, {"steps": args.steps, "cfg_scale": args.cfg_scale, "single_span": args.single_span},
        inputs=[p for p in (args.checkpoint, args.clip, args.prompt_from, args.melody_from) if p],
    )

    with torch.no_grad():
        cond = prepare_conditions(clip, model, lyrics=lyrics, prompt_clip=prompt_clip, melody_clip=melody_clip)
        features = sample_ode(cond, sampler, model, seed, corpus_config.frame_rate)

    write_features(out / "features.bin", features)
    manifest.outputs = [str(out / "features.bin")]
    if args.wav:
        render_sine_wav(oracle_pitch(features, corpus_config), corpus_config.frame_rate, out / "sample.wav")
        manifest.outputs.append(str(out / "sample.wav"))

    write_manifest(out / "manifest.json", manifest.finish())
    log.info("[OK] sample -> %s", out)
    return 0
