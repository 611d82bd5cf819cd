# commands/report.py
import logging
from pathlib import Path

from config import resolve_seed
from services.manifest import ExperimentManifest, write_manifest
from services.reports import build_report, export_excel, load_curves, load_eval, plot_curves

log = logging.getLogger(__name__)


def register(subparsers):
    p = subparsers.add_parser("report", help="markdown summary of an eval JSON")
    p.add_argument("--in", dest="input", required=True, help="eval JSON")
    p.add_argument("--out", required=True, help="markdown path")
    p.add_argument("--baseline", help="eval JSON to diff against (e.g. before GRPO)")
    p.add_argument("--curves", help="GRPO reward curves (JSON-lines)")
    p.add_argument("--xlsx", help="also export the tables to a spreadsheet")
    p.add_argument("--plot", help="PNG path for the reward curves (needs --curves)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=run_report)


def run_report(args):
    current = load_eval(args.input)
    baseline = load_eval(args.baseline) if args.baseline else None
    curves = load_curves(args.curves) if args.curves else None
    manifest = ExperimentManifest(
        "report", resolve_seed(args.seed),
        inputs=[p for p in (args.input, args.baseline, args.curves) if p],
    )

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(build_report(current, baseline, curves) + "\n")
    manifest.outputs = [str(out)]

    if args.xlsx:
        export_excel(args.xlsx, current, baseline)
        manifest.outputs.append(args.xlsx)
    if args.plot and curves is not None and len(curves):
        plot_curves(curves, args.plot)
        manifest.outputs.append(args.plot)

    write_manifest(out.with_name(out.name + ".manifest.json"), manifest.finish())
    log.info("[OK] report -> %s", out)
    return 0
