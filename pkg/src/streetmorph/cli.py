"""Command-line entry point: ``streetmorph <stage> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import cloud_io, pipeline, synth
from .config import OUT_ENV, build_config, default_out_dir
from .detection import PRESETS
from .errors import ConfigError, InputError, StreetMorphError

logger = logging.getLogger("streetmorph")

CLOUD_SUFFIXES = {".ply", ".xyz", ".txt", ".pts", ".asc"}


def _common(p):
    p.add_argument("--preset", choices=sorted(PRESETS), default="hillside",
                   help="detection parameter preset (default: hillside)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one setting, e.g. --set epsilon=0.2 (repeatable)")
    p.add_argument("--config", help="key = value settings file (tau, epsilon_m, r_m, alpha_deg, p_t, seed, ...)")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _with_out(p):
    p.add_argument("--out", default=None, help=f"run directory (default: ${OUT_ENV} or ./streetmorph-out)")
    p.add_argument("--scan", action="append", default=None, help="restrict to this scan (repeatable)")


def build_parser():
    parser = argparse.ArgumentParser(prog="streetmorph", description="Street morphology from LiDAR point clouds.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("downsample", help="voxel-downsample inputs and attach normals")
    p.add_argument("inputs", nargs="+", help="point cloud files (PLY or xyz text); '-' reads stdin")
    p.add_argument("--out", default=None)
    p.add_argument("--scan", default=None, help="scan name for a single input (default: file stem)")
    _common(p)

    for name, text in (("detect", "detect planar fragments and fit plane entities"),
                       ("scenes", "group streets with their facades"),
                       ("global", "per-scene global metrics (CSV)"),
                       ("local", "half-meter band metrics (CSV)"),
                       ("map", "render band metrics as SVG/GeoJSON maps")):
        p = sub.add_parser(name, help=text)
        _with_out(p)
        _common(p)

    p = sub.add_parser("all", help="run every stage")
    p.add_argument("paths", nargs="+", metavar="PATH",
                   help="inputs, optionally followed by the run directory")
    p.add_argument("--out", default=None)
    _common(p)

    p = sub.add_parser("synth", help="sample a SceneSpec JSON into a labelled PLY")
    p.add_argument("spec", help="SceneSpec JSON file, '-' for stdin, or a builtin: corridor, hillside")
    p.add_argument("-o", "--output", default="-", help="output PLY path (default: stdout)")
    p.add_argument("--format", choices=["ply-binary-le", "ply-ascii"], default="ply-binary-le")
    p.add_argument("--truth", help="also write the analytic ground truth JSON here")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _config(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return build_config(args.preset, overrides, args.config)


def _split_all(paths, out):
    """``all a.ply b.ply out/``: a trailing non-cloud path is the run directory."""
    if out is None and len(paths) >= 2:
        last = Path(paths[-1])
        if paths[-1] != "-" and (last.is_dir() or last.suffix.lower() not in CLOUD_SUFFIXES) and not last.is_file():
            return paths[:-1], paths[-1]
    return paths, out or default_out_dir()


def _synth(args):
    builtins = {"corridor": synth.corridor_spec, "hillside": synth.hillside_spec}
    if args.spec in builtins:
        spec = builtins[args.spec]()
    else:
        text = sys.stdin.read() if args.spec == "-" else Path(args.spec).read_text(encoding="utf-8")
        try:
            spec = synth.SceneSpec.from_json(text)
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"{args.spec}: not a valid SceneSpec: {exc}") from exc
    problems = spec.problems()
    if problems:
        raise ConfigError(problems)
    cloud, _, truth = synth.generate(spec)
    cloud_io.save(cloud, args.output, args.format)
    if args.truth:
        Path(args.truth).write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "synth":
            _synth(args)
            return 0
        cfg = _config(args)
        threads = max(1, args.threads)
        if args.command == "all":
            inputs, out = _split_all(args.paths, args.out)
            pipeline.run_all(inputs, out, cfg, threads=threads)
            print(f"wrote {out}")
            return 0
        out = args.out or default_out_dir()
        if args.command == "downsample":
            pipeline.run_downsample(args.inputs, out, cfg, threads=threads, scan=args.scan)
        else:
            stage = {"detect": pipeline.run_detect, "scenes": pipeline.run_scenes, "global": pipeline.run_global,
                     "local": pipeline.run_local, "map": pipeline.run_map}[args.command]
            stage(out, cfg, threads=threads, scans=args.scan)
        return 0
    except StreetMorphError as exc:
        print(f"streetmorph {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
