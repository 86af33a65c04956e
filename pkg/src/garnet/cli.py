"""Command-line entry point: ``garnet <command> [flags]``.

Exit codes: 0 success (or a known class for ``stream``), 2 no known class,
1 any pipeline error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import evaluate as ev
from .checkpoint import ModelCheckpoint
from .data import SynthSpec, export_dataset, ingest, load_frames, synth_generate
from .decision import DEFAULT_MIN_FRAMES, DEFAULT_THRESHOLD, evaluate_sequence
from .errors import ConfigError, GarnetError, InputError
from .simmap import DEFAULT_COVERAGE
from .trainer import TrainConfig, train

log = logging.getLogger("garnet")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNKNOWN = 2
DEFAULT_SWEEP = (0.80, 0.90, 0.95, 0.99)
TASK_ALIASES = {"shape": "shape", "weight": "weight", "weight-tier": "weight"}


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1 so that status 2 keeps meaning "no known class"."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _tasks(name):
    return ["shape", "weight"] if name == "both" else [TASK_ALIASES[name]]


def _add_common(p, task_choices=("shape", "weight", "weight-tier")):
    p.add_argument("--task", choices=task_choices, default="shape")
    p.add_argument("--seed", type=int, default=0, help="master seed for data synthesis and training")
    p.add_argument("--out-dir", type=Path, default=Path("garnet-out"))


def _add_data(p):
    p.add_argument("--manifest", type=Path, help="dataset manifest; synthetic data when omitted")
    p.add_argument("--noise", type=float, help="synthetic per-frame noise scale")


def _add_train(p):
    p.add_argument("--config", type=Path, help="JSON file with training settings")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--coverage", type=float, default=DEFAULT_COVERAGE)
    p.add_argument("--bandwidth", type=float, help="fixed KDE bandwidth instead of Scott's rule")


def _add_decision(p):
    p.add_argument("--mode", choices=("dp", "gsp"), default="dp")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--min-frames", type=int, default=DEFAULT_MIN_FRAMES)


def build_parser():
    parser = _Parser(prog="garnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic dataset (feature records + manifest)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float)
    p.add_argument("--out-dir", type=Path, default=Path("garnet-data"))

    p = sub.add_parser("train", help="train one task model and fit its similarity map")
    _add_common(p)
    _add_data(p)
    _add_train(p)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset in DP and GSP modes")
    _add_common(p)
    _add_data(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--groups", type=_ints, help="restrict scoring to these instance groups")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--min-frames", type=int, default=DEFAULT_MIN_FRAMES)
    p.add_argument("--coverage", type=float, help="recalibrate regions to this coverage")

    p = sub.add_parser("loocv", help="full leave-one-group-out protocol with report tables")
    _add_common(p, ("shape", "weight", "weight-tier", "both"))
    _add_data(p)
    _add_train(p)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--min-frames", type=int, default=DEFAULT_MIN_FRAMES)

    p = sub.add_parser("ablate", help="coverage sweep over fitted regions")
    _add_common(p, ("shape", "weight", "weight-tier", "both"))
    _add_data(p)
    _add_train(p)
    p.add_argument("--checkpoint", type=Path, action="append",
                   help="score these checkpoints on the dataset instead of running LOOCV (repeatable)")
    p.add_argument("--sweep", type=_floats, default=list(DEFAULT_SWEEP), help="coverage values, e.g. 0.8,0.9")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--min-frames", type=int, default=DEFAULT_MIN_FRAMES)

    p = sub.add_parser("stream", help="stream one sequence and report the early stop")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--sequence", type=Path, required=True, help="feature record (.gfr) or graymap")
    p.add_argument("--out-dir", type=Path, help="write the per-frame trace CSV here")
    p.add_argument("--coverage", type=float)
    p.add_argument("--no-early-stop", action="store_true", help="observe every frame")
    _add_decision(p)

    p = sub.add_parser("export-map", help="dump a checkpoint's map as CSV and SVG")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, default=Path("garnet-out"))
    return parser


# ----------------------------------------------------------------------------
# helpers


def load_dataset(args):
    if getattr(args, "manifest", None):
        return ingest(args.manifest)
    spec = SynthSpec() if args.noise is None else SynthSpec(noise=args.noise)
    return synth_generate(spec, seed=args.seed)


def train_config(args, task):
    cfg = TrainConfig(task=task, seed=args.seed)
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "hidden" in raw:
            raw["hidden"] = tuple(raw["hidden"])
        if "task" in raw:
            raw["task"] = TASK_ALIASES.get(raw["task"], raw["task"])
        cfg = replace(cfg, **raw)
    overrides = {"iterations": args.iterations, "batch_size": args.batch_size, "margin": args.margin}
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    cfg.validate()
    return cfg


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


def _check_coverage(q):
    if q is not None and not 0.0 < q <= 1.0:
        raise InputError(f"coverage must lie in (0, 1], got {q}")


# ----------------------------------------------------------------------------
# commands


def cmd_synth(args):
    ds = synth_generate(SynthSpec() if args.noise is None else SynthSpec(noise=args.noise), seed=args.seed)
    manifest = export_dataset(ds, args.out_dir)
    print(f"{len(ds)} sequences, {len(ds) * ds.n_frames} frames -> {manifest}")
    return EXIT_OK


def cmd_train(args):
    task = TASK_ALIASES[args.task]
    _check_coverage(args.coverage)
    ds = load_dataset(args)
    cfg = train_config(args, task)
    ck, tlog = train(cfg, ds, args.coverage, args.bandwidth)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    ck.save(out / f"{task}.ckpt")
    tlog.write_csv(out / f"{task}_train_log.csv")
    ck.simmap.export_csv(out / f"{task}_map.csv")
    ck.simmap.plot(out / f"{task}_map.svg", title=f"{task} similarity map")
    n = len(tlog.loss)
    w = min(100, n)
    print(f"trained {task} model: {n} steps, loss {tlog.window_mean('loss', 0, w):.4f} -> "
          f"{tlog.window_mean('loss', n - w, n):.4f}, {len(ck.simmap.clusters)} clusters")
    print(f"checkpoint: {out / f'{task}.ckpt'}")
    return EXIT_OK


def cmd_eval(args):
    task = TASK_ALIASES[args.task]
    _check_coverage(args.coverage)
    ck = ModelCheckpoint.load(args.checkpoint)
    if ck.task != task:
        raise ConfigError(f"checkpoint task {ck.task!r} does not match requested {task!r}")
    ds = load_dataset(args)
    groups = sorted(set(args.groups)) if args.groups else sorted({s.group for s in ds.sequences})
    models = [ev.FoldModel(g, ck, ds.subset([s for s in ds.sequences if s.group == g])) for g in groups]
    reports = [ev.evaluate_models(models, task, mode, args.threshold, args.min_frames, args.coverage)
               for mode in ("dp", "gsp")]
    _emit_reports(args.out_dir, task, reports)
    return EXIT_OK


def _emit_reports(out, task, reports, extra=None):
    title = f"Prediction results ({'shapes' if task == 'shape' else 'discretised weights'})"
    text = ev.render_table(reports, title) + "\n"
    text += "".join(ev.render_fold_table(r) + "\n" for r in reports)
    text += ev.render_reference()
    _write(out / f"{task}_report.txt", text)
    _write(out / f"{task}_report.json", ev.reports_json(reports, extra))
    print(text)


def cmd_loocv(args):
    _check_coverage(args.coverage)
    ds = load_dataset(args)
    for task in _tasks(args.task):
        cfg = train_config(args, task)
        models = ev.run_loocv(ds, cfg, args.coverage, args.bandwidth, progress=log.info)
        reports = [ev.evaluate_models(models, task, mode, args.threshold, args.min_frames)
                   for mode in ("dp", "gsp")]
        _emit_reports(args.out_dir, task, reports)
        seq = models[0].test.sequences[0]
        latency = ev.measure_latency(models[0].checkpoint.net, models[0].checkpoint.simmap, seq.frames)
        # timing lives apart from the reports so those stay byte-reproducible
        _write(args.out_dir / f"{task}_timing.json",
               json.dumps({"mean_frame_latency_ms": latency * 1e3}, indent=2) + "\n")
        for fm in models:
            fm.checkpoint.save(args.out_dir / f"{task}_fold{fm.fold}.ckpt")
    return EXIT_OK


def cmd_ablate(args):
    for q in args.sweep:
        _check_coverage(q)
    ds = load_dataset(args)
    rows = []
    if args.checkpoint:
        for path in args.checkpoint:
            ck = ModelCheckpoint.load(path)
            groups = sorted({s.group for s in ds.sequences})
            models = [ev.FoldModel(g, ck, ds.subset([s for s in ds.sequences if s.group == g]))
                      for g in groups]
            rows += ev.coverage_sweep(models, ck.task, args.sweep, args.threshold, args.min_frames)
    else:
        for task in _tasks(args.task):
            models = ev.run_loocv(ds, train_config(args, task), args.coverage, args.bandwidth, progress=log.info)
            rows += ev.coverage_sweep(models, task, args.sweep, args.threshold, args.min_frames)
    text = ev.render_sweep(rows)
    _write(args.out_dir / "coverage_sweep.txt", text)
    _write(args.out_dir / "coverage_sweep.json", json.dumps(rows, indent=2, sort_keys=True) + "\n")
    print(text)
    return EXIT_OK


def cmd_stream(args):
    _check_coverage(args.coverage)
    ck = ModelCheckpoint.load(args.checkpoint)
    simmap = ck.simmap if args.coverage is None else ck.simmap.with_coverage(args.coverage)
    frames = load_frames(args.sequence, ck.net.input_dim)
    labels = simmap.labels

    def show(state, gsp, dp, vote):
        fr = state.fractions()
        parts = " ".join(f"{lab}={fr.get(lab, 0.0):.2f}" for lab in labels)
        print(f"frame {state.n:3d}  dp=({dp[0]:+.3f},{dp[1]:+.3f})  vote={vote or 'unknown':<10} {parts}")

    res = evaluate_sequence(ck.net, simmap, frames, args.mode, args.threshold, args.min_frames,
                            early_stop=not args.no_early_stop, on_frame=show)
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        res.write_trace(args.out_dir / f"{args.sequence.stem}_trace.csv", labels)
    if res.stop:
        print(f"stop at frame {res.stop.frame}: {res.stop.label} ({res.stop.fraction:.0%} of decision points)")
    print(f"prediction: {res.prediction or 'no known class'}")
    print(f"mean per-frame latency: {res.latency * 1e3:.3f} ms")
    return EXIT_OK if res.prediction is not None else EXIT_UNKNOWN


def cmd_export_map(args):
    ck = ModelCheckpoint.load(args.checkpoint)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    ck.simmap.export_csv(args.out_dir / f"{ck.task}_map.csv")
    ck.simmap.plot(args.out_dir / f"{ck.task}_map.svg", title=f"{ck.task} similarity map")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "loocv": cmd_loocv,
            "ablate": cmd_ablate, "stream": cmd_stream, "export-map": cmd_export_map}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (GarnetError, OSError) as exc:
        print(f"garnet: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
