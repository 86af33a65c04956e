"""Leave-one-group-out evaluation, accuracy tables and the coverage sweep."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import loocv_splits
from .decision import DEFAULT_MIN_FRAMES, DEFAULT_THRESHOLD, evaluate_batch
from .errors import ConfigError, InputError
from .trainer import train

# Published comparison figures for shape prediction, kept as static context rows.
REFERENCE_ROWS = (
    ("GarNet (continuous perception)", "92.0"),
    ("Continuous perception, earlier pipeline", "70.8"),
    ("Single-shot category recognition", "67.0"),
    ("Interactive perception", "64.2"),
    ("CNN-LSTM (classification)", "48"),
)


@dataclass
class FoldModel:
    fold: int
    checkpoint: object
    test: object  # Dataset
    log: object = None


@dataclass
class EvalReport:
    task: str
    mode: str
    channel: str
    coverage: float
    threshold: float
    min_frames: int
    categories: list
    per_category: dict  # label -> accuracy in percent
    correct: dict
    videos: dict
    average: float
    unknown_rate: float
    mean_stop_frame: float
    per_fold: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _accuracy(correct, total):
    return 100.0 * correct / total if total else float("nan")


def evaluate_models(models, task, mode="dp", threshold=DEFAULT_THRESHOLD, min_frames=DEFAULT_MIN_FRAMES,
                    coverage=None):
    """Score every fold model on its test split; one prediction per video.

    ``coverage`` recalibrates each map's regions before scoring when given.
    """
    if not models:
        raise InputError("no fold models to evaluate")
    first = models[0]
    categories = list(first.test.categories(task))
    correct = dict.fromkeys(categories, 0)
    videos = dict.fromkeys(categories, 0)
    unknown = 0
    stops = []
    per_fold = []
    for fm in models:
        ck = fm.checkpoint
        if ck.task != task:
            raise ConfigError(f"checkpoint was trained for task {ck.task!r}, report requested {task!r}")
        simmap = ck.simmap if coverage is None else ck.simmap.with_coverage(coverage)
        f_correct = dict.fromkeys(categories, 0)
        f_videos = dict.fromkeys(categories, 0)
        f_stops = []
        for seq in fm.test.sequences:
            res = evaluate_batch(ck.net, simmap, seq.frames, mode, threshold, min_frames)
            label = seq.label(task)
            f_videos[label] += 1
            f_correct[label] += res.prediction == label
            unknown += res.prediction is None
            f_stops.append(res.stop_frame)
        for c in categories:
            correct[c] += f_correct[c]
            videos[c] += f_videos[c]
        stops.extend(f_stops)
        accs = {c: _accuracy(f_correct[c], f_videos[c]) for c in categories}
        per_fold.append({"fold": fm.fold, "per_category": accs,
                         "average": float(np.nanmean(list(accs.values()))),
                         "mean_stop_frame": float(np.mean(f_stops))})
    per_category = {c: _accuracy(correct[c], videos[c]) for c in categories}
    first_map = first.checkpoint.simmap
    return EvalReport(
        task=task, mode=mode, channel=first.test.channel,
        coverage=float(coverage if coverage is not None else first_map.clusters[0].coverage),
        threshold=threshold, min_frames=min_frames, categories=categories,
        per_category=per_category, correct=correct, videos=videos,
        average=float(np.mean(list(per_category.values()))),
        unknown_rate=unknown / sum(videos.values()),
        mean_stop_frame=float(np.mean(stops)), per_fold=per_fold)


def fold_seeds(seed, n):
    """Independent per-fold training seeds derived from one master seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def run_loocv(dataset, config, coverage=None, bandwidth=None, folds=None, progress=None):
    """Train one model per leave-one-group-out fold; returns a list of FoldModel."""
    splits = loocv_splits(dataset)
    seeds = fold_seeds(config.seed, len(splits))
    models = []
    for split, seed in zip(splits, seeds):
        if folds is not None and split.index not in folds:
            continue
        if progress:
            progress(f"fold {split.index}: training {config.task} model on {len(split.train)} sequences")
        ck, log = train(replace(config, seed=seed), split.train, coverage, bandwidth)
        models.append(FoldModel(split.index, ck, split.test, log))
    return models


def coverage_sweep(models, task, coverages, threshold=DEFAULT_THRESHOLD, min_frames=DEFAULT_MIN_FRAMES):
    """Decision-point accuracy per coverage value, plus training unknown-rate."""
    rows = []
    for q in coverages:
        if not 0.0 < q <= 1.0:
            raise InputError(f"coverage must lie in (0, 1], got {q}")
        rep = evaluate_models(models, task, "dp", threshold, min_frames, coverage=q)
        train_unknown = float(np.mean([fm.checkpoint.simmap.with_coverage(q).training_unknown_rate()
                                       for fm in models]))
        rows.append({"task": task, "coverage": q, "accuracy": rep.average,
                     "test_unknown_rate": rep.unknown_rate, "train_unknown_rate": train_unknown})
    return rows


def measure_latency(net, simmap, frames, repeats=1):
    """Mean seconds per frame for embedding plus classifying a decision point."""
    frames = np.asarray(frames)
    total = 0.0
    count = 0
    for _ in range(repeats):
        running = np.zeros(2)
        for k, frame in enumerate(frames, start=1):
            t0 = time.perf_counter()
            running = running + net.forward(frame)
            simmap.classify(running / k)
            total += time.perf_counter() - t0
            count += 1
    return total / count


# ----------------------------------------------------------------------------
# rendering


def _pct(value):
    return "n/a" if value != value else f"{value:.1f}%"


def render_table(reports, title):
    """Aligned text table: one row per category, one column per report."""
    categories = reports[0].categories
    headers = ["Category"] + [f"{r.channel}, {r.mode.upper()}" for r in reports]
    rows = [[c] + [_pct(r.per_category[c]) for r in reports] for c in categories]
    rows.append(["Average"] + [_pct(r.average) for r in reports])
    rows.append(["Mean stop frame"] + [f"{r.mean_stop_frame:.1f}" for r in reports])
    widths = [max(len(str(row[i])) for row in [headers] + rows) for i in range(len(headers))]
    line = "+".join("-" * (w + 2) for w in widths)
    out = [title, line]
    for i, row in enumerate([headers] + rows):
        out.append("|".join(f" {str(cell):<{w}} " for cell, w in zip(row, widths)))
        if i == 0 or i == len(rows) - 2:
            out.append(line)
    out.append(line)
    r0 = reports[0]
    out.append(f"coverage q={r0.coverage:g}, threshold={r0.threshold:g}, min frames={r0.min_frames}")
    return "\n".join(out) + "\n"


def render_fold_table(report):
    headers = ["Fold"] + report.categories + ["Average", "Mean stop"]
    rows = [[str(f["fold"])] + [_pct(f["per_category"][c]) for c in report.categories]
            + [_pct(f["average"]), f"{f['mean_stop_frame']:.1f}"] for f in report.per_fold]
    widths = [max(len(r[i]) for r in [headers] + rows) for i in range(len(headers))]
    out = [f"Per-fold breakdown ({report.task}, {report.mode.upper()})"]
    for row in [headers] + rows:
        out.append("  ".join(f"{cell:>{w}}" for cell, w in zip(row, widths)))
    return "\n".join(out) + "\n"


def render_reference():
    width = max(len(name) for name, _ in REFERENCE_ROWS)
    out = ["Published shape accuracy (reference only, not reproduced here)"]
    out += [f"  {name:<{width}}  {value}%" for name, value in REFERENCE_ROWS]
    return "\n".join(out) + "\n"


def render_sweep(rows):
    out = [f"{'task':<8}{'coverage':>10}{'accuracy':>11}{'test unk':>10}{'train unk':>11}"]
    for r in rows:
        out.append(f"{r['task']:<8}{r['coverage']:>10.2f}{r['accuracy']:>10.1f}%"
                   f"{r['test_unknown_rate']:>10.3f}{r['train_unknown_rate']:>11.3f}")
    return "\n".join(out) + "\n"


def reports_json(reports, extra=None):
    payload = {"reports": [r.to_dict() for r in reports],
               "reference": [{"method": n, "accuracy": v} for n, v in REFERENCE_ROWS]}
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
