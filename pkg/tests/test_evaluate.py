import numpy as np
import pytest

from garnet.checkpoint import ModelCheckpoint
from garnet.data import Dataset, SynthSpec, VideoSequence, loocv_splits, synth_generate
from garnet.errors import ConfigError, InputError
from garnet.evaluate import (REFERENCE_ROWS, FoldModel, coverage_sweep, evaluate_models, fold_seeds,
                             render_reference, render_table, run_loocv)
from garnet.nn import Network
from garnet.simmap import GarmentCluster, SimilarityMap
from garnet.trainer import TrainConfig

CENTRES = {"A": (-4.0, 0.0), "B": (4.0, 0.0), "C": (0.0, 6.0)}


def toy_checkpoint():
    net = Network((2, 2))
    net.params["W0"][...] = np.eye(2)
    rng = np.random.default_rng(0)
    clusters = [GarmentCluster.fit(k, rng.normal(c, 0.4, (50, 2)), 0.95) for k, c in CENTRES.items()]
    return ModelCheckpoint(net, SimilarityMap("shape", clusters))


def toy_fold(fold, truth_and_place):
    """Sequences whose 2D frames sit on the centre of ``place`` while labelled ``truth``."""
    seqs = []
    for i, (truth, place) in enumerate(truth_and_place):
        centre = (100.0, 100.0) if place is None else CENTRES[place]
        frames = np.tile(centre, (12, 1)).astype(np.float32)
        seqs.append(VideoSequence(f"{truth}-{fold}", truth, "w", fold, frames, i))
    return FoldModel(fold, toy_checkpoint(), Dataset(tuple(seqs), ("A", "B", "C"), ("w",)))


def test_report_arithmetic():
    models = [
        toy_fold(1, [("A", "A")] * 10 + [("B", "B")] * 5 + [("B", "C")] * 5 + [("C", None)] * 4),
        toy_fold(2, [("A", "A")] * 2 + [("B", "B")] * 2 + [("C", "C")] * 4),
    ]
    rep = evaluate_models(models, "shape", "dp")
    assert rep.per_category == {"A": 100.0, "B": 7 / 12 * 100, "C": 50.0}
    assert rep.average == pytest.approx((100 + 700 / 12 + 50) / 3, abs=1e-12)
    assert rep.videos == {"A": 12, "B": 12, "C": 8} and rep.correct == {"A": 12, "B": 7, "C": 4}
    assert rep.unknown_rate == 4 / 32
    assert [f["per_category"]["A"] for f in rep.per_fold] == [100.0, 100.0]
    assert rep.per_fold[0]["per_category"]["C"] == 0.0
    # every stopped sequence stops at the guard; the unknown ones run all 12 frames
    assert rep.mean_stop_frame == pytest.approx((28 * 5 + 4 * 12) / 32)


def test_task_mismatch():
    with pytest.raises(ConfigError):
        evaluate_models([toy_fold(1, [("A", "A")])], "weight")


def test_empty_models():
    with pytest.raises(InputError):
        evaluate_models([], "shape")


def test_coverage_sweep_rows():
    models = [toy_fold(1, [("A", "A"), ("B", "B"), ("C", "C")])]
    rows = coverage_sweep(models, "shape", [0.8, 1.0])
    assert [r["coverage"] for r in rows] == [0.8, 1.0]
    assert rows[1]["train_unknown_rate"] == 0.0
    assert rows[0]["train_unknown_rate"] > 0.0
    with pytest.raises(InputError):
        coverage_sweep(models, "shape", [0.0])


def test_reference_rows_verbatim():
    assert [v for _, v in REFERENCE_ROWS] == ["92.0", "70.8", "67.0", "64.2", "48"]
    text = render_reference()
    for _, v in REFERENCE_ROWS:
        assert f"{v}%" in text


def test_table_has_both_modes():
    models = [toy_fold(1, [("A", "A"), ("B", "B"), ("C", "C")])]
    text = render_table([evaluate_models(models, "shape", m) for m in ("dp", "gsp")], "Prediction results")
    assert "depth, DP" in text and "depth, GSP" in text and "100.0%" in text


def test_fold_seeds_distinct_and_stable():
    seeds = fold_seeds(0, 4)
    assert len(set(seeds)) == 4 and seeds == fold_seeds(0, 4)


def _fold_one_accuracy(gap):
    spec = SynthSpec(videos=3, frames=20, dim=16, shape_gap=gap, weight_gap=gap)
    ds = synth_generate(spec, seed=0)
    models = run_loocv(ds, TrainConfig(task="shape", iterations=1500, hidden=(16, 8), seed=0), folds={1})
    return evaluate_models(models, "shape", "dp").average


def test_separability_grows_with_gap():
    low, high = _fold_one_accuracy(0.1), _fold_one_accuracy(1.5)
    assert high > low


def test_run_loocv_fold_filter():
    ds = synth_generate(SynthSpec(videos=1, frames=6, dim=16), seed=0)
    models = run_loocv(ds, TrainConfig(task="weight", iterations=5, hidden=(4,)), folds={2, 4})
    assert [m.fold for m in models] == [2, 4]
    assert [s.sequence_id for s in models[0].test.sequences] == \
        [s.sequence_id for s in loocv_splits(ds)[1].test.sequences]
