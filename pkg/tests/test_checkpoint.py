import numpy as np
import pytest

from garnet.checkpoint import ModelCheckpoint
from garnet.data import SynthSpec, synth_generate
from garnet.decision import evaluate_batch
from garnet.errors import ParseError
from garnet.trainer import TrainConfig, train


@pytest.fixture(scope="module")
def trained():
    ds = synth_generate(SynthSpec(videos=2, frames=12, dim=16), seed=1)
    ck, _ = train(TrainConfig(task="shape", iterations=60, hidden=(8, 4), seed=2), ds)
    return ck, ds


def test_round_trip_is_bit_exact(trained, tmp_path):
    ck, _ = trained
    ck.save(tmp_path / "m.ck")
    back = ModelCheckpoint.load(tmp_path / "m.ck")
    assert back.net.widths == ck.net.widths
    assert back.net.flat.tobytes() == ck.net.flat.tobytes()
    for a, b in zip(ck.simmap.clusters, back.simmap.clusters):
        assert a.label == b.label
        assert a.points.tobytes() == b.points.tobytes()
        assert (a.bandwidth, a.threshold, a.coverage) == (b.bandwidth, b.threshold, b.coverage)
        assert a.centroid.tobytes() == b.centroid.tobytes()
    # a re-save of a loaded checkpoint reproduces the file
    assert back.to_bytes() == (tmp_path / "m.ck").read_bytes()


def test_round_trip_preserves_predictions(trained, tmp_path):
    ck, ds = trained
    ck.save(tmp_path / "m.ck")
    back = ModelCheckpoint.load(tmp_path / "m.ck")
    for seq in ds.sequences:
        for mode in ("dp", "gsp"):
            a = evaluate_batch(ck.net, ck.simmap, seq.frames, mode)
            b = evaluate_batch(back.net, back.simmap, seq.frames, mode)
            assert a.votes == b.votes and a.stop == b.stop and a.prediction == b.prediction
            assert np.array_equal(a.dps, b.dps)


def test_same_seed_same_bytes():
    ds = synth_generate(SynthSpec(videos=2, frames=6, dim=16), seed=1)
    cfg = TrainConfig(task="weight", iterations=40, hidden=(8, 4), seed=5)
    assert train(cfg, ds)[0].to_bytes() == train(cfg, ds)[0].to_bytes()


def test_metadata_records_config(trained):
    meta = trained[0].meta()
    assert meta["task"] == "shape" and meta["train"]["iterations"] == 60
    assert meta["optimizer"]["steps"] == 60 and meta["optimizer"]["name"] == "adam"


def test_bad_magic(tmp_path):
    (tmp_path / "x.ck").write_bytes(b"NOTACKPT" + bytes(16))
    with pytest.raises(ParseError, match="byte 0"):
        ModelCheckpoint.load(tmp_path / "x.ck")


@pytest.mark.parametrize("cut", [10, 40, 200, -3])
def test_truncated_checkpoint(trained, tmp_path, cut):
    data = trained[0].to_bytes()
    (tmp_path / "t.ck").write_bytes(data[:cut])
    with pytest.raises(ParseError):
        ModelCheckpoint.load(tmp_path / "t.ck")


def test_trailing_bytes(trained):
    with pytest.raises(ParseError, match="trailing"):
        ModelCheckpoint.from_bytes(trained[0].to_bytes() + b"\0")
