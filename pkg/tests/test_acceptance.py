"""Acceptance suite: one PASS/FAIL line per criterion, printed even under capture.

Run alone with ``pytest tests/test_acceptance.py -v``. The end-to-end criteria
train 16 models each and take a few minutes on one core.
"""

import math
import time

import numpy as np
import pytest

from garnet.autograd import Tensor, prelu, row_norm
from garnet.checkpoint import ModelCheckpoint
from garnet.data import SynthSpec, loocv_splits, synth_generate
from garnet.decision import DecisionState, evaluate_sequence, first_stop
from garnet.evaluate import evaluate_models, measure_latency, reports_json, run_loocv
from garnet.nn import Network
from garnet.simmap import kde, scott_bandwidth
from garnet.trainer import TrainConfig, batch_loss, train

SEED = 0
# noisier variant of the default generator for the DP-vs-GSP trend
NOISY_SPEC = SynthSpec(noise=0.45)


def report(capsys, number, name, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {name} ({detail})")
    assert ok, detail


@pytest.fixture(scope="module")
def default_data():
    return synth_generate(seed=SEED)


@pytest.fixture(scope="module")
def default_models(default_data):
    start = time.perf_counter()
    models = {task: run_loocv(default_data, TrainConfig(task=task, seed=SEED)) for task in ("shape", "weight")}
    return models, time.perf_counter() - start


# -- 1 -------------------------------------------------------------------------


def _numeric_loss(net, a, p, n, margin):
    ea, ep, en = net.forward(a), net.forward(p), net.forward(n)
    pp = np.sqrt(np.sum((ep - ea) ** 2, axis=1))
    nd = np.sqrt(np.sum((en - ea) ** 2, axis=1))
    return float(np.mean(np.maximum(0.0, pp - nd + margin)))


def test_criterion_1_gradients(capsys):
    start = time.perf_counter()
    worst = 0.0
    eps = 1e-6
    for seed in range(100):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(2, 7))
        hidden = tuple(int(w) for w in rng.integers(2, 7, size=rng.integers(1, 3)))
        net = Network.init(dim, hidden, rng=rng)
        for i in range(len(hidden)):
            net.params[f"a{i}"][...] = rng.uniform(-0.5, 0.5)
        b = int(rng.integers(1, 5))
        x = rng.uniform(size=(3, b, dim))
        margin = float(rng.uniform(0.5, 3.0))
        net.zero_grad()
        loss, _ = batch_loss(net, x[0], x[1], x[2], margin)
        loss.backward()
        analytic = net.grad.copy()
        fd = np.empty_like(analytic)
        for i in range(net.flat.size):
            orig = net.flat[i]
            net.flat[i] = orig + eps
            up = _numeric_loss(net, x[0], x[1], x[2], margin)
            net.flat[i] = orig - eps
            down = _numeric_loss(net, x[0], x[1], x[2], margin)
            net.flat[i] = orig
            fd[i] = (up - down) / (2 * eps)
        scale = np.linalg.norm(analytic) + np.linalg.norm(fd)
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(analytic - fd) / scale))
    elapsed = time.perf_counter() - start
    report(capsys, 1, "gradient correctness", worst < 1e-4 and elapsed < 10,
           f"worst rel err {worst:.2e} < 1e-4 over 100 configs, {elapsed:.1f}s < 10s")


def test_criterion_1_primitive_gradients():
    # the autograd primitives individually, against central differences
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(4, 2))
    a0 = np.array([0.3])
    x = Tensor(x0.copy(), requires_grad=True)
    a = Tensor(a0.copy(), requires_grad=True)
    row_norm(prelu(x, a)).sum().backward()

    def f(xv, av):
        h = np.where(xv > 0, xv, av[0] * xv)
        return np.sqrt((h ** 2).sum(axis=1)).sum()

    eps = 1e-6
    for idx in np.ndindex(x0.shape):
        d = np.zeros_like(x0)
        d[idx] = eps
        fd = (f(x0 + d, a0) - f(x0 - d, a0)) / (2 * eps)
        assert x.grad[idx] == pytest.approx(fd, rel=1e-6, abs=1e-9)
    fd_a = (f(x0, a0 + eps) - f(x0, a0 - eps)) / (2 * eps)
    assert a.grad[0] == pytest.approx(fd_a, rel=1e-6, abs=1e-9)


# -- 2 -------------------------------------------------------------------------


def test_criterion_2_kde_oracle(capsys):
    worst = 0.0
    for case in range(1000):
        rng = np.random.default_rng(case)
        m = int(rng.integers(1, 40))
        pts = rng.normal(rng.uniform(-5, 5, 2), rng.uniform(0.1, 3.0), size=(m, 2))
        h = float(rng.uniform(0.2, 3.0))
        q = pts[rng.integers(m)] + rng.normal(0, 2 * h, 2)
        brute = math.fsum(math.exp(-((q[0] - px) ** 2 + (q[1] - py) ** 2) / (2 * h * h)) for px, py in pts)
        brute /= m * 2 * math.pi * h * h
        got = kde(pts, q, h)[0]
        worst = max(worst, abs(got - brute) / brute)
    rng = np.random.default_rng(1)
    pts = rng.normal(0, 1, (50, 2))
    h = scott_bandwidth(pts)
    lo, hi = pts.min(axis=0) - 7 * h, pts.max(axis=0) + 7 * h
    samples = rng.uniform(lo, hi, size=(1_000_000, 2))
    integral = float(kde(pts, samples, h).mean() * np.prod(hi - lo))
    ok = worst < 1e-12 and abs(integral - 1.0) < 0.02
    report(capsys, 2, "KDE oracle equivalence", ok,
           f"worst rel err {worst:.1e} < 1e-12 over 1000 cases; MC integral {integral:.4f} within 2% of 1")


# -- 3 -------------------------------------------------------------------------


def test_criterion_3_coverage_soundness(capsys, default_models):
    models, _ = default_models
    worst = math.inf
    for task_models in models.values():
        for fm in task_models:
            for q in (0.8, 0.9, 0.95, 0.99):
                for c in fm.checkpoint.simmap.with_coverage(q).clusters:
                    inside = c.contains(c.points).mean()
                    worst = min(worst, inside - (q - 1 / c.size))
    report(capsys, 3, "coverage soundness", worst >= 0,
           f"min over clusters of own-point share minus (q - 1/m) = {worst:.4f} >= 0")


# -- 4 -------------------------------------------------------------------------


def test_criterion_4_streaming_equivalence(capsys, default_data, default_models):
    models, _ = default_models
    fm = models["shape"][0]
    net, simmap = fm.checkpoint.net, fm.checkpoint.simmap
    dp_err = 0.0
    stop_mismatch = 0
    for k, seq in enumerate(default_data.sequences):
        rng = np.random.default_rng(k)
        frames = np.clip(seq.frames + rng.normal(0, 0.05, seq.frames.shape), 0, 1)
        res = evaluate_sequence(net, simmap, frames, "dp", early_stop=False)
        gsps = np.array([net.forward(f) for f in frames])
        means = np.array([gsps[:j].mean(axis=0) for j in range(1, len(gsps) + 1)])
        dp_err = max(dp_err, float(np.abs(res.dps - means).max()))
        brute_votes = [simmap.classify(m) for m in means]
        expected = first_stop(brute_votes, 0.8, 5, simmap.labels)
        got = (res.stop.frame, res.stop.label) if res.stop else None
        stop_mismatch += got != expected
    ok = dp_err <= 1e-9 and stop_mismatch == 0
    report(capsys, 4, "streaming equivalence", ok,
           f"max |dp - batch mean| {dp_err:.1e} <= 1e-9 over 200 sequences; {stop_mismatch} stop mismatches")


# -- 5 -------------------------------------------------------------------------


def test_criterion_5_monotone_stop(capsys):
    labels = ("A", "B", "C")
    violations = 0
    for k in range(100):
        rng = np.random.default_rng(k)
        bias = rng.dirichlet([1, 1, 1, 1])
        votes = [None if v == 3 else labels[v] for v in rng.choice(4, size=60, p=bias)]
        frames = []
        for theta in (0.9, 0.8, 0.7):
            state = DecisionState(labels, theta)
            for v in votes:
                state.accumulate((0.0, 0.0))
                state.vote(v)
            frames.append(state.stop.frame if state.stop else len(votes) + 1)
        violations += not frames[0] >= frames[1] >= frames[2]
    report(capsys, 5, "early-stop monotonicity", violations == 0, f"{violations} violations over 100 traces")


# -- 6 -------------------------------------------------------------------------


def test_criterion_6_end_to_end(capsys, default_data, default_models):
    models, elapsed = default_models
    assert len(default_data) == 200 and sum(len(s.frames) for s in default_data.sequences) == 12_000
    shape = evaluate_models(models["shape"], "shape", "dp", coverage=0.95)
    weight = evaluate_models(models["weight"], "weight", "dp", coverage=0.95)
    ok = shape.average >= 90 and weight.average >= 90 and elapsed < 600
    report(capsys, 6, "end-to-end synthetic reproduction", ok,
           f"DP shape {shape.average:.1f}% >= 90, weight {weight.average:.1f}% >= 90, "
           f"LOOCV training {elapsed:.0f}s < 600s")


# -- 7 -------------------------------------------------------------------------


def test_criterion_7_dp_vs_gsp(capsys):
    ds = synth_generate(NOISY_SPEC, seed=SEED)
    lines = []
    ok = True
    for task in ("shape", "weight"):
        models = run_loocv(ds, TrainConfig(task=task, seed=SEED))
        dp = evaluate_models(models, task, "dp")
        gsp = evaluate_models(models, task, "gsp")
        for fd, fg in zip(dp.per_fold, gsp.per_fold):
            ok &= fd["average"] >= fg["average"]
        lines.append(f"{task} DP/GSP per fold " + " ".join(f"{fd['average']:.0f}/{fg['average']:.0f}"
                                                           for fd, fg in zip(dp.per_fold, gsp.per_fold)))
    report(capsys, 7, "DP-vs-GSP trend", ok, "; ".join(lines))


# -- 8 -------------------------------------------------------------------------


def test_criterion_8_latency(capsys, default_models):
    models, _ = default_models
    fm = models["shape"][0]
    assert len(fm.checkpoint.simmap.clusters) == 5 and fm.checkpoint.net.widths == (64, 64, 32, 2)
    latency = measure_latency(fm.checkpoint.net, fm.checkpoint.simmap, fm.test.sequences[0].frames, repeats=3)
    report(capsys, 8, "per-frame latency", latency < 0.1, f"mean {latency * 1e3:.3f} ms < 100 ms")


# -- 9 -------------------------------------------------------------------------


def test_criterion_9_determinism_and_persistence(capsys, tmp_path, default_data, default_models):
    models, _ = default_models
    fm = models["weight"][0]
    again, _ = train(fm.checkpoint.config, loocv_splits(default_data)[fm.fold - 1].train)
    same_ckpt = again.to_bytes() == fm.checkpoint.to_bytes()
    first = reports_json([evaluate_models(models["weight"], "weight", m) for m in ("dp", "gsp")])
    second = reports_json([evaluate_models(models["weight"], "weight", m) for m in ("dp", "gsp")])
    fm.checkpoint.save(tmp_path / "w.ckpt")
    back = ModelCheckpoint.load(tmp_path / "w.ckpt")
    frames = np.concatenate([s.frames for s in fm.test.sequences])
    same_points = back.net.forward(frames).tobytes() == fm.checkpoint.net.forward(frames).tobytes()
    points = fm.checkpoint.net.forward(frames)
    same_votes = back.simmap.classify_points(points) == fm.checkpoint.simmap.classify_points(points)
    ok = same_ckpt and first == second and same_points and same_votes
    report(capsys, 9, "determinism and persistence", ok,
           f"retrained checkpoint identical: {same_ckpt}; report identical: {first == second}; "
           f"round-trip points identical: {same_points}; votes identical: {same_votes}")

