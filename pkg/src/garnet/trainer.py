"""Triplet sampling, triplet loss and the training loop."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import row_norm
from .data import TASKS
from .errors import ConfigError, InputError, NumericError
from .nn import DEFAULT_HIDDEN, Adam, Network


def triplet_loss(pp, np_, margin=1.0):
    """``max(0, pp - np + margin)`` for non-negative anchor distances."""
    if pp < 0 or np_ < 0:
        raise InputError(f"distances must be non-negative, got pp={pp}, np={np_}")
    return max(0.0, pp - np_ + margin)


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int
    negative: int
    anchor_label: str
    positive_label: str
    negative_label: str


class TripletSampler:
    """Uniform triplets over a labelled frame table.

    The anchor is uniform over all frames, the positive uniform over the
    other frames sharing its label and the negative uniform over frames with
    any other label. Sampling is vectorized: frames are bucketed by label so
    each draw is an offset into a contiguous block.
    """

    def __init__(self, labels):
        labels = np.asarray(labels)
        classes, inverse = np.unique(labels, return_inverse=True)
        if len(classes) < 2:
            raise ConfigError("triplet sampling needs at least two categories")
        self.labels = labels
        self.classes = classes
        order = np.argsort(inverse, kind="stable")
        self.order = order  # sorted position -> frame index
        self.rank = np.empty_like(order)
        self.rank[order] = np.arange(len(order))
        self.class_of = inverse
        counts = np.bincount(inverse, minlength=len(classes))
        if counts.min() < 2:
            raise ConfigError("every category needs at least two frames to form a positive pair")
        self.counts = counts
        self.starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self.n = len(labels)

    def sample(self, rng, size):
        """Index arrays ``(anchor, positive, negative)`` of length ``size``."""
        anchor = rng.integers(0, self.n, size=size)
        c = self.class_of[anchor]
        start, count = self.starts[c], self.counts[c]
        local = self.rank[anchor] - start
        pos_local = (local + 1 + rng.integers(0, count - 1)) % count
        positive = self.order[start + pos_local]
        r = rng.integers(0, self.n - count)
        r = np.where(r >= start, r + count, r)
        negative = self.order[r]
        return anchor, positive, negative

    def sample_one(self, rng):
        a, p, n = (int(v[0]) for v in self.sample(rng, 1))
        return Triplet(a, p, n, str(self.labels[a]), str(self.labels[p]), str(self.labels[n]))


def sample_triplet(dataset, task, rng):
    """Draw one triplet of frame indices from ``dataset.frame_table(task)``."""
    _, labels = dataset.frame_table(task)
    return TripletSampler(labels).sample_one(rng)


@dataclass
class TrainConfig:
    task: str = "shape"
    margin: float = 1.0
    iterations: int = 20_000
    batch_size: int = 32
    seed: int = 0
    base_lr: float = 1e-3
    decay: float = 0.1
    step_size: int = 8
    epoch_length: int = 1000  # optimizer steps per scheduler epoch
    hidden: tuple = DEFAULT_HIDDEN

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if not self.margin >= 0:
            raise ConfigError("margin must be non-negative")
        if self.iterations < 1 or self.batch_size < 1:
            raise ConfigError("iterations and batch_size must be positive")
        if self.step_size < 1 or self.epoch_length < 1:
            raise ConfigError("step_size and epoch_length must be positive")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainLog:
    step: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    active: list = field(default_factory=list)
    mining: str = "uniform"

    def append(self, step, lr, loss, active):
        self.step.append(step)
        self.lr.append(lr)
        self.loss.append(loss)
        self.active.append(active)

    def window_mean(self, column, start, stop):
        return float(np.mean(getattr(self, column)[start:stop]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# triplet mining: {self.mining}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "lr", "loss", "active_fraction"])
            for row in zip(self.step, self.lr, self.loss, self.active):
                writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


def batch_loss(net, anchors, positives, negatives, margin):
    """Mean triplet loss over a batch as a differentiable graph.

    Returns ``(loss_tensor, active_fraction)``.
    """
    b = len(anchors)
    emb = net.forward_graph(np.concatenate([anchors, positives, negatives]))
    a, p, n = emb[:b], emb[b:2 * b], emb[2 * b:]
    pp = row_norm(p - a)
    np_ = row_norm(n - a)
    hinge = (pp - np_ + margin).relu()
    return hinge.mean(), float(np.mean(hinge.data > 0))


def train_network(config, X, y, log=None):
    """Train an embedding network on frames ``X`` with labels ``y``."""
    config.validate()
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    net = Network.init(X.shape[1], tuple(config.hidden), rng=rng)
    sampler = TripletSampler(y)
    opt = Adam(net.flat.size, config.base_lr, config.decay, config.step_size)
    log = log if log is not None else TrainLog()
    for step in range(config.iterations):
        lr = opt.schedule(step // config.epoch_length)
        ai, pi, ni = sampler.sample(rng, config.batch_size)
        net.zero_grad()
        loss, active = batch_loss(net, X[ai], X[pi], X[ni], config.margin)
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss at step {step}")
        loss.backward()
        opt.step(net.flat, net.grad)
        log.append(step, lr, value, active)
    return net, opt, log


def train(config, dataset, coverage=None, bandwidth=None):
    """Train one task model and fit its similarity map on the training frames.

    Returns ``(checkpoint, log)``.
    """
    from .checkpoint import ModelCheckpoint
    from .simmap import DEFAULT_COVERAGE, SimilarityMap

    config.validate()
    X, y = dataset.frame_table(config.task)
    net, opt, log = train_network(config, X, y)
    points = net.forward(X)
    simmap = SimilarityMap.fit(config.task, points, y, dataset.categories(config.task),
                               DEFAULT_COVERAGE if coverage is None else coverage, bandwidth)
    return ModelCheckpoint(net, simmap, config, opt), log
