"""Streaming decision points, voting and the early-stop rule.

Each incoming similarity point updates a running mean (the decision point).
The decision point is classified against the similarity map and the result is
counted as a vote. Once at least ``min_frames`` frames were seen and one label
holds a fraction ``>= threshold`` of all votes (unknown votes included in the
denominator), the sequence stops with that label.
"""

from __future__ import annotations

import csv
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

DEFAULT_THRESHOLD = 0.8
DEFAULT_MIN_FRAMES = 5
MODES = ("dp", "gsp")


@dataclass(frozen=True)
class StopEvent:
    frame: int  # 1-based count of frames seen when the rule fired
    label: str
    fraction: float


@dataclass
class DecisionState:
    labels: tuple = ()
    threshold: float = DEFAULT_THRESHOLD
    min_frames: int = DEFAULT_MIN_FRAMES
    total: np.ndarray = field(default_factory=lambda: np.zeros(2))
    n: int = 0
    decision_points: list = field(default_factory=list)
    votes: Counter = field(default_factory=Counter)
    history: list = field(default_factory=list)
    stop: StopEvent | None = None

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0:
            raise InputError(f"threshold must lie in (0, 1], got {self.threshold}")
        if self.min_frames < 1:
            raise InputError(f"min_frames must be >= 1, got {self.min_frames}")

    def accumulate(self, point):
        """Add one similarity point and return the new decision point."""
        self.total = self.total + np.asarray(point, dtype=np.float64)
        self.n += 1
        dp = self.total / self.n
        self.decision_points.append(dp)
        return dp

    def fractions(self):
        return {label: count / self.n for label, count in self.votes.items()}

    def leader(self):
        """Known label with the most votes; earlier labels win ties."""
        known = [lab for lab in self.votes if lab is not None]
        if not known:
            return None
        order = {lab: i for i, lab in enumerate(self.labels)}
        return max(known, key=lambda lab: (self.votes[lab], -order.get(lab, len(order))))

    def vote(self, label):
        """Record the vote for the latest decision point; returns a StopEvent on first firing."""
        if len(self.history) >= self.n:
            raise InputError("vote() must follow accumulate()")
        self.votes[label] += 1
        self.history.append(label)
        if self.stop is not None or self.n < self.min_frames:
            return None
        lead = self.leader()
        if lead is not None and self.votes[lead] / self.n >= self.threshold:
            self.stop = StopEvent(self.n, lead, self.votes[lead] / self.n)
            return self.stop
        return None

    def push(self, point, simmap):
        """Accumulate ``point``, vote its decision point through ``simmap``."""
        dp = self.accumulate(point)
        return self.vote(simmap.classify(dp))

    def finalize(self):
        """Predicted label, or ``None`` when no known class reached the threshold."""
        if self.n < 1:
            raise InputError("finalize() on an empty sequence")
        if self.stop is not None:
            return self.stop.label
        lead = self.leader()
        if lead is not None and self.votes[lead] / self.n >= self.threshold:
            return lead
        return None


def first_stop(votes, threshold=DEFAULT_THRESHOLD, min_frames=DEFAULT_MIN_FRAMES, labels=()):
    """Offline recomputation of the stop frame from a full vote list.

    Recounts votes from scratch at every prefix. Returns ``(frame, label)`` or
    ``None`` when the rule never fires.
    """
    order = {lab: i for i, lab in enumerate(labels)}
    for k in range(max(1, min_frames), len(votes) + 1):
        counts = Counter(v for v in votes[:k] if v is not None)
        if not counts:
            continue
        best = max(counts, key=lambda lab: (counts[lab], -order.get(lab, len(order))))
        if counts[best] / k >= threshold:
            return k, best
    return None


@dataclass
class SequenceResult:
    prediction: str | None
    stop: StopEvent | None
    n_frames: int
    gsps: np.ndarray
    dps: np.ndarray
    votes: list
    latency: float  # mean seconds per frame, embedding plus classification

    @property
    def stop_frame(self):
        return self.stop.frame if self.stop else self.n_frames

    def write_trace(self, path, labels):
        """Per-frame CSV: points, vote and cumulative vote fraction per label."""
        counts = Counter()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["frame", "gsp_x", "gsp_y", "dp_x", "dp_y", "vote", *labels, "unknown"])
            for k, (g, d, v) in enumerate(zip(self.gsps, self.dps, self.votes), start=1):
                counts[v] += 1
                writer.writerow([k, repr(float(g[0])), repr(float(g[1])), repr(float(d[0])), repr(float(d[1])),
                                 "unknown" if v is None else v,
                                 *(f"{counts[lab] / k:.6f}" for lab in labels),
                                 f"{counts[None] / k:.6f}"])


def evaluate_sequence(net, simmap, frames, mode="dp", threshold=DEFAULT_THRESHOLD,
                      min_frames=DEFAULT_MIN_FRAMES, early_stop=True, on_frame=None):
    """Run one sequence through the streaming classifier.

    ``mode="dp"`` votes on running-mean decision points, ``mode="gsp"`` votes
    on the raw per-frame points (ablation arm). With ``early_stop`` the loop
    ends at the first StopEvent, as a robot would halt. ``on_frame`` is called
    as ``on_frame(state, gsp, decision_point, vote)`` after every frame.
    """
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}, got {mode!r}")
    frames = np.asarray(frames)
    if len(frames) == 0:
        raise InputError("empty sequence")
    state = DecisionState(simmap.labels, threshold, min_frames)
    gsps = []
    elapsed = 0.0
    for frame in frames:
        t0 = time.perf_counter()
        gsp = net.forward(frame)
        dp = state.accumulate(gsp)
        vote = simmap.classify(dp if mode == "dp" else gsp)
        event = state.vote(vote)
        elapsed += time.perf_counter() - t0
        gsps.append(gsp)
        if on_frame is not None:
            on_frame(state, gsp, dp, vote)
        if event is not None and early_stop:
            break
    return SequenceResult(state.finalize(), state.stop, state.n, np.array(gsps),
                          np.array(state.decision_points), list(state.history), elapsed / state.n)


def evaluate_batch(net, simmap, frames, mode="dp", threshold=DEFAULT_THRESHOLD,
                   min_frames=DEFAULT_MIN_FRAMES):
    """Vectorized equivalent of :func:`evaluate_sequence` with early stop.

    Embeds and classifies all frames at once, then replays the stop rule on
    the vote list. Used by the evaluation harness; results agree with the
    streaming path up to rounding in the batched matrix products.
    """
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}, got {mode!r}")
    frames = np.asarray(frames)
    gsps = net.forward(frames)
    dps = np.cumsum(gsps, axis=0) / np.arange(1, len(gsps) + 1)[:, None]
    votes = simmap.classify_points(dps if mode == "dp" else gsps)
    state = DecisionState(simmap.labels, threshold, min_frames)
    for gsp, vote in zip(gsps, votes):
        state.accumulate(gsp)
        if state.vote(vote) is not None:
            break
    n = state.n
    return SequenceResult(state.finalize(), state.stop, n, gsps[:n], np.array(state.decision_points),
                          votes[:n], float("nan"))
