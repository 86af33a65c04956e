"""Binary checkpoint: network weights, training metadata and the fitted map.

Layout (all integers little-endian uint32, all reals little-endian float64)::

    magic "GARNETCK" | version | D | n_widths | widths...
    meta_len | meta (UTF-8 JSON, sorted keys)
    n_params | parameter block
    n_clusters | per cluster: label_len | label | bandwidth | threshold |
                 coverage | centroid x, y | m | m x 2 points

Writing is deterministic, so equal models give equal bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError
from .nn import Adam, Network
from .simmap import GarmentCluster, SimilarityMap

MAGIC = b"GARNETCK"
VERSION = 1
_U32 = struct.Struct("<I")
_F64 = struct.Struct("<d")


@dataclass
class ModelCheckpoint:
    net: Network
    simmap: SimilarityMap
    config: object = None  # TrainConfig, or a plain dict after loading
    optimizer: Adam | None = None
    loaded_meta: dict | None = None

    @property
    def task(self):
        return self.simmap.task

    def meta(self):
        if self.loaded_meta is not None:
            return self.loaded_meta
        cfg = self.config.to_dict() if hasattr(self.config, "to_dict") else dict(self.config or {})
        meta = {"task": self.task, "train": cfg}
        if self.optimizer is not None:
            opt = self.optimizer
            meta["optimizer"] = {"name": "adam", "base_lr": opt.base_lr, "decay": opt.decay,
                                 "step_size": opt.step_size, "beta1": opt.beta1, "beta2": opt.beta2,
                                 "eps": opt.eps, "steps": opt.t}
        return meta

    def to_bytes(self):
        out = bytearray(MAGIC)
        widths = self.net.widths
        out += struct.pack(f"<III{len(widths)}I", VERSION, widths[0], len(widths), *widths)
        meta = json.dumps(self.meta(), sort_keys=True, separators=(",", ":")).encode()
        out += _U32.pack(len(meta)) + meta
        out += _U32.pack(self.net.flat.size) + self.net.flat.astype("<f8").tobytes()
        out += _U32.pack(len(self.simmap.clusters))
        for c in self.simmap.clusters:
            label = c.label.encode()
            out += _U32.pack(len(label)) + label
            out += struct.pack("<5d", c.bandwidth, c.threshold, c.coverage, *c.centroid)
            out += _U32.pack(len(c.points)) + np.ascontiguousarray(c.points, dtype="<f8").tobytes()
        return bytes(out)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data, path="<bytes>"):
        reader = _Reader(data, path)
        if reader.take(len(MAGIC)) != MAGIC:
            raise ParseError(path, 0, "not a garnet checkpoint")
        version = reader.u32()
        if version != VERSION:
            raise ParseError(path, reader.pos - 4, f"unsupported checkpoint version {version}")
        dim = reader.u32()
        widths = tuple(reader.u32() for _ in range(reader.u32()))
        if not widths or widths[0] != dim:
            raise ParseError(path, reader.pos, "width chain does not start with the input dimension")
        meta_start = reader.pos
        try:
            meta = json.loads(reader.take(reader.u32()).decode())
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ParseError(path, meta_start, "corrupt metadata block") from None
        n_params = reader.u32()
        flat = reader.f64_array(n_params)
        net = Network(widths, flat)
        clusters = []
        for _ in range(reader.u32()):
            label = reader.take(reader.u32()).decode()
            h, tau, q, cx, cy = (reader.f64() for _ in range(5))
            m = reader.u32()
            points = reader.f64_array(2 * m).reshape(m, 2)
            clusters.append(GarmentCluster(label, points, np.array([cx, cy]), h, tau, q))
        if reader.pos != len(data):
            raise ParseError(path, reader.pos, "trailing bytes after checkpoint")
        return cls(net, SimilarityMap(meta["task"], clusters), meta.get("train", {}), None, meta)

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes(), path)


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ParseError(self.path, self.pos, f"truncated: wanted {n} bytes")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return _U32.unpack(self.take(4))[0]

    def f64(self):
        return _F64.unpack(self.take(8))[0]

    def f64_array(self, n):
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)
