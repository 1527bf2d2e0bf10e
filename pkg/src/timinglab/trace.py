"""Metadata-only packet traces: the adversary's entire view of a stream.

A ``Trace`` has timestamps, sizes and directions and nothing else. There is no
payload field, so code that only receives traces cannot read token content.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .errors import DataError

S2C = "s2c"
C2S = "c2s"


class Record(NamedTuple):
    ts_ns: int
    size: int
    dir: str
    stream: str


@dataclass(frozen=True, eq=False)
class Trace:
    ts_ns: np.ndarray
    size: np.ndarray
    s2c: np.ndarray  # True where the packet travels server -> client
    stream_id: str = "s0"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ts = np.asarray(self.ts_ns, dtype=np.int64)
        size = np.asarray(self.size, dtype=np.int64)
        s2c = np.asarray(self.s2c, dtype=bool)
        if not (ts.shape == size.shape == s2c.shape) or ts.ndim != 1:
            raise DataError("bad-trace", "ts/size/dir lengths differ")
        if ts.size and np.any(np.diff(ts) < 0):
            raise DataError("unsorted-trace", self.stream_id)
        if size.size and size.min() <= 0:
            raise DataError("bad-trace", "packet sizes must be positive")
        object.__setattr__(self, "ts_ns", ts)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "s2c", s2c)

    def __len__(self) -> int:
        return int(self.ts_ns.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.stream_id == other.stream_id
            and np.array_equal(self.ts_ns, other.ts_ns)
            and np.array_equal(self.size, other.size)
            and np.array_equal(self.s2c, other.s2c)
        )

    def records(self) -> Iterator[Record]:
        for t, s, d in zip(self.ts_ns.tolist(), self.size.tolist(), self.s2c.tolist()):
            yield Record(t, s, S2C if d else C2S, self.stream_id)

    def server_to_client(self) -> "Trace":
        m = self.s2c
        return Trace(self.ts_ns[m], self.size[m], m[m], self.stream_id, dict(self.meta))

    def head(self, n: int) -> "Trace":
        return Trace(self.ts_ns[:n], self.size[:n], self.s2c[:n], self.stream_id, dict(self.meta))

    @classmethod
    def from_records(cls, records: Iterable[Record], stream_id: str | None = None, meta: dict | None = None) -> "Trace":
        recs = list(records)
        sid = stream_id if stream_id is not None else (recs[0].stream if recs else "s0")
        return cls(
            np.array([r.ts_ns for r in recs], dtype=np.int64),
            np.array([r.size for r in recs], dtype=np.int64),
            np.array([r.dir == S2C for r in recs], dtype=bool),
            sid,
            meta or {},
        )


def write_jsonl(path: str | Path, traces: Iterable[Trace]) -> None:
    with open(path, "w") as fh:
        for tr in traces:
            for r in tr.records():
                fh.write(json.dumps({"ts_ns": r.ts_ns, "size": r.size, "dir": r.dir, "stream": r.stream}) + "\n")


def read_jsonl(path: str | Path) -> list[Trace]:
    """Read a JSONL trace file; records are grouped by stream in first-seen order."""
    path = Path(path)
    if not path.exists():
        raise DataError("trace-not-found", str(path))
    streams: dict[str, list[Record]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                rec = Record(int(d["ts_ns"]), int(d["size"]), d["dir"], str(d["stream"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError("bad-trace-file", f"{path}:{lineno}: {exc}") from None
            if rec.dir not in (S2C, C2S):
                raise DataError("bad-trace-file", f"{path}:{lineno}: dir {rec.dir!r}")
            streams.setdefault(rec.stream, []).append(rec)
    return [Trace.from_records(recs, sid) for sid, recs in streams.items()]
