"""Find where a target page's fetch sits inside a stream of back-to-back fetches."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._parallel import pmap
from .dtw import f_distance
from .errors import StreamError
from .model import ThresholdTable, TrainedModel
from .trace import Trace, normalize

DEFAULT_PAUSE = (5.0, 25.0)


@dataclass(frozen=True)
class Segment:
    site: str | None
    start: int  # 1-based, inclusive
    end: int  # 1-based, inclusive
    trace_id: str = ""


@dataclass(frozen=True, eq=False)
class PacketStream:
    timestamps: np.ndarray
    segments: tuple[Segment, ...] = ()

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        if ts.ndim != 1 or ts.size == 0:
            raise StreamError("stream must be a non-empty 1-d sequence")
        if np.any(np.diff(ts) < 0):
            raise StreamError("stream timestamps must be non-decreasing")
        prev = 0
        for seg in self.segments:
            if not (prev < seg.start <= seg.end <= ts.size):
                raise StreamError(f"segment {seg} out of order or out of range")
            prev = seg.end
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "segments", tuple(self.segments))

    def __len__(self) -> int:
        return self.timestamps.size

    def section(self, start: int, length: int) -> Trace:
        """Packets ``start .. start + length - 1`` (1-based), re-normalized."""
        ts = self.timestamps[start - 1 : start - 1 + length]
        return Trace(f"stream@{start}", ts - ts[0])

    def truth(self, site: str) -> Segment:
        for seg in self.segments:
            if seg.site == site:
                return seg
        raise StreamError(f"no ground-truth segment for {site!r}")


def build_stream(
    fetches: Sequence[Trace], pause_range=DEFAULT_PAUSE, seed=0, pauses: Sequence[float] | None = None
) -> PacketStream:
    """Concatenate fetches with a uniform random pause between consecutive ones.

    Explicit ``pauses`` (one per gap between fetches) override the random draw.
    """
    if not fetches:
        raise StreamError("need at least one fetch")
    lo, hi = pause_range
    if not 0 <= lo <= hi:
        raise ValueError(f"bad pause range {pause_range!r}")
    if pauses is not None and len(pauses) != len(fetches) - 1:
        raise ValueError(f"need {len(fetches) - 1} pauses, got {len(pauses)}")
    rng = np.random.default_rng(seed)
    parts, segs = [], []
    clock, pos = 0.0, 1
    for k, f in enumerate(fetches):
        ts = normalize(f).timestamps
        if k > 0:
            clock += rng.uniform(lo, hi) if pauses is None else pauses[k - 1]
        parts.append(ts + clock)
        segs.append(Segment(f.site, pos, pos + len(ts) - 1, f.id))
        clock = parts[-1][-1]
        pos += len(ts)
    return PacketStream(np.concatenate(parts), tuple(segs))


def read_stream(path) -> PacketStream:
    """One timestamp per line; blank lines and ``#`` comments skipped.

    A ``time_s`` header line is allowed so trace CSVs can be used directly
    (their ``dir`` column, if any, is ignored).
    """
    values = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("time_s"):
            continue
        try:
            values.append(float(line.split(",")[0]))
        except ValueError:
            raise StreamError(f"{path}:{lineno}: not a timestamp: {line!r}") from None
    if not values:
        raise StreamError(f"{path}: empty stream")
    return PacketStream(np.asarray(values))


@dataclass(frozen=True)
class StreamLocation:
    site: str
    offset: int  # 1-based
    distance: float
    exemplar_len: float
    exemplar: str = ""
    present: bool | None = None  # set only when a threshold was supplied

    def to_dict(self) -> dict:
        return {
            "site": self.site,
            "offset": self.offset,
            "distance": self.distance,
            "exemplar_len": self.exemplar_len,
            "exemplar": self.exemplar,
            "present": self.present,
        }


TAILS = ("final", "all")


def window_starts(
    stream_len: int, exemplar_len: int, step: int, pad: int | None = None, tail: str = "all"
) -> list[tuple[int, int]]:
    """(start, length) of every window for one exemplar.

    Windows span ``exemplar_len + pad`` packets (``pad`` defaults to ``step``)
    and start every ``step`` packets. A window cut short by the stream end is
    kept only if it holds at least half the exemplar. ``tail="all"`` keeps
    every such window, so a step that divides another step always sees a
    superset of its windows; ``tail="final"`` stops at the first window that
    reaches the stream end.
    """
    if tail not in TAILS:
        raise ValueError(f"unknown tail policy {tail!r}")
    width = exemplar_len + (step if pad is None else pad)
    need = max(1, math.ceil(exemplar_len / 2))
    out = []
    for start in range(1, stream_len + 1, step):
        length = min(width, stream_len - start + 1)
        if length < need:
            break
        out.append((start, length))
        if tail == "final" and start + length - 1 >= stream_len:
            break
    return out


def sweep(
    model: TrainedModel,
    stream: PacketStream,
    target: str,
    step: int = 10,
    jobs: int = 1,
    pad: int | None = None,
    tail: str = "all",
):
    """φ for every (exemplar, window): rows of ``(start, exemplar_id, distance)``."""
    if step < 1 or (pad is not None and pad < 0):
        raise ValueError("step must be >= 1 and pad >= 0")
    if target not in model.exemplars:
        raise StreamError(f"target {target!r} is not a model site")
    exemplars = model.exemplars[target].exemplars
    if len(stream) < min(len(e) for e in exemplars):
        raise StreamError(f"stream of {len(stream)} packets is shorter than every exemplar of {target!r}")
    work = [(ex, s, n) for ex in exemplars for s, n in window_starts(len(stream), len(ex), step, pad, tail)]
    dists = pmap(lambda w: f_distance(stream.section(w[1], w[2]), w[0], model.cfg), work, jobs)
    return [(s, ex.id, d) for (ex, s, _), d in zip(work, dists)]


def locate(
    model: TrainedModel,
    stream: PacketStream,
    target: str,
    step: int = 10,
    threshold: ThresholdTable | None = None,
    jobs: int = 1,
    pad: int | None = None,
    tail: str = "all",
) -> StreamLocation:
    rows = sweep(model, stream, target, step, jobs, pad, tail)
    # Global minimum; ties go to the earliest offset, then exemplar order.
    start, ex_id, dist = min(rows, key=lambda r: (r[2], r[0]))
    present = None if threshold is None else dist <= threshold[target]
    return StreamLocation(target, start, dist, model.exemplars[target].mean_length, ex_id, present)


def tolerance(exemplar_len: float, w: float) -> int:
    return math.ceil(w * exemplar_len - 1e-9)


def locate_success(loc: StreamLocation, truth_start: int | None, w: float = 0.2) -> bool:
    """Success iff the offset is within ``ceil(w * l_s)`` packets of the truth."""
    if truth_start is None:
        raise StreamError("no ground truth to score against")
    return abs(loc.offset - truth_start) <= tolerance(loc.exemplar_len, w)


def write_sweep_csv(rows, path) -> None:
    """Distance against offset, one row per evaluated window."""
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("offset,exemplar,distance\n")
        for start, ex_id, d in sorted(rows, key=lambda r: (r[0], r[1])):
            fh.write(f"{start},{ex_id},{d!r}\n")
