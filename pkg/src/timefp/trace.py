"""Uplink timestamp traces, datasets, and ingestion from CSV and pcap files."""

from __future__ import annotations

import csv
import hashlib
import ipaddress
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import EmptyTraceError, TraceFormatError, TraceValidationError

CSV_HEADER = ("time_s", "dir")
DIRECTIONS = ("up", "down")


@dataclass(frozen=True, eq=False)
class Trace:
    """Timestamps (seconds) of the packets seen in one observation window.

    The array is stored read-only. Construction checks that it is non-empty,
    finite, non-negative and non-decreasing; it does not shift the origin,
    use :func:`normalize` for that.
    """

    id: str
    timestamps: np.ndarray
    site: str | None = None
    source: str = ""

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype=np.float64).reshape(-1)
        if ts.size == 0:
            raise EmptyTraceError(f"trace {self.id!r} has no packets")
        if not np.all(np.isfinite(ts)):
            raise TraceValidationError(f"trace {self.id!r} has non-finite timestamps")
        if ts[0] < 0:
            raise TraceValidationError(f"trace {self.id!r} has negative timestamps", 1)
        bad = np.flatnonzero(np.diff(ts) < 0)
        if bad.size:
            idx = int(bad[0]) + 2
            raise TraceValidationError(
                f"trace {self.id!r}: timestamp at index {idx} decreases", idx
            )
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "_digest", hashlib.blake2b(ts.tobytes(), digest_size=8).hexdigest())

    @property
    def key(self) -> tuple[str, str]:
        """Identity for memoisation: the id plus a digest of the timestamps."""
        return (self.id, self._digest)

    def __len__(self) -> int:
        return self.timestamps.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.id == other.id
            and self.site == other.site
            and np.array_equal(self.timestamps, other.timestamps)
        )

    __hash__ = None  # type: ignore[assignment]

    def replace(self, timestamps=None, **kwargs) -> "Trace":
        return Trace(
            id=kwargs.get("id", self.id),
            timestamps=self.timestamps if timestamps is None else timestamps,
            site=kwargs.get("site", self.site),
            source=kwargs.get("source", self.source),
        )

    def shifted(self, c: float) -> "Trace":
        return self.replace(self.timestamps + c)


def normalize(trace: Trace) -> Trace:
    """Shift a trace so that its first timestamp is 0."""
    ts = trace.timestamps
    if ts[0] == 0.0:
        return trace
    return trace.replace(ts - ts[0])


@dataclass
class Dataset:
    """Traces grouped by site label."""

    sites: dict[str, list[Trace]]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = set()
        for label, traces in self.sites.items():
            if not traces:
                raise TraceValidationError(f"site {label!r} has no traces")
            for t in traces:
                if t.site != label:
                    raise TraceValidationError(
                        f"trace {t.id!r} is labelled {t.site!r} but filed under {label!r}"
                    )
                if t.id in ids:
                    raise TraceValidationError(f"duplicate trace id {t.id!r}")
                ids.add(t.id)

    @property
    def labels(self) -> list[str]:
        return sorted(self.sites)

    def traces(self) -> Iterator[Trace]:
        for label in self.labels:
            yield from self.sites[label]

    def __len__(self) -> int:
        return sum(len(v) for v in self.sites.values())

    def subset(self, labels: Iterable[str]) -> "Dataset":
        return Dataset({k: list(self.sites[k]) for k in labels}, dict(self.meta))

    @classmethod
    def from_traces(cls, traces: Iterable[Trace], meta: dict | None = None) -> "Dataset":
        sites: dict[str, list[Trace]] = {}
        for t in traces:
            if t.site is None:
                raise TraceValidationError(f"trace {t.id!r} carries no site label")
            sites.setdefault(t.site, []).append(t)
        return cls(sites, meta or {})


# --- CSV ---------------------------------------------------------------------


def ingest_csv(
    path, direction: str = "up", trace_id: str | None = None, site: str | None = None
) -> Trace:
    """Read a ``time_s,dir`` CSV and return the normalized trace of one direction.

    ``direction`` may be ``"up"`` (default), ``"down"`` or ``"both"``.
    """
    path = Path(path)
    if direction not in ("up", "down", "both"):
        raise ValueError(f"unknown direction {direction!r}")
    keep = DIRECTIONS if direction == "both" else (direction,)
    times: list[float] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise TraceFormatError(f"expected header {','.join(CSV_HEADER)!r}", 1)
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise TraceFormatError(f"expected 2 fields, got {len(row)}", line)
            raw_t, d = row[0].strip(), row[1].strip()
            try:
                t = float(raw_t)
            except ValueError:
                raise TraceFormatError(f"bad timestamp {raw_t!r}", line) from None
            if not np.isfinite(t):
                raise TraceFormatError(f"non-finite timestamp {raw_t!r}", line)
            if d not in DIRECTIONS:
                raise TraceFormatError(f"bad direction {d!r}", line)
            if d in keep:
                times.append(t)
    if not times:
        raise EmptyTraceError(f"{path}: no {direction} packets")
    ts = np.asarray(times)
    # Validate before normalizing so the error names the row position.
    bad = np.flatnonzero(np.diff(ts) < 0)
    if bad.size:
        idx = int(bad[0]) + 2
        raise TraceValidationError(f"{path}: timestamp at index {idx} decreases", idx)
    return Trace(
        id=trace_id if trace_id is not None else path.stem,
        timestamps=ts - ts[0],
        site=site,
        source=str(path),
    )


def write_csv(trace: Trace, path, direction: str = "up") -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for t in trace.timestamps:
            fh.write(f"{float(t)!r},{direction}\n")


# --- pcap --------------------------------------------------------------------

_PCAP_MAGIC = {
    b"\xd4\xc3\xb2\xa1": ("<", 1e-6),
    b"\xa1\xb2\xc3\xd4": (">", 1e-6),
    b"\x4d\x3c\xb2\xa1": ("<", 1e-9),
    b"\xa1\xb2\x3c\x4d": (">", 1e-9),
}

LINKTYPE_NULL = 0
LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = (101, 12, 14)
LINKTYPE_LINUX_SLL = 113
LINKTYPE_IPV4 = 228
LINKTYPE_IPV6 = 229
LINKTYPE_LINUX_SLL2 = 276


def _l3_payload(linktype: int, data: bytes, order: str) -> bytes | None:
    """Strip the link-layer header; None for non-IP frames."""
    if linktype == LINKTYPE_ETHERNET:
        if len(data) < 14:
            return None
        off = 12
        ethertype = struct.unpack_from(">H", data, off)[0]
        while ethertype in (0x8100, 0x88A8) and len(data) >= off + 6:
            off += 4
            ethertype = struct.unpack_from(">H", data, off)[0]
        if ethertype not in (0x0800, 0x86DD):
            return None
        return data[off + 2 :]
    if linktype in LINKTYPE_RAW or linktype in (LINKTYPE_IPV4, LINKTYPE_IPV6):
        return data
    if linktype == LINKTYPE_LINUX_SLL:
        if len(data) < 16 or struct.unpack_from(">H", data, 14)[0] not in (0x0800, 0x86DD):
            return None
        return data[16:]
    if linktype == LINKTYPE_LINUX_SLL2:
        if len(data) < 20 or struct.unpack_from(">H", data, 0)[0] not in (0x0800, 0x86DD):
            return None
        return data[20:]
    if linktype == LINKTYPE_NULL:
        return data[4:] if len(data) >= 4 else None
    raise TraceFormatError(f"unsupported link type {linktype}")


def _source_address(packet: bytes):
    if not packet:
        return None
    version = packet[0] >> 4
    if version == 4 and len(packet) >= 20:
        return ipaddress.IPv4Address(packet[12:16])
    if version == 6 and len(packet) >= 40:
        return ipaddress.IPv6Address(packet[8:24])
    return None


def read_capture(path) -> Iterator[tuple[int, int, float, object]]:
    """Yield ``(sec, frac, frac_scale, source_address)`` per record of a pcap file."""
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise TraceFormatError(f"{path}: truncated pcap global header")
    try:
        order, scale = _PCAP_MAGIC[raw[:4]]
    except KeyError:
        raise TraceFormatError(f"{path}: unrecognised capture magic {raw[:4].hex()}") from None
    linktype = struct.unpack_from(order + "I", raw, 20)[0] & 0x0FFFFFFF
    off = 24
    rec = struct.Struct(order + "IIII")
    while off < len(raw):
        if off + rec.size > len(raw):
            raise TraceFormatError(f"{path}: truncated record header at byte {off}")
        sec, frac, incl, _orig = rec.unpack_from(raw, off)
        off += rec.size
        if off + incl > len(raw):
            raise TraceFormatError(f"{path}: truncated record data at byte {off}")
        payload = _l3_payload(linktype, raw[off : off + incl], order)
        off += incl
        yield sec, frac, scale, (_source_address(payload) if payload is not None else None)


def ingest_capture(
    path, endpoint: str, trace_id: str | None = None, site: str | None = None
) -> Trace:
    """Normalized timestamps of the packets in a pcap whose source is ``endpoint``."""
    path = Path(path)
    ep = ipaddress.ip_address(endpoint)
    secs: list[int] = []
    fracs: list[float] = []
    for sec, frac, scale, src in read_capture(path):
        if src is not None and src == ep:
            secs.append(sec)
            fracs.append(frac * scale)
    if not secs:
        raise EmptyTraceError(f"{path}: no packets sourced from {endpoint}")
    # Subtract the integer seconds first; epoch-sized floats lose µs resolution.
    s = np.asarray(secs, dtype=np.int64) - secs[0]
    ts = s.astype(np.float64) + (np.asarray(fracs) - fracs[0])
    return Trace(
        id=trace_id if trace_id is not None else path.stem,
        timestamps=ts,
        site=site,
        source=str(path),
    )


# --- manifests ---------------------------------------------------------------


def load_manifest(path, direction: str = "up") -> Dataset:
    """Load ``{"sites": {label: [csv paths]}}``; paths resolve against the manifest."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        sites = doc["sites"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise TraceFormatError(f"{path}: bad manifest ({exc})") from None
    base = path.parent
    out: dict[str, list[Trace]] = {}
    for label, files in sites.items():
        traces = []
        for rel in files:
            p = base / rel
            traces.append(ingest_csv(p, direction=direction, trace_id=str(rel), site=label))
        out[label] = traces
    return Dataset(out, {"manifest": str(path)})


def write_manifest(dataset: Dataset, directory, name: str = "manifest.json") -> Path:
    """Write every trace as CSV under ``directory`` plus a manifest referencing them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sites: dict[str, list[str]] = {}
    for label in dataset.labels:
        (directory / label).mkdir(exist_ok=True)
        rels = []
        for t in dataset.sites[label]:
            rel = f"{label}/{_safe_name(t.id)}.csv"
            write_csv(t, directory / rel)
            rels.append(rel)
        sites[label] = rels
    out = directory / name
    out.write_text(json.dumps({"sites": sites}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def _safe_name(s: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in s)


def as_trace(values: Sequence[float] | np.ndarray, id: str = "t", site: str | None = None) -> Trace:
    """Convenience constructor for literal timestamp lists."""
    return Trace(id=id, timestamps=np.asarray(values, dtype=np.float64), site=site)
