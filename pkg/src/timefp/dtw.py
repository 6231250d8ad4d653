"""Windowed dynamic time warping over timestamp traces, and the F-distance.

Indices in :class:`WarpingPath` are 1-based, so ``pairs[0]`` is always
``(1, 1)`` and ``pairs[-1]`` is ``(n, m)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .errors import EmptyTraceError, SizeGuardError, TraceValidationError
from .trace import Trace

COSTS = ("derivative", "euclidean")
TIE_BREAKS = ("random", "prefer_diagonal")
BRUTE_FORCE_LIMIT = 12
# Accumulated costs this close count as equal when backtracking. Slotted
# timestamps make many costs equal in exact arithmetic that differ in the last
# few bits once computed in floating point. The absolute term is (~30 ns)^2.
TIE_RTOL = 1e-9
TIE_ATOL = 1e-15


@dataclass(frozen=True)
class DtwConfig:
    window: float = 0.2
    cost: str = "derivative"
    tie_break: str = "random"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.window <= 1.0:
            raise ValueError(f"window fraction must lie in (0, 1], got {self.window}")
        if self.cost not in COSTS:
            raise ValueError(f"unknown cost {self.cost!r}")
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"unknown tie_break {self.tie_break!r}")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DtwConfig":
        return cls(**{k: d[k] for k in ("window", "cost", "tie_break", "seed") if k in d})


def window_band(n: int, m: int, window: float) -> int:
    """Largest admissible ``|i - j|``: ``max(ceil(w * min(n, m)), |n - m|)``."""
    # The epsilon keeps e.g. 0.2 * 5 from rounding up to 2.
    w = math.ceil(window * min(n, m) - 1e-9)
    return max(w, abs(n - m))


@dataclass(frozen=True, eq=False)
class WarpingPath:
    pairs: np.ndarray  # shape (l, 2), 1-based
    n: int
    m: int
    band: int | None = None

    def __post_init__(self):
        p = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if p.shape[0] == 0:
            raise TraceValidationError("empty warping path")
        if tuple(p[0]) != (1, 1) or tuple(p[-1]) != (self.n, self.m):
            raise TraceValidationError(
                f"path must run from (1, 1) to ({self.n}, {self.m}), "
                f"got {tuple(p[0])} .. {tuple(p[-1])}"
            )
        steps = np.diff(p, axis=0)
        if steps.size and (
            np.any((steps < 0) | (steps > 1)) or np.any(steps.sum(axis=1) == 0)
        ):
            raise TraceValidationError("path steps must advance each index by 0 or 1, not both by 0")
        if self.band is not None and np.any(np.abs(p[:, 0] - p[:, 1]) > self.band):
            raise TraceValidationError(f"path leaves the window band {self.band}")
        p.setflags(write=False)
        object.__setattr__(self, "pairs", p)

    def __len__(self) -> int:
        return self.pairs.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, WarpingPath):
            return NotImplemented
        return (self.n, self.m) == (other.n, other.m) and np.array_equal(self.pairs, other.pairs)

    __hash__ = None  # type: ignore[assignment]


def derivative_sequence(trace: Trace | np.ndarray) -> np.ndarray:
    """Local slope estimate ``((t_i - t_{i-1}) + (t_{i+1} - t_{i-1})) / 2``.

    Neighbour indices are clamped to the ends of the sequence, so the first
    value is ``(t_2 - t_1) / 2`` and a length-1 trace maps to ``[0]``.
    """
    t = trace.timestamps if isinstance(trace, Trace) else np.asarray(trace, dtype=np.float64)
    n = t.size
    if n == 0:
        raise EmptyTraceError("derivative of an empty sequence")
    idx = np.arange(n)
    lo = t[np.maximum(idx - 1, 0)]
    hi = t[np.minimum(idx + 1, n - 1)]
    return ((t - lo) + (hi - lo)) / 2.0


def _series(trace: Trace, cost: str) -> np.ndarray:
    if cost == "derivative":
        return derivative_sequence(trace)
    return trace.timestamps


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, nogil=True)
def _splitmix64(state):
    """Advance a splitmix64 stream; returns ``(state, output)``."""
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return state, z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _dtw_kernel(a, b, band, seed, prefer_diagonal):
    n = a.size
    m = b.size
    inf = np.inf
    acc = np.full((n, m), inf)
    for i in range(n):
        jlo = max(0, i - band)
        jhi = min(m - 1, i + band)
        for j in range(jlo, jhi + 1):
            d = a[i] - b[j]
            c = d * d
            if i == 0 and j == 0:
                acc[0, 0] = c
                continue
            best = inf
            if i > 0 and j > 0:
                best = acc[i - 1, j - 1]
            if i > 0 and acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if j > 0 and acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = c + best

    pi = np.empty(n + m, np.int64)
    pj = np.empty(n + m, np.int64)
    i = n - 1
    j = m - 1
    k = 0
    pi[0] = i
    pj[0] = j
    cand_i = np.empty(3, np.int64)
    cand_j = np.empty(3, np.int64)
    state = seed
    while i > 0 or j > 0:
        best = inf
        if i > 0 and j > 0 and acc[i - 1, j - 1] < best:
            best = acc[i - 1, j - 1]
        if i > 0 and acc[i - 1, j] < best:
            best = acc[i - 1, j]
        if j > 0 and acc[i, j - 1] < best:
            best = acc[i, j - 1]
        lim = best + TIE_RTOL * best + TIE_ATOL
        cnt = 0
        # Candidate order fixes the deterministic preference: diagonal, then
        # a step in the first sequence, then a step in the second.
        if i > 0 and j > 0 and acc[i - 1, j - 1] <= lim:
            cand_i[cnt] = i - 1
            cand_j[cnt] = j - 1
            cnt += 1
        if i > 0 and acc[i - 1, j] <= lim:
            cand_i[cnt] = i - 1
            cand_j[cnt] = j
            cnt += 1
        if j > 0 and acc[i, j - 1] <= lim:
            cand_i[cnt] = i
            cand_j[cnt] = j - 1
            cnt += 1
        pick = 0
        if cnt > 1 and not prefer_diagonal:
            state, r = _splitmix64(state)
            pick = np.int64(r % np.uint64(cnt))
        i = cand_i[pick]
        j = cand_j[pick]
        k += 1
        pi[k] = i
        pj[k] = j
    l = k + 1
    out_i = np.empty(l, np.int64)
    out_j = np.empty(l, np.int64)
    for s in range(l):
        out_i[s] = pi[l - 1 - s] + 1
        out_j[s] = pj[l - 1 - s] + 1
    return acc[n - 1, m - 1], out_i, out_j, acc


@njit(cache=True, nogil=True)
def _run_total(pi, pj):
    """Pairs covered by maximal constant-index runs longer than one pair."""
    l = pi.size
    total = 0
    s = 0
    while s < l:
        e = s + 1
        if e < l:
            if pi[e] == pi[s]:
                while e < l and pi[e] == pi[s]:
                    e += 1
            elif pj[e] == pj[s]:
                while e < l and pj[e] == pj[s]:
                    e += 1
        if e - s > 1:
            total += e - s
        s = e
    return total


def _run(t: Trace, t2: Trace, cfg: DtwConfig):
    if len(t) == 0 or len(t2) == 0:
        raise EmptyTraceError("cannot align an empty trace")
    n, m = len(t), len(t2)
    band = window_band(n, m, cfg.window)
    cost, pi, pj, acc = _dtw_kernel(
        _series(t, cfg.cost),
        _series(t2, cfg.cost),
        band,
        np.uint64(cfg.seed),
        cfg.tie_break == "prefer_diagonal",
    )
    return float(cost), pi, pj, acc, band


def dtw_align(t: Trace, t2: Trace, cfg: DtwConfig = DtwConfig()) -> tuple[WarpingPath, float]:
    """Minimum-cost windowed warping path between two traces and its total cost."""
    cost, pi, pj, _, band = _run(t, t2, cfg)
    return WarpingPath(np.column_stack([pi, pj]), len(t), len(t2), band), cost


def f_distance_of_path(path: WarpingPath) -> float:
    """Fraction of the path spent in horizontal or vertical runs, over ``n + m``.

    The path is cut left to right into maximal runs of pairs that share their
    first index or share their second index; runs of more than one pair
    contribute their pair count.
    """
    p = path.pairs
    return _run_total(np.ascontiguousarray(p[:, 0]), np.ascontiguousarray(p[:, 1])) / (
        path.n + path.m
    )


def f_distance(t: Trace, t2: Trace, cfg: DtwConfig = DtwConfig()) -> float:
    _, pi, pj, _, _ = _run(t, t2, cfg)
    return _run_total(pi, pj) / (len(t) + len(t2))


def brute_force_dtw(t: Trace, t2: Trace, cfg: DtwConfig = DtwConfig()) -> float:
    """Exact minimum path cost by enumerating every admissible warping path.

    Test oracle only; refuses traces longer than 12 packets.
    """
    n, m = len(t), len(t2)
    if n == 0 or m == 0:
        raise EmptyTraceError("cannot align an empty trace")
    if n > BRUTE_FORCE_LIMIT or m > BRUTE_FORCE_LIMIT:
        raise SizeGuardError(f"brute force limited to {BRUTE_FORCE_LIMIT} packets, got {n}x{m}")
    a = [float(v) for v in _series(t, cfg.cost)]
    b = [float(v) for v in _series(t2, cfg.cost)]
    band = window_band(n, m, cfg.window)
    best = math.inf

    def walk(i, j, acc):
        nonlocal best
        acc += (a[i] - b[j]) ** 2
        if i == n - 1 and j == m - 1:
            best = min(best, acc)
            return
        for u, v in ((i + 1, j + 1), (i + 1, j), (i, j + 1)):
            if u < n and v < m and abs(u - v) <= band:
                walk(u, v, acc)

    walk(0, 0, 0.0)
    return best


def dump_alignment_csv(t: Trace, t2: Trace, cfg: DtwConfig, path) -> None:
    """Write in-band cells as ``i,j,cost,cumulative,on_path`` rows (1-based)."""
    _, pi, pj, acc, band = _run(t, t2, cfg)
    a, b = _series(t, cfg.cost), _series(t2, cfg.cost)
    on_path = set(zip(pi.tolist(), pj.tolist()))
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("i,j,cost,cumulative,on_path\n")
        for i in range(len(t)):
            for j in range(max(0, i - band), min(len(t2) - 1, i + band) + 1):
                c = (a[i] - b[j]) ** 2
                flag = int((i + 1, j + 1) in on_path)
                fh.write(f"{i + 1},{j + 1},{c!r},{float(acc[i, j])!r},{flag}\n")
