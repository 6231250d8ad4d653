"""Network-distortion transforms, the time-slotting defence, and synthetic sites.

The synthetic generator exists so the whole attack pipeline can be exercised
without packet captures. Its burst/gap ranges are configuration, not data.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .trace import Dataset, Trace, normalize


@dataclass(frozen=True)
class DistortionSpec:
    """Per-sample distortions, applied in the order stretch, drop, jitter, slot.

    ``stretch`` is either a fixed factor or a ``(low, high)`` range sampled
    uniformly per sample. ``drop`` is ``(loss probability, retransmit delay)``.
    """

    slot: float | None = None
    stretch: float | tuple[float, float] | None = None
    jitter_sigma: float | None = None
    drop: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if all(v is None for v in (self.slot, self.stretch, self.jitter_sigma, self.drop)):
            raise ValueError("DistortionSpec enables no transform")
        if self.slot is not None and self.slot <= 0:
            raise ValueError("slot must be positive")
        if self.stretch is not None:
            lo, hi = self.stretch_range
            if not 0 < lo <= hi:
                raise ValueError(f"bad stretch {self.stretch!r}")
        if self.jitter_sigma is not None and self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")
        if self.drop is not None:
            p, delay = self.drop
            if not 0 <= p < 1 or delay < 0:
                raise ValueError(f"bad drop {self.drop!r}")

    @property
    def stretch_range(self) -> tuple[float, float]:
        if self.stretch is None:
            return (1.0, 1.0)
        if isinstance(self.stretch, (int, float)):
            return (float(self.stretch), float(self.stretch))
        lo, hi = self.stretch
        return (float(lo), float(hi))

    def with_slot(self, slot: float | None) -> "DistortionSpec":
        d = self.to_dict()
        d["slot"] = slot
        return DistortionSpec.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("stretch", "drop"):
            if isinstance(d[k], tuple):
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DistortionSpec":
        d = dict(d)
        for k in ("stretch", "drop"):
            if isinstance(d.get(k), list):
                d[k] = tuple(d[k])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


BENCHMARK_SPEC = DistortionSpec(jitter_sigma=0.002, stretch=(0.9, 1.1))


def time_slot(trace: Trace, slot: float) -> Trace:
    """Delay every packet to the next multiple of ``slot`` (on-grid packets stay)."""
    if slot <= 0:
        raise ValueError("slot must be positive")
    q = trace.timestamps / slot
    r = np.round(q)
    # Snap values within rounding error of the grid, so the transform is idempotent.
    on_grid = np.abs(q - r) <= 1e-9 * np.maximum(1.0, np.abs(q))
    idx = np.where(on_grid, r, np.ceil(q))
    return trace.replace(idx * slot)


def stretch(trace: Trace, factor: float) -> Trace:
    if factor <= 0:
        raise ValueError("stretch factor must be positive")
    return trace.replace(trace.timestamps * factor)


def jitter(trace: Trace, sigma: float, seed=0) -> Trace:
    """Add N(0, sigma) noise to each timestamp, re-sort and re-normalize."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return trace
    rng = np.random.default_rng(seed)
    ts = np.sort(trace.timestamps + rng.normal(0.0, sigma, size=len(trace)))
    return trace.replace(ts - ts[0])


def drop_and_retransmit(trace: Trace, p: float, delay: float, seed=0) -> Trace:
    """Lose each packet with probability ``p``; its retransmission goes out
    ``delay`` seconds later and every subsequent packet is pushed back too.

    Packet count is preserved. The first packet is never lost.
    """
    if not 0 <= p < 1:
        raise ValueError("p must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    lost = rng.random(len(trace)) < p
    lost[0] = False
    shift = np.cumsum(lost) * delay
    return normalize(trace.replace(trace.timestamps + shift))


def distort(trace: Trace, spec: DistortionSpec, seed=None) -> Trace:
    """Apply every transform enabled in ``spec`` with fresh randomness."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    out = trace
    if spec.stretch is not None:
        lo, hi = spec.stretch_range
        out = stretch(out, rng.uniform(lo, hi) if hi > lo else lo)
    if spec.drop is not None:
        out = drop_and_retransmit(out, spec.drop[0], spec.drop[1], rng.integers(2**63))
    if spec.jitter_sigma:
        out = jitter(out, spec.jitter_sigma, rng.integers(2**63))
    if spec.slot is not None:
        out = time_slot(normalize(out), spec.slot)
    return normalize(out)


@dataclass(frozen=True)
class SignatureConfig:
    """Shape of a synthetic page fetch: bursts of packets separated by gaps (seconds)."""

    bursts: tuple[int, int] = (5, 30)
    burst_size: tuple[int, int] = (1, 8)
    intra_gap: tuple[float, float] = (0.001, 0.005)
    inter_gap: tuple[float, float] = (0.020, 0.500)
    # Per-fetch content variation: each burst gains or loses one packet with
    # this probability (never dropping below one packet).
    resize_prob: float = 0.0
    # Sites are grouped into this many families sharing a template (0: every
    # site independent). Within a family, each site rescales the template's
    # inter-burst gaps by lognormal(0, family_spread), redraws its intra-burst
    # gaps, and resizes bursts with probability family_resize.
    families: int = 0
    family_spread: float = 0.0
    family_resize: float = 0.0
    # Per-fetch server think time: every inter-burst gap is scaled by an
    # independent lognormal(0, gap_noise) factor.
    gap_noise: float = 0.0

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class Signature:
    """A page's fetch pattern: per burst, the gap before it and its intra-burst gaps."""

    lead_gaps: np.ndarray
    bursts: tuple[np.ndarray, ...]

    def timestamps(self) -> np.ndarray:
        gaps: list[float] = []
        for b, intra in enumerate(self.bursts):
            if b > 0:
                gaps.append(self.lead_gaps[b])
            gaps.extend(intra)
        return np.concatenate([[0.0], np.cumsum(gaps)])


# Generator used by the benchmark experiments: per-fetch burst resizing and
# think-time noise make the task hard enough that slotting visibly hurts.
BENCHMARK_SIGNATURE = SignatureConfig(resize_prob=0.3, intra_gap=(0.001, 0.015), gap_noise=0.55)


def synth_signature(rng: np.random.Generator, cfg: SignatureConfig = SignatureConfig()) -> Signature:
    n_bursts = int(rng.integers(cfg.bursts[0], cfg.bursts[1] + 1))
    lead = rng.uniform(*cfg.inter_gap, size=n_bursts)
    bursts = []
    for _ in range(n_bursts):
        size = int(rng.integers(cfg.burst_size[0], cfg.burst_size[1] + 1))
        bursts.append(rng.uniform(*cfg.intra_gap, size=size - 1))
    return Signature(lead, tuple(bursts))


def family_member(template: Signature, rng: np.random.Generator, cfg: SignatureConfig) -> Signature:
    lead = template.lead_gaps * np.exp(rng.normal(0.0, cfg.family_spread, size=template.lead_gaps.size))
    bursts = []
    for intra in template.bursts:
        size = intra.size
        u = rng.random()
        if u < cfg.family_resize / 2 and size > 0:
            size -= 1
        elif u < cfg.family_resize and size + 1 < cfg.burst_size[1]:
            size += 1
        bursts.append(rng.uniform(*cfg.intra_gap, size=size))
    return Signature(lead, tuple(bursts))


def realize(sig: Signature, rng: np.random.Generator, cfg: SignatureConfig) -> np.ndarray:
    """One fetch of a page: the signature with per-burst packet-count changes."""
    lead = sig.lead_gaps
    if cfg.gap_noise > 0:
        lead = lead * np.exp(rng.normal(0.0, cfg.gap_noise, size=lead.size))
    if cfg.resize_prob <= 0:
        return Signature(lead, sig.bursts).timestamps()
    bursts = []
    for intra in sig.bursts:
        u = rng.random()
        if u < cfg.resize_prob / 2 and intra.size > 0:
            intra = np.delete(intra, rng.integers(intra.size))
        elif u < cfg.resize_prob:
            intra = np.insert(intra, rng.integers(intra.size + 1), rng.uniform(*cfg.intra_gap))
        bursts.append(intra)
    return Signature(lead, tuple(bursts)).timestamps()


def synth_sites(
    n_sites: int,
    samples_per_site: int,
    spec: DistortionSpec | None = BENCHMARK_SPEC,
    seed: int = 0,
    signature: SignatureConfig = SignatureConfig(),
    prefix: str = "site",
) -> Dataset:
    """A dataset of ``n_sites`` random signatures, each sampled through ``spec``.

    Randomness is keyed on (seed, site index, sample index), so adding sites or
    samples never changes the ones already generated.
    """
    if n_sites < 2 or samples_per_site < 2:
        raise ValueError("need at least 2 sites and 2 samples per site")
    width = len(str(n_sites - 1))
    sites: dict[str, list[Trace]] = {}
    for s in range(n_sites):
        label = f"{prefix}{s:0{max(2, width)}d}"
        if signature.families > 0:
            fam = s % signature.families
            template = synth_signature(np.random.default_rng([seed, 10**6 + fam]), signature)
            sig = family_member(template, np.random.default_rng([seed, s]), signature)
        else:
            sig = synth_signature(np.random.default_rng([seed, s]), signature)
        samples = []
        for k in range(samples_per_site):
            rng = np.random.default_rng([seed, s, k])
            t = Trace(
                f"{label}-{k:03d}",
                realize(sig, rng, signature),
                site=label,
                source=f"synth seed={seed} site={s} sample={k}",
            )
            if spec is not None:
                t = distort(t, spec, seed=rng.integers(2**63))
            samples.append(t)
        sites[label] = samples
    meta = {
        "generator": "synth_sites",
        "seed": seed,
        "spec": spec.to_dict() if spec is not None else None,
        "signature": signature.to_dict(),
    }
    return Dataset(sites, meta)
