"""Trained-model containers and their JSON file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dtw import DtwConfig
from .errors import TimefpError, TraceFormatError
from .trace import Trace

FORMAT_VERSION = 1
CRITERIA = ("min_sum", "min_variance")


@dataclass(frozen=True)
class ExemplarSet:
    site: str
    exemplars: tuple[Trace, ...]
    criterion: str = "min_sum"

    def __post_init__(self):
        if not self.exemplars:
            raise TimefpError(f"site {self.site!r}: empty exemplar set")
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        object.__setattr__(self, "exemplars", tuple(self.exemplars))

    @property
    def mean_length(self) -> float:
        return float(np.mean([len(t) for t in self.exemplars]))


@dataclass(frozen=True)
class BetaFit:
    exemplar: Trace
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise TimefpError(f"Beta parameters must be positive, got ({self.alpha}, {self.beta})")


@dataclass(frozen=True)
class ThresholdTable:
    """Per-site upper bound on F_min for an in-set decision."""

    thresholds: dict[str, float]
    x: float
    grouping: str = "predicted"

    def __post_init__(self):
        for site, v in self.thresholds.items():
            if not 0.0 <= v <= 1.0:
                raise TimefpError(f"threshold for {site!r} outside [0, 1]: {v}")
        if not 0.0 <= self.x <= 100.0:
            raise ValueError(f"percentile x must lie in [0, 100], got {self.x}")

    def __getitem__(self, site: str) -> float:
        return self.thresholds[site]


@dataclass
class TrainedModel:
    exemplars: dict[str, ExemplarSet]
    cfg: DtwConfig = field(default_factory=DtwConfig)
    bayes: dict[str, BetaFit] | None = None
    thresholds: ThresholdTable | None = None
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if not self.exemplars:
            raise TimefpError("model has no sites")
        for label, es in self.exemplars.items():
            if es.site != label:
                raise TimefpError(f"exemplar set for {es.site!r} filed under {label!r}")

    @property
    def sites(self) -> list[str]:
        return sorted(self.exemplars)

    @property
    def exemplar_count(self) -> int:
        return sum(len(es.exemplars) for es in self.exemplars.values())

    def without(self, site: str) -> "TrainedModel":
        """The same model with one site removed (leave-one-site-out)."""
        return TrainedModel(
            {k: v for k, v in self.exemplars.items() if k != site},
            self.cfg,
            None if self.bayes is None else {k: v for k, v in self.bayes.items() if k != site},
        )


def _trace_doc(t: Trace) -> dict:
    return {"id": t.id, "timestamps": [float(v) for v in t.timestamps]}


def _trace_from(doc: dict, site: str) -> Trace:
    return Trace(id=doc["id"], timestamps=np.asarray(doc["timestamps"], dtype=np.float64), site=site)


def model_to_dict(model: TrainedModel) -> dict:
    sites = {}
    for label in model.sites:
        es = model.exemplars[label]
        entry: dict = {
            "criterion": es.criterion,
            "exemplars": [_trace_doc(t) for t in es.exemplars],
        }
        if model.bayes is not None and label in model.bayes:
            b = model.bayes[label]
            entry["beta"] = {"alpha": b.alpha, "beta": b.beta, "exemplar": _trace_doc(b.exemplar)}
        if model.thresholds is not None and label in model.thresholds.thresholds:
            entry["threshold"] = model.thresholds.thresholds[label]
        sites[label] = entry
    doc = {
        "format_version": model.format_version,
        "tool_version": __version__,
        "cfg": model.cfg.to_dict(),
        "sites": sites,
    }
    if model.thresholds is not None:
        doc["threshold_x"] = model.thresholds.x
        doc["threshold_grouping"] = model.thresholds.grouping
    return doc


def model_from_dict(doc: dict) -> TrainedModel:
    if doc.get("format_version") != FORMAT_VERSION:
        raise TraceFormatError(f"unsupported model format_version {doc.get('format_version')!r}")
    cfg = DtwConfig.from_dict(doc["cfg"])
    exemplars, bayes, thresholds = {}, {}, {}
    for label, entry in doc["sites"].items():
        exemplars[label] = ExemplarSet(
            label, tuple(_trace_from(d, label) for d in entry["exemplars"]), entry["criterion"]
        )
        if "beta" in entry:
            b = entry["beta"]
            bayes[label] = BetaFit(_trace_from(b["exemplar"], label), b["alpha"], b["beta"])
        if "threshold" in entry:
            thresholds[label] = entry["threshold"]
    table = None
    if "threshold_x" in doc:
        table = ThresholdTable(thresholds, doc["threshold_x"], doc.get("threshold_grouping", "predicted"))
    return TrainedModel(exemplars, cfg, bayes or None, table)


def save_model(model: TrainedModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> TrainedModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"{path}: not a model file ({exc})") from None
    try:
        return model_from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise TraceFormatError(f"{path}: malformed model ({exc!r})") from None
