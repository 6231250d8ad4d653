"""Command-line front end: ``timefp <subcommand> ...``.

Exit status is 0 on success, 1 on bad input or usage, 2 on I/O failure.
Every JSON report embeds the full run configuration and the tool version.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from ._parallel import default_jobs
from .classify import DistanceCache, bayes_classify, cross_validate, knn_classify, train
from .distortion import (
    BENCHMARK_SIGNATURE,
    DistortionSpec,
    SignatureConfig,
    distort,
    synth_sites,
)
from .dtw import COSTS, TIE_BREAKS, DtwConfig
from .errors import TimefpError
from .model import CRITERIA, load_model, save_model
from .openworld import EMPTY_POLICIES, GROUPINGS, calibrate, classify_open, evaluate_open
from .stream import locate, read_stream, sweep, write_sweep_csv
from .trace import Dataset, ingest_capture, ingest_csv, load_manifest, write_csv, write_manifest

PRESETS = {"benchmark": BENCHMARK_SIGNATURE, "plain": SignatureConfig()}


@dataclass
class RunConfig:
    command: str
    options: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        # Worker count is left out: it never changes a result.
        opts = {k: v for k, v in vars(args).items() if k not in ("command", "func", "jobs")}
        return cls(args.command, _plain(opts))

    def to_dict(self) -> dict:
        return {"command": self.command, "options": self.options}


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, Path):
        return str(v)
    return v


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _dtw_cfg(args) -> DtwConfig:
    return DtwConfig(window=args.window, cost=args.cost, tie_break=args.tie_break, seed=args.dtw_seed)


def _dump(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


def _report(args, result: dict) -> dict:
    return {
        "tool": "timefp",
        "version": __version__,
        "run": RunConfig.from_args(args).to_dict(),
        "result": result,
    }


def _emit(args, result: dict, path=None) -> None:
    text = _dump(_report(args, result))
    target = path if path is not None else getattr(args, "out", None)
    if target is None or str(target) == "-":
        sys.stdout.write(text)
    else:
        Path(target).write_text(text, encoding="utf-8")


def _spec_from(args) -> DistortionSpec | None:
    stretch = None
    if args.stretch is not None:
        stretch = args.stretch[0] if len(args.stretch) == 1 else tuple(args.stretch)
    fields = dict(
        slot=args.slot,
        stretch=stretch,
        jitter_sigma=args.jitter,
        drop=tuple(args.drop) if args.drop is not None else None,
    )
    if all(v is None for v in fields.values()):
        return None
    return DistortionSpec(**fields, seed=args.seed)


def _load_inputs(paths, args) -> list:
    traces = []
    for p in paths:
        p = Path(p)
        if p.suffix in (".pcap", ".cap"):
            if not args.endpoint:
                raise TimefpError(f"{p}: capture input needs --endpoint")
            traces.append(ingest_capture(p, args.endpoint, site=getattr(args, "site", None)))
        else:
            traces.append(ingest_csv(p, args.direction, site=getattr(args, "site", None)))
    return traces


# --- subcommands ------------------------------------------------------------


def cmd_ingest(args) -> None:
    traces = _load_inputs(args.inputs, args)
    ds = Dataset({args.site: traces})
    manifest = write_manifest(ds, args.out_dir)
    _emit(args, {"manifest": str(manifest), "traces": {t.id: len(t) for t in traces}}, args.report)


def cmd_synth(args) -> None:
    sig = PRESETS[args.preset]
    spec = _spec_from(args)
    ds = synth_sites(args.sites, args.samples, spec, seed=args.seed, signature=sig)
    manifest = write_manifest(ds, args.out_dir)
    _emit(args, {"manifest": str(manifest), "meta": ds.meta, "traces": len(ds)}, args.report)


def cmd_train(args) -> None:
    ds = load_manifest(args.manifest, args.direction)
    cfg = _dtw_cfg(args)
    cache = DistanceCache(cfg, args.jobs)
    model = train(ds, args.exemplars, args.criterion, cfg, args.bayes, cache)
    if args.calibrate is not None:
        model.thresholds = calibrate(model, ds, args.calibrate, args.k, args.grouping, cache, empty=args.empty)
    save_model(model, args.out)
    summary = {
        "model": str(args.out),
        "sites": {s: [t.id for t in model.exemplars[s].exemplars] for s in model.sites},
    }
    if model.thresholds is not None:
        summary["thresholds"] = model.thresholds.thresholds
    _emit(args, summary, args.report)


def cmd_classify(args) -> None:
    model = load_model(args.model)
    traces = _load_inputs(args.inputs, args)
    cache = DistanceCache(model.cfg, args.jobs)
    cache.many([(t, ex) for t in traces for s in model.sites for ex in model.exemplars[s].exemplars])
    rows = {}
    for t in traces:
        if args.method == "bayes":
            row = {"predicted": bayes_classify(model, t, cache)}
        else:
            res = knn_classify(model, t, args.k, cache)
            row = {
                "predicted": res.predicted,
                "votes": res.votes,
                "neighbours": [n._asdict() for n in res.neighbours[: args.k]],
            }
        if args.open:
            if model.thresholds is None:
                raise TimefpError("model has no thresholds; train with --calibrate")
            o = classify_open(model, model.thresholds, t, args.k, cache)
            row["open"] = {"in_set": o.in_set, "site": o.site, "fmin": o.fmin}
        rows[t.id] = row
    _emit(args, {"classifications": rows})


def cmd_crossval(args) -> None:
    ds = load_manifest(args.manifest, args.direction)
    rep = cross_validate(
        ds, args.folds, args.k, args.exemplars, _dtw_cfg(args), args.seed, args.method, args.criterion,
        jobs=args.jobs,
    )
    if args.csv:
        with Path(args.csv).open("w", encoding="utf-8") as fh:
            fh.write("site,fold,accuracy\n")
            for site, fold, acc in rep.fold_rows():
                fh.write(f"{site},{fold},{acc!r}\n")
    _emit(args, rep.to_dict())


def cmd_openworld(args) -> None:
    inset = load_manifest(args.inset, args.direction)
    outset = load_manifest(args.outset, args.direction) if args.outset else None
    if args.train:
        ds = load_manifest(args.train, args.direction)
        cfg = _dtw_cfg(args)
        cache = DistanceCache(cfg, args.jobs)
        model = train(ds, args.exemplars, args.criterion, cfg, cache=cache)
        tables = {x: calibrate(model, ds, x, args.k, args.grouping, cache, empty=args.empty) for x in args.x}
    else:
        if args.model is None:
            raise TimefpError("openworld needs --train or --model")
        model = load_model(args.model)
        if model.thresholds is None:
            raise TimefpError("model has no thresholds; train with --calibrate or use --train")
        cache = DistanceCache(model.cfg, args.jobs)
        tables = {model.thresholds.x: model.thresholds}
    out = {}
    for x, table in sorted(tables.items()):
        rep = evaluate_open(model, table, inset, outset, args.k, cache)
        out[repr(float(x))] = {**rep.to_dict(), "thresholds": table.thresholds}
    _emit(args, {"by_x": out})


def cmd_locate(args) -> None:
    model = load_model(args.model)
    stream = read_stream(args.stream)
    threshold = model.thresholds if args.threshold else None
    if args.threshold and threshold is None:
        raise TimefpError("model has no thresholds; train with --calibrate")
    loc = locate(model, stream, args.target, args.step, threshold, args.jobs)
    if args.sweep_csv:
        write_sweep_csv(sweep(model, stream, args.target, args.step, args.jobs), args.sweep_csv)
    _emit(args, {**loc.to_dict(), "stream_length": len(stream)})


def cmd_distort(args) -> None:
    spec = _spec_from(args)
    if spec is None:
        raise TimefpError("distort needs at least one of --slot, --stretch, --jitter, --drop")
    t = ingest_csv(args.input, args.direction)
    out = distort(t, spec)
    write_csv(out, args.output)
    _emit(args, {"input_packets": len(t), "output": str(args.output), "spec": spec.to_dict()}, args.report)


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="timefp", description="Timing-only website fingerprinting toolkit.")
    p.add_argument("--version", action="version", version=f"timefp {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    dtw = _Parser(add_help=False)
    g = dtw.add_argument_group("alignment")
    g.add_argument("--window", type=float, default=0.2)
    g.add_argument("--cost", choices=COSTS, default="derivative")
    g.add_argument("--tie-break", choices=TIE_BREAKS, default="random")
    g.add_argument("--dtw-seed", type=int, default=0)

    common = _Parser(add_help=False)
    common.add_argument("--jobs", type=int, default=default_jobs())
    common.add_argument("--direction", choices=("up", "down", "both"), default="up")

    model_opts = _Parser(add_help=False)
    model_opts.add_argument("--exemplars", type=int, default=3)
    model_opts.add_argument("--criterion", choices=CRITERIA, default="min_sum")
    model_opts.add_argument("--k", type=int, default=5)

    open_opts = _Parser(add_help=False)
    open_opts.add_argument("--grouping", choices=GROUPINGS, default="predicted")
    open_opts.add_argument("--empty", choices=EMPTY_POLICIES, default="error",
                           help="what to do with a site whose out-of-set population is empty")

    dist = _Parser(add_help=False)
    dist.add_argument("--slot", type=float)
    dist.add_argument("--stretch", type=float, nargs="+", metavar="FACTOR")
    dist.add_argument("--jitter", type=float, metavar="SIGMA")
    dist.add_argument("--drop", type=float, nargs=2, metavar=("P", "DELAY"))
    dist.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("ingest", parents=[common], help="convert CSV/pcap traces into a manifest")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--site", required=True)
    s.add_argument("--endpoint", help="client address for pcap inputs")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", parents=[dist], help="generate a synthetic dataset")
    s.add_argument("--sites", type=int, default=20)
    s.add_argument("--samples", type=int, default=30)
    s.add_argument("--preset", choices=sorted(PRESETS), default="benchmark")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[dtw, common, model_opts, open_opts], help="select exemplars")
    s.add_argument("--manifest", required=True)
    s.add_argument("--bayes", choices=CRITERIA, help="also fit Beta models with this exemplar criterion")
    s.add_argument("--calibrate", type=float, metavar="X", help="store open-world thresholds at percentile X")
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("classify", parents=[common], help="classify traces against a model")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--model", required=True)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--method", choices=("knn", "bayes"), default="knn")
    s.add_argument("--open", action="store_true", help="also apply the stored open-world thresholds")
    s.add_argument("--endpoint")
    s.add_argument("--out")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("crossval", parents=[dtw, common, model_opts], help="k-fold cross-validation")
    s.add_argument("--manifest", required=True)
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--method", choices=("knn", "bayes"), default="knn")
    s.add_argument("--csv", help="per-site fold accuracies (site,fold,accuracy)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_crossval)

    s = sub.add_parser("openworld", parents=[dtw, common, model_opts, open_opts], help="open-world evaluation")
    s.add_argument("--train", help="training manifest; thresholds are calibrated on it")
    s.add_argument("--model", help="model with stored thresholds (instead of --train)")
    s.add_argument("--inset", required=True)
    s.add_argument("--outset")
    s.add_argument("--x", type=float, nargs="+", default=[90.0])
    s.add_argument("--out")
    s.set_defaults(func=cmd_openworld)

    s = sub.add_parser("locate", parents=[common], help="find a target page inside a packet stream")
    s.add_argument("--model", required=True)
    s.add_argument("--stream", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--step", type=int, default=10)
    s.add_argument("--threshold", action="store_true", help="report presence using the stored threshold")
    s.add_argument("--sweep-csv", help="write distance against offset")
    s.add_argument("--out")
    s.set_defaults(func=cmd_locate)

    s = sub.add_parser("distort", parents=[dist], help="apply distortions to one trace")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--direction", choices=("up", "down", "both"), default="up")
    s.add_argument("--report")
    s.set_defaults(func=cmd_distort)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (TimefpError, ValueError) as exc:
        print(f"timefp: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"timefp: I/O error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
