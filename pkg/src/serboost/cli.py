"""Command-line interface: ``serboost <subcommand> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal invariant violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import boosting as fb
from .classifiers import TrainedModel, train
from .dataset_io import CorpusKind, scan_corpus, stratified_split
from .errors import ConfigError, DataError, InvariantError, SerBoostError
from .explain import backmap, global_importance, select_background
from .features import MANIFEST, FeatureMatrix, extract_corpus, relative_paths, zscore_fit
from .pipeline import RunConfig, RunReport, compare_methods, derive_seed, run, select_model

log = logging.getLogger("serboost")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(args, payload: dict, text: str | None = None) -> None:
    if args.json or text is None:
        print(json.dumps(payload, indent=2, allow_nan=False))
    else:
        print(text)


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    return cfg.replace(seed=getattr(args, "seed", None), repeat=getattr(args, "repeat", None),
                       threads=getattr(args, "threads", None), out=getattr(args, "out", None)
                       if getattr(args, "command", "") == "run" else None)


def cmd_scan(args) -> int:
    corpus = scan_corpus(args.root, args.kind)
    split = stratified_split(corpus, args.seed)
    manifest = split.manifest()
    root = Path(args.root)
    for row in manifest["items"]:
        row["path"] = Path(row["path"]).relative_to(root).as_posix()
    _emit(args, {"summary": corpus.summary(), "split": manifest})
    return EXIT_OK


def cmd_extract(args) -> int:
    corpus = scan_corpus(args.root, args.kind)
    matrix, skipped = extract_corpus(corpus, args.threads, args.max_skip)
    matrix = relative_paths(matrix, args.root)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    matrix.write(out, MANIFEST)
    root = Path(args.root)
    skips = [{"path": Path(p).relative_to(root).as_posix(), "reason": r} for p, r in skipped]
    payload = {"rows": len(matrix), "columns": len(matrix.names) + 2, "out": str(out), "skipped": skips}
    text = f"wrote {len(matrix)} rows x {len(matrix.names) + 2} columns to {out}"
    if skips:
        text += "\nskipped:\n" + "\n".join(f"  {s['path']}: {s['reason']}" for s in skips)
    _emit(args, payload, text)
    return EXIT_OK


def _read_features(path) -> FeatureMatrix:
    return FeatureMatrix.read(path, None)


def cmd_boost(args) -> int:
    cfg = _config(args)
    matrix = _read_features(args.features)
    z = zscore_fit(matrix.values).apply(matrix.values)
    y = np.asarray(matrix.labels)
    combos = fb.sample_combinations(len(matrix.names), min(cfg.p, len(matrix.names)), cfg.m,
                                    derive_seed(args.seed, "combinations", 1))
    reports, alpha = fb.score_and_select(z, y, combos, cfg.epsilon, matrix.names)
    boosted = fb.build_boosted(z, y, fb.retained(reports, cfg.max_retained), ev_threshold=cfg.ev_threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    FeatureMatrix(boosted.values, matrix.labels, boosted.columns, matrix.paths).write(out / "boosted.csv")
    (out / "boosted.csv.provenance.json").write_text(boosted.provenance_json() + "\n", encoding="utf-8")
    rows = [r.as_row() for r in reports]
    (out / "combinations.json").write_text(json.dumps({"alpha": alpha, "reports": rows}, indent=2) + "\n",
                                           encoding="utf-8")
    payload = {"alpha": alpha, "evaluated": len(reports), "retained": sum(r.retained for r in reports),
               "columns": list(boosted.columns), "out": str(out)}
    _emit(args, payload, f"retained {payload['retained']} of {len(reports)} combinations "
                         f"-> {len(boosted.columns)} PC columns in {out / 'boosted.csv'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    matrix = _read_features(args.features)
    y = np.asarray(matrix.labels)
    sel = select_model(matrix.values, y, cfg, derive_seed(args.seed, "model", 0))
    model = train(sel.spec, matrix.values, y, matrix.names)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(model.to_json() + "\n", encoding="utf-8")
    payload = {"best": sel.spec.to_dict(), "cv": sel.cv, "table": list(sel.table), "out": str(out)}
    lines = [f"{r['spec']:<40} macro-F1 {r['mean_macro_f1']:.4f}  accuracy {r['mean_accuracy']:.4f}"
             for r in sel.table]
    _emit(args, payload, "\n".join(lines + [f"best: {sel.spec.label()} -> {out}"]))
    return EXIT_OK


def cmd_explain(args) -> int:
    cfg = _config(args)
    matrix = _read_features(args.features)
    model = TrainedModel.from_json(Path(args.model).read_text(encoding="utf-8"))
    y = np.asarray(matrix.labels)
    bg = select_background(matrix.values, y, cfg.background, derive_seed(args.seed, "background", 0))
    ex = select_background(matrix.values, y, cfg.explain_samples, derive_seed(args.seed, "explain", 0))
    report = global_importance(model, matrix.values[bg], matrix.values[ex], cfg.shapley_method, cfg.permutations,
                               derive_seed(args.seed, "shapley", 0))
    prov_path = Path(str(args.features) + ".provenance.json")
    if prov_path.exists():
        prov = fb.load_provenance(prov_path.read_text(encoding="utf-8"))
        names = sorted({n for p in prov.values() for n in p.names})
        report = report.with_backmap(backmap(report, prov, names))
    payload = report.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    lines = [f"{r['column']:<12} {r['mean_abs_phi']:.6f}" for r in payload["pooled"]]
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def _metrics_table(report: RunReport) -> str:
    keys = ("accuracy", "macro_recall", "macro_precision", "macro_f1")
    head = f"{'seed':>6} " + " ".join(f"{k:>16}" for k in keys)
    lines = [head]
    for s in report.seeds:
        lines.append(f"{s['seed']:>6} " + " ".join(f"{s['test'][k]:>16.4f}" for k in keys))
    summ = report.data["summary"]
    lines.append(f"{'mean':>6} " + " ".join(f"{summ[k]['mean']:>9.4f}±{summ[k]['std']:<6.4f}" for k in keys))
    return "\n".join(lines)


def cmd_run(args) -> int:
    cfg = _config(args)
    report = run(cfg)
    payload = {"fingerprint": report.data["fingerprint"], "summary": report.data["summary"],
               "seeds": [{"seed": s["seed"], "test": {k: s["test"][k] for k in
                                                      ("accuracy", "macro_recall", "macro_precision", "macro_f1")}}
                         for s in report.seeds]}
    if cfg.out:
        payload["run_dir"] = str(Path(cfg.out) / f"run-{cfg.fingerprint()}-s{cfg.seed}")
    _emit(args, payload, _metrics_table(report))
    return EXIT_OK


def cmd_compare(args) -> int:
    a = RunReport.from_json(Path(args.a).read_text(encoding="utf-8"))
    b = RunReport.from_json(Path(args.b).read_text(encoding="utf-8"))
    block = compare_methods(a, b, args.source)
    lines = [f"{m:<10} t = {block[m]['t']:.4f}  p = {block[m]['p']:.4g}" for m in ("accuracy", "macro_f1")]
    _emit(args, block, "\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="serboost", description="Iterative explainable feature boosting for speech emotion "
                                                   "recognition.", formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=True):
        p.add_argument("--json", action="store_true", help="print machine-readable JSON to standard output")
        if seed:
            p.add_argument("--seed", type=int, default=0, help="base random seed")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker threads for parallel stages (results do not depend on it)")

    def corpus(p):
        p.add_argument("--root", required=True, help="corpus root directory")
        p.add_argument("--kind", default="generic", choices=[k.value for k in CorpusKind], help="corpus filename convention")

    p = sub.add_parser("scan", help="summarize a corpus and print its stratified split", formatter_class=fmt)
    corpus(p)
    common(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("extract", help="extract the 90 acoustic features to CSV", formatter_class=fmt)
    corpus(p)
    p.add_argument("--out", required=True, help="output feature CSV (a .manifest.json sidecar is written next to it)")
    p.add_argument("--max-skip", type=int, default=None, help="fail when more clips than this cannot be decoded")
    common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("boost", help="select combinations and build the PC dataset", formatter_class=fmt)
    p.add_argument("--features", required=True, help="feature CSV from extract")
    p.add_argument("--out", required=True, help="output directory for boosted.csv, provenance and combinations")
    p.add_argument("--config", default=None, help="configuration file supplying p, m, epsilon")
    common(p)
    p.set_defaults(func=cmd_boost)

    p = sub.add_parser("train", help="cross-validate the registry and save the best model", formatter_class=fmt)
    p.add_argument("--features", required=True, help="feature or boosted CSV")
    p.add_argument("--out", required=True, help="output model JSON")
    p.add_argument("--config", default=None, help="configuration file supplying the registry, folds and grids")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", help="Shapley importance of a saved model", formatter_class=fmt)
    p.add_argument("--features", required=True, help="CSV with the model's columns")
    p.add_argument("--model", required=True, help="model JSON from train")
    p.add_argument("--out", default=None, help="optional importance JSON output")
    p.add_argument("--config", default=None, help="configuration file supplying Shapley settings")
    common(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("run", help="run the full iterative pipeline", formatter_class=fmt)
    p.add_argument("--config", required=True, help="configuration file")
    p.add_argument("--seed", type=int, default=None, help="base seed (overrides the configuration)")
    p.add_argument("--repeat", type=int, default=None, help="number of seeds (overrides the configuration)")
    p.add_argument("--out", default=None, help="directory for the run folder (overrides the configuration)")
    common(p, seed=False)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="Welch t-tests between two run reports", formatter_class=fmt)
    p.add_argument("--a", required=True, help="first report.json")
    p.add_argument("--b", required=True, help="second report.json")
    p.add_argument("--source", default="test", choices=("test", "cv"), help="per-seed metric source")
    p.add_argument("--json", action="store_true", help="print machine-readable JSON to standard output")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvariantError, SerBoostError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
