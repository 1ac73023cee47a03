"""The iterative boost, train, explain and prune loop with multi-seed evaluation.

One seed runs as follows:

1. stratified 80/10/10 split, z-score fitted on the training rows
2. per iteration: sample and score feature combinations on the active set,
   project the retained ones onto their principal components, pick the best
   registry model by cross-validated macro-F1, score it on validation,
   explain it, back-map importance and prune the weakest active features
3. stop on a fixed point, a validation drop or the iteration cap
4. retrain the chosen iteration's model on train+validation and test once
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import jsonschema
import numpy as np

from . import boosting as fb
from .classifiers import ModelSpec, cross_validate, evaluate, grid_search, train
from .classifiers.core import DEFAULTS as MODEL_DEFAULTS
from .dataset_io import CorpusKind, scan_corpus, stratified_indices
from .errors import (
    ActiveSetTooSmall,
    ConfigError,
    InsufficientRepeats,
    LeakageDetected,
    NoImprovingCombination,
)
from .explain import backmap, global_importance, select_background
from .features import FeatureMatrix, extract_corpus, relative_paths, zscore_fit
from .stats import welch_ttest

log = logging.getLogger(__name__)

REPORT_VERSION = "serboost-run/1"
REGISTRY = ("ExtraTrees", "RandomForest", "DecisionTree", "KNearest", "GaussianNaiveBayes", "LogisticRegression")


def derive_seed(seed: int, stage: str, index: int = 0) -> int:
    """Named seed derivation: the same (seed, stage, index) always gives the same 32-bit seed."""
    state = np.random.SeedSequence([int(seed), zlib.crc32(stage.encode()), int(index)]).generate_state(1)
    return int(state[0])


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

# config key -> (section, RunConfig field)
_KEYS = {
    ("data", "root"): "root", ("data", "kind"): "kind", ("data", "features"): "features",
    ("run", "seed"): "seed", ("run", "repeat"): "repeat", ("run", "max_iterations"): "max_iterations",
    ("run", "prune_fraction"): "prune_fraction", ("run", "tolerance"): "tolerance",
    ("run", "threads"): "threads", ("run", "boosting"): "boosting", ("run", "out"): "out",
    ("boosting", "p"): "p", ("boosting", "m"): "m", ("boosting", "epsilon"): "epsilon",
    ("boosting", "max_retained"): "max_retained", ("boosting", "ev_threshold"): "ev_threshold",
    ("models", "registry"): "registry", ("models", "folds"): "folds", ("models", "grid_iter"): "grid_iter",
    ("shapley", "method"): "shapley_method", ("shapley", "permutations"): "permutations",
    ("shapley", "background"): "background", ("shapley", "samples"): "explain_samples",
}


def _scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(t)
        except ValueError:
            pass
    return t


@dataclass(frozen=True)
class RunConfig:
    root: str | None = None
    kind: str = "generic"
    features: str | None = None
    seed: int = 0
    repeat: int = 1
    max_iterations: int = 10
    prune_fraction: float = 0.1
    tolerance: float = 0.005
    threads: int = 1
    boosting: bool = True
    out: str | None = None
    p: int = fb.DEFAULT_P
    m: int = fb.DEFAULT_M
    epsilon: float = fb.DEFAULT_EPSILON
    max_retained: int | None = 25
    ev_threshold: float = fb.EV_THRESHOLD
    registry: tuple[str, ...] = REGISTRY
    folds: int = 10
    grid_iter: int | None = None
    model_params: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    grids: Mapping[str, Mapping[str, list]] = field(default_factory=dict)
    shapley_method: str = "auto"
    permutations: int = 200
    background: int = 100
    explain_samples: int = 50

    def __post_init__(self):
        if not 0 < self.prune_fraction < 1:
            raise ConfigError(f"prune_fraction must lie in (0, 1), got {self.prune_fraction}")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.tolerance < 0:
            raise ConfigError("tolerance must be >= 0")
        if self.repeat < 1:
            raise ConfigError("repeat must be >= 1")
        if self.p < 1 or self.m < 1:
            raise ConfigError("p and m must be >= 1")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.shapley_method not in ("auto", "exact", "permutation"):
            raise ConfigError(f"unknown shapley method {self.shapley_method!r}")
        if self.permutations < 10 or self.background < 1 or self.explain_samples < 1:
            raise ConfigError("shapley permutations >= 10, background >= 1 and samples >= 1 are required")
        try:
            CorpusKind.parse(self.kind)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        registry = tuple(self.registry)
        if not registry:
            raise ConfigError("model registry is empty")
        for kind in registry:
            if kind not in MODEL_DEFAULTS:
                raise ConfigError(f"unknown model kind {kind!r} in registry")
        object.__setattr__(self, "registry", registry)
        for kind, params in self.model_params.items():
            ModelSpec(kind, dict(params))
        for kind, grid in self.grids.items():
            for values in grid.values():
                if not values:
                    raise ConfigError(f"empty grid for {kind}")
            ModelSpec(kind, {k: v[0] for k, v in grid.items()})
        object.__setattr__(self, "model_params", {k: dict(v) for k, v in sorted(self.model_params.items())})
        object.__setattr__(self, "grids", {k: {p: list(v) for p, v in sorted(g.items())}
                                           for k, g in sorted(self.grids.items())})

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["registry"] = list(self.registry)
        return out

    def fingerprint(self) -> str:
        """Hash of every setting that can change results (not output location or thread count)."""
        payload = {k: v for k, v in self.to_dict().items() if k not in ("out", "threads", "seed", "repeat")}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:8]

    @classmethod
    def from_ini(cls, text: str, base_dir: str | Path | None = None) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable configuration: {exc}") from exc
        values: dict[str, Any] = {}
        params: dict[str, dict] = {}
        grids: dict[str, dict] = {}
        for section in parser.sections():
            for key, raw in parser.items(section):
                if section in ("models", "grid") and "." in key:
                    kind, _, param = key.partition(".")
                    if kind not in MODEL_DEFAULTS or param not in MODEL_DEFAULTS[kind]:
                        raise ConfigError(f"unknown configuration key '{section}.{key}'")
                    if section == "grid":
                        grids.setdefault(kind, {})[param] = [_scalar(v) for v in raw.split(",")]
                    else:
                        params.setdefault(kind, {})[param] = _scalar(raw)
                    continue
                name = _KEYS.get((section, key))
                if name is None:
                    raise ConfigError(f"unknown configuration key '{section}.{key}'")
                if name == "registry":
                    values[name] = tuple(v.strip() for v in raw.split(",") if v.strip())
                elif name in ("root", "features", "out", "kind", "shapley_method"):
                    values[name] = raw.strip() or None
                else:
                    values[name] = _scalar(raw)
        for key in ("root", "features", "out"):
            if values.get(key) and base_dir is not None and not Path(values[key]).is_absolute():
                values[key] = str(Path(base_dir) / values[key])
        typed = {f.name: f.type for f in dataclasses.fields(cls)}
        for name, value in list(values.items()):
            kind = typed[name]
            if value is None:
                continue
            if kind == "int" or kind == "int | None":
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"configuration key for {name} expects an integer, got {value!r}")
            elif kind == "float":
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"configuration key for {name} expects a number, got {value!r}")
                values[name] = float(value)
            elif kind == "bool" and not isinstance(value, bool):
                raise ConfigError(f"configuration key for {name} expects true/false, got {value!r}")
        return cls(**values, model_params=params, grids=grids)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
        return cls.from_ini(text, base_dir=path.parent)


# --------------------------------------------------------------------------
# Leakage audit
# --------------------------------------------------------------------------

class AuditLog:
    """Append-only record of which row identifiers each fitting step saw."""

    def __init__(self):
        self.events: list[tuple[str, frozenset]] = []
        self.test_ids: frozenset = frozenset()

    def fit(self, stage: str, ids: Sequence[str]) -> None:
        self.events.append((stage, frozenset(ids)))

    def evaluate_test(self, ids: Sequence[str]) -> None:
        """Register the test rows; raises if any earlier fitting step touched them."""
        self.test_ids = frozenset(ids)
        for stage, seen in self.events:
            overlap = seen & self.test_ids
            if overlap:
                raise LeakageDetected(f"test row {sorted(overlap)[0]!r} was used by {stage}")

    def summary(self) -> dict:
        return {"fit_events": len(self.events), "stages": sorted({s for s, _ in self.events}),
                "test_rows": len(self.test_ids), "leakage": False}


# --------------------------------------------------------------------------
# Iterations
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitData:
    names: tuple[str, ...]
    x_train: np.ndarray
    y_train: np.ndarray
    id_train: tuple[str, ...]
    x_val: np.ndarray
    y_val: np.ndarray
    id_val: tuple[str, ...]
    x_test: np.ndarray
    y_test: np.ndarray
    id_test: tuple[str, ...]


def split_data(matrix: FeatureMatrix, seed: int, audit: AuditLog | None = None) -> SplitData:
    labels = np.asarray(matrix.labels)
    ids = matrix.paths or tuple(f"row{i}" for i in range(len(matrix)))
    tr, va, te = stratified_indices(labels, seed)
    if audit is not None:
        audit.fit("normalization", [ids[i] for i in tr])
    params = zscore_fit(matrix.values[tr])
    z = params.apply(matrix.values)
    take = lambda idx: (z[idx], labels[idx], tuple(ids[i] for i in idx))  # noqa: E731
    return SplitData(matrix.names, *take(tr), *take(va), *take(te))


@dataclass(frozen=True)
class Selection:
    spec: ModelSpec
    cv: dict[str, float]
    table: tuple[dict, ...]


def select_model(x, y, config: RunConfig, seed: int) -> Selection:
    """Cross-validate (or grid-search) every registry kind; best mean macro-F1 wins.

    Ties go to higher mean accuracy, then to registry order.
    """
    rows = []
    best = None
    for order, kind in enumerate(config.registry):
        spec = ModelSpec(kind, dict(config.model_params.get(kind, {})), seed)
        if kind in config.grids:
            result = grid_search(spec, config.grids[kind], x, y, config.folds, seed, config.grid_iter,
                                 config.threads)
            spec = result.best
            cv = cross_validate(spec, x, y, config.folds, seed, config.threads)
        else:
            cv = cross_validate(spec, x, y, config.folds, seed, config.threads)
        mean = cv.mean
        rows.append({"spec": spec.label(), "mean_macro_f1": mean["macro_f1"], "std_macro_f1": cv.std["macro_f1"],
                     "mean_accuracy": mean["accuracy"]})
        key = (mean["macro_f1"], mean["accuracy"], -order)
        if best is None or key > best[0]:
            best = (key, spec, mean)
    return Selection(best[1], best[2], tuple(rows))


def prune_count(n_active: int, fraction: float, p: int) -> int:
    """floor(fraction * n_active) with a minimum of one, never leaving fewer than ``p``."""
    return max(0, min(max(1, int(math.floor(fraction * n_active))), n_active - p))


@dataclass(frozen=True)
class IterationState:
    t: int
    active: tuple[str, ...]
    reports: tuple                  # all scored combinations, ranked
    alpha: float
    retained: tuple                 # retained reports used for boosting
    columns: tuple[str, ...]
    selection: Selection
    validation: Any                 # MetricsReport
    importance: Any                 # ImportanceReport with back-mapping
    pruned: tuple[str, ...]
    next_active: tuple[str, ...]
    booster: fb.Booster = field(repr=False, compare=False)

    @property
    def validation_f1(self) -> float:
        return self.validation.macro_f1

    def to_dict(self) -> dict:
        top = self.retained[0] if self.retained else self.reports[0]
        return {
            "t": self.t,
            "active": list(self.active),
            "combinations": {
                "evaluated": len(self.reports),
                "retained": len(self.retained),
                "alpha": self.alpha,
                "vrc_all": top.vrc_all,
                "reports": [r.as_row() for r in self.retained],
            },
            "boosted_columns": list(self.columns),
            "model_selection": {"best": self.selection.spec.to_dict(), "cv": self.selection.cv,
                                "table": list(self.selection.table)},
            "validation": self.validation.to_dict(),
            "importance": self.importance.to_dict(),
            "pruned": list(self.pruned),
        }


def run_iteration(t: int, active: Sequence[str], data: SplitData, config: RunConfig, seed: int,
                  audit: AuditLog, guided: Mapping[str, float] | None = None) -> IterationState:
    active = tuple(active)
    if len(active) < config.p:
        raise ActiveSetTooSmall(f"{len(active)} active features; boosting needs at least p={config.p}")
    cols = [data.names.index(n) for n in active]
    x_tr = data.x_train[:, cols]
    x_va = data.x_val[:, cols]
    weights = None
    if guided is not None:
        weights = np.array([guided.get(n, 0.0) for n in active])
    combos = fb.sample_combinations(len(active), config.p, config.m, derive_seed(seed, "combinations", t),
                                    guided_weights=weights)
    audit.fit(f"combination-selection[{t}]", data.id_train)
    reports, alpha = fb.score_and_select(x_tr, data.y_train, combos, config.epsilon, active)
    keep = fb.retained(reports, config.max_retained)
    audit.fit(f"pca[{t}]", data.id_train)
    boosted = fb.build_boosted(x_tr, data.y_train, keep, ev_threshold=config.ev_threshold)
    b_val = boosted.booster.transform(x_va)

    model_seed = derive_seed(seed, "model", t)
    audit.fit(f"model-selection[{t}]", data.id_train)
    selection = select_model(boosted.values, data.y_train, config, model_seed)
    audit.fit(f"model-fit[{t}]", data.id_train)
    model = train(selection.spec, boosted.values, data.y_train, boosted.columns)
    validation = evaluate(model, b_val, data.y_val)

    audit.fit(f"explanation[{t}]", data.id_train)
    bg = select_background(boosted.values, data.y_train, config.background, derive_seed(seed, "background", t))
    ex = select_background(boosted.values, data.y_train, config.explain_samples, derive_seed(seed, "explain", t))
    importance = global_importance(model, boosted.values[bg], boosted.values[ex], config.shapley_method,
                                   config.permutations, derive_seed(seed, "shapley", t))
    mapped = backmap(importance, boosted.provenance, active)
    importance = importance.with_backmap(mapped)

    audit.fit(f"pruning[{t}]", data.id_train)
    count = prune_count(len(active), config.prune_fraction, config.p)
    # weakest first; among equal importance the later-listed feature goes first
    order = sorted(range(len(active)), key=lambda i: (mapped[active[i]], -i))
    pruned = tuple(sorted((active[i] for i in order[:count]), key=active.index))
    next_active = tuple(n for n in active if n not in pruned)
    return IterationState(t, active, tuple(reports), alpha, tuple(keep), boosted.columns, selection, validation,
                          importance, pruned, next_active, boosted.booster)


@dataclass(frozen=True)
class ConvergenceDecision:
    converged: bool
    rules: tuple[str, ...]

    @property
    def rule(self) -> str | None:
        return self.rules[0] if self.rules else None

    def to_dict(self) -> dict:
        return {"converged": self.converged, "rules": list(self.rules)}


RULE_NAMES = {"a": "active set unchanged", "b": "validation macro-F1 dropped below best - tolerance",
              "c": "iteration cap reached"}


def converged(history: Sequence, config: RunConfig) -> ConvergenceDecision:
    """Stop rules after the latest iteration, each named by its letter.

    ``history`` items need ``active``, ``validation_f1`` and optionally
    ``next_active``.
    """
    if not history:
        raise ValueError("convergence needs at least one completed iteration")
    last = history[-1]
    rules = []
    same_prev = len(history) >= 2 and tuple(history[-2].active) == tuple(last.active)
    same_next = getattr(last, "next_active", None) is not None and tuple(last.next_active) == tuple(last.active)
    if same_prev or same_next:
        rules.append("a")
    if len(history) >= 2:
        best_before = max(h.validation_f1 for h in history[:-1])
        if last.validation_f1 < best_before - config.tolerance:
            rules.append("b")
    if len(history) >= config.max_iterations:
        rules.append("c")
    return ConvergenceDecision(bool(rules), tuple(rules))


def choose_iteration(history: Sequence) -> int:
    """Index of the first iteration with the highest validation macro-F1."""
    scores = [h.validation_f1 for h in history]
    return int(np.argmax(scores))


# --------------------------------------------------------------------------
# Full runs
# --------------------------------------------------------------------------

def _combination_csv(reports) -> str:
    buf = io.StringIO(newline="")
    writer = csv.DictWriter(buf, fieldnames=["rank", "indices", "names", "vrc_combo", "vrc_all", "sigma", "retained"],
                            lineterminator="\n")
    writer.writeheader()
    for rank, r in enumerate(reports, 1):
        row = r.as_row()
        writer.writerow({"rank": rank, **{k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()}})
    return buf.getvalue()


def _importance_csv(importance) -> str:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["kind", "name", "importance"])
    pooled = dict(zip(importance.columns, importance.pooled.tolist()))
    for name in importance.ranking():
        writer.writerow(["column", name, repr(pooled[name])])
    for name, value in sorted(importance.backmapped.items(), key=lambda kv: -kv[1]):
        writer.writerow(["feature", name, repr(value)])
    return buf.getvalue()


def run_seed(matrix: FeatureMatrix, config: RunConfig, seed: int) -> tuple[dict, dict[str, str]]:
    """Run the loop for one seed; returns the seed's report entry and its CSV artifacts."""
    audit = AuditLog()
    data = split_data(matrix, seed, audit)
    artifacts: dict[str, str] = {}
    entry: dict[str, Any] = {"seed": int(seed),
                             "split": {"train": len(data.y_train), "validation": len(data.y_val),
                                       "test": len(data.y_test)}}
    history: list[IterationState] = []
    decision = ConvergenceDecision(False, ())
    stop_note = None

    if config.boosting:
        active = data.names
        guided = None
        for t in range(1, config.max_iterations + 1):
            try:
                state = run_iteration(t, active, data, config, seed, audit, guided)
            except NoImprovingCombination as exc:
                if not history:
                    raise
                stop_note = f"iteration {t}: {exc}"
                decision = ConvergenceDecision(True, ("no_improving_combination",))
                artifacts[f"iteration-{t:02d}-combinations.csv"] = _combination_csv(exc.reports)
                break
            history.append(state)
            artifacts[f"iteration-{t:02d}-combinations.csv"] = _combination_csv(state.reports)
            artifacts[f"iteration-{t:02d}-importance.csv"] = _importance_csv(state.importance)
            decision = converged(history, config)
            if decision.converged:
                break
            active = state.next_active
            guided = state.importance.backmapped
        chosen = history[choose_iteration(history)]
        cols = [data.names.index(n) for n in chosen.active]
        x_fit = chosen.booster.transform(np.vstack([data.x_train, data.x_val])[:, cols])
        x_test = chosen.booster.transform(data.x_test[:, cols])
        spec = chosen.selection.spec
        columns = chosen.columns
        cv = chosen.selection.cv
        entry["iterations"] = [s.to_dict() for s in history]
        entry["chosen_iteration"] = chosen.t
        entry["chosen_validation_macro_f1"] = chosen.validation_f1
        entry["convergence"] = {**decision.to_dict(), "after_iteration": len(history), "note": stop_note}
        entry["retained_features"] = list(chosen.active)
        entry["final_active"] = list(history[-1].next_active)
    else:
        audit.fit("model-selection[raw]", data.id_train)
        selection = select_model(data.x_train, data.y_train, config, derive_seed(seed, "model", 0))
        audit.fit("model-fit[raw]", data.id_train)
        model = train(selection.spec, data.x_train, data.y_train, data.names)
        validation = evaluate(model, data.x_val, data.y_val)
        x_fit = np.vstack([data.x_train, data.x_val])
        x_test = data.x_test
        spec, columns, cv = selection.spec, data.names, selection.cv
        entry["iterations"] = []
        entry["chosen_iteration"] = None
        entry["chosen_validation_macro_f1"] = validation.macro_f1
        entry["model_selection"] = {"best": spec.to_dict(), "cv": cv, "table": list(selection.table)}
        entry["convergence"] = {"converged": True, "rules": ["raw_baseline"], "after_iteration": 0, "note": None}
        entry["retained_features"] = list(data.names)
        entry["final_active"] = list(data.names)

    y_fit = np.concatenate([data.y_train, data.y_val])
    audit.fit("final-fit", data.id_train + data.id_val)
    final = train(spec, x_fit, y_fit, columns)
    audit.evaluate_test(data.id_test)
    test = evaluate(final, x_test, data.y_test)
    entry["final_model"] = spec.to_dict()
    entry["cv"] = cv
    entry["test"] = test.to_dict()
    entry["audit"] = audit.summary()
    return entry, artifacts


def _sanitize(obj):
    """Replace non-finite floats by strings so the report is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else repr(obj)
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.generic):
        return _sanitize(obj.item())
    return obj


@dataclass(frozen=True)
class RunReport:
    data: dict

    @property
    def seeds(self) -> list[dict]:
        return self.data["seeds"]

    def metric(self, name: str, source: str = "test") -> np.ndarray:
        return np.array([s[source][name] for s in self.seeds], dtype=np.float64)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls(json.loads(text))

    def validate(self) -> None:
        jsonschema.validate(self.data, REPORT_SCHEMA)


def load_matrix(config: RunConfig, threads: int | None = None) -> FeatureMatrix:
    if config.features:
        return FeatureMatrix.read(config.features)
    if not config.root:
        raise ConfigError("configuration needs data.root or data.features")
    corpus = scan_corpus(config.root, config.kind)
    matrix, skipped = extract_corpus(corpus, threads or config.threads)
    return relative_paths(matrix, config.root)


def run(config: RunConfig, data: FeatureMatrix | None = None) -> RunReport:
    """Full pipeline over seeds ``seed .. seed+repeat-1``; the split is reshuffled per seed.

    With ``config.out`` set, the report and per-iteration CSVs are written to
    ``out/run-<fingerprint>-s<seed>``; a partial report is written on failure.
    """
    matrix = data if data is not None else load_matrix(config)
    run_dir = Path(config.out) / f"run-{config.fingerprint()}-s{config.seed}" if config.out else None
    seeds, artifacts = [], {}
    error = None
    try:
        for k in range(config.repeat):
            seed = config.seed + k
            entry, files = run_seed(matrix, config, seed)
            seeds.append(entry)
            artifacts.update({f"seed-{seed}/{name}": text for name, text in files.items()})
    except Exception as exc:
        error = exc
    report = RunReport(_sanitize(_assemble(config, matrix, seeds, error)))
    if run_dir is not None:
        write_run(run_dir, report, artifacts)
    if error is not None:
        raise error
    return report


def _summary(seeds: list[dict]) -> dict:
    out = {}
    for key in ("accuracy", "macro_recall", "macro_precision", "macro_f1"):
        vals = np.array([s["test"][key] for s in seeds])
        out[key] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
    return out


def _assemble(config: RunConfig, matrix: FeatureMatrix, seeds: list[dict], error) -> dict:
    return {
        "version": REPORT_VERSION,
        "config": config.to_dict() | {"out": None},
        "fingerprint": config.fingerprint(),
        "dataset": {"rows": len(matrix), "features": len(matrix.names),
                    "classes": sorted(set(matrix.labels))},
        "seeds": seeds,
        "summary": _summary(seeds) if seeds else {},
        "metadata": {
            "split_policy": "stratified 80/10/10 split reshuffled for every seed",
            "final_training": "train + validation; the test split is never used for fitting",
            "model_choice": "highest mean cross-validated macro-F1, then accuracy, then registry order",
            "shapley": {"method": config.shapley_method, "permutations": config.permutations,
                        "background": config.background, "samples": config.explain_samples,
                        "masking": "interventional over a class-balanced training background"},
        },
        "status": "complete" if error is None else "failed",
        "error": None if error is None else f"{type(error).__name__}: {error}",
    }


def write_run(run_dir: Path, report: RunReport, artifacts: Mapping[str, str]) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    for name, text in artifacts.items():
        path = run_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="")


def compare_methods(report_a: RunReport, report_b: RunReport, source: str = "test") -> dict:
    """Welch t-tests on accuracy and macro-F1 across seeds (``source`` is ``test`` or ``cv``)."""
    if len(report_a.seeds) < 2 or len(report_b.seeds) < 2:
        raise InsufficientRepeats("each report needs at least two seed entries")
    block = {}
    for metric in ("accuracy", "macro_f1"):
        a, b = report_a.metric(metric, source), report_b.metric(metric, source)
        res = welch_ttest(a, b)
        block[metric] = {"t": res.t, "p": res.p, "df": res.df, "significant": res.significant,
                         "mean_a": float(a.mean()), "mean_b": float(b.mean())}
    return {"source": source, "alpha": 0.05, **block}


_METRICS = {
    "type": "object",
    "required": ["accuracy", "macro_recall", "macro_precision", "macro_f1", "classes", "confusion"],
    "properties": {k: {"type": "number", "minimum": 0, "maximum": 1}
                   for k in ("accuracy", "macro_recall", "macro_precision", "macro_f1")}
    | {"classes": {"type": "array", "items": {"type": "string"}},
       "confusion": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}},
}
_ITERATION = {
    "type": "object",
    "required": ["t", "active", "combinations", "boosted_columns", "model_selection", "validation",
                 "importance", "pruned"],
    "properties": {
        "t": {"type": "integer", "minimum": 1},
        "active": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "combinations": {"type": "object", "required": ["evaluated", "retained", "alpha", "reports"],
                         "properties": {"reports": {"type": "array", "minItems": 1}}},
        "boosted_columns": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "model_selection": {"type": "object", "required": ["best", "cv", "table"],
                            "properties": {"table": {"type": "array", "minItems": 1}}},
        "validation": _METRICS,
        "importance": {"type": "object", "required": ["per_class", "pooled", "backmapped", "estimator"],
                       "properties": {"pooled": {"type": "array", "minItems": 1},
                                      "backmapped": {"type": "array", "minItems": 1}}},
        "pruned": {"type": "array", "items": {"type": "string"}},
    },
}
REPORT_SCHEMA = {
    "type": "object",
    "required": ["version", "config", "fingerprint", "dataset", "seeds", "summary", "metadata", "status"],
    "properties": {
        "version": {"const": REPORT_VERSION},
        "status": {"enum": ["complete", "failed"]},
        "seeds": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["seed", "split", "iterations", "chosen_iteration", "convergence", "retained_features",
                             "final_model", "cv", "test", "audit"],
                "properties": {
                    "seed": {"type": "integer"},
                    "iterations": {"type": "array", "items": _ITERATION},
                    "test": _METRICS,
                    "audit": {"type": "object", "properties": {"leakage": {"const": False}}},
                },
            },
        },
    },
}
