"""Configuration, convergence rules, the iteration step and full multi-seed runs."""
import json
from types import SimpleNamespace

import jsonschema
import numpy as np
import pytest

from serboost.errors import ActiveSetTooSmall, ConfigError, InsufficientRepeats, LeakageDetected
from serboost.pipeline import (
    REPORT_SCHEMA,
    AuditLog,
    RunConfig,
    RunReport,
    choose_iteration,
    compare_methods,
    converged,
    derive_seed,
    prune_count,
    run,
    run_iteration,
    run_seed,
    split_data,
)
from serboost.synth import make_planted

LIGHT = dict(
    registry=("ExtraTrees",), model_params={"ExtraTrees": {"n_trees": 40}}, folds=5, p=5, m=150,
    max_retained=6, permutations=10, background=10, explain_samples=12, max_iterations=3,
)


@pytest.fixture(scope="module")
def planted():
    return make_planted(n=300, n_features=20, n_informative=4, seed=3)


def _hist(*items):
    return [SimpleNamespace(active=a, validation_f1=f, next_active=n) for a, f, n in items]


class TestConfig:
    def test_defaults(self):
        c = RunConfig()
        assert (c.prune_fraction, c.tolerance, c.folds, c.p, c.m, c.max_iterations) == (0.1, 0.005, 10, 10, 500, 10)

    @pytest.mark.parametrize("bad", [dict(prune_fraction=0.0), dict(prune_fraction=1.0), dict(max_iterations=0),
                                     dict(tolerance=-1e-3), dict(registry=("SVM",)), dict(kind="nope"),
                                     dict(shapley_method="kernel"), dict(model_params={"KNearest": {"k": 0}})])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            RunConfig(**bad)

    def test_ini(self, tmp_path):
        text = """
[data]
features = feats.csv
[run]
seed = 4
prune_fraction = 0.2
boosting = false
[boosting]
p = 3
epsilon = -0.5
[models]
registry = ExtraTrees, KNearest
folds = 4
ExtraTrees.n_trees = 25
[grid]
KNearest.k = 1, 3
[shapley]
method = permutation
permutations = 30
"""
        path = tmp_path / "run.ini"
        path.write_text(text)
        c = RunConfig.load(path)
        assert c.features == str(tmp_path / "feats.csv")
        assert (c.seed, c.prune_fraction, c.boosting, c.p, c.epsilon, c.folds) == (4, 0.2, False, 3, -0.5, 4)
        assert c.registry == ("ExtraTrees", "KNearest")
        assert c.model_params == {"ExtraTrees": {"n_trees": 25}}
        assert c.grids == {"KNearest": {"k": [1, 3]}}
        assert (c.shapley_method, c.permutations) == ("permutation", 30)

    @pytest.mark.parametrize("text", ["[run]\nfoo = 1\n", "[models]\nExtraTrees.k = 3\n", "[run]\nseed = abc\n",
                                      "[run]\nboosting = 3\n", "not an ini"])
    def test_ini_errors(self, text):
        with pytest.raises(ConfigError):
            RunConfig.from_ini(text)

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="'run.foo'"):
            RunConfig.from_ini("[run]\nfoo = 1\n")

    def test_fingerprint(self):
        a = RunConfig()
        assert a.fingerprint() == RunConfig().replace(threads=8, out="/tmp/x", seed=5).fingerprint()
        assert a.fingerprint() != a.replace(p=3).fingerprint()
        assert a.replace(seed=None).seed == 0

    def test_derive_seed(self):
        assert derive_seed(1, "model", 2) == derive_seed(1, "model", 2)
        assert len({derive_seed(1, "model", 2), derive_seed(1, "model", 3), derive_seed(1, "pca", 2),
                    derive_seed(2, "model", 2)}) == 4


class TestRules:
    def test_prune_count(self):
        assert prune_count(90, 0.1, 10) == 9
        assert prune_count(5, 0.1, 2) == 1
        assert prune_count(11, 0.5, 10) == 1
        assert prune_count(10, 0.1, 10) == 0

    def test_rule_a(self):
        d = converged(_hist((("a", "b"), 0.8, ("a",)), (("a",), 0.8, ("a",))), RunConfig())
        assert d.converged and d.rule == "a"

    def test_rule_b_and_choice(self):
        h = _hist((tuple("abcd"), 0.90, tuple("abc")), (tuple("abc"), 0.91, tuple("ab")),
                  (tuple("ab"), 0.89, tuple("a")))
        assert not converged(h[:2], RunConfig()).converged
        d = converged(h, RunConfig())
        assert d.converged and d.rules == ("b",)
        assert choose_iteration(h) + 1 == 2

    def test_within_tolerance_continues(self):
        h = _hist((tuple("abc"), 0.90, tuple("ab")), (tuple("ab"), 0.897, tuple("a")))
        assert not converged(h, RunConfig()).converged

    def test_monotone_stops_at_cap(self):
        cfg = RunConfig(max_iterations=4)
        active = tuple("abcdefgh")
        h = []
        for t in range(4):
            h += _hist((active, 0.8 + 0.01 * t, active[:-1]))
            active = active[:-1]
            d = converged(h, cfg)
            assert d.converged == (t == 3)
        assert d.rules == ("c",)

    def test_empty_history(self):
        with pytest.raises(ValueError):
            converged([], RunConfig())


class TestAudit:
    def test_leak_detected(self):
        log = AuditLog()
        log.fit("pca", ["a", "b"])
        with pytest.raises(LeakageDetected):
            log.evaluate_test(["c", "b"])

    def test_clean(self):
        log = AuditLog()
        log.fit("pca", ["a", "b"])
        log.evaluate_test(["c"])
        assert log.summary()["leakage"] is False


class TestIteration:
    def test_split_disjoint(self, planted):
        d = split_data(planted.matrix, 0)
        ids = [set(d.id_train), set(d.id_val), set(d.id_test)]
        assert sum(map(len, ids)) == len(planted.matrix)
        assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])
        np.testing.assert_allclose(d.x_train.mean(axis=0), 0, atol=1e-12)

    def test_step(self, planted):
        cfg = RunConfig(**LIGHT)
        data = split_data(planted.matrix, 1)
        state = run_iteration(1, data.names, data, cfg, 1, AuditLog())
        assert len(state.pruned) == prune_count(20, 0.1, 5) == 2
        assert set(state.next_active) | set(state.pruned) == set(data.names)
        assert not set(state.pruned) & set(planted.informative)
        assert state.selection.spec.kind == "ExtraTrees"
        assert tuple(state.importance.columns) == state.columns
        mapped = state.importance.backmapped
        assert abs(sum(mapped.values()) - state.importance.total) < 1e-9

    def test_too_small(self, planted):
        data = split_data(planted.matrix, 1)
        with pytest.raises(ActiveSetTooSmall):
            run_iteration(1, data.names[:3], data, RunConfig(**LIGHT), 1, AuditLog())

    def test_deterministic_states(self, planted):
        cfg = RunConfig(**LIGHT)
        a, _ = run_seed(planted.matrix, cfg, 2)
        b, _ = run_seed(planted.matrix, cfg, 2)
        assert json.dumps(a) == json.dumps(b)


@pytest.fixture(scope="module")
def report(planted, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    cfg = RunConfig(**LIGHT, repeat=2, seed=5, out=str(out))
    return run(cfg, planted.matrix), cfg, out


class TestRun:
    def test_schema_and_seeds(self, report):
        rep, cfg, _ = report
        rep.validate()
        assert [s["seed"] for s in rep.seeds] == [5, 6]
        assert rep.data["status"] == "complete"

    def test_informative_retained(self, report, planted):
        rep, _, _ = report
        for s in rep.seeds:
            assert set(planted.informative) <= set(s["final_active"])
            # 30 test rows here; the full-size bar lives in the acceptance suite
            assert s["test"]["macro_f1"] >= 0.8

    def test_chosen_is_max(self, report):
        rep, _, _ = report
        for s in rep.seeds:
            f1s = [it["validation"]["macro_f1"] for it in s["iterations"]]
            assert s["chosen_validation_macro_f1"] == max(f1s)
            assert s["iterations"][s["chosen_iteration"] - 1]["validation"]["macro_f1"] == max(f1s)

    def test_monotone_shrinkage(self, report):
        rep, _, _ = report
        for s in rep.seeds:
            sizes = [len(it["active"]) for it in s["iterations"]]
            assert all(b < a for a, b in zip(sizes, sizes[1:]))

    def test_no_leakage(self, report):
        rep, _, _ = report
        for s in rep.seeds:
            assert s["audit"]["leakage"] is False and "final-fit" in s["audit"]["stages"]

    def test_artifacts(self, report):
        rep, cfg, out = report
        run_dir = out / f"run-{cfg.fingerprint()}-s5"
        assert json.loads((run_dir / "report.json").read_text()) == rep.data
        assert (run_dir / "seed-5" / "iteration-01-combinations.csv").exists()
        assert (run_dir / "seed-6" / "iteration-01-importance.csv").read_text().startswith("kind,name,importance")

    def test_rerun_identical(self, report, planted):
        rep, cfg, _ = report
        assert run(cfg, planted.matrix).to_json() == rep.to_json()

    def test_compare_self(self, report):
        rep, _, _ = report
        block = compare_methods(rep, rep)
        for metric in ("accuracy", "macro_f1"):
            assert block[metric]["t"] == 0 and block[metric]["p"] == 1
        assert sum(1 for m in ("accuracy", "macro_f1") for k in ("t", "p") if k in block[m]) == 4

    def test_compare_needs_repeats(self, planted):
        rep = run(RunConfig(**{**LIGHT, "max_iterations": 1}, repeat=1), planted.matrix)
        assert len(rep.seeds) == 1
        with pytest.raises(InsufficientRepeats):
            compare_methods(rep, rep)

    def test_raw_mode(self, planted):
        rep = run(RunConfig(**LIGHT, boosting=False), planted.matrix)
        rep.validate()
        assert rep.seeds[0]["iterations"] == [] and rep.seeds[0]["convergence"]["rules"] == ["raw_baseline"]

    def test_partial_report_on_failure(self, planted, tmp_path):
        cfg = RunConfig(**{**LIGHT, "p": 25}, out=str(tmp_path))
        with pytest.raises(ActiveSetTooSmall):
            run(cfg, planted.matrix)
        data = json.loads((tmp_path / f"run-{cfg.fingerprint()}-s0" / "report.json").read_text())
        assert data["status"] == "failed" and "ActiveSetTooSmall" in data["error"]

    def test_schema_rejects_leak(self, report):
        rep, _, _ = report
        bad = json.loads(rep.to_json())
        bad["seeds"][0]["audit"]["leakage"] = True
        with pytest.raises(jsonschema.ValidationError):
            RunReport(bad).validate()
        assert REPORT_SCHEMA["properties"]["version"]["const"] == rep.data["version"]
