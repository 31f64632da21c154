import csv
import json

import numpy as np
import pytest

from bpls.bench import (ApproxConfig, BenchAborted, DataSource, ExperimentConfig, ExperimentReport, aggregate,
                        compare_approximations, read_audit, read_report, rep_seeds, report_from_audit,
                        run_experiment, summarize, write_audit, write_report)
from bpls.data import SimSpec
from bpls.errors import ConfigError
from bpls.selftrain import IterationRecord, SelfTrainTrace


def small_config(methods, reps=3, **extra):
    d = {"data": {"simulate": {"n": 60, "q": 2}}, "split": {"unlabeled_share": 0.7},
         "methods": methods, "repetitions": reps, "seed": 11}
    d.update(extra)
    return ExperimentConfig.from_dict(d)


@pytest.fixture(scope="module")
def report():
    cfg = small_config([{"criterion": "ppp-u"}, {"criterion": "prob-score"},
                        {"criterion": "random", "max_iterations": 5}, {"criterion": "supervised"}])
    return run_experiment(cfg)


def test_report_shape(report):
    assert [m.tag for m in report.methods] == ["ppp-u", "prob-score", "random"]
    for m in report.methods:
        assert m.failures == 0
        assert m.curve[0].iter == 0
    assert len(report.method("random").curve) == 6
    assert len(report.method("ppp-u").curve) == 22
    assert 0 <= report.baseline <= 1


def test_curves_start_at_the_shared_baseline(report):
    for m in report.methods:
        assert m.curve[0].mean == pytest.approx(report.baseline)


def test_oracle_dominates_final(report):
    for m in report.methods:
        assert m.oracle >= m.final - 1e-12
        per_rep = [t.accuracies for t in report.traces(m.tag)]
        assert m.oracle == pytest.approx(np.mean([a.max() for a in per_rep]))
        assert m.final == pytest.approx(np.mean([a[-1] for a in per_rep]))
        assert m.final_se == pytest.approx(np.std([a[-1] for a in per_rep], ddof=1) / np.sqrt(len(per_rep)))


def test_supervised_only_experiment():
    rep = run_experiment(small_config([{"criterion": "supervised"}]))
    assert rep.methods == []
    assert rep.baseline is not None and rep.baseline_se >= 0


def test_duplicate_methods_under_distinct_names_agree():
    cfg = small_config([{"criterion": "ppp-u", "name": "a"}, {"criterion": "ppp-u", "name": "b"}], reps=2)
    rep = run_experiment(cfg)
    assert rep.method("a").curve == rep.method("b").curve


def test_duplicate_tags_rejected():
    with pytest.raises(ConfigError, match="unique"):
        small_config([{"criterion": "ppp-u"}, {"criterion": "ppp-u"}])


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"methods": []})
    with pytest.raises(ConfigError):
        small_config([], extra_key=1)
    with pytest.raises(ConfigError):
        DataSource.from_dict({"simulate": {"q": 2}})
    with pytest.raises(ConfigError):
        DataSource.from_dict({"csv": "x.csv"})
    with pytest.raises(ConfigError, match="truth"):
        ExperimentConfig.from_dict({"data": {"csv": "x.csv", "target": "y"},
                                    "methods": [{"criterion": "ppp-i", "prior": {"mean": "truth", "covariance": 1.0}}]})


def test_truth_prior_resolves_to_coefficients():
    cfg = small_config([{"criterion": "ppp-i", "prior": {"mean": "truth", "covariance": 0.25}}])
    np.testing.assert_array_equal(cfg.methods[0].prior.mean, [0.0, -1.0, 1.0])


def test_config_round_trip():
    cfg = small_config([{"criterion": "ppp-fantasy", "alpha": 0.2, "max_iterations": 4}])
    assert ExperimentConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_rep_seeds_deterministic_and_distinct():
    a, b = rep_seeds(5, 4), rep_seeds(5, 4)
    assert a == b
    assert len({s["data"] for s in a}) == 4
    assert rep_seeds(5, 2) == a[:2]


def test_runs_are_reproducible(report):
    again = run_experiment(ExperimentConfig.from_dict(report.config))
    assert [m.curve for m in again.methods] == [m.curve for m in report.methods]


def test_processes_match_serial(report):
    par = run_experiment(ExperimentConfig.from_dict(report.config), threads=2)
    assert [m.curve for m in par.methods] == [m.curve for m in report.methods]


def test_json_round_trip(report, tmp_path):
    path = write_report(report, tmp_path / "r.json")
    back = read_report(path)
    assert back.to_dict() == json.loads(json.dumps(report.to_dict()))
    assert back.methods == report.methods


def test_csv_has_one_row_per_curve_point(report, tmp_path):
    path = write_report(report, tmp_path / "r.csv", fmt="csv")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["method", "iteration", "mean_acc", "se_acc"]
    assert len(rows) - 1 == sum(len(m.curve) for m in report.methods)


def test_empty_report_csv_is_header_only(tmp_path):
    empty = ExperimentReport({}, [], None, 0.0)
    path = write_report(empty, tmp_path / "e.csv", fmt="csv")
    assert path.read_text() == "method,iteration,mean_acc,se_acc\n"
    with pytest.raises(ValueError):
        write_report(empty, tmp_path / "e.xml", fmt="xml")


def test_audit_reaggregates_independently(report, tmp_path):
    path = write_audit(report, tmp_path / "a.jsonl")
    records = read_audit(path)
    assert len(records) == 3 * len(report.methods)
    # recompute from the raw records without the package aggregator
    for m in report.methods:
        finals = [r["trace"]["records"][-1]["test_accuracy"] for r in records if r["method"] == m.tag]
        assert np.mean(finals) == pytest.approx(m.final, abs=1e-12)
    back = report_from_audit(path)
    assert {m.tag: m.curve for m in back.methods} == {m.tag: m.curve for m in report.methods}
    assert back.baseline == pytest.approx(report.baseline)


def test_abort_when_too_many_failures():
    cfg = small_config([{"criterion": "ppp-u"}], reps=5)
    reps = run_experiment(cfg).reps
    reps[0].traces["ppp-u"] = None
    aggregate(cfg, reps, 0.0)  # one of five is tolerated
    reps[1].traces["ppp-u"] = None
    with pytest.raises(BenchAborted):
        aggregate(cfg, reps, 0.0)


def test_summarize_ragged_curves():
    mk = lambda accs: SelfTrainTrace({}, accs[0], tuple(
        IterationRecord(i, i, 0, 0.0, a, 0) for i, a in enumerate(accs[1:], 1)))
    s = summarize("x", [mk([0.5, 0.6, 0.7]), mk([0.5, 0.8]), None])
    assert s.failures == 1
    assert [c.mean for c in s.curve] == pytest.approx([0.5, 0.7, 0.7])
    assert s.oracle == pytest.approx(0.75)
    assert s.final == pytest.approx(0.75)


def test_csv_source(tmp_path):
    path = tmp_path / "d.csv"
    rng = np.random.default_rng(0)
    x = rng.normal(size=(60, 2))
    y = (x[:, 0] + rng.normal(size=60) > 0).astype(int)
    path.write_text("a,b,label\n" + "".join(f"{u},{v},{w}\n" for (u, v), w in zip(x, y)))
    cfg = ExperimentConfig.from_dict({"data": {"csv": str(path), "target": "label"},
                                      "methods": [{"criterion": "prob-score"}], "repetitions": 2})
    rep = run_experiment(cfg)
    assert rep.method("prob-score").failures == 0


def test_identical_criteria_agree_fully():
    cfg = ApproxConfig(DataSource(sim=SimSpec(1, 2)), n_grid=(60,), seeds=(0, 1), criteria=("ppp-u", "ppp-u"),
                       max_iterations=5)
    stats = compare_approximations(cfg)
    assert [s.agreement for s in stats] == [1.0, 1.0]
    assert all(s.final_gap == 0.0 and s.iterations == 5 for s in stats)


def test_approx_config_round_trip():
    cfg = ApproxConfig(DataSource(sim=SimSpec(1, 3)), n_grid=(80, 90), seeds=(2,))
    assert ApproxConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ApproxConfig(DataSource(csv="x.csv", target="y"))


def test_prior_entries_are_strict():
    with pytest.raises(ConfigError, match="unknown prior keys"):
        small_config([{"criterion": "ppp-i", "prior": {"mean": [0, 0, 0], "cov": 1.0}}])
    with pytest.raises(ConfigError, match="needs"):
        small_config([{"criterion": "ppp-i", "prior": {"kind": "gaussian", "mean": [0, 0, 0]}}])
