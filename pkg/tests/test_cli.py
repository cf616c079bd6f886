import json

import numpy as np
import pytest

from ttipw.cli import load_preset, main, render_table
from ttipw.sample import Sample, write_csv


def make_csv(tmp_path, n=60, seed=3, with_probs=False):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    index = 0.3 + 0.8 * x
    p = 1.0 / (1.0 + np.exp(-index))
    d = (rng.random(n) < p).astype(int)
    if d.sum() in (0, n):
        raise AssertionError("degenerate test fixture")
    y = rng.normal(size=n)
    columns = [np.ones(n), x] + ([p] if with_probs else [])
    names = ("y", "d", "const", "x") + (("p",) if with_probs else ())
    sample = Sample(y=y, d=d, x=np.column_stack(columns), column_names=names)
    path = tmp_path / "data.csv"
    write_csv(sample, path)
    return path


SCENARIO_TOML = """
[[scenario]]
case = "scalar"
beta = 0.5
n = 70
propensity_mode = "known"
seed = 5
replications = 80
estimators = ["notrim", "tz", "tzo"]
"""


def test_estimate_writes_report(tmp_path, capsys):
    data = make_csv(tmp_path)
    out = tmp_path / "report.json"
    code = main(
        [
            "estimate",
            "--data", str(data),
            "--y", "y",
            "--d", "d",
            "--x", "const,x",
            "--link", "logit",
            "--estimators", "notrim,tz,tzo",
            "--out", str(out),
        ]
    )
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["schema_version"] == 1
    assert [e["estimator"] for e in payload["estimates"]] == ["notrim", "tz", "tzo"]
    assert payload["inference"] is not None
    assert payload["inference"]["v_hat_sq"] > 0
    lo, hi = payload["inference"]["ci"]
    assert lo < payload["estimates"][2]["theta_hat"] < hi


def test_estimate_accepts_untrimmed_alias(tmp_path):
    data = make_csv(tmp_path)
    out = tmp_path / "r.json"
    code = main(
        [
            "estimate",
            "--data", str(data),
            "--y", "y",
            "--d", "d",
            "--x", "const,x",
            "--link", "logit",
            "--estimators", "tz,tzo,untrimmed",
            "--out", str(out),
        ]
    )
    assert code == 0
    payload = json.loads(out.read_text())
    assert len(payload["estimates"]) == 3
    assert payload["estimates"][2]["tag"] == "untrimmed"


def test_simulate_env_overrides(tmp_path, monkeypatch):
    scenario = tmp_path / "s.toml"
    scenario.write_text(SCENARIO_TOML)
    monkeypatch.setenv("TTIPW_SEED", "123")
    monkeypatch.setenv("TTIPW_THREADS", "1")
    outdir = tmp_path / "results"
    assert main(["simulate", "--scenario", str(scenario), "--reps", "30", "--out", str(outdir)]) == 0
    payload = json.loads(next(p for p in outdir.iterdir() if p.suffix == ".json").read_text())
    assert payload["scenario"]["seed"] == 123


def test_estimate_is_byte_deterministic(tmp_path):
    data = make_csv(tmp_path)
    out1, out2 = tmp_path / "r1.json", tmp_path / "r2.json"
    args = ["estimate", "--data", str(data), "--y", "y", "--d", "d", "--x", "const,x"]
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_estimate_known_propensity_mode(tmp_path):
    data = make_csv(tmp_path, with_probs=True)
    out = tmp_path / "report.json"
    code = main(
        [
            "estimate",
            "--data", str(data),
            "--y", "y",
            "--d", "d",
            "--x", "const,x",
            "--known-propensity", "p",
            "--out", str(out),
        ]
    )
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["inference"]["d_hat_vec"] is None
    assert payload["input"]["known_propensity"] == "p"


def test_estimate_missing_required_flag_exits_2(tmp_path):
    data = make_csv(tmp_path)
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--data", str(data), "--y", "y", "--x", "x", "--out", "r.json"])
    assert exc.value.code == 2


def test_estimate_parse_error_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("y,d,x\n1,2,3\n4,0,5\n")
    code = main(["estimate", "--data", str(bad), "--y", "y", "--d", "d", "--x", "x", "--out", "r.json"])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_simulate_scenario_file(tmp_path):
    scenario = tmp_path / "s.toml"
    scenario.write_text(SCENARIO_TOML)
    outdir = tmp_path / "results"
    code = main(["simulate", "--scenario", str(scenario), "--out", str(outdir)])
    assert code == 0
    written = sorted(p.name for p in outdir.iterdir())
    assert len(written) == 2
    csv_path = next(p for p in outdir.iterdir() if p.suffix == ".csv")
    header = csv_path.read_text().splitlines()[0]
    assert header == "estimator,mean,median,rmse,ks_ratio,trim_pct,rej01,rej05,rej10,failed_reps"
    json_path = next(p for p in outdir.iterdir() if p.suffix == ".json")
    payload = json.loads(json_path.read_text())
    assert len(payload["rows"]) == 3
    assert payload["scenario"]["replications"] == 80


def test_simulate_is_deterministic_across_runs(tmp_path):
    scenario = tmp_path / "s.toml"
    scenario.write_text(SCENARIO_TOML)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--scenario", str(scenario), "--out", str(out1)]) == 0
    assert main(["simulate", "--scenario", str(scenario), "--out", str(out2)]) == 0
    for p1 in out1.iterdir():
        p2 = out2 / p1.name
        assert p1.read_bytes() == p2.read_bytes()


def test_simulate_overrides_and_threads(tmp_path):
    scenario = tmp_path / "s.toml"
    scenario.write_text(SCENARIO_TOML)
    outdir = tmp_path / "results"
    code = main(
        [
            "simulate",
            "--scenario", str(scenario),
            "--reps", "40",
            "--n", "50",
            "--seed", "99",
            "--threads", "2",
            "--out", str(outdir),
        ]
    )
    assert code == 0
    payload = json.loads(next(p for p in outdir.iterdir() if p.suffix == ".json").read_text())
    assert payload["scenario"]["n"] == 50
    assert payload["scenario"]["replications"] == 40
    assert payload["scenario"]["seed"] == 99


def test_simulate_fractile_overrides(tmp_path):
    scenario = tmp_path / "s.toml"
    scenario.write_text(SCENARIO_TOML.replace('estimators = ["notrim", "tz", "tzo"]',
                                              'estimators = ["tz", "tx_kx"]'))
    base_out, o_out = tmp_path / "base", tmp_path / "overridden"
    assert main(["simulate", "--scenario", str(scenario), "--reps", "40", "--out", str(base_out)]) == 0
    assert main(
        [
            "simulate",
            "--scenario", str(scenario),
            "--reps", "40",
            "--k", "3",
            "--k-x", "10",
            "--lambda-k", "0.5",
            "--out", str(o_out),
        ]
    ) == 0

    def rows(outdir):
        payload = json.loads(next(p for p in outdir.iterdir() if p.suffix == ".json").read_text())
        return {r["estimator"]: r for r in payload["rows"]}

    base, over = rows(base_out), rows(o_out)
    assert base["tz"]["trim_pct"] == pytest.approx(100.0 / 70)    # k_n = 1 at n=70
    assert over["tz"]["trim_pct"] == pytest.approx(300.0 / 70)    # k forced to 3
    assert over["tx_kx"]["trim_pct"] == pytest.approx(900.0 / 70)  # k_x=10 trims 9


def test_scenario_toml_overrides_table(tmp_path):
    scenario = tmp_path / "s.toml"
    scenario.write_text(
        SCENARIO_TOML.replace('estimators = ["notrim", "tz", "tzo"]', 'estimators = ["tz"]')
        + "\n[scenario.overrides]\nk = 2\n"
    )
    outdir = tmp_path / "results"
    assert main(["simulate", "--scenario", str(scenario), "--reps", "40", "--out", str(outdir)]) == 0
    payload = json.loads(next(p for p in outdir.iterdir() if p.suffix == ".json").read_text())
    assert payload["rows"][0]["trim_pct"] == pytest.approx(200.0 / 70)


def test_simulate_rejects_single_replication(tmp_path, capsys):
    scenario = tmp_path / "s.toml"
    scenario.write_text(SCENARIO_TOML)
    code = main(["simulate", "--scenario", str(scenario), "--reps", "1", "--out", str(tmp_path / "o")])
    assert code == 1
    assert "replications" in capsys.readouterr().err


def test_simulate_preset_smoke(tmp_path):
    outdir = tmp_path / "results"
    code = main(["simulate", "--preset", "smoke", "--reps", "30", "--out", str(outdir)])
    assert code == 0
    assert len(list(outdir.iterdir())) == 4  # two scenarios, csv+json each


def test_simulate_unknown_preset(tmp_path, capsys):
    code = main(["simulate", "--preset", "nope", "--out", str(tmp_path / "o")])
    assert code == 1
    assert "unknown preset" in capsys.readouterr().err


def test_preset_table1a_grid():
    scenarios = load_preset("table1a")
    assert len(scenarios) == 24
    pairs = {(s.dist_outcomes.value, s.dist_u.value) for s in scenarios}
    assert len(pairs) == 4
    assert {s.beta for s in scenarios} == {0.25, 1.0, 2.0}
    assert {s.n for s in scenarios} == {100, 250}
    assert all(s.propensity_mode.value == "known" for s in scenarios)


def test_simulate_override_collapses_grid(tmp_path):
    # overriding n collapses the two grid sizes onto one scenario set
    scenario = tmp_path / "s.toml"
    scenario.write_text(
        SCENARIO_TOML + SCENARIO_TOML.replace("n = 70", "n = 90")
    )
    outdir = tmp_path / "results"
    code = main(
        ["simulate", "--scenario", str(scenario), "--n", "50", "--reps", "20", "--out", str(outdir)]
    )
    assert code == 0
    assert len(list(outdir.iterdir())) == 2  # one scenario left, csv+json


def test_report_rendering(tmp_path, capsys):
    scenario = tmp_path / "s.toml"
    scenario.write_text(SCENARIO_TOML)
    outdir = tmp_path / "results"
    main(["simulate", "--scenario", str(scenario), "--out", str(outdir)])
    summary = next(p for p in outdir.iterdir() if p.suffix == ".json")

    assert main(["report", "--summary", str(summary)]) == 0
    text = capsys.readouterr().out
    assert "estimator" in text and "rmse" in text

    assert main(["report", "--summary", str(summary), "--format", "markdown"]) == 0
    md = capsys.readouterr().out
    header = md.splitlines()[0]
    assert header.count("|") == 11  # estimator + 9 metrics + failed counter

    out = tmp_path / "table.md"
    assert main(["report", "--summary", str(summary), "--compare", str(summary), "--out", str(out)]) == 0
    rendered = out.read_text()
    assert "d_mean" in rendered
    assert "+0.0000" in rendered


def test_report_empty_summary_exits_1(tmp_path, capsys):
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"rows": []}))
    assert main(["report", "--summary", str(empty)]) == 1


def test_report_malformed_json_exits_1(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["report", "--summary", str(bad)]) == 1


def test_render_table_markdown_shape():
    rows = [
        {
            "estimator": "tz",
            "mean": 0.1,
            "median": 0.1,
            "rmse": 0.2,
            "ks_ratio": 1.0,
            "trim_pct": 1.0,
            "rej01": 0.01,
            "rej05": 0.05,
            "rej10": 0.1,
            "failed_reps": 0,
        }
    ]
    text = render_table(rows, fmt="markdown")
    lines = text.splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("| estimator")
