import hashlib
import json

import pytest

from nbest_slu import cli, harness, metrics
from nbest_slu.harness import RunConfig
from nbest_slu.parsing import parse_scale
from nbest_slu.synth import load_channel_config


def write_manifest(tmp_path, lattices, extra=()):
    (tmp_path / "lat").mkdir(exist_ok=True)
    rows = []
    for lat in lattices:
        rel = f"lat/{lat.utterance_id}.json"
        (tmp_path / rel).write_text(lat.dumps())
        rows.append({"utterance_id": lat.utterance_id, "gold": "go", "reference": "", "lattice_path": rel})
    rows.extend(extra)
    harness.write_jsonl(tmp_path / "manifest.jsonl", rows)
    return tmp_path / "manifest.jsonl"


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def test_cmd_nbest_diamond(tmp_path, diamond):
    m = write_manifest(tmp_path, [diamond])
    res = harness.cmd_nbest(m, 3, tmp_path / "nb.jsonl")
    rows = harness.read_jsonl(res.path)
    assert len(rows) == 1 and len(rows[0]["hypotheses"]) == 3
    assert rows[0]["hypotheses"][0] == {"words": ["play", "some", "jazz"], "cost": -12.375}
    assert res.exit_code == 0
    rows = harness.read_jsonl(harness.cmd_nbest(m, 1, tmp_path / "nb1.jsonl").path)
    assert len(rows[0]["hypotheses"]) == 1


def test_cmd_nbest_failures_keep_order(tmp_path, diamond, small_diamond):
    (tmp_path / "cyc.json").write_text(json.dumps({"start": 0, "finals": [1], "arcs": [
        {"from": 0, "to": 1, "word": "a", "am_cost": 0, "lm_cost": 0},
        {"from": 1, "to": 0, "word": "b", "am_cost": 0, "lm_cost": 0}]}))
    extra = [{"utterance_id": "gone", "gold": "go", "lattice_path": "missing.json"},
             {"utterance_id": "cyc", "gold": "go", "lattice_path": "cyc.json"}]
    m = write_manifest(tmp_path, [diamond], extra)
    with open(m, "a") as fh:
        fh.write(json.dumps({"utterance_id": "small", "gold": "go", "lattice_path": "lat/small.json"}) + "\n")
    (tmp_path / "lat/small.json").write_text(small_diamond.dumps())
    res = harness.cmd_nbest(m, 2, tmp_path / "nb.jsonl")
    rows = harness.read_jsonl(res.path)
    assert [r["utterance_id"] for r in rows] == ["diamond", "gone", "cyc", "small"]
    assert "error" in rows[1] and "back-arc" in rows[2]["error"]
    assert (res.n_ok, res.n_failed, res.exit_code) == (2, 2, 2)


def test_empty_manifest(tmp_path):
    (tmp_path / "m.jsonl").write_text("")
    res = harness.cmd_nbest(tmp_path / "m.jsonl", 4, tmp_path / "nb.jsonl")
    assert (tmp_path / "nb.jsonl").read_text() == "" and res.exit_code == 0
    res = harness.cmd_prompt(res.path, RunConfig(), tmp_path / "p.jsonl")
    assert res.exit_code == 0 and (tmp_path / "p.jsonl").read_text() == ""


def test_prompt_stage_matches_library(tmp_path, diamond):
    from nbest_slu.lattice import extract_nbest
    from nbest_slu.prompting import build_prompt
    m = write_manifest(tmp_path, [diamond])
    nb = harness.cmd_nbest(m, 4, tmp_path / "nb.jsonl")
    cfg = RunConfig(task="DDSD", n=4, output_mode="scale_0_100", ablations=["gib-tp"])
    res = harness.cmd_prompt(nb.path, cfg, tmp_path / "p.jsonl")
    row = harness.read_jsonl(res.path)[0]
    want = build_prompt(extract_nbest(diamond, 4), "DDSD", "scale_0_100", 4, ["gib-tp"])
    assert row == want.to_record()
    tight = RunConfig(task="DDSD", n=4, output_mode="scale_0_100", budget_tokens=3)
    res = harness.cmd_prompt(nb.path, tight, tmp_path / "p2.jsonl")
    assert res.exit_code == 2 and "BudgetError" in harness.read_jsonl(res.path)[0]["error"]


def test_fixture_replay(tmp_path):
    prompts = [{"utterance_id": f"u{i}", "rendered": f"p{i}", "ablations": []} for i in range(3)]
    harness.write_jsonl(tmp_path / "p.jsonl", prompts)
    stored = ["1", "Based on the list, '0'.", " 73\n"]
    harness.write_jsonl(tmp_path / "fx.jsonl", [{"utterance_id": f"u{i}", "raw_text": t} for i, t in enumerate(stored)])
    cfg = RunConfig(task="DDSD", backend="fixture", fixture=str(tmp_path / "fx.jsonl"))
    res = harness.cmd_infer(tmp_path / "p.jsonl", harness.make_backend(cfg), tmp_path / "r.jsonl", cfg)
    rows = harness.read_jsonl(res.path)
    assert [r["raw_text"] for r in rows] == stored
    assert all("latency_s" not in r for r in rows)


def test_fixture_miss_is_recorded(tmp_path):
    harness.write_jsonl(tmp_path / "p.jsonl", [{"utterance_id": "a", "rendered": "p"}])
    harness.write_jsonl(tmp_path / "fx.jsonl", [])
    cfg = RunConfig(backend="fixture", fixture=str(tmp_path / "fx.jsonl"))
    res = harness.cmd_infer(tmp_path / "p.jsonl", harness.make_backend(cfg), tmp_path / "r.jsonl", cfg)
    assert res.exit_code == 2
    assert "FixtureMiss" in harness.read_jsonl(res.path)[0]["error"]


def score_fixture(tmp_path, answers, golds, mode):
    harness.write_jsonl(tmp_path / "r.jsonl", [
        {"utterance_id": f"u{i}", "raw_text": a, "backend": "fixture"} for i, a in enumerate(answers)])
    harness.write_jsonl(tmp_path / "m.jsonl", [
        {"utterance_id": f"u{i}", "gold": g, "reference": "", "lattice_path": ""} for i, g in enumerate(golds)])
    cfg = RunConfig(task="DDSD", output_mode=mode)
    return harness.cmd_score(tmp_path / "r.jsonl", tmp_path / "m.jsonl", cfg, tmp_path / "out")


def test_score_perfect_and_anti(tmp_path):
    golds = ["1", "0", "1", "0"]
    rep, code = score_fixture(tmp_path, golds, golds, "binary_target")
    assert (rep.tpr, rep.fpr, code) == (1.0, 0.0, 0)
    rep, _ = score_fixture(tmp_path, ["0", "1", "0", "1"], golds, "binary_target")
    assert (rep.tpr, rep.fpr) == (0.0, 1.0)
    rep, _ = score_fixture(tmp_path, ["90", "10", "80", "20"], golds, "scale_0_100")
    assert rep.eer == 0.0 and rep.auc == 1.0
    csv = (tmp_path / "out" / "roc.csv").read_text().splitlines()
    assert csv[0] == "threshold,fpr,tpr"
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["descriptive_fraction"] == 0.0 and report["eer"] == 0.0


def test_score_missing_gold(tmp_path):
    with pytest.raises(KeyError):
        score_fixture(tmp_path, ["1", "0", "1"], ["1", "0"], "binary_target")


def test_score_equals_library_on_synthetic_ddsd(tmp_path):
    channel = load_channel_config("ddsd_default")
    cfg = RunConfig(task="DDSD", output_mode="scale_0_100", n=4)
    summary = harness.cmd_e2e(channel, cfg, [4], 200, tmp_path)
    golds = harness.read_golds(tmp_path / "corpus/manifest.jsonl")
    raw = harness.read_jsonl(tmp_path / "n4/responses.jsonl")
    ex = [metrics.ScoredExample(r["utterance_id"], parse_scale(r["raw_text"]).score, int(golds[r["utterance_id"]]))
          for r in raw]
    curve = metrics.roc_curve(ex)
    rep = summary["rows"][0]["report"]
    assert rep["eer"] == metrics.eer(curve)
    assert rep["auc"] == metrics.auc(curve)
    assert rep["fpr_at_tpr95"] == metrics.fpr_at_tpr(curve, 0.95)
    assert (tmp_path / "n4/roc.csv").read_text() == curve.to_csv()


def test_e2e_noiseless_tie(tmp_path):
    summary = harness.cmd_e2e(load_channel_config("ks_clean"), RunConfig(), [1, 4], 200, tmp_path)
    assert [r["value"] for r in summary["rows"]] == [1.0, 1.0]
    assert summary["verdict"]["result"] == "tie"
    assert "verdict" in harness.format_table(summary)


def test_infer_replay_is_stable(tmp_path):
    channel = load_channel_config("ks_default")
    harness.cmd_e2e(channel, RunConfig(), [2], 100, tmp_path / "a")
    cfg = RunConfig(n=2)
    be = harness.make_backend(cfg)
    harness.cmd_infer(tmp_path / "a/n2/prompts.jsonl", be, tmp_path / "again.jsonl", cfg)
    assert sha(tmp_path / "again.jsonl") == sha(tmp_path / "a/n2/responses.jsonl")


def test_run_config(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps({"task": "DDSD", "n": 4, "output_mode": "scale_0_100"}))
    cfg = RunConfig.from_file(p, n=8)
    assert (cfg.n, cfg.output_mode.value) == (8, "scale_0_100")
    assert RunConfig(task="DDSD").output_mode.value == "binary_target"
    with pytest.raises(ValueError):
        RunConfig(task="KS", output_mode="binary_target")
    with pytest.raises(ValueError):
        RunConfig(n=0)
    p.write_text(json.dumps({"nn": 1}))
    with pytest.raises(ValueError, match="unknown"):
        RunConfig.from_file(p)


# -- CLI --------------------------------------------------------------------

def test_cli_pipeline(tmp_path, capsys):
    assert cli.main(["synth", "--channel", "ks_default", "--size", "60", "--out", str(tmp_path / "c")]) == 0
    m = str(tmp_path / "c/manifest.jsonl")
    assert cli.main(["nbest", "--manifest", m, "--n", "4", "--out", str(tmp_path / "nb.jsonl")]) == 0
    assert cli.main(["prompt", "--nbest", str(tmp_path / "nb.jsonl"), "--n", "4", "--task", "KS",
                     "--out", str(tmp_path / "p.jsonl")]) == 0
    assert cli.main(["infer", "--prompts", str(tmp_path / "p.jsonl"), "--task", "KS", "--backend", "oracle",
                     "--out", str(tmp_path / "r.jsonl")]) == 0
    capsys.readouterr()
    assert cli.main(["score", "--responses", str(tmp_path / "r.jsonl"), "--manifest", m, "--task", "KS",
                     "--n", "4", "--out", str(tmp_path / "s")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["n_utterances"] == 60 and 0 <= rep["total_accuracy"] <= 1


def test_cli_e2e_and_roc(tmp_path, capsys):
    code = cli.main(["e2e", "--channel", "ddsd_default", "--size", "80", "--ns", "1,4",
                     "--output-mode", "scale_0_100", "--out", str(tmp_path)])
    assert code == 0
    assert "verdict" in capsys.readouterr().out
    assert cli.main(["roc", "--responses", str(tmp_path / "n4/responses.jsonl"), "--task", "DDSD",
                     "--output-mode", "scale_0_100", "--manifest", str(tmp_path / "corpus/manifest.jsonl"),
                     "--out", str(tmp_path / "roc.csv")]) == 0
    assert (tmp_path / "roc.csv").read_text() == (tmp_path / "n4/roc.csv").read_text()


def test_cli_exit_codes(tmp_path, diamond):
    m = write_manifest(tmp_path, [diamond], [{"utterance_id": "x", "gold": "go", "lattice_path": "nope.json"}])
    assert cli.main(["nbest", "--manifest", str(m), "--n", "2", "--out", str(tmp_path / "nb.jsonl")]) == 2
    assert cli.main(["nbest", "--manifest", str(tmp_path / "absent.jsonl"), "--n", "2",
                     "--out", str(tmp_path / "nb.jsonl")]) == 1
    assert cli.main(["e2e", "--channel", "ks_default", "--task", "DDSD", "--out", str(tmp_path / "e")]) == 1
    assert cli.main(["infer", "--prompts", str(tmp_path / "nb.jsonl"), "--backend", "fixture",
                     "--out", str(tmp_path / "r.jsonl")]) == 1
    with pytest.raises(SystemExit):
        cli.main(["prompt", "--nbest", "x", "--out", "y", "--ablate", "bogus"])
