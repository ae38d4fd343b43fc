"""Batch pipeline stages: lattices -> n-best -> prompts -> completions -> scores.

Every stage reads and writes JSONL in manifest order. A failed utterance
becomes an ``{"utterance_id", "error"}`` record instead of being dropped, so
line counts match across stages.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable

from . import metrics
from .backend import (
    Backend,
    CompletionRequest,
    FixtureBackend,
    HttpBackend,
    HttpConfig,
    OracleBackend,
    OracleConfig,
    complete_many,
)
from .lattice import LatticeError, NBestList, extract_nbest, read_lattices
from .parsing import ParsedPrediction, descriptive_fraction, parse_for_mode
from .prompting import DEFAULT_BUDGET, OutputMode, PromptError, Task, build_prompt
from .synth import ChannelConfig, generate_corpus, write_corpus

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


@dataclass
class RunConfig:
    task: Task = Task.KS
    n: int = 1
    output_mode: OutputMode | None = None
    ablations: list[str] = field(default_factory=list)
    backend: str = "oracle"
    fixture: str | None = None
    fixture_strict: bool = False
    http: dict = field(default_factory=dict)
    budget_tokens: int = DEFAULT_BUDGET
    cost_decimals: int = 1
    max_inflight: int = 8
    max_new_tokens: int = 16
    temperature: float = 0.0
    oracle_keyword_threshold: float = 0.3
    oracle_directed_threshold: float = 0.5

    def __post_init__(self):
        self.task = Task(self.task)
        if self.output_mode is None:
            self.output_mode = OutputMode.KEYWORD if self.task is Task.KS else OutputMode.BINARY
        self.output_mode = OutputMode(self.output_mode)
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if (self.task is Task.KS) != (self.output_mode is OutputMode.KEYWORD):
            raise ValueError(f"output mode {self.output_mode.value} does not fit task {self.task.value}")

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        d = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
        d.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class StageResult:
    path: Path
    n_ok: int = 0
    n_failed: int = 0

    @property
    def exit_code(self) -> int:
        return EXIT_PARTIAL if self.n_failed else EXIT_OK


# -- io ---------------------------------------------------------------------

def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_jsonl(path, records: Iterable[dict]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")
            n += 1
    return n


def _error(uid: str, msg: str) -> dict:
    return {"utterance_id": uid, "error": msg}


def _finish(path, records) -> StageResult:
    write_jsonl(path, records)
    failed = sum("error" in r for r in records)
    return StageResult(Path(path), len(records) - failed, failed)


# -- stages -----------------------------------------------------------------

def cmd_nbest(manifest, n: int, out, dedupe: bool = False) -> StageResult:
    base = Path(manifest).parent
    records = []
    for row in read_jsonl(manifest):
        uid = row["utterance_id"]
        try:
            lats = read_lattices(base / row["lattice_path"])
            lat = next((x for x in lats if x.utterance_id == uid), lats[0])
            nb = extract_nbest(lat, n, dedupe=dedupe)
            records.append({"utterance_id": uid, "hypotheses": nb.to_dict()["hypotheses"]})
        except (OSError, LatticeError, IndexError) as exc:
            log.warning("nbest failed for %s: %s", uid, exc)
            records.append(_error(uid, f"{type(exc).__name__}: {exc}"))
    return _finish(out, records)


def cmd_prompt(nbest_path, cfg: RunConfig, out) -> StageResult:
    records = []
    for row in read_jsonl(nbest_path):
        uid = row["utterance_id"]
        if "error" in row:
            records.append(row)
            continue
        try:
            nb = NBestList.from_dict(row)
            bundle = build_prompt(
                nb, cfg.task, cfg.output_mode, cfg.n, cfg.ablations,
                budget_tokens=cfg.budget_tokens, cost_decimals=cfg.cost_decimals,
            )
            rec = bundle.to_record()
            if bundle.dropped:
                rec["dropped"] = bundle.dropped
            records.append(rec)
        except PromptError as exc:
            records.append(_error(uid, f"{type(exc).__name__}: {exc}"))
    return _finish(out, records)


def make_backend(cfg: RunConfig) -> Backend:
    if cfg.backend == "fixture":
        if not cfg.fixture:
            raise ValueError("fixture backend needs a fixture file")
        return FixtureBackend.from_file(cfg.fixture, strict=cfg.fixture_strict)
    if cfg.backend == "oracle":
        return OracleBackend(OracleConfig(
            task=cfg.task, output_mode=cfg.output_mode,
            keyword_threshold=cfg.oracle_keyword_threshold,
            directed_threshold=cfg.oracle_directed_threshold,
        ))
    if cfg.backend == "http":
        http = dict(cfg.http)
        http.setdefault("max_inflight", cfg.max_inflight)
        if "url" not in http:
            raise ValueError("http backend needs a url")
        return HttpBackend(HttpConfig(**http))
    raise ValueError(f"unknown backend {cfg.backend!r}")


def cmd_infer(prompts_path, backend: Backend, out, cfg: RunConfig | None = None) -> StageResult:
    cfg = cfg or RunConfig()
    rows = read_jsonl(prompts_path)
    todo = [r for r in rows if "error" not in r]
    reqs = [
        CompletionRequest(r["utterance_id"], r["rendered"], cfg.max_new_tokens, cfg.temperature)
        for r in todo
    ]
    results = iter(complete_many(backend, reqs, cfg.max_inflight))
    records = []
    for row in rows:
        if "error" in row:
            records.append(row)
            continue
        res = next(results)
        if isinstance(res, Exception):
            rec = _error(row["utterance_id"], f"{type(res).__name__}: {res}")
            if hasattr(res, "attempts"):
                rec["attempts"] = res.attempts
            records.append(rec)
            continue
        rec = {"utterance_id": res.utterance_id, "raw_text": res.raw_text, "backend": res.backend}
        # wall-clock latency would break byte-identical replay of deterministic backends
        if res.backend == "http":
            rec["latency_s"] = round(res.latency, 6)
        records.append(rec)
    return _finish(out, records)


def read_golds(manifest) -> dict[str, str]:
    return {r["utterance_id"]: str(r["gold"]) for r in read_jsonl(manifest)}


def parse_responses(responses_path, cfg: RunConfig):
    preds, failed = [], []
    for row in read_jsonl(responses_path):
        if "error" in row:
            failed.append(row["utterance_id"])
            continue
        if "raw_text" not in row or "utterance_id" not in row:
            raise ValueError(f"malformed response line: {row!r}")
        preds.append(parse_for_mode(row["raw_text"], cfg.output_mode, row["utterance_id"]))
    return preds, failed


def score_predictions(preds: list[ParsedPrediction], golds: dict[str, str], cfg: RunConfig):
    """Report (and ROC curve in scale mode) straight from parsed predictions."""
    for p in preds:
        if p.utterance_id not in golds:
            raise KeyError(f"no gold label for utterance {p.utterance_id!r}")
    curve = None
    if cfg.output_mode is OutputMode.KEYWORD:
        report = metrics.keyword_report(preds, golds)
    else:
        ex = [metrics.ScoredExample(p.utterance_id, float(p.value), int(golds[p.utterance_id])) for p in preds]
        report = metrics.EvalReport(n_utterances=len(ex))
        if cfg.output_mode is OutputMode.BINARY:
            report.tpr, report.fpr = metrics.binary_rates(ex)
        else:
            curve = metrics.roc_curve(ex)
            report.eer = metrics.eer(curve)
            report.fpr_at_tpr95 = metrics.fpr_at_tpr(curve, 0.95)
            report.auc = metrics.auc(curve)
    report.descriptive_fraction = descriptive_fraction(preds)
    return report, curve


def cmd_score(responses_path, manifest, cfg: RunConfig, out_dir) -> tuple[metrics.EvalReport, int]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    golds = read_golds(manifest)
    preds, failed = parse_responses(responses_path, cfg)
    write_jsonl(out_dir / "predictions.jsonl", (p.to_record() for p in preds))
    report, curve = score_predictions(preds, golds, cfg)
    report.extra = {
        "task": cfg.task.value,
        "output_mode": cfg.output_mode.value,
        "n": cfg.n,
        "ablations": sorted(cfg.ablations),
        "n_failed": len(failed),
    }
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    if curve is not None:
        (out_dir / "roc.csv").write_text(curve.to_csv(), encoding="utf-8")
    return report, EXIT_PARTIAL if failed else EXIT_OK


def cmd_roc(responses_path, manifest, cfg: RunConfig, out_csv) -> metrics.RocCurve:
    golds = read_golds(manifest)
    preds, _ = parse_responses(responses_path, cfg)
    ex = [metrics.ScoredExample(p.utterance_id, float(p.value), int(golds[p.utterance_id])) for p in preds]
    curve = metrics.roc_curve(ex)
    Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
    Path(out_csv).write_text(curve.to_csv(), encoding="utf-8")
    return curve


def cmd_synth(channel: ChannelConfig, size: int, out_dir) -> Path:
    utts = generate_corpus(channel, size)
    manifest = write_corpus(utts, out_dir)
    (Path(out_dir) / "channel.json").write_text(json.dumps(channel.to_dict(), indent=2) + "\n", encoding="utf-8")
    return manifest


# name, higher-is-better
_PRIMARY = {
    OutputMode.KEYWORD: ("total_accuracy", True),
    OutputMode.SCALE: ("eer", False),
    OutputMode.BINARY: ("tpr_minus_fpr", True),
}


def primary_metric(report: metrics.EvalReport, output_mode: OutputMode) -> tuple[str, float]:
    """Metric used for the n=1 vs n=max verdict."""
    name, _ = _PRIMARY[output_mode]
    if name == "tpr_minus_fpr":
        return name, report.tpr - report.fpr
    return name, getattr(report, name)


def cmd_e2e(channel: ChannelConfig, cfg: RunConfig, ns: Iterable[int], size: int, out_dir) -> dict:
    """Synthesize one corpus, then run every stage once per n-best width."""
    out_dir = Path(out_dir)
    ns = sorted(set(ns))
    manifest = cmd_synth(channel, size, out_dir / "corpus")
    backend = make_backend(cfg)
    rows = []
    failures = 0
    try:
        for n in ns:
            run = RunConfig(**{**cfg.__dict__, "n": n})
            d = out_dir / f"n{n}"
            r1 = cmd_nbest(manifest, n, d / "nbest.jsonl")
            r2 = cmd_prompt(r1.path, run, d / "prompts.jsonl")
            r3 = cmd_infer(r2.path, backend, d / "responses.jsonl", run)
            report, _ = cmd_score(r3.path, manifest, run, d)
            failures += r1.n_failed + r2.n_failed + r3.n_failed
            name, value = primary_metric(report, run.output_mode)
            rows.append({"n": n, "metric": name, "value": value, "report": report.to_dict()})
    finally:
        backend.close()
    first, last = rows[0], rows[-1]
    higher = _PRIMARY[cfg.output_mode][1]
    delta = last["value"] - first["value"]
    if delta == 0:
        verdict = "tie"
    elif (delta > 0) == higher:
        verdict = "nbest_better"
    else:
        verdict = "onebest_better"
    summary = {
        "task": cfg.task.value,
        "output_mode": cfg.output_mode.value,
        "seed": channel.seed,
        "size": size,
        "rows": rows,
        "verdict": {"compare": [first["n"], last["n"]], "metric": first["metric"], "delta": delta, "result": verdict},
        "n_failed": failures,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary


def format_table(summary: dict) -> str:
    lines = [f"{'n':>3}  {summary['rows'][0]['metric']:>16}"]
    for r in summary["rows"]:
        lines.append(f"{r['n']:>3}  {r['value']:>16.4f}")
    v = summary["verdict"]
    lines.append(f"verdict (n={v['compare'][0]} vs n={v['compare'][1]}): {v['result']} (delta {v['delta']:+.4f})")
    return "\n".join(lines)
