"""``nbest-slu`` command line.

Exit status: 0 success, 2 some utterances failed, 1 configuration or fatal
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .harness import EXIT_FATAL, EXIT_OK, EXIT_PARTIAL, RunConfig
from .synth import load_channel_config

log = logging.getLogger("nbest_slu")

ABLATE_CHOICES = ["no-tp", "gib-tp", "no-hc"]


def _run_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON run config; flags override it")
    p.add_argument("--task", choices=["DDSD", "KS"])
    p.add_argument("--n", type=int)
    p.add_argument("--output-mode", choices=["binary_target", "scale_0_100", "keyword"])
    p.add_argument("--ablate", action="append", choices=ABLATE_CHOICES)
    p.add_argument("--budget", type=int, dest="budget_tokens")
    p.add_argument("--cost-decimals", type=int)


def _backend_args(p: argparse.ArgumentParser):
    p.add_argument("--backend", choices=["http", "fixture", "oracle"])
    p.add_argument("--fixture", help="fixture JSONL for --backend fixture")
    p.add_argument("--strict", action="store_true", help="check stored prompt digests")
    p.add_argument("--url", help="base URL for --backend http")
    p.add_argument("--model")
    p.add_argument("--endpoint-path")
    p.add_argument("--auth-header")
    p.add_argument("--max-inflight", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nbest-slu", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("nbest", help="extract n-best lists from manifest lattices")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dedupe", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("prompt", help="render prompts from an n-best JSONL")
    p.add_argument("--nbest", required=True)
    p.add_argument("--out", required=True)
    _run_args(p)

    p = sub.add_parser("infer", help="run prompts through a completion backend")
    p.add_argument("--prompts", required=True)
    p.add_argument("--out", required=True)
    _run_args(p)
    _backend_args(p)

    p = sub.add_parser("score", help="parse responses and compute metrics")
    p.add_argument("--responses", required=True)
    p.add_argument("--manifest", required=True, help="manifest carrying gold labels")
    p.add_argument("--out", required=True, help="output directory")
    _run_args(p)

    p = sub.add_parser("roc", help="write the ROC curve CSV for scale-mode responses")
    p.add_argument("--responses", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _run_args(p)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--channel", default="ks_default", help="shipped config name or JSON path")
    p.add_argument("--size", type=int, default=2000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("e2e", help="synthesize, then sweep n through every stage")
    p.add_argument("--channel", default="ks_default")
    p.add_argument("--size", type=int, default=2000)
    p.add_argument("--seed", type=int)
    p.add_argument("--ns", default="1,2,4,8,16", help="comma-separated n-best sizes")
    p.add_argument("--out", required=True)
    _run_args(p)
    _backend_args(p)
    return ap


def _run_config(args) -> RunConfig:
    over = {
        "task": getattr(args, "task", None),
        "n": getattr(args, "n", None),
        "output_mode": getattr(args, "output_mode", None),
        "ablations": getattr(args, "ablate", None),
        "budget_tokens": getattr(args, "budget_tokens", None),
        "cost_decimals": getattr(args, "cost_decimals", None),
        "backend": getattr(args, "backend", None),
        "fixture": getattr(args, "fixture", None),
        "max_inflight": getattr(args, "max_inflight", None),
    }
    if getattr(args, "strict", False):
        over["fixture_strict"] = True
    cfg = RunConfig.from_file(getattr(args, "config", None), **over)
    http = dict(cfg.http)
    for key, attr in (("url", "url"), ("model", "model"), ("path", "endpoint_path"), ("auth_header", "auth_header")):
        v = getattr(args, attr, None)
        if v is not None:
            http[key] = v
    cfg.http = http
    return cfg


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "nbest":
        return harness.cmd_nbest(args.manifest, args.n, args.out, dedupe=args.dedupe).exit_code
    if cmd == "synth":
        channel = load_channel_config(args.channel, seed=args.seed)
        manifest = harness.cmd_synth(channel, args.size, args.out)
        print(manifest)
        return EXIT_OK

    channel = None
    if cmd == "e2e":
        channel = load_channel_config(args.channel, seed=args.seed)
        args.task = args.task or channel.task.value
    cfg = _run_config(args)
    if cmd == "prompt":
        return harness.cmd_prompt(args.nbest, cfg, args.out).exit_code
    if cmd == "infer":
        backend = harness.make_backend(cfg)
        try:
            return harness.cmd_infer(args.prompts, backend, args.out, cfg).exit_code
        finally:
            backend.close()
    if cmd == "score":
        report, code = harness.cmd_score(args.responses, args.manifest, cfg, args.out)
        print(json.dumps(report.to_dict(), indent=2))
        return code
    if cmd == "roc":
        harness.cmd_roc(args.responses, args.manifest, cfg, args.out)
        return EXIT_OK
    if cmd == "e2e":
        if cfg.task is not channel.task:
            raise ValueError(f"--task {cfg.task.value} does not match channel task {channel.task.value}")
        ns = [int(x) for x in args.ns.split(",") if x.strip()]
        summary = harness.cmd_e2e(channel, cfg, ns, args.size, Path(args.out))
        print(harness.format_table(summary))
        return EXIT_PARTIAL if summary["n_failed"] else EXIT_OK
    raise AssertionError(cmd)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except (ValueError, KeyError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
