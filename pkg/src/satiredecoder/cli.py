"""``satiredecoder`` command line: run, eval, report.

Exit codes: 0 success, 1 fatal or config error, 2 partial failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

from .backends.base import BackendConfig
from .config import RoleBackend, load_config
from .dataset import load_manifest
from .errors import SatireDecoderError
from .metrics import NLG_METRICS, aggregate, evaluate_sample
from .pipeline import (
    EXIT_FATAL,
    EXIT_OK,
    dump_json,
    load_records,
    load_run_manifest,
    make_embedder,
    run_pipeline,
    write_atomic,
)

log = logging.getLogger("satiredecoder")


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        doc = {
            "ts": round(record.created, 3),
            "level": record.levelname.lower(),
            "logger": record.name,
            "msg": record.getMessage(),
        }
        if record.exc_info:
            doc["exc"] = self.formatException(record.exc_info)
        return json.dumps(doc)


def configure_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if level == "debug":
        handler.setFormatter(JsonLineFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    root = logging.getLogger("satiredecoder")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except SatireDecoderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    configure_logging(args.log_level or cfg.log_level)
    omit = [g for g, flag in (("le", args.no_le), ("gs", args.no_gs), ("da", args.no_da)) if flag]
    try:
        result = run_pipeline(cfg, dry_run=args.dry_run, no_uncertainty=args.no_uncertainty, omit=omit)
    except (SatireDecoderError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    if args.dry_run:
        status = "ok" if result.exit_code == EXIT_OK else "problems: " + "; ".join(result.manifest["problems"])
        print(f"dry run: {result.manifest['samples']} samples, backends {status}")
        return result.exit_code
    doc = result.manifest
    ok = len(doc["samples"]) - len(doc["failed"])
    print(f"{ok}/{len(doc['samples'])} samples succeeded; records in {cfg.output_dir}")
    for entry in doc["samples"]:
        if entry["status"] == "failed":
            print(f"  FAILED {entry['id']} (role={entry['role']}): {entry['error']}")
    return result.exit_code


def _eval_embedder(run_doc: dict, config_path: str | None):
    if config_path:
        return make_embedder(load_config(config_path).backends["embedder"])
    role_cfg = run_doc.get("backends", {}).get("embedder", {"type": "mock"})
    if role_cfg.get("type") == "http":
        http = BackendConfig(role_cfg["base_url"], role_cfg["model_name"], timeout=role_cfg.get("timeout", 60.0))
        return make_embedder(RoleBackend("http", {}, http))
    options = {k: v for k, v in role_cfg.items() if k != "type"}
    return make_embedder(RoleBackend("mock", options))


def cmd_eval(args: argparse.Namespace) -> int:
    configure_logging(args.log_level or "info")
    records = load_records(args.run)
    if not records:
        print(f"error: no run records under {args.run}", file=sys.stderr)
        return EXIT_FATAL
    try:
        manifest = load_manifest(args.dataset)
        embedder = _eval_embedder(load_run_manifest(args.run), args.config)
    except SatireDecoderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    by_id = {s.id: s for s in manifest.samples}
    vocabulary = manifest.object_vocabulary
    results, skipped = [], []
    for rec in records:
        sample = by_id.get(rec.sample_id)
        if sample is None or not sample.gold_description.strip():
            reason = "not in dataset" if sample is None else "no gold_description"
            log.warning("skipping %s: %s", rec.sample_id, reason)
            skipped.append({"id": rec.sample_id, "reason": reason})
            continue
        results.append(
            evaluate_sample(
                rec.sample_id,
                rec.selected_trace.r3,
                sample.gold_description,
                embedder,
                gold_objects=sample.gold_objects,
                vocabulary=vocabulary,
                synonyms=sample.synonyms,
            )
        )
    if not results:
        print("error: no sample could be evaluated", file=sys.stderr)
        return EXIT_FATAL
    report = aggregate(results)
    report.metadata["skipped"] = skipped
    report.metadata["failed_in_run"] = load_run_manifest(args.run).get("failed", [])
    mean = math.fsum(report.corpus[k] for k in NLG_METRICS) / len(NLG_METRICS)
    if not math.isclose(mean, report.corpus["ave"], rel_tol=0, abs_tol=1e-12):
        print(f"error: AVE {report.corpus['ave']} disagrees with the mean of its metrics {mean}", file=sys.stderr)
        return EXIT_FATAL
    out = Path(args.output) if args.output else Path(args.run) / "metrics.json"
    write_atomic(out, dump_json(report.to_dict()))
    if args.csv:
        write_atomic(Path(args.csv), report.to_csv())
    print(report.table())
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    configure_logging(args.log_level or "info")
    records = load_records(args.run)
    run_doc = load_run_manifest(args.run)
    if not records and not run_doc.get("failed"):
        print(f"error: no run records under {args.run}", file=sys.stderr)
        return EXIT_FATAL
    for rec in records:
        print(f"sample {rec.sample_id}  (weights w1={rec.weights[0]:g} w2={rec.weights[1]:g}, {rec.similarity})")
        print(f"  {'temp':>5}  {'U1':>8}  {'U2':>8}  {'U':>8}")
        for i, t in enumerate(rec.traces):
            if t.failed:
                print(f"  {t.temperature:5.2f}  {'FAILED':>8}  {'':>8}  {'':>8}  {t.error}")
                continue
            mark = "  <- selected" if i == rec.selected else ""
            print(f"  {t.temperature:5.2f}  {t.u1:8.4f}  {t.u2:8.4f}  {t.u_combined:8.4f}{mark}")
    for sid in run_doc.get("failed", []):
        print(f"sample {sid}  FAILED (no record)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="satiredecoder", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="decouple, prompt and sweep every sample")
    run.add_argument("--config", required=True)
    run.add_argument("--dry-run", action="store_true", help="validate config, dataset and backend reachability only")
    run.add_argument("--no-uncertainty", action="store_true", help="single temperature, no sweep")
    run.add_argument("--no-le", action="store_true", help="drop local-entity sections from the prompt")
    run.add_argument("--no-gs", action="store_true", help="drop global-semantics sections from the prompt")
    run.add_argument("--no-da", action="store_true", help="drop discrepancy sections from the prompt")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="score the selected interpretations against gold annotations")
    ev.add_argument("--run", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--config", help="take the embedder from this config instead of the run manifest")
    ev.add_argument("--output", help="metrics JSON path (default <run>/metrics.json)")
    ev.add_argument("--csv", help="also write a CSV table here")
    ev.set_defaults(func=cmd_eval)

    rep = sub.add_parser("report", help="uncertainty-vs-temperature table per sample")
    rep.add_argument("--run", required=True)
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
