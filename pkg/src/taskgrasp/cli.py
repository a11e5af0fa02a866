"""Command-line driver: ``taskgrasp <stage> [--config PATH] [--seed N] [--out DIR] [--task KIND] [--deterministic]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

from .container import atomic_write_text
from .pipeline import STAGES, ConfigInvalid, PipelineConfig, PipelineError, Runner
from .scenegen import TaskKind

log = logging.getLogger("taskgrasp")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="taskgrasp", description="Task-oriented grasp synthesis pipeline")
    p.add_argument("stage", choices=STAGES)
    p.add_argument("--config", type=Path, help="JSON pipeline config (defaults used when omitted)")
    p.add_argument("--seed", type=int, help="root seed override")
    p.add_argument("--out", type=Path, default=Path("taskgrasp_out"), help="output directory")
    p.add_argument("--task", choices=[k.value for k in TaskKind], help="task kind override")
    p.add_argument("--deterministic", action="store_true", help="single-threaded deterministic training")
    p.add_argument("--source", choices=("samples", "ground-truth"), default="samples",
                   help="grasps to evaluate (evaluate stage only)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _error_record(out: Path, stage: str, exc: BaseException) -> dict:
    code = getattr(exc, "code", "unexpected error")
    rec = {"stage": stage, "error": code, "type": type(exc).__name__, "detail": str(exc)}
    try:
        atomic_write_text(out / "error.json", json.dumps(rec, indent=1, sort_keys=True) + "\n")
    except OSError:
        pass
    return rec


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
        cfg = cfg.with_overrides(seed=args.seed, task=args.task, deterministic=args.deterministic)
        runner = Runner(cfg, args.out, log=log.info)
        kwargs = {"source": args.source} if args.stage == "evaluate" else {}
        summary = runner.run(args.stage, **kwargs)
    except (PipelineError, ConfigInvalid) as exc:
        rec = _error_record(args.out, args.stage, exc)
        print(json.dumps(rec), file=sys.stderr)
        return exc.exit_status
    except Exception as exc:  # noqa: BLE001 - every failure must leave a machine-readable record
        rec = _error_record(args.out, args.stage, exc)
        log.debug(traceback.format_exc())
        print(json.dumps(rec), file=sys.stderr)
        return 1
    err = args.out / "error.json"
    if err.exists():
        err.unlink()
    print(json.dumps({"stage": args.stage, "status": "ok", **summary}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
