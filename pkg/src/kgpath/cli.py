"""Command-line pipeline driver.

Each subcommand runs one pipeline stage against a YAML config;
``pipeline`` runs them all in order. ``--set section.key=value`` overrides
config entries.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import RunConfig, load_config

_STAGES = {
    "synth": pipeline.stage_synth,
    "ingest": pipeline.stage_ingest,
    "mine": pipeline.stage_mine,
    "train": pipeline.stage_train,
    "retrieve": pipeline.stage_retrieve,
    "evaluate": pipeline.stage_evaluate,
    "diagnose": pipeline.stage_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgpath",
        description="Knowledge-graph path retrieval pipeline",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(_STAGES) + ["pipeline"]:
        cmd = sub.add_parser(name, help=f"run the {name} stage" if name != "pipeline" else "run all stages")
        cmd.add_argument("--config", required=True, help="YAML run configuration")
        cmd.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config entry (dotted path, YAML value)",
        )
    return parser


def _summarize(stage: str, manifest: dict) -> str:
    keys = ("n_queries", "n_pos", "n_instances", "best_epoch", "hits_at_1", "error")
    details = " ".join(f"{k}={manifest[k]}" for k in keys if k in manifest)
    return f"{stage}: done {details}".rstrip()


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg: RunConfig = load_config(args.config, args.overrides)
        if args.command == "pipeline":
            manifests = pipeline.run_pipeline(cfg)
            for stage, manifest in manifests.items():
                print(_summarize(stage, manifest))
        else:
            manifest = _STAGES[args.command](cfg)
            print(_summarize(args.command, manifest))
    except Exception as exc:  # surfaced as exit status for batch callers
        logging.getLogger("kgpath").error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
