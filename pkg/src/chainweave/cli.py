"""Command line entry point: run scenarios, verify stores, report stats.

Exit codes: 0 success, 1 invalid scenario or unreadable input, 2 internal
invariant violation, 3 audit mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

from .blockstore import write_store
from .errors import InvalidScenario
from .metrics import Metrics
from .netsim import Simulation
from .report import build_report, render_columns, render_figures, render_table
from .scenario import load_scenario, scenario_content_hash
from .verify import find_stores, verify_store

log = logging.getLogger("chainweave")


def _setup_logging() -> None:
    level = os.environ.get("CHAINWEAVE_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def cmd_run(args) -> int:
    scenario_path = Path(args.scenario)
    try:
        scenario = load_scenario(scenario_path)
        if args.seed is not None:
            from dataclasses import replace

            scenario = replace(scenario, seed=args.seed)
        sim = Simulation(scenario)
    except InvalidScenario as e:
        print(f"invalid scenario: {e}", file=sys.stderr)
        return 1
    try:
        metrics = sim.run()
    except Exception as e:  # internal invariant violation
        print(f"internal error: {e}", file=sys.stderr)
        return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(scenario_path, out / "scenario.json")
    metrics.write(out / "metrics.ndjson")
    manifest = {
        "schema_version": 1,
        "scenario": scenario_path.name,
        "seed": scenario.seed,
        "scenario_sha256": scenario_content_hash(scenario_path),
        "metrics": "metrics.ndjson",
        "final_height": metrics.of_kind("run_summary")[0]["final_height"],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    for name in sorted(sim.nodes):
        node = sim.nodes[name]
        write_store(
            out / "stores" / name,
            sim.params,
            node.kb_store,
            node.mb_store,
            node.proof_store,
        )
    print(f"run complete: height {manifest['final_height']}, metrics and stores in {out}")
    return 0


def cmd_verify(args) -> int:
    stores = find_stores(Path(args.store))
    if not stores:
        print(f"no block stores under {args.store}", file=sys.stderr)
        return 1
    channels = None
    if args.channels:
        channels = [int(c) for c in args.channels.split(",") if c != ""]
    failed = False
    for store in stores:
        result = verify_store(store, channels)
        if result.ok:
            print(f"{store.name}: ok, height {result.height}, channels {result.channels}")
        else:
            failed = True
            where = result.offending_block.hex() if result.offending_block else "n/a"
            print(f"{store.name}: FAIL at block {where}: {result.error}")
    return 3 if failed else 0


def cmd_stats(args) -> int:
    path = Path(args.metrics)
    try:
        metrics = Metrics.read(path)
    except (OSError, ValueError) as e:
        print(f"cannot read metrics: {e}", file=sys.stderr)
        return 1
    report = build_report(metrics)
    if args.format == "table":
        sys.stdout.write(render_table(report))
    else:
        for name, content in render_columns(report).items():
            sys.stdout.write(f"# {name}\n{content}")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, content in render_columns(report).items():
            (out / name).write_text(content)
        figures = render_figures(report, out)
        names = ", ".join(p.name for p in figures)
        print(f"wrote columns and figures to {out}: {names}")
    return 0


def main(argv=None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(
        prog="chainweave",
        description="Multi-channel sharded ledger simulator and chain verifier",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and write metrics plus block stores")
    p_run.add_argument("--scenario", required=True, help="scenario JSON file")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser("verify", help="replay a block store from genesis")
    p_verify.add_argument("--store", required=True, help="store directory or run output directory")
    p_verify.add_argument("--channels", default=None, help="comma-separated channel subset")
    p_verify.set_defaults(func=cmd_verify)

    p_stats = sub.add_parser("stats", help="summarize a metrics file")
    p_stats.add_argument("--metrics", required=True, help="metrics.ndjson from a run")
    p_stats.add_argument("--format", choices=("table", "columns"), default="table")
    p_stats.add_argument("--out-dir", default=None, help="write columns and figures here")
    p_stats.set_defaults(func=cmd_stats)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
