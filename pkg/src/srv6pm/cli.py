"""Command-line harness.

    srv6pm run --scenario paper-experiment --seed 1 --out results/
    srv6pm report --in results/records.jsonl
    srv6pm scenarios list

Exit codes: 0 success, 1 ``--check`` found a mismatch, 2 configuration or
format error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .collect import (
    FORMATS,
    TimeSeriesStore,
    TopologyRecord,
    TopologyStore,
    export_records,
    flow_totals,
    format_report,
    histogram,
    import_records,
    render_histogram,
)
from .errors import FormatError, ParseError, Srv6PmError, ValidationError
from .packet import SidList
from .sim.network import Simulation
from .sim.presets import preset_names, preset_text
from .sim.scenario import parse_scenario

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("srv6pm")


def load_config(scenario: str):
    path = Path(scenario)
    if path.suffix in (".yaml", ".yml") or path.exists():
        text = path.read_text()  # OSError handled by the caller
    else:
        text = preset_text(scenario)
    return parse_scenario(text)


def oracle_totals(sim: Simulation, records) -> dict[tuple, int]:
    """Oracle drops per flow over exactly the blocks that were reported."""
    totals: dict[tuple, int] = {}
    for r in records:
        key = (r.measure_id, r.direction, r.sid_list)
        totals[key] = totals.get(key, 0) + sim.oracle.block_drops(SidList(r.sid_list), r.epoch)
    return dict(sorted(totals.items()))


def mismatches(sim: Simulation, records) -> list[str]:
    out = []
    for r in records:
        expected = sim.oracle.block_drops(SidList(r.sid_list), r.epoch)
        if r.interval_loss != expected:
            out.append(f"measure {r.measure_id} {r.direction} epoch {r.epoch}: "
                       f"measured {r.interval_loss}, oracle {expected}")
    return out


def run_summary(sim: Simulation, records) -> str:
    measured = flow_totals(records)
    oracle = oracle_totals(sim, records)
    text = [format_report(records), "",
            f"flows: {len(measured)}  blocks: {len(records)}  "
            f"oracle drops: {sum(oracle.values())}  measured: {sum(measured.values())}",
            "", "loss histogram (flows per total lost packets)",
            render_histogram(histogram(measured.values()), histogram(oracle.values()))]
    bad = mismatches(sim, records)
    text.append(f"exact: {'yes' if not bad else 'no'}")
    text += bad
    return "\n".join(text) + "\n"


def cmd_run(args) -> int:
    cfg = load_config(args.scenario)
    if args.seed is not None:
        cfg.seed = args.seed
    sim = Simulation(cfg)
    store, topo = TimeSeriesStore(), TopologyStore()
    sim.controller.subscribe(store)
    sim.controller.subscribe_topology(topo)
    sim.controller.publish_topology(TopologyRecord.from_config(cfg))
    sim.run(until=args.until)
    records = store.records()
    summary = run_summary(sim, records)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        export_records(store, out / f"records.{args.format}", args.format)
        (out / "topology.json").write_text(json.dumps(topo.current.to_dict(), indent=2) + "\n")
        (out / "summary.txt").write_text(summary)
        with open(out / "oracle.jsonl", "w") as fh:
            for (sids, epoch), t in sorted(sim.oracle.blocks.items(),
                                           key=lambda kv: (str(kv[0][0]), kv[0][1])):
                fh.write(json.dumps({"sid_list": str(sids), "epoch": epoch, "sent": t.sent,
                                     "delivered": t.delivered, "drops": t.drops},
                                    separators=(",", ":")) + "\n")
    sys.stdout.write(summary)
    if args.check and mismatches(sim, records):
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_report(args) -> int:
    records = import_records(args.input, args.format)
    sys.stdout.write(format_report(records) if records else "")
    return EXIT_OK


def cmd_scenarios(args) -> int:
    for name in preset_names():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srv6pm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and report per-flow loss")
    run.add_argument("--scenario", required=True, help="YAML path or bundled preset name")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--until", type=float, default=None,
                     help="stop traffic after this many simulated seconds")
    run.add_argument("--out", default=None, help="directory for records, topology, summary")
    run.add_argument("--format", choices=FORMATS, default="jsonl")
    run.add_argument("--check", action="store_true",
                     help="exit 1 if any block differs from the drop oracle")
    run.set_defaults(fn=cmd_run)

    report = sub.add_parser("report", help="summarize an exported record file")
    report.add_argument("--in", dest="input", required=True)
    report.add_argument("--format", choices=FORMATS, default=None,
                        help="default: from the file suffix")
    report.set_defaults(fn=cmd_report)

    scenarios = sub.add_parser("scenarios", help="bundled scenarios")
    scenarios.add_argument("action", choices=["list"])
    scenarios.set_defaults(fn=cmd_scenarios)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ParseError, ValidationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Srv6PmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
