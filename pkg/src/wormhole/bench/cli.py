"""``wormhole-bench``: keyset generation, workload runs and report comparison."""
from __future__ import annotations

import argparse
import json
import sys

from .keyset import STYLES, KeysetError, KeysetSpec, generate_keyset
from .report import append_csv, compare_rows, format_table, load_reports, plot_compare
from .workload import MODES, TARGETS, WorkloadError, WorkloadSpec, run_workload


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wormhole-bench", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="write a keyset file")
    g.add_argument("--style", choices=STYLES, default="random")
    g.add_argument("--len", dest="key_len", type=int, default=8)
    g.add_argument("--count", type=int, default=1_000_000)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--out", required=True)

    b = sub.add_parser("bench", help="run a workload and print a JSON report")
    b.add_argument("--keyset", required=True)
    b.add_argument("--mode", choices=MODES, default="lookup")
    b.add_argument("--target", choices=TARGETS, default="wormhole",
                   help="index under test or a baseline map")
    b.add_argument("--lookup-pct", type=int, default=50)
    b.add_argument("--insert-pct", type=int, default=50)
    b.add_argument("--range-pct", type=int, default=0)
    b.add_argument("--range-len", type=int, default=100)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--ops", type=int, default=1_000_000)
    b.add_argument("--seed", type=int, default=1)
    b.add_argument("--unsafe", action="store_true", help="use the lock-free single-thread build")
    b.add_argument("--label")
    b.add_argument("--json", action="store_true", help="indented JSON instead of one line")
    b.add_argument("--csv", metavar="PATH", help="append a CSV row to PATH")

    c = sub.add_parser("compare", help="tabulate JSON reports")
    c.add_argument("files", nargs="+", metavar="FILE")
    c.add_argument("--csv", metavar="PATH", help="also write the table as CSV")
    c.add_argument("--plot", metavar="PATH", help="save a throughput/memory figure")
    return p


def _gen(a) -> int:
    spec = KeysetSpec(a.style, a.key_len, a.count, a.seed)
    keys = generate_keyset(spec, a.out)
    print(json.dumps({"out": a.out, "style": a.style, "len": a.key_len,
                      "count": len(keys), "seed": a.seed}))
    return 0


def _bench(a) -> int:
    spec = WorkloadSpec(a.lookup_pct, a.insert_pct, a.range_pct, a.range_len,
                        a.threads, a.ops, a.seed)
    report = run_workload(a.keyset, spec, a.mode, target=a.target, unsafe=a.unsafe,
                          label=a.label).to_dict()
    print(json.dumps(report, indent=2 if a.json else None))
    if a.csv:
        append_csv(a.csv, report)
    if not report["ok"]:
        print(f"error: {report['failed_ops']} failed ops, key count {report['key_count']} "
              f"(expected {report['expected_key_count']})", file=sys.stderr)
        return 1
    return 0


def _compare(a) -> int:
    rows = compare_rows(load_reports(a.files))
    print(format_table(rows))
    if a.csv:
        import csv
        with open(a.csv, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    if a.plot:
        plot_compare(rows, a.plot)
    return 0 if all(r["ok"] for r in rows) else 1


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    try:
        return {"gen": _gen, "bench": _bench, "compare": _compare}[a.cmd](a)
    except (KeysetError, WorkloadError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
