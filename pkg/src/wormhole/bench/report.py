"""Report I/O, comparison tables and figures."""
from __future__ import annotations

import csv
import json
from pathlib import Path

CSV_FIELDS = ("label", "target", "build", "mode", "threads", "ops", "elapsed_s", "mops",
              "p50_us", "p99_us", "key_count", "failed_ops", "index_bytes", "meta_bytes",
              "mirror_bytes", "leaf_bytes", "rss_delta_bytes", "splits", "merges",
              "lpm_restarts", "version_restarts", "mean_anchor_len", "ok")


def append_csv(path, report: dict) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_FIELDS, extrasaction="ignore")
        if new:
            w.writeheader()
        w.writerow(report)


def load_reports(paths) -> list[dict]:
    """Read JSON reports: one object per file, or one per line."""
    out = []
    for p in paths:
        text = Path(p).read_text().strip()
        if not text:
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError:
            obj = [json.loads(line) for line in text.splitlines() if line.strip()]
        out.extend(obj if isinstance(obj, list) else [obj])
    return out


def compare_rows(reports: list[dict]) -> list[dict]:
    """Throughput, memory and restarts per report, with a ratio against the
    first report and a speedup against the ordered-map baseline if present."""
    if not reports:
        raise ValueError("need at least one report")
    first = reports[0]["mops"] or 1e-12
    ordered = next((r["mops"] for r in reports if r.get("target") == "ordered"), None)
    rows = []
    for r in reports:
        rows.append({
            "label": r["label"],
            "mode": r["mode"],
            "threads": r["threads"],
            "mops": r["mops"],
            "ratio": r["mops"] / first,
            "speedup": (r["mops"] / ordered) if ordered else None,
            "mem_mb": r.get("index_bytes", 0) / 2**20,
            "rss_mb": r.get("rss_delta_bytes", 0) / 2**20,
            "restarts": r.get("lpm_restarts", 0) + r.get("version_restarts", 0),
            "ok": r.get("ok", True),
        })
    return rows


def format_table(rows: list[dict]) -> str:
    cols = ("label", "mode", "threads", "mops", "ratio", "speedup", "mem_mb", "rss_mb",
            "restarts", "ok")

    def cell(v) -> str:
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.3f}"
        return str(v)

    body = [[cell(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for b in body:
        lines.append("  ".join(v.rjust(w) if i else v.ljust(w)
                               for i, (v, w) in enumerate(zip(b, widths))))
    return "\n".join(lines)


def plot_compare(rows: list[dict], path) -> None:
    """Bar charts of throughput and index memory, one bar per report."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [r["label"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(max(6, 1.2 * len(rows) + 4), 4))
    ax1.bar(labels, [r["mops"] for r in rows], color="tab:blue")
    ax1.set_ylabel("MOPS")
    ax1.set_title("Throughput")
    ax2.bar(labels, [r["mem_mb"] for r in rows], color="tab:orange", label="index (stats)")
    ax2.bar(labels, [r["rss_mb"] for r in rows], fill=False, edgecolor="black",
            label="resident delta")
    ax2.set_ylabel("MiB")
    ax2.set_title("Memory")
    ax2.legend(fontsize="small")
    for ax in (ax1, ax2):
        ax.tick_params(axis="x", labelrotation=30)
        for t in ax.get_xticklabels():
            t.set_horizontalalignment("right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
