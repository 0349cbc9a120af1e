"""Turn run metrics into tables, plot-ready columns, and figures.

The human-readable table and the delimited columns carry the same numbers;
figures are rendered to PNG files next to the columns when an output
directory is given.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .metrics import Metrics


@dataclass
class StorageStat:
    node: str
    first_height: int
    last_height: int
    first_bytes: int
    last_bytes: int

    @property
    def slope(self) -> float:
        span = self.last_height - self.first_height
        if span <= 0:
            return 0.0
        return (self.last_bytes - self.first_bytes) / span


@dataclass
class LatencyStat:
    channel: int
    count: int
    p50: float
    p90: float
    p99: float


@dataclass
class Report:
    storage: list[StorageStat] = field(default_factory=list)
    latency: list[LatencyStat] = field(default_factory=list)
    convergence: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    storage_series: dict[str, list[tuple[int, int]]] = field(default_factory=dict)


def percentile(values: list[float], q: float) -> float:
    """Nearest-rank percentile on a sorted copy; empty input gives nan."""
    if not values:
        return math.nan
    ordered = sorted(values)
    rank = max(1, math.ceil(q * len(ordered)))
    return ordered[rank - 1]


def build_report(metrics: Metrics) -> Report:
    report = Report()
    series: dict[str, dict[int, int]] = {}
    for row in metrics.of_kind("storage"):
        series.setdefault(row["node"], {})[row["height"]] = row["bytes"]
    for node in sorted(series):
        heights = sorted(series[node])
        points = [(h, series[node][h]) for h in heights]
        report.storage_series[node] = points
        report.storage.append(
            StorageStat(
                node=node,
                first_height=heights[0],
                last_height=heights[-1],
                first_bytes=series[node][heights[0]],
                last_bytes=series[node][heights[-1]],
            )
        )

    by_channel: dict[int, list[float]] = {}
    for row in metrics.of_kind("tx"):
        if row.get("status") != "confirmed" or row.get("confirm_time") is None:
            continue
        by_channel.setdefault(row["channel"], []).append(
            row["confirm_time"] - row["submit_time"]
        )
    for channel in sorted(by_channel):
        vals = by_channel[channel]
        report.latency.append(
            LatencyStat(
                channel=channel,
                count=len(vals),
                p50=percentile(vals, 0.50),
                p90=percentile(vals, 0.90),
                p99=percentile(vals, 0.99),
            )
        )

    report.convergence = metrics.of_kind("convergence")
    summaries = metrics.of_kind("run_summary")
    report.summary = summaries[0] if summaries else {}
    return report


def render_table(report: Report) -> str:
    lines: list[str] = []
    if report.summary:
        s = report.summary
        lines.append(
            f"run: height {s.get('final_height')}  nodes {s.get('nodes')}  "
            f"orphans {s.get('orphans')}  reorgs {s.get('reorgs')}"
        )
        lines.append("")
    lines.append("storage (bytes retained per node)")
    lines.append(f"  {'node':<12}{'height':>8}{'bytes':>14}{'bytes/keyblock':>16}")
    for st in report.storage:
        lines.append(
            f"  {st.node:<12}{st.last_height:>8}{st.last_bytes:>14}{st.slope:>16.1f}"
        )
    lines.append("")
    lines.append("confirmation latency (seconds per channel)")
    lines.append(f"  {'channel':<12}{'count':>8}{'p50':>10}{'p90':>10}{'p99':>10}")
    for lat in report.latency:
        lines.append(
            f"  {lat.channel:<12}{lat.count:>8}{lat.p50:>10.3f}{lat.p90:>10.3f}{lat.p99:>10.3f}"
        )
    if report.convergence:
        lines.append("")
        lines.append("convergence after partitions")
        lines.append(f"  {'partition':<12}{'heal_time':>12}{'seconds':>10}{'key_blocks':>12}")
        for c in report.convergence:
            lines.append(
                f"  {c['partition']:<12}{c['heal_time']:>12.2f}"
                f"{c['converged_time'] - c['heal_time']:>10.2f}{c['key_blocks_after_heal']:>12}"
            )
    return "\n".join(lines) + "\n"


def render_columns(report: Report) -> dict[str, str]:
    """Delimited output, one TSV block per aspect."""
    storage = ["node\theight\tbytes"]
    for node, points in sorted(report.storage_series.items()):
        for height, size in points:
            storage.append(f"{node}\t{height}\t{size}")
    latency = ["channel\tcount\tp50\tp90\tp99"]
    for lat in report.latency:
        latency.append(
            f"{lat.channel}\t{lat.count}\t{lat.p50:.6f}\t{lat.p90:.6f}\t{lat.p99:.6f}"
        )
    convergence = ["partition\theal_time\tseconds\tkey_blocks"]
    for c in report.convergence:
        convergence.append(
            f"{c['partition']}\t{c['heal_time']:.6f}"
            f"\t{c['converged_time'] - c['heal_time']:.6f}\t{c['key_blocks_after_heal']}"
        )
    return {
        "storage.tsv": "\n".join(storage) + "\n",
        "latency.tsv": "\n".join(latency) + "\n",
        "convergence.tsv": "\n".join(convergence) + "\n",
    }


def render_figures(report: Report, out_dir: Path) -> list[Path]:
    """Storage growth and latency percentile figures as PNG files."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written: list[Path] = []
    out_dir.mkdir(parents=True, exist_ok=True)

    if report.storage_series:
        fig, ax = plt.subplots(figsize=(7, 4))
        for node, points in sorted(report.storage_series.items()):
            xs = [h for h, _ in points]
            ys = [b for _, b in points]
            ax.plot(xs, ys, marker="o", markersize=2.5, linewidth=1.2, label=node)
        ax.set_xlabel("key block height")
        ax.set_ylabel("bytes retained")
        ax.set_title("storage growth per node")
        ax.legend(fontsize=8)
        ax.grid(True, linewidth=0.3, alpha=0.6)
        path = out_dir / "storage_growth.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

    if report.latency:
        fig, ax = plt.subplots(figsize=(7, 4))
        channels = [str(lat.channel) for lat in report.latency]
        width = 0.25
        xs = range(len(channels))
        for offset, (label, attr) in enumerate(
            [("p50", "p50"), ("p90", "p90"), ("p99", "p99")]
        ):
            ax.bar(
                [x + (offset - 1) * width for x in xs],
                [getattr(lat, attr) for lat in report.latency],
                width=width,
                label=label,
            )
        ax.set_xticks(list(xs))
        ax.set_xticklabels([f"channel {c}" for c in channels])
        ax.set_ylabel("confirmation latency (s)")
        ax.set_title("confirmation latency percentiles")
        ax.legend(fontsize=8)
        ax.grid(True, axis="y", linewidth=0.3, alpha=0.6)
        path = out_dir / "latency_percentiles.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

    return written
