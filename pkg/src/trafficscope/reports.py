"""Report rendering: CSV summaries plus matplotlib figures from pipeline artifacts.

Reads the JSON artifacts of a finished run and writes, into ``<data>/report``:
``events_summary.csv`` and ``dependencies.csv``, one delay-curve figure per
event with a curve, a network overview figure, and a dependency map figure.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .graph import RoadGraph
from .ioutil import read_json

TEAL = "#1f8a8a"
ORANGE = "#e07b39"


def _plot_graph_background(ax, graph: RoadGraph) -> None:
    for unit in graph.units.values():
        xs = [p.lon for p in unit.geometry]
        ys = [p.lat for p in unit.geometry]
        ax.plot(xs, ys, color="#cccccc", linewidth=0.6, zorder=1)
    ax.set_xlabel("longitude")
    ax.set_ylabel("latitude")
    ax.set_aspect(1.6)  # rough lat/lon aspect at mid latitudes


def render_curve_figure(event_record: dict, path: Path) -> None:
    curve = event_record.get("curve") or []
    offsets = [o for o, _ in curve]
    values = [v for _, v in curve]
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(offsets, values, marker="o", markersize=2.5, color=TEAL)
    ax.axvline(0, color="#888888", linewidth=0.8, linestyle="--")
    ax.set_xlabel("minutes relative to event start")
    ax.set_ylabel("delay (s/km)")
    ax.set_title(event_record["event_id"])
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_network_figure(graph: RoadGraph, catalog_doc: dict, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 7))
    _plot_graph_background(ax, graph)
    for venue in catalog_doc.get("venues", []):
        ax.plot(venue["lon"], venue["lat"], "r^", markersize=8, zorder=3)
        ax.annotate(venue["id"], (venue["lon"], venue["lat"]), fontsize=8,
                    xytext=(3, 3), textcoords="offset points")
    ax.set_title("road network and venues")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_dependency_figure(graph: RoadGraph, deps_doc: dict, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 7))
    _plot_graph_background(ax, graph)
    top_pair = deps_doc["pairs"][0] if deps_doc.get("pairs") else None
    highlighted = {top_pair["a"], top_pair["b"]} if top_pair else set()
    for subgraph in deps_doc.get("subgraphs", []):
        color = ORANGE if subgraph["id"] in highlighted else TEAL
        for uid in subgraph["units"]:
            unit = graph.units.get(uid)
            if unit is None:
                continue
            xs = [p.lon for p in unit.geometry]
            ys = [p.lat for p in unit.geometry]
            ax.plot(xs, ys, color=color, linewidth=1.8, zorder=2)
    title = "stable subgraphs"
    if top_pair:
        title += f" (top pair {top_pair['a']}-{top_pair['b']} in orange, score {top_pair['score']:.3f})"
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_reports(data_dir: Path, report_dir: Path | None = None) -> list[Path]:
    """Render everything available in `data_dir`; returns the written paths."""
    data_dir = Path(data_dir)
    report_dir = Path(report_dir) if report_dir else data_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    graph = RoadGraph.load(data_dir / "graph.json")
    impacts_doc = read_json(data_dir / "impacts.json")
    catalog_doc = read_json(data_dir / "events.json")

    summary_path = report_dir / "events_summary.csv"
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["event_id", "venue_id", "n_units", "radius_m", "peak_offset_min",
                         "peak_delay_s_per_km", "skip_reason"])
        for record in impacts_doc["events"]:
            curve = record.get("curve") or []
            peak = max(curve, key=lambda s: s[1]) if curve else None
            writer.writerow(
                [
                    record["event_id"],
                    record["venue_id"],
                    len(record["units"]),
                    f"{record['radius_m']:.1f}",
                    peak[0] if peak else "",
                    f"{peak[1]:.2f}" if peak else "",
                    record.get("skip_reason") or "",
                ]
            )
    written.append(summary_path)

    for record in impacts_doc["events"]:
        if record.get("curve"):
            figure_path = report_dir / f"impact_curve_{record['event_id']}.png"
            render_curve_figure(record, figure_path)
            written.append(figure_path)

    network_path = report_dir / "network_overview.png"
    render_network_figure(graph, catalog_doc, network_path)
    written.append(network_path)

    deps_file = data_dir / "dependencies.json"
    if deps_file.exists():
        deps_doc = read_json(deps_file)
        deps_csv = report_dir / "dependencies.csv"
        with open(deps_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["subgraph_a", "subgraph_b", "mi_bits", "distance_m", "score"])
            for pair in deps_doc["pairs"]:
                writer.writerow(
                    [pair["a"], pair["b"], f"{pair['mi_bits']:.6f}", f"{pair['distance_m']:.1f}",
                     f"{pair['score']:.6f}"]
                )
        written.append(deps_csv)
        deps_png = report_dir / "dependency_map.png"
        render_dependency_figure(graph, deps_doc, deps_png)
        written.append(deps_png)

    return written
