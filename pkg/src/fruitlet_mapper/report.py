"""Report rendering: delimited summaries plus matplotlib figures.

Consumes the JSON reports written by the count/evaluate commands and emits
CSV tables next to PNG figures: a front view of the mapped branch, the
radius distribution, predicted-vs-truth counts, and (when several methods
are present) a counting-error comparison.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.patches import Circle

from .evaluation import CountReport, method_comparison

_TRACK_FIELDS = ["id", "x", "y", "z", "radius", "observations", "first_frame", "last_frame"]
_METRIC_FIELDS = ["report", "scan_id", "method", "truth_basis", "ground_truth", "predicted",
                  "tp", "fp", "fn", "precision", "recall", "f1",
                  "percentage_error", "absolute_percentage_error"]


def write_tracks_csv(report: dict, path: Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=_TRACK_FIELDS)
        writer.writeheader()
        for t in report["tracks"]:
            x, y, z = t["center"]
            writer.writerow({"id": t["id"], "x": x, "y": y, "z": z,
                             "radius": t["radius"], "observations": t["observations"],
                             "first_frame": t["first_frame"], "last_frame": t["last_frame"]})


def _evaluation_section(report: dict) -> dict | None:
    """Preferred per-scan evaluation block: visible-truth basis when present."""
    ev = report.get("evaluation")
    if not ev:
        return None
    section = dict(ev.get("visible") or ev["all"])
    section["truth_basis"] = "visible" if ev.get("visible") else "all"
    return section


def write_metrics_csv(named_reports: list[tuple[str, dict]], path: Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=_METRIC_FIELDS)
        writer.writeheader()
        for name, report in named_reports:
            section = _evaluation_section(report)
            if section is None:
                continue
            writer.writerow({
                "report": name,
                "scan_id": report.get("scan_id", ""),
                "method": report.get("method", ""),
                "truth_basis": section["truth_basis"],
                **{k: section.get(k) for k in _METRIC_FIELDS[4:]},
            })


def render_map_figure(report: dict, path: Path) -> None:
    """Front view of the mapped branch: one circle per track in the x-z plane."""
    fig, ax = plt.subplots(figsize=(9, 3.2))
    tracks = report["tracks"]
    observations = [t["observations"] for t in tracks] or [1]
    cmap = plt.get_cmap("viridis")
    top = max(observations)
    for t in tracks:
        x, _, z = t["center"]
        color = cmap(t["observations"] / top)
        ax.add_patch(Circle((x, z), t["radius"], fill=False, color=color, lw=1.2))
        ax.annotate(str(t["id"]), (x, z), ha="center", va="center", fontsize=6)
    ax.autoscale_view()
    ax.set_aspect("equal")
    ax.set_xlabel("x along branch (mm)")
    ax.set_ylabel("z (mm)")
    ax.set_title(f"{report.get('scan_id', 'scan')}: {len(tracks)} fruitlets "
                 f"({report.get('method', '?')})")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_radius_figure(report: dict, path: Path) -> None:
    radii = [t["radius"] for t in report["tracks"]]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    if radii:
        ax.hist(radii, bins=12, color="tab:green", edgecolor="black")
    ax.set_xlabel("fruitlet radius (mm)")
    ax.set_ylabel("tracks")
    ax.set_title("Size distribution")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_counts_figure(named_reports: list[tuple[str, dict]], path: Path) -> None:
    """Predicted vs true counts; the identity line is zero counting error."""
    fig, ax = plt.subplots(figsize=(4.5, 4.2))
    markers = {"least_squares": "o", "ransac": "s"}
    seen = set()
    hi = 1
    for _, report in named_reports:
        section = _evaluation_section(report)
        if section is None:
            continue
        method = report.get("method", "?")
        label = method if method not in seen else None
        seen.add(method)
        gt, pred = section["ground_truth"], section["predicted"]
        hi = max(hi, gt, pred)
        ax.scatter(gt, pred, marker=markers.get(method, "x"), label=label, alpha=0.75)
    ax.plot([0, hi * 1.05], [0, hi * 1.05], "k--", lw=1, label="zero error")
    ax.set_xlabel("true count")
    ax.set_ylabel("predicted count")
    ax.set_title("Counting accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _comparison_summaries(named_reports: list[tuple[str, dict]]):
    by_method: dict[str, list[CountReport]] = {}
    for _, report in named_reports:
        section = _evaluation_section(report)
        if section is None:
            continue
        by_method.setdefault(report.get("method", "?"), []).append(
            CountReport.from_matching(section["tp"], section["fp"], section["fn"]))
    return method_comparison(by_method) if by_method else {}


def write_comparison_csv(named_reports: list[tuple[str, dict]], path: Path) -> None:
    summaries = _comparison_summaries(named_reports)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "scans", "percentage_error", "absolute_percentage_error",
                         "mean_precision", "mean_recall", "mean_f1"])
        for method in sorted(summaries):
            s = summaries[method]
            writer.writerow([method, s.scans, s.mean_percentage_error,
                             s.mean_absolute_percentage_error,
                             s.mean_precision, s.mean_recall, s.mean_f1])


def render_method_comparison(named_reports: list[tuple[str, dict]], path: Path) -> None:
    summaries = _comparison_summaries(named_reports)
    methods = sorted(summaries)
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    xs = range(len(methods))
    signed = [summaries[m].mean_percentage_error for m in methods]
    absolute = [summaries[m].mean_absolute_percentage_error for m in methods]
    width = 0.38
    ax.bar([x - width / 2 for x in xs], signed, width, label="signed % error")
    ax.bar([x + width / 2 for x in xs], absolute, width, label="absolute % error")
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xticks(list(xs), methods)
    ax.set_ylabel("counting error (%)")
    ax.set_title("Sphere-fitting method comparison")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def generate(named_reports: list[tuple[str, dict]], out_dir) -> list[Path]:
    """Write every applicable CSV and figure for the given reports.

    Returns the list of files written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    for name, report in named_reports:
        if "tracks" not in report:
            continue
        stem = out / name
        write_tracks_csv(report, stem.with_suffix(".tracks.csv"))
        render_map_figure(report, stem.with_suffix(".map.png"))
        render_radius_figure(report, stem.with_suffix(".radii.png"))
        written += [stem.with_suffix(".tracks.csv"), stem.with_suffix(".map.png"),
                    stem.with_suffix(".radii.png")]

    evaluated = [(n, r) for n, r in named_reports if r.get("evaluation")]
    if evaluated:
        write_metrics_csv(evaluated, out / "metrics.csv")
        render_counts_figure(evaluated, out / "counts.png")
        written += [out / "metrics.csv", out / "counts.png"]
        methods = {r.get("method") for _, r in evaluated}
        if len(methods) > 1:
            write_comparison_csv(evaluated, out / "method_comparison.csv")
            render_method_comparison(evaluated, out / "method_comparison.png")
            written += [out / "method_comparison.csv", out / "method_comparison.png"]
    return written
