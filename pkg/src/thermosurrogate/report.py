"""Benchmark tables in the published layout: MSE x 1e-5, two decimals, mean±std."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import EmptyReport
from .models import ALL_KINDS, ModelKind

SCALE = 1e-5
AVERAGE = "Average"
BEST_CONFIG_COLUMNS = ["Dataset", "Target", "Model", "Learning Rate", "Weight Decay", "Dropout",
                       "Hidden Units", "Layers", "Att. Heads"]


def format_cell(mean: float, std: float, scale: float = SCALE) -> str:
    return f"{mean / scale:.2f}±{std / scale:.2f}"


def _label(kind: str) -> str:
    try:
        return ModelKind(kind).label
    except ValueError:
        return kind


@dataclass
class BenchmarkReport:
    protocol: str  # "specialised" | "generalised"
    quantity: str  # "temperature" | "heatflux"
    cells: dict[tuple[str, str], tuple[float, float]] = field(default_factory=dict)  # (run, kind) -> (mean, std)
    runs: list[str] = field(default_factory=list)
    kinds: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def add(self, run_id: str, kind: str, mean: float, std: float) -> None:
        if run_id not in self.runs:
            self.runs.append(run_id)
        if kind not in self.kinds:
            self.kinds.append(kind)
        self.cells[(run_id, kind)] = (float(mean), float(std))

    def ordered_kinds(self) -> list[str]:
        canon = [k.value for k in ALL_KINDS]
        return sorted(self.kinds, key=lambda k: (canon.index(k) if k in canon else len(canon), k))

    def averages(self) -> dict[str, tuple[float, float]]:
        """Per-architecture mean of means and mean of stds over runs that have the cell."""
        out = {}
        for k in self.kinds:
            vals = [self.cells[(r, k)] for r in self.runs if (r, k) in self.cells]
            if vals:
                out[k] = (float(np.mean([v[0] for v in vals])), float(np.mean([v[1] for v in vals])))
        return out

    def rows(self) -> list[tuple[str, dict[str, tuple[float, float]]]]:
        body = [(r, {k: self.cells[(r, k)] for k in self.kinds if (r, k) in self.cells}) for r in self.runs]
        return body + [(AVERAGE, self.averages())]


def mark_best(report: BenchmarkReport) -> dict[str, list[str]]:
    """Architectures with the minimal mean per row (all of them on exact ties)."""
    best = {}
    for run, row in report.rows():
        if not row:
            continue
        lo = min(m for m, _ in row.values())
        best[run] = [k for k in report.ordered_kinds() if k in row and row[k][0] == lo]
    return best


def _tie_notes(best: Mapping[str, list[str]]) -> list[str]:
    return [f"tie in {run}: {', '.join(_label(k) for k in ks)}" for run, ks in best.items() if len(ks) > 1]


def render_text(report: BenchmarkReport) -> str:
    if not report.cells:
        raise EmptyReport("report has no rows")
    kinds = report.ordered_kinds()
    best = mark_best(report)
    header = ["Dataset", *(_label(k) for k in kinds)]
    lines_ = []
    for run, row in report.rows():
        cells = []
        for k in kinds:
            if k not in row:
                cells.append("-")
                continue
            c = format_cell(*row[k])
            cells.append(f"*{c}" if k in best.get(run, ()) else f" {c}")
        lines_.append([run, *cells])
    widths = [max(len(r[i]) for r in [header, *lines_]) for i in range(len(header))]

    def fmt(r):
        return "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()

    out = [
        f"{report.protocol} / {report.quantity}: MSE±STD, all values x1e-5 (* = best in row)",
        fmt(header),
        "-" * len(fmt(header)),
    ]
    out += [fmt(r) for r in lines_[:-1]]
    out += ["-" * len(fmt(header)), fmt(lines_[-1])]
    for note in [*report.notes, *_tie_notes(best)]:
        out.append(f"note: {note}")
    return "\n".join(out) + "\n"


CSV_COLUMNS = ["protocol", "quantity", "dataset", "model", "mse_x1e-5", "std_x1e-5", "best"]


def render_csv(report: BenchmarkReport) -> str:
    if not report.cells:
        raise EmptyReport("report has no rows")
    best = mark_best(report)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for run, row in report.rows():
        for k in report.ordered_kinds():
            if k in row:
                m, s = row[k]
                w.writerow([report.protocol, report.quantity, run, _label(k), f"{m / SCALE:.2f}",
                            f"{s / SCALE:.2f}", int(k in best.get(run, ()))])
    return buf.getvalue()


def reports_from_metrics(rows: Iterable[Mapping[str, str]]) -> list[BenchmarkReport]:
    """Group metric CSV rows (see ``train.write_metrics``) by protocol and quantity."""
    reports: dict[tuple[str, str], BenchmarkReport] = {}
    for r in rows:
        key = (r["protocol"], r["quantity"])
        rep = reports.setdefault(key, BenchmarkReport(*key))
        rep.add(r["run_id"], r["kind"], float(r["mse_mean"]), float(r["mse_std"]))
        note = f"normalisation={r.get('normalization', '?')}, seeds={r.get('seeds', '?')}"
        if note not in rep.notes:
            rep.notes.append(note)
    for rep in reports.values():
        rep.runs.sort(key=_run_sort_key)
    return [reports[k] for k in sorted(reports)]


def _run_sort_key(run: str):
    digits = "".join(ch for ch in run if ch.isdigit())
    return (run.rstrip("0123456789"), int(digits) if digits else -1, run)


def write_reports(reports: Sequence[BenchmarkReport], out_dir: str | Path) -> tuple[Path, Path]:
    if not reports or not any(r.cells for r in reports):
        raise EmptyReport("no metrics to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    txt, csv_path = out_dir / "report.txt", out_dir / "report.csv"
    txt.write_text("\n".join(render_text(r) for r in reports), encoding="utf-8")
    parts = [render_csv(r) for r in reports]
    csv_path.write_text(parts[0] + "".join(p.split("\n", 1)[1] for p in parts[1:]), encoding="utf-8")
    return txt, csv_path


def write_best_configs(rows: Iterable[Mapping[str, object]], path: str | Path) -> None:
    """Best hyperparameters per (dataset, target, model), one row each."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=BEST_CONFIG_COLUMNS, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "-") for c in BEST_CONFIG_COLUMNS})


def _num(v):
    return repr(v) if isinstance(v, float) else v


def best_config_row(dataset: str, target: str, kind: str, cfg: Mapping[str, object]) -> dict:
    return {
        "Dataset": dataset,
        "Target": {"temperature": "Temperature", "heatflux": "Heat flux"}.get(target, target),
        "Model": _label(kind),
        "Learning Rate": _num(cfg.get("learning_rate", "-")),
        "Weight Decay": _num(cfg.get("weight_decay", "-")),
        "Dropout": _num(cfg.get("dropout", "-")),
        "Hidden Units": cfg.get("hidden", "-"),
        "Layers": cfg.get("layers", "-"),
        "Att. Heads": cfg.get("heads", "-") if kind == ModelKind.TRANSFORMER.value else "-",
    }


def read_best_configs(paths: Iterable[Path]) -> list[dict]:
    rows = []
    for p in paths:
        with Path(p).open(newline="", encoding="utf-8") as fh:
            rows.extend(csv.DictReader(fh))
    return rows
