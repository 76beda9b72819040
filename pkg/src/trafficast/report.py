"""Table-shaped result emission: JSON, CSV and SVG charts."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

COLUMNS = ("horizon", "group", "algorithm", "train_mre", "test_mre", "gap", "mare", "mire")


def _row_dict(row) -> dict:
    d = asdict(row) if is_dataclass(row) else dict(row)
    missing = [c for c in COLUMNS if c not in d]
    if missing:
        raise ValueError(f"report row lacks {missing}")
    out = {}
    for c in COLUMNS:
        v = d[c]
        out[c] = v if c == "algorithm" else (int(v) if c in ("horizon", "group") else float(v))
    return out


def _num(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, int):
        return str(v)
    return "nan" if math.isnan(v) else repr(float(v))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return None if math.isnan(f) else f
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def report_table(rows) -> list[dict]:
    table = [_row_dict(r) for r in rows]
    if not table:
        raise ValueError("empty report")
    return table


def write_json(path, table: list[dict], extra: dict | None = None) -> Path:
    payload = {"columns": list(COLUMNS), "rows": table}
    if extra:
        payload.update(extra)
    path = Path(path)
    path.write_text(dumps(payload), encoding="utf-8")
    return path


def write_csv(path, table: list[dict]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in table:
        w.writerow([_num(row[c]) for c in COLUMNS])
    path = Path(path)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({c: (r[c] if c == "algorithm" else
                        int(r[c]) if c in ("horizon", "group") else float(r[c])) for c in COLUMNS})
    return out


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "trafficast"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _save_svg(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    return path


def plot_gaps(table: list[dict], path, horizon: int | None = None) -> Path:
    """Grouped bars of train MRE, test MRE and gap per group and algorithm."""
    plt = _pyplot()
    horizon = horizon if horizon is not None else min(r["horizon"] for r in table)
    rows = [r for r in table if r["horizon"] == horizon]
    labels = [f"G{r['group'] + 1} {r['algorithm']}" for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(rows) + 2), 3.6))
    for k, (key, name) in enumerate((("train_mre", "train"), ("test_mre", "test"), ("gap", "gap"))):
        ax.bar(x + (k - 1) * 0.27, [100 * r[key] for r in rows], 0.27, label=name)
    ax.set_xticks(x, labels, rotation=30, ha="right")
    ax.set_ylabel("MRE (%)")
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.set_title(f"horizon {horizon}")
    ax.legend(frameon=False)
    fig.tight_layout()
    out = _save_svg(fig, path)
    plt.close(fig)
    return out


def plot_predictions(times, true, pred, path, title: str = "") -> Path:
    """True vs predicted speed over a test stretch."""
    plt = _pyplot()
    t = (np.asarray(times) - np.asarray(times)[0]) / 3600.0
    fig, ax = plt.subplots(figsize=(7.0, 3.0))
    ax.plot(t, true, label="true", linewidth=1.0)
    ax.plot(t, pred, label="predicted", linewidth=1.0)
    ax.set_xlabel("hours from start")
    ax.set_ylabel("speed (km/h)")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    out = _save_svg(fig, path)
    plt.close(fig)
    return out


def emit_report(rows, out_dir, extra: dict | None = None, predictions: dict | None = None,
                ) -> dict[str, Path]:
    """Write report.json, report.csv and gaps.svg; ``predictions`` adds one line plot.

    ``predictions`` holds ``times``, ``true``, ``pred`` and optionally ``title``.
    """
    table = report_table(rows)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": write_json(out / "report.json", table, extra),
             "csv": write_csv(out / "report.csv", table),
             "gaps_svg": plot_gaps(table, out / "gaps.svg")}
    if predictions:
        paths["predictions_svg"] = plot_predictions(
            predictions["times"], predictions["true"], predictions["pred"],
            out / "predictions.svg", predictions.get("title", ""))
    return paths
