"""Overall accuracy, selection accuracy, Bandwidth-Improvement Score, reports."""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, FormatError, UndefinedMetricError

REPORT_COLUMNS = ("method", "overall_acc", "kbpf", "BIS", "selection_acc", "episodes")
LOWER_NAMES = {"single degraded", "single_degraded", "lower bound"}
UPPER_NAMES = {"single normal", "single_normal", "upper bound"}


@dataclass
class MetricsRecord:
    method: str
    overall_acc: float
    kbpf: float | None = None
    bis: float | None = None
    selection_acc: float | None = None
    episodes: int = 0

    def __post_init__(self):
        for name in ("overall_acc", "selection_acc"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.kbpf is not None and self.kbpf < 0:
            raise ValueError(f"kbpf={self.kbpf} is negative")


@dataclass(frozen=True)
class BisInputs:
    accuracy: float
    lower: float
    upper: float
    mbytes: float

    @classmethod
    def from_kbpf(cls, accuracy, lower, upper, kbpf):
        return cls(accuracy, lower, upper, kbpf / 1024)


def overall_accuracy(pred, gt):
    """Fraction of matching cells per episode, averaged over episodes (leading axis if 3-D)."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    hits = pred == gt
    if hits.ndim <= 2:
        return float(hits.mean())
    return float(hits.reshape(hits.shape[0], -1).mean(axis=1).mean())


def selection_accuracy(selected, best):
    """Fraction of episodes whose selected set contains the best agent."""
    if len(selected) != len(best):
        raise DimensionError(f"{len(selected)} selections for {len(best)} episodes")
    if not best:
        raise UndefinedMetricError("no episodes")
    hits = [int(b) in {int(s) for s in np.atleast_1d(sel)} for sel, b in zip(selected, best)]
    return float(np.mean(hits))


def compute_bis(inputs):
    """Relative accuracy gain over the degraded bound, per Mbyte/frame."""
    if inputs.mbytes <= 0:
        raise UndefinedMetricError(f"bandwidth must be positive, got {inputs.mbytes} Mbytes/frame")
    if inputs.upper <= inputs.lower:
        raise UndefinedMetricError(f"upper bound {inputs.upper} must exceed lower bound {inputs.lower}")
    return (inputs.accuracy - inputs.lower) / ((inputs.upper - inputs.lower) * inputs.mbytes)


def attach_bis(records):
    """Fill ``bis`` on every communicating record using the single-model bounds in ``records``."""
    by_name = {r.method.lower(): r for r in records}
    lower = next((by_name[n] for n in LOWER_NAMES if n in by_name), None)
    upper = next((by_name[n] for n in UPPER_NAMES if n in by_name), None)
    if lower is None or upper is None:
        return records
    for r in records:
        if r.kbpf:
            try:
                r.bis = compute_bis(BisInputs.from_kbpf(r.overall_acc, lower.overall_acc, upper.overall_acc, r.kbpf))
            except UndefinedMetricError:
                r.bis = None
    return records


def _fmt(v, spec):
    return "" if v is None else format(v, spec)


def report_rows(records):
    rows = []
    for r in records:
        rows.append({
            "method": r.method,
            "overall_acc": _fmt(None if r.overall_acc is None else 100 * r.overall_acc, ".4f"),
            "kbpf": _fmt(r.kbpf, ".6f"),
            "BIS": _fmt(r.bis, ".6f"),
            "selection_acc": _fmt(None if r.selection_acc is None else 100 * r.selection_acc, ".4f"),
            "episodes": str(r.episodes),
        })
    return rows


def _json_row(row):
    out = {"method": row["method"], "episodes": int(row["episodes"])}
    for k in ("overall_acc", "kbpf", "BIS", "selection_acc"):
        out[k] = float(row[k]) if row[k] else None
    return {k: out[k] for k in REPORT_COLUMNS}


def emit_report(records, path, fmt="csv"):
    """Write records as CSV or JSON; accuracies are printed as percentages."""
    if not records:
        raise ConfigError("no metrics records to report")
    rows = report_rows(records)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps([_json_row(row) for row in rows], indent=2) + "\n"
    else:
        raise ConfigError(f"unknown report format {fmt!r}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)
    return text


def read_report(path):
    with open(path) as fh:
        if path.endswith(".json"):
            return json.load(fh)
        return list(csv.DictReader(fh))


# -- BIS table --------------------------------------------------------------

@dataclass
class BisRow:
    method: str
    setting: str
    accuracy: float
    kbpf: float | None
    bis: float | None = None
    error: str | None = None


def _parse_float(text):
    text = (text or "").strip()
    if text in ("", "-"):
        return None
    return float(text)


def bis_table(text):
    """Compute BIS for every row of a ``method,setting,accuracy,kbpf`` CSV.

    Each setting needs one Single Normal and one Single Degraded row. Rows
    whose BIS is undefined carry the reason in ``error`` instead of failing
    the whole table.
    """
    reader = csv.DictReader(io.StringIO(text))
    missing = {"method", "setting", "accuracy", "kbpf"} - set(reader.fieldnames or ())
    if missing:
        raise FormatError(f"BIS input is missing columns {sorted(missing)}")
    rows = []
    for line in reader:
        try:
            rows.append(BisRow(line["method"].strip(), line["setting"].strip(), float(line["accuracy"]),
                               _parse_float(line["kbpf"])))
        except (TypeError, ValueError) as exc:
            raise FormatError(f"bad BIS input row {line}: {exc}") from exc
    bounds = {}
    for r in rows:
        key = r.method.lower()
        if key in LOWER_NAMES:
            bounds.setdefault(r.setting, {})["lower"] = r.accuracy
        elif key in UPPER_NAMES:
            bounds.setdefault(r.setting, {})["upper"] = r.accuracy
    for r in rows:
        b = bounds.get(r.setting, {})
        for side, label in (("lower", "Single Degraded"), ("upper", "Single Normal")):
            if side not in b:
                raise FormatError(f"setting {r.setting!r} has no {label} row")
        key = r.method.lower()
        if key in LOWER_NAMES or key in UPPER_NAMES:
            continue
        try:
            if r.kbpf is None:
                raise UndefinedMetricError("no bandwidth given")
            r.bis = compute_bis(BisInputs.from_kbpf(r.accuracy, b["lower"], b["upper"], r.kbpf))
        except UndefinedMetricError as exc:
            r.error = str(exc)
    return rows


def bis_rows_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "setting", "accuracy", "kbpf", "BIS"])
    for r in rows:
        bis = f"undefined: {r.error}" if r.error else _fmt(r.bis, ".4f")
        w.writerow([r.method, r.setting, f"{r.accuracy:g}", "" if r.kbpf is None else f"{r.kbpf:g}", bis])
    return buf.getvalue()


def format_bis_layout(rows):
    """Methods down the side, one (accuracy, BIS) column pair per setting."""
    settings = list(dict.fromkeys(r.setting for r in rows))
    methods = list(dict.fromkeys(r.method for r in rows))
    cell = {(r.method, r.setting): r for r in rows}
    head = f"{'method':<18} {'BW (kbpf)':>10} " + " ".join(f"{s[:20]:>22}" for s in settings)
    sub = f"{'':<18} {'':>10} " + " ".join(f"{'Acc':>10} {'BIS':>11}" for _ in settings)
    lines = [head, sub]
    for m in methods:
        bw = next((cell[m, s].kbpf for s in settings if (m, s) in cell and cell[m, s].kbpf is not None), None)
        parts = [f"{m:<18} {('-' if bw is None else f'{bw:g}'):>10}"]
        for s in settings:
            r = cell.get((m, s))
            if r is None:
                parts.append(f"{'':>10} {'':>11}")
                continue
            bis = "err" if r.error else ("-" if r.bis is None else f"{r.bis:.3f}")
            parts.append(f"{r.accuracy:>10g} {bis:>11}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"
