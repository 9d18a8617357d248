"""JSON reports and delimiter-separated plot tables.

Every report is a JSON object with ``schema`` and ``kind`` keys. Output is
deterministic: fixed key order, no timestamps, numpy scalars converted.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .protocol import REPORT_SCHEMA


def _plain(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    return str(obj)


def _finite(obj):
    # JSON has no NaN/Infinity
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dumps(report: Mapping) -> str:
    plain = json.loads(json.dumps(report, default=_plain))
    return json.dumps(_finite(plain), indent=2, ensure_ascii=False) + "\n"


def write_report(path, report: Mapping):
    Path(path).write_text(dumps(report), encoding="utf-8", newline="\n")


def read_report(path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict) or data.get("schema") != REPORT_SCHEMA:
        raise ValueError(f"{path}: not a {REPORT_SCHEMA} report")
    return data


def merge_reports(reports: Sequence[Mapping], names: Sequence[str]) -> dict:
    """Bundle reports under their source names, sorted by name."""
    order = sorted(range(len(reports)), key=lambda i: names[i])
    return {"schema": REPORT_SCHEMA, "kind": "merged",
            "reports": [{"source": names[i], **reports[i]} for i in order]}


def _table(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (f"{v:.6g}" if isinstance(v, float) else v)
                    for v in r])
    return buf.getvalue()


def _flatten(report: Mapping, source: str = ""):
    if report.get("kind") == "merged":
        for r in report["reports"]:
            yield from _flatten(r, r.get("source", source))
    else:
        yield source, report


CORRELATION_HEADER = ("source", "W_ns", "alice_deg", "bob_deg", "angle_diff_deg", "pairs",
                      "E_nearest", "std_err", "E_binned", "E_singlet")


def correlation_curve(report: Mapping) -> str:
    """Post-selected correlation against the angle difference, with the
    singlet value -cos 2(a - b) alongside."""
    rows = []
    for source, rep in _flatten(report):
        if rep.get("kind") != "protocol":
            continue
        for step in rep["steps"]:
            for c in step["summary"].get("correlations", []):
                diff = c["alice_deg"] - c["bob_deg"]
                rows.append((source, c["W_ns"], c["alice_deg"], c["bob_deg"], diff, c["pairs"],
                             c["E_nearest"], c["std_err"], c["E_binned"],
                             -math.cos(math.radians(2 * diff))))
    rows.sort(key=lambda r: (r[0], r[1], r[4], r[2]))
    return _table(CORRELATION_HEADER, rows)


SINGLES_HEADER = ("source", "W_ns", "side", "own_deg", "distant_deg", "windows", "minus", "zero",
                  "plus", "click_fraction")


def singles_curve(report: Mapping) -> str:
    """Pre-selection singles of each station against the distant setting."""
    rows = []
    for source, rep in _flatten(report):
        if rep.get("kind") == "protocol":
            for step in rep["steps"]:
                for s in step["summary"].get("singles", []):
                    own, distant = ((s["alice_deg"], s["bob_deg"]) if s["side"] == "A"
                                    else (s["bob_deg"], s["alice_deg"]))
                    clicks = s["minus"] + s["plus"]
                    rows.append((source, s["W_ns"], s["side"], own, distant, s["windows"],
                                 s["minus"], s["zero"], s["plus"],
                                 clicks / s["windows"] if s["windows"] else None))
    return _table(SINGLES_HEADER, rows)


COUNTS_HEADER = ("source", "side", "own", "distant", "singles")


def counts_table(report: Mapping) -> str:
    """Ingested singles counts, one row per station and setting pair."""
    rows = []
    for source, rep in _flatten(report):
        if rep.get("kind") == "counts":
            rows += [(source, r["side"], r["own"], r["distant"], r["singles"])
                     for r in rep["rows"]]
    return _table(COUNTS_HEADER, rows)
