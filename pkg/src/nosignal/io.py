"""Text file formats (UTF-8, LF line endings).

Time tags::

    # nosignal-ttag v1, duration_ns=<int>, side=<A|B>, alice_deg=<real>, bob_deg=<real>
    <outcome>,<time_ns>

Optional ``alice_label=`` / ``bob_label=`` fields may follow in the header.
Windowed samples list only the non-zero windows (``<index>,<value>``);
paired samples list ``<a>,<b>``; heralds ``<time_ns>,<genuine>,<accepted>``.
Writers accept extra ``key=value`` provenance fields (config digest, seed)
for the header; readers ignore fields they do not know.
Singles tables are CSV with header ``alice_setting,bob_setting,singles_A,singles_B``.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .core import (CountTable, PairedSample, Setting, SettingPair, TimeTagSeries,
                   WindowedSample)


class FileFormatError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path, self.lineno = path, lineno


def _header(kind: str, **fields) -> str:
    body = ", ".join(f"{k}={v}" for k, v in fields.items() if v not in (None, ""))
    return f"# nosignal-{kind} v1, {body}\n"


def _parse_header(path, line: str, kind: str) -> dict[str, str]:
    prefix = f"# nosignal-{kind} v1"
    if not line.startswith(prefix):
        raise FileFormatError(path, 1, f"expected header starting with {prefix!r}")
    fields = {}
    for part in line[len(prefix):].strip().strip(",").split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise FileFormatError(path, 1, f"malformed header field {part!r}")
        k, v = part.split("=", 1)
        fields[k.strip()] = v.strip()
    return fields


def _need(path, fields, key, conv):
    try:
        return conv(fields[key])
    except KeyError:
        raise FileFormatError(path, 1, f"header lacks {key}") from None
    except ValueError:
        raise FileFormatError(path, 1, f"bad value for {key}: {fields[key]!r}") from None


def _pair_fields(sp: SettingPair) -> dict:
    return {"alice_deg": repr(sp.alice.angle), "bob_deg": repr(sp.bob.angle),
            "alice_label": sp.alice.label, "bob_label": sp.bob.label}


def _pair_from(path, fields) -> SettingPair:
    return SettingPair(Setting(_need(path, fields, "alice_deg", float), fields.get("alice_label", "")),
                       Setting(_need(path, fields, "bob_deg", float), fields.get("bob_label", "")))


def _rows(path, lines, ncols: int, first_lineno: int = 2) -> np.ndarray:
    out = np.empty((len(lines), ncols), dtype=np.int64)
    for i, line in enumerate(lines):
        parts = line.strip().split(",")
        if len(parts) != ncols:
            raise FileFormatError(path, i + first_lineno,
                                  f"expected {ncols} comma-separated integers")
        try:
            out[i] = [int(p) for p in parts]
        except ValueError:
            raise FileFormatError(path, i + first_lineno,
                                  f"non-integer field in {line.strip()!r}") from None
    return out


def _read_lines(path) -> tuple[str, list[str]]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FileFormatError(path, 1, "empty file")
    return lines[0], lines[1:]


def _write(path, header: str, rows: np.ndarray):
    body = "\n".join(",".join(map(str, r)) for r in rows.tolist())
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        if body:
            fh.write(body + "\n")


def write_ttag(path, series: TimeTagSeries, provenance: dict | None = None):
    header = _header("ttag", duration_ns=series.duration_ns, side=series.side,
                     **_pair_fields(series.setting_pair), **(provenance or {}))
    _write(path, header, np.column_stack([series.outcomes.astype(np.int64), series.times]))


def read_ttag(path) -> TimeTagSeries:
    head, lines = _read_lines(path)
    fields = _parse_header(path, head, "ttag")
    rows = _rows(path, lines, 2)
    bad = np.flatnonzero((rows[:, 0] != 1) & (rows[:, 0] != -1))
    if bad.size:
        raise FileFormatError(path, int(bad[0]) + 2, "outcome must be -1 or 1")
    try:
        return TimeTagSeries(_pair_from(path, fields), _need(path, fields, "side", str),
                             rows[:, 1], rows[:, 0], _need(path, fields, "duration_ns", int))
    except ValueError as exc:
        if isinstance(exc, FileFormatError):
            raise
        raise FileFormatError(path, 0, str(exc)) from None


def write_windowed(path, sample: WindowedSample, provenance: dict | None = None):
    header = _header("window", side=sample.side, W_ns=sample.width_W_ns,
                     delta_ns=sample.shift_delta_ns, length=sample.length,
                     skipped=sample.skipped_multicount, n_windows=sample.n_windows,
                     **_pair_fields(sample.setting_pair), **(provenance or {}))
    _write(path, header, np.column_stack([sample.nz_index, sample.nz_value.astype(np.int64)]))


def read_windowed(path) -> WindowedSample:
    head, lines = _read_lines(path)
    f = _parse_header(path, head, "window")
    rows = _rows(path, lines, 2)
    try:
        return WindowedSample(_pair_from(path, f), _need(path, f, "side", str),
                              _need(path, f, "W_ns", int), _need(path, f, "delta_ns", int),
                              _need(path, f, "length", int), rows[:, 0], rows[:, 1],
                              skipped_multicount=_need(path, f, "skipped", int),
                              n_windows=_need(path, f, "n_windows", int))
    except ValueError as exc:
        if isinstance(exc, FileFormatError):
            raise
        raise FileFormatError(path, 0, str(exc)) from None


def write_paired(path, sample: PairedSample, provenance: dict | None = None):
    header = _header("paired", W_ns=sample.width_W_ns, delta_ns=sample.shift_delta_ns,
                     **_pair_fields(sample.setting_pair), **(provenance or {}))
    _write(path, header, np.column_stack([sample.a, sample.b]).astype(np.int64))


def read_paired(path) -> PairedSample:
    head, lines = _read_lines(path)
    f = _parse_header(path, head, "paired")
    rows = _rows(path, lines, 2)
    try:
        return PairedSample(_pair_from(path, f), _need(path, f, "W_ns", int),
                            _need(path, f, "delta_ns", int), rows[:, 0], rows[:, 1])
    except ValueError as exc:
        if isinstance(exc, FileFormatError):
            raise
        raise FileFormatError(path, 0, str(exc)) from None


def write_heralds(path, heralds, provenance: dict | None = None):
    rows = np.column_stack([heralds.time_ns, heralds.genuine, heralds.accepted]).astype(np.int64)
    _write(path, _header("heralds", columns="time_ns;genuine;accepted", **(provenance or {})),
           rows)


def read_heralds(path):
    from .swap import Heralds

    head, lines = _read_lines(path)
    if head.startswith("#"):
        _parse_header(path, head, "heralds")
        rows = _rows(path, lines, 3)
    else:  # bare data lines are accepted too
        rows = _rows(path, [head] + lines, 3, first_lineno=1)
    return Heralds(rows[:, 0], rows[:, 1].astype(bool), rows[:, 2].astype(bool))


def parse_setting(text: str) -> Setting:
    """``22.5`` -> angle only; ``a1`` -> label only (angle 0); ``a1@22.5`` -> both."""
    text = text.strip()
    if "@" in text:
        label, deg = text.rsplit("@", 1)
        return Setting(float(deg), label.strip())
    try:
        return Setting(float(text))
    except ValueError:
        return Setting(0.0, text)


COUNTS_HEADER = ["alice_setting", "bob_setting", "singles_A", "singles_B"]


def read_counts_csv(path) -> CountTable:
    rows = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != COUNTS_HEADER:
            raise FileFormatError(path, 1, f"header must be {','.join(COUNTS_HEADER)}")
        for lineno, rec in enumerate(reader, 2):
            if not rec or not "".join(rec).strip():
                continue
            if len(rec) != 4:
                raise FileFormatError(path, lineno, "expected 4 columns")
            sp = SettingPair(parse_setting(rec[0]), parse_setting(rec[1]))
            try:
                na, nb = (int(v.replace(" ", "").replace("_", "")) for v in rec[2:])
            except ValueError:
                raise FileFormatError(path, lineno, "singles counts must be integers") from None
            if na < 0 or nb < 0:
                raise FileFormatError(path, lineno, "counts must be non-negative")
            rows[(sp, "A")] = na
            rows[(sp, "B")] = nb
    return CountTable(rows)
