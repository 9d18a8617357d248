"""Coincidence identification and post-selection.

Two procedures are provided. ``pair_nearest`` declares clicks coincident
when |t_a - (t_b + delta)| <= W/2, matching greedily in time order.
``bin_windows`` cuts the run into fixed synchronized windows of width W
and records one outcome (or 0) per window and side; windows where either
side has more than one click are dropped from both samples so that they
stay index aligned. The final partial window is discarded.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import (ALICE, BOB, PairedSample, SettingPair, TimeTagSeries, WindowedSample,
                   check_side)

NEAREST = "nearest"
FIXED = "fixed"


@dataclass(frozen=True)
class CoincidenceConfig:
    method: str = NEAREST
    width_W_ns: int = 10
    shift_delta_ns: int = 0
    multicount_policy: str = "skip"

    def __post_init__(self):
        if self.method not in (NEAREST, FIXED):
            raise ValueError(f"method must be {NEAREST!r} or {FIXED!r}")
        if int(self.width_W_ns) != self.width_W_ns or self.width_W_ns < 1:
            raise ValueError("width_W_ns must be a positive integer")
        if self.multicount_policy != "skip":
            raise ValueError("only the 'skip' multi-count policy is supported")


def _check_run(series_A: TimeTagSeries, series_B: TimeTagSeries):
    if series_A.side != ALICE or series_B.side != BOB:
        raise ValueError("expected an Alice series and a Bob series")
    if series_A.setting_pair != series_B.setting_pair:
        raise ValueError("series belong to different setting pairs")


def pair_nearest(series_A: TimeTagSeries, series_B: TimeTagSeries,
                 config: CoincidenceConfig) -> PairedSample:
    """Greedy earliest-first matching of clicks within W/2 of each other.

    Bob's times are shifted by ``shift_delta_ns`` before comparison. Each
    click is used at most once; the leftovers are counted in
    ``unmatched_A`` / ``unmatched_B``.
    """
    _check_run(series_A, series_B)
    ta = series_A.times.tolist()
    tb = (series_B.times + config.shift_delta_ns).tolist()
    W = config.width_W_ns
    i = j = 0
    na, nb = len(ta), len(tb)
    ia, jb = [], []
    while i < na and j < nb:
        d = ta[i] - tb[j]
        if 2 * abs(d) <= W:
            ia.append(i)
            jb.append(j)
            i += 1
            j += 1
        elif d < 0:
            i += 1
        else:
            j += 1
    ia = np.asarray(ia, dtype=np.int64)
    jb = np.asarray(jb, dtype=np.int64)
    return PairedSample(series_A.setting_pair, W, config.shift_delta_ns,
                        series_A.outcomes[ia], series_B.outcomes[jb],
                        unmatched_A=na - ia.size, unmatched_B=nb - jb.size)


def _window_clicks(times: np.ndarray, outcomes: np.ndarray, width: int, n_windows: int):
    k = times // width
    valid = (times >= 0) & (k < n_windows)
    k, outcomes = k[valid], outcomes[valid]
    windows, first, count = np.unique(k, return_index=True, return_counts=True)
    return windows, count, outcomes[first]


def _retained(windows, count, value, multi, side, setting_pair, config, n_windows):
    single = count == 1
    w, v = windows[single], value[single]
    keep = ~np.isin(w, multi, assume_unique=True)
    w, v = w[keep], v[keep]
    idx = w - np.searchsorted(multi, w)
    return WindowedSample(setting_pair, side, config.width_W_ns, config.shift_delta_ns,
                          n_windows - multi.size, idx, v, skipped_multicount=int(multi.size),
                          n_windows=n_windows)


def bin_windows(series_A: TimeTagSeries, series_B: TimeTagSeries, config: CoincidenceConfig
                ) -> tuple[WindowedSample, WindowedSample]:
    """Fixed synchronized windows; returns aligned Alice and Bob samples."""
    _check_run(series_A, series_B)
    if series_A.duration_ns != series_B.duration_ns:
        raise ValueError("both series must share the run duration")
    W = config.width_W_ns
    n_windows = series_A.duration_ns // W
    wa, ca, va = _window_clicks(series_A.times, series_A.outcomes, W, n_windows)
    wb, cb, vb = _window_clicks(series_B.times + config.shift_delta_ns, series_B.outcomes,
                                W, n_windows)
    multi = np.union1d(wa[ca >= 2], wb[cb >= 2])
    sp = series_A.setting_pair
    sa = _retained(wa, ca, va, multi, ALICE, sp, config, n_windows)
    sb = _retained(wb, cb, vb, multi, BOB, sp, config, n_windows)
    occupied = np.union1d(sa.nz_index, sb.nz_index).size
    empty = sa.length - occupied
    object.__setattr__(sa, "empty_windows", empty)
    object.__setattr__(sb, "empty_windows", empty)
    return sa, sb


def bin_single(series: TimeTagSeries, width_W_ns: int, shift_delta_ns: int = 0
               ) -> WindowedSample:
    """Fixed windows for one station alone; multi-click windows are skipped."""
    config = CoincidenceConfig(FIXED, width_W_ns, shift_delta_ns)
    n_windows = series.duration_ns // width_W_ns
    shift = shift_delta_ns if series.side == BOB else 0
    w, c, v = _window_clicks(series.times + shift, series.outcomes, width_W_ns, n_windows)
    multi = w[c >= 2]
    return _retained(w, c, v, multi, series.side, series.setting_pair, config, n_windows)


def postselect(sample_A: WindowedSample, sample_B: WindowedSample) -> PairedSample:
    """Keep the windows where both stations recorded a non-zero outcome."""
    if sample_A.side != ALICE or sample_B.side != BOB:
        raise ValueError("expected an Alice sample and a Bob sample")
    if (sample_A.length, sample_A.width_W_ns, sample_A.shift_delta_ns, sample_A.setting_pair) != (
            sample_B.length, sample_B.width_W_ns, sample_B.shift_delta_ns,
            sample_B.setting_pair):
        raise ValueError("samples are not aligned")
    _, ia, ib = np.intersect1d(sample_A.nz_index, sample_B.nz_index, assume_unique=True,
                               return_indices=True)
    return PairedSample(sample_A.setting_pair, sample_A.width_W_ns, sample_A.shift_delta_ns,
                        sample_A.nz_value[ia], sample_B.nz_value[ib])


def correlation(paired: PairedSample) -> float:
    if len(paired) == 0:
        raise ValueError("empty paired sample")
    return float(np.mean(paired.a.astype(float) * paired.b))


@dataclass
class SweepEntry:
    setting_pair: SettingPair
    pairs: int
    L_xy: int
    E_nearest: float
    E_binned: float
    singles_A: int
    singles_B: int
    skipped_multicount: int


@dataclass
class SweepPoint:
    width_W_ns: int
    shift_delta_ns: int
    entries: dict[SettingPair, SweepEntry] = field(default_factory=dict)
    S_chsh: float | None = None


def _nan_corr(paired: PairedSample) -> float:
    return correlation(paired) if len(paired) else float("nan")


def sweep(runs: Mapping[SettingPair, tuple[TimeTagSeries, TimeTagSeries]],
          widths: Sequence[int], shifts: Sequence[int] = (0,),
          chsh_settings: tuple | None = None) -> dict[tuple[int, int], SweepPoint]:
    """Evaluate both pairing procedures on every (W, delta) grid point.

    ``chsh_settings`` is (x, x', y, y') as Settings; when given, each point
    carries S computed from the nearest-window correlations.
    """
    if not widths or not shifts:
        raise ValueError("widths and shifts must be non-empty")
    out = {}
    for W in widths:
        for delta in shifts:
            point = SweepPoint(int(W), int(delta))
            for sp, (sa, sb) in runs.items():
                near = pair_nearest(sa, sb, CoincidenceConfig(NEAREST, W, delta))
                wa, wb = bin_windows(sa, sb, CoincidenceConfig(FIXED, W, delta))
                post = postselect(wa, wb)
                point.entries[sp] = SweepEntry(
                    sp, len(near), len(post), _nan_corr(near), _nan_corr(post),
                    int(wa.nz_index.size), int(wb.nz_index.size), wa.skipped_multicount)
            if chsh_settings is not None:
                x, xp, y, yp = chsh_settings
                e = {sp: ent.E_nearest for sp, ent in point.entries.items()}
                point.S_chsh = (e[SettingPair(x, y)] + e[SettingPair(x, yp)]
                                + e[SettingPair(xp, y)] - e[SettingPair(xp, yp)])
            out[(int(W), int(delta))] = point
    return out


SWEEP_COLUMNS = ("W_ns", "delta_ns", "alice_deg", "bob_deg", "pairs", "L_xy",
                 "E_nearest", "E_binned", "singles_A", "singles_B", "skipped_multicount",
                 "S_chsh")


def sweep_table(points: Mapping[tuple[int, int], SweepPoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for (W, delta), point in sorted(points.items()):
        for sp, e in point.entries.items():
            writer.writerow([W, delta, f"{sp.alice.angle:g}", f"{sp.bob.angle:g}", e.pairs,
                             e.L_xy, f"{e.E_nearest:.6f}", f"{e.E_binned:.6f}", e.singles_A,
                             e.singles_B, e.skipped_multicount,
                             "" if point.S_chsh is None else f"{point.S_chsh:.6f}"])
    return buf.getvalue()
