"""Domain vocabulary shared by every module: settings, clicks, time-tag
series, windowed samples and post-selected pairs.

Times are integer nanoseconds. Raw clicks carry outcomes in {-1, +1};
windowed samples use {-1, 0, +1} where 0 marks an empty window.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

ALICE = "A"
BOB = "B"
SIDES = (ALICE, BOB)


def check_side(side: str) -> str:
    if side not in SIDES:
        raise ValueError(f"side must be 'A' or 'B', got {side!r}")
    return side


def other_side(side: str) -> str:
    return BOB if check_side(side) == ALICE else ALICE


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Setting:
    """A polarizer setting; angles are pi-periodic so they live in [0, 180)."""

    angle: float
    label: str = ""

    def __post_init__(self):
        angle = float(self.angle) % 180.0
        if angle == 180.0:  # float wrap of tiny negative values
            angle = 0.0
        object.__setattr__(self, "angle", angle)

    def __str__(self):
        return self.label or f"{self.angle:g}deg"


@dataclass(frozen=True)
class SettingPair:
    alice: Setting
    bob: Setting

    @classmethod
    def from_degrees(cls, alice_deg: float, bob_deg: float) -> "SettingPair":
        return cls(Setting(alice_deg), Setting(bob_deg))

    def own(self, side: str) -> Setting:
        return self.alice if check_side(side) == ALICE else self.bob

    def distant(self, side: str) -> Setting:
        return self.bob if check_side(side) == ALICE else self.alice

    def __str__(self):
        return f"({self.alice},{self.bob})"


@dataclass(frozen=True)
class Event:
    side: str
    outcome: int
    time_ns: int

    def __post_init__(self):
        check_side(self.side)
        if self.outcome not in (-1, 1):
            raise ValueError(f"raw click outcome must be -1 or +1, got {self.outcome}")
        if int(self.time_ns) != self.time_ns or self.time_ns < 0:
            raise ValueError(f"time_ns must be a non-negative integer, got {self.time_ns}")


class DuplicateTimestampError(ValueError):
    """Two clicks on the same side share a timestamp."""


@dataclass(frozen=True, eq=False)
class TimeTagSeries:
    """Time-ordered clicks of one station for one setting pair.

    Stored column-wise (``times``, ``outcomes``) so that long runs stay cheap.
    """

    setting_pair: SettingPair
    side: str
    times: np.ndarray
    outcomes: np.ndarray
    duration_ns: int

    def __post_init__(self):
        check_side(self.side)
        times = np.ascontiguousarray(self.times, dtype=np.int64)
        outcomes = np.ascontiguousarray(self.outcomes, dtype=np.int8)
        if times.shape != outcomes.shape or times.ndim != 1:
            raise ValueError("times and outcomes must be 1-d arrays of equal length")
        if self.duration_ns < 0:
            raise ValueError("duration_ns must be non-negative")
        if times.size:
            if times[0] < 0 or times[-1] >= self.duration_ns:
                raise ValueError("event times must lie in [0, duration_ns)")
            steps = np.diff(times)
            if np.any(steps < 0):
                raise ValueError("event times must be sorted")
            if np.any(steps == 0):
                raise DuplicateTimestampError("simultaneous clicks on one side")
            if not np.all((outcomes == 1) | (outcomes == -1)):
                raise ValueError("raw click outcomes must be -1 or +1")
        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "outcomes", _frozen(outcomes))
        object.__setattr__(self, "duration_ns", int(self.duration_ns))

    def __len__(self):
        return int(self.times.size)

    def __eq__(self, other):
        if not isinstance(other, TimeTagSeries):
            return NotImplemented
        return (
            self.setting_pair == other.setting_pair
            and self.side == other.side
            and self.duration_ns == other.duration_ns
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.outcomes, other.outcomes)
        )

    __hash__ = None

    @property
    def events(self) -> list[Event]:
        return [Event(self.side, int(o), int(t)) for t, o in zip(self.times, self.outcomes)]

    def to_bytes(self) -> bytes:
        return self.times.tobytes() + self.outcomes.tobytes()

    def digest(self) -> str:
        h = hashlib.sha256(self.to_bytes())
        h.update(f"{self.side}|{self.setting_pair}|{self.duration_ns}".encode())
        return h.hexdigest()


def make_series(
    events: Iterable[Event],
    setting_pair: SettingPair,
    duration_ns: int,
    side: str | None = None,
) -> TimeTagSeries:
    """Build a sorted series from possibly unsorted clicks of a single side."""
    events = list(events)
    sides = {e.side for e in events}
    if side is not None:
        sides.add(check_side(side))
    if len(sides) > 1:
        raise ValueError("events from both sides cannot form one series")
    side = sides.pop() if sides else ALICE
    times = np.array([e.time_ns for e in events], dtype=np.int64)
    outcomes = np.array([e.outcome for e in events], dtype=np.int8)
    if times.size and times.max() >= duration_ns:
        raise ValueError(f"event at {int(times.max())} ns outside duration {duration_ns} ns")
    order = np.argsort(times, kind="stable")
    return TimeTagSeries(setting_pair, side, times[order], outcomes[order], duration_ns)


@dataclass(frozen=True, eq=False)
class WindowedSample:
    """One side's outcomes per retained fixed window.

    Held sparsely: ``length`` retained windows, of which those at
    ``nz_index`` carry ``nz_value`` (+1 or -1); every other window is 0.
    ``skipped_multicount`` windows were dropped because either side had
    more than one click; ``n_windows`` is the total before skipping.
    """

    setting_pair: SettingPair
    side: str
    width_W_ns: int
    shift_delta_ns: int
    length: int
    nz_index: np.ndarray
    nz_value: np.ndarray
    skipped_multicount: int = 0
    n_windows: int | None = None
    empty_windows: int | None = None

    def __post_init__(self):
        check_side(self.side)
        idx = np.ascontiguousarray(self.nz_index, dtype=np.int64)
        val = np.ascontiguousarray(self.nz_value, dtype=np.int8)
        if idx.shape != val.shape:
            raise ValueError("nz_index and nz_value must match")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.length or np.any(np.diff(idx) <= 0):
                raise ValueError("nz_index must be strictly increasing within [0, length)")
            if not np.all((val == 1) | (val == -1)):
                raise ValueError("non-zero window values must be -1 or +1")
        if self.width_W_ns < 1:
            raise ValueError("width_W_ns must be >= 1")
        object.__setattr__(self, "nz_index", _frozen(idx))
        object.__setattr__(self, "nz_value", _frozen(val))
        if self.n_windows is None:
            object.__setattr__(self, "n_windows", int(self.length) + int(self.skipped_multicount))

    @classmethod
    def from_values(cls, values: Sequence[int], setting_pair: SettingPair, side: str,
                    width_W_ns: int = 1, shift_delta_ns: int = 0, **kw) -> "WindowedSample":
        values = np.asarray(values, dtype=np.int8)
        if not np.all(np.isin(values, (-1, 0, 1))):
            raise ValueError("window values must be in {-1, 0, +1}")
        idx = np.flatnonzero(values)
        return cls(setting_pair, side, width_W_ns, shift_delta_ns, int(values.size),
                   idx, values[idx], **kw)

    def __len__(self):
        return int(self.length)

    def __eq__(self, other):
        if not isinstance(other, WindowedSample):
            return NotImplemented
        return (
            self.meta() == other.meta()
            and np.array_equal(self.nz_index, other.nz_index)
            and np.array_equal(self.nz_value, other.nz_value)
        )

    __hash__ = None

    def meta(self) -> tuple:
        return (self.setting_pair, self.side, self.width_W_ns, self.shift_delta_ns,
                self.length, self.skipped_multicount, self.n_windows)

    @property
    def values(self) -> np.ndarray:
        out = np.zeros(self.length, dtype=np.int8)
        out[self.nz_index] = self.nz_value
        return out

    def counts(self) -> dict[int, int]:
        plus = int(np.count_nonzero(self.nz_value == 1))
        minus = int(self.nz_value.size) - plus
        return {-1: minus, 0: int(self.length) - plus - minus, 1: plus}

    def truncate(self, length: int) -> "WindowedSample":
        if length > self.length:
            raise ValueError("cannot truncate to a longer length")
        keep = self.nz_index < length
        return WindowedSample(self.setting_pair, self.side, self.width_W_ns,
                              self.shift_delta_ns, length, self.nz_index[keep],
                              self.nz_value[keep], self.skipped_multicount)

    def split(self, m: int) -> list["WindowedSample"]:
        """Cut into ``m`` consecutive equal-length blocks (remainder dropped)."""
        if m < 1:
            raise ValueError("m must be >= 1")
        size = self.length // m
        blocks = []
        for k in range(m):
            lo, hi = k * size, (k + 1) * size
            sel = (self.nz_index >= lo) & (self.nz_index < hi)
            blocks.append(WindowedSample(self.setting_pair, self.side, self.width_W_ns,
                                         self.shift_delta_ns, size, self.nz_index[sel] - lo,
                                         self.nz_value[sel]))
        return blocks

    def digest(self) -> str:
        h = hashlib.sha256(self.nz_index.tobytes() + self.nz_value.tobytes())
        h.update(repr(self.meta()).encode())
        return h.hexdigest()


def concat_windowed(samples: Sequence[WindowedSample]) -> WindowedSample:
    """Join blocks of the same side and configuration end to end."""
    if not samples:
        raise ValueError("nothing to concatenate")
    first = samples[0]
    idx, val, offset, skipped = [], [], 0, 0
    for s in samples:
        if (s.side, s.width_W_ns, s.shift_delta_ns, s.setting_pair) != (
                first.side, first.width_W_ns, first.shift_delta_ns, first.setting_pair):
            raise ValueError("samples differ in side, window or settings")
        idx.append(s.nz_index + offset)
        val.append(s.nz_value)
        offset += s.length
        skipped += s.skipped_multicount
    return WindowedSample(first.setting_pair, first.side, first.width_W_ns,
                          first.shift_delta_ns, offset, np.concatenate(idx),
                          np.concatenate(val), skipped)


@dataclass(frozen=True, eq=False)
class PairedSample:
    """Post-selected coincidences: both outcomes non-zero."""

    setting_pair: SettingPair
    width_W_ns: int
    shift_delta_ns: int
    a: np.ndarray
    b: np.ndarray
    unmatched_A: int = 0
    unmatched_B: int = 0

    def __post_init__(self):
        a = np.ascontiguousarray(self.a, dtype=np.int8)
        b = np.ascontiguousarray(self.b, dtype=np.int8)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("a and b must be 1-d arrays of equal length")
        if not (np.all((a == 1) | (a == -1)) and np.all((b == 1) | (b == -1))):
            raise ValueError("paired outcomes must be -1 or +1")
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "b", _frozen(b))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]], setting_pair: SettingPair,
                   width_W_ns: int = 1, shift_delta_ns: int = 0) -> "PairedSample":
        arr = np.array(list(pairs), dtype=np.int8).reshape(-1, 2)
        return cls(setting_pair, width_W_ns, shift_delta_ns, arr[:, 0], arr[:, 1])

    def __len__(self):
        return int(self.a.size)

    def __eq__(self, other):
        if not isinstance(other, PairedSample):
            return NotImplemented
        return (
            (self.setting_pair, self.width_W_ns, self.shift_delta_ns)
            == (other.setting_pair, other.width_W_ns, other.shift_delta_ns)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
        )

    __hash__ = None

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.a.tolist(), self.b.tolist()))

    def outcomes(self, side: str) -> np.ndarray:
        return self.a if check_side(side) == ALICE else self.b

    def digest(self) -> str:
        h = hashlib.sha256(self.a.tobytes() + b"|" + self.b.tobytes())
        h.update(f"{self.setting_pair}|{self.width_W_ns}|{self.shift_delta_ns}".encode())
        return h.hexdigest()


@dataclass(frozen=True)
class CountTable:
    """Counts keyed by (setting pair, key); key is an outcome, an outcome
    pair, or a side label for singles tables. Insertion order is kept."""

    rows: Mapping[tuple[SettingPair, Hashable], int] = field(default_factory=dict)

    def __post_init__(self):
        rows = dict(self.rows)
        for k, v in rows.items():
            if int(v) != v or v < 0:
                raise ValueError(f"count for {k} must be a non-negative integer")
        object.__setattr__(self, "rows", rows)

    def __getitem__(self, key):
        return self.rows[key]

    def get(self, setting_pair: SettingPair, key: Hashable) -> int:
        try:
            return self.rows[(setting_pair, key)]
        except KeyError:
            raise KeyError(f"no count for {setting_pair} / {key!r}") from None

    def setting_pairs(self) -> list[SettingPair]:
        seen = {}
        for sp, _ in self.rows:
            seen.setdefault(sp, None)
        return list(seen)

    def total(self, setting_pair: SettingPair) -> int:
        return sum(v for (sp, _), v in self.rows.items() if sp == setting_pair)
