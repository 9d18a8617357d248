"""Event-by-event simulation of a twin-photon Bell test with a locally
causal time-delay model.

Each emitted pair carries a hidden polarization xi for Alice and xi + 90
for Bob. At a station with polarizer angle theta the photon leaves by the
+1 port with probability cos^2(xi - theta) and is registered after a
delay drawn uniformly from [0, T0 |sin 2(xi - theta)|^d]. Setting-dependent
delays are what lets windowed pairing reproduce quantum-like correlations
without any influence between the stations.

Randomness is split into three substreams per run (source, Alice, Bob),
so a station's click record depends only on the source, its own detector
and its own setting.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ALICE, BOB, SettingPair, TimeTagSeries, Setting

FULL = "full"
NO_PBS = "no_pbs"
DARK_ONLY = "dark_only"
STAGES = (FULL, NO_PBS, DARK_ONLY)

# Parameter point at which post-selected correlations follow -cos 2(a - b);
# chosen from the window sweep in demos/02_coincidence_loophole.py.
TUNED_DELAY_EXPONENT = 4.0
TUNED_T0_NS = 2000.0
TUNED_WINDOW_NS = 10


@dataclass(frozen=True)
class SourceConfig:
    pair_rate_hz: float = 50_000.0
    duration_ns: int = 1_000_000_000
    drift: tuple[tuple[float, float], ...] = ((0.0, 1.0),)
    polarization_law: str = "uniform"
    xi_deg: float = 0.0

    def __post_init__(self):
        if self.pair_rate_hz <= 0:
            raise ValueError("pair_rate_hz must be positive")
        if self.duration_ns <= 0:
            raise ValueError("duration_ns must be positive")
        drift = tuple((float(t), float(m)) for t, m in self.drift)
        if not drift or any(m <= 0 for _, m in drift):
            raise ValueError("drift multipliers must be positive")
        if any(b[0] <= a[0] for a, b in zip(drift, drift[1:])):
            raise ValueError("drift knots must have increasing times")
        if self.polarization_law not in ("uniform", "fixed"):
            raise ValueError("polarization_law must be 'uniform' or 'fixed'")
        object.__setattr__(self, "drift", drift)

    def multiplier(self, t_ns) -> np.ndarray:
        kt, km = zip(*self.drift)
        return np.interp(t_ns, kt, km)


@dataclass(frozen=True)
class DetectorConfig:
    dark_rate_hz: float = 0.0
    efficiency: float = 1.0
    delay_T0_ns: float = TUNED_T0_NS
    delay_exponent_d: float = TUNED_DELAY_EXPONENT
    dark_plus_fraction: float = 0.5
    # extra fixed latency of the +1 channel (cable/electronics mismatch)
    channel_offset_ns: float = 0.0

    def __post_init__(self):
        if self.dark_rate_hz < 0:
            raise ValueError("dark_rate_hz must be >= 0")
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in [0, 1]")
        if self.delay_T0_ns < 0 or self.delay_exponent_d < 0:
            raise ValueError("delay_T0_ns and delay_exponent_d must be >= 0")
        if not 0.0 <= self.dark_plus_fraction <= 1.0:
            raise ValueError("dark_plus_fraction must lie in [0, 1]")
        if self.channel_offset_ns < 0:
            raise ValueError("channel_offset_ns must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    source: SourceConfig
    alice_detector: DetectorConfig
    bob_detector: DetectorConfig
    setting_pair: SettingPair
    stage: str = FULL
    seed: int = 0

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seed=int(seed))


@dataclass(frozen=True)
class Run:
    config: RunConfig
    alice: TimeTagSeries
    bob: TimeTagSeries


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic child seed for (seed, keys...)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def _streams(seed: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(int(seed)).spawn(3)]


def _emissions(source: SourceConfig, rng: np.random.Generator, t_offset_ns: float):
    """Pair emission times (float ns) and hidden polarizations (deg)."""
    peak = max(m for _, m in source.drift)
    rate_per_ns = source.pair_rate_hz * 1e-9 * peak
    n = rng.poisson(rate_per_ns * source.duration_ns)
    t = np.sort(rng.uniform(0.0, source.duration_ns, n))
    # thinning against the peak multiplier gives the inhomogeneous process exactly
    keep = rng.random(n) * peak < source.multiplier(t + t_offset_ns)
    t = t[keep]
    if source.polarization_law == "uniform":
        xi = rng.uniform(0.0, 180.0, t.size)
    else:
        xi = np.full(t.size, float(source.xi_deg))
    return t, xi


def _station(det: DetectorConfig, theta_deg: float, xi_deg: np.ndarray, t_emit: np.ndarray,
             rng: np.random.Generator, stage: str, duration_ns: int):
    n = t_emit.size
    u = rng.random((3, n))
    delta = np.radians(xi_deg - theta_deg)
    if stage == NO_PBS:
        outcome = np.ones(n, dtype=np.int8)
        delay = np.zeros(n)
    else:
        outcome = np.where(u[0] < np.cos(delta) ** 2, 1, -1).astype(np.int8)
        delay = u[2] * det.delay_T0_ns * np.abs(np.sin(2.0 * delta)) ** det.delay_exponent_d
        delay = delay + np.where(outcome == 1, det.channel_offset_ns, 0.0)
    keep = u[1] < det.efficiency
    times = np.floor(t_emit[keep] + delay[keep]).astype(np.int64)
    outcome = outcome[keep]

    n_dark = rng.poisson(det.dark_rate_hz * 1e-9 * duration_ns)
    dark_t = rng.integers(0, duration_ns, n_dark, dtype=np.int64)
    if stage == NO_PBS:
        dark_o = np.ones(n_dark, dtype=np.int8)
    else:
        dark_o = np.where(rng.random(n_dark) < det.dark_plus_fraction, 1, -1).astype(np.int8)

    times = np.concatenate([times, dark_t])
    outcome = np.concatenate([outcome, dark_o])
    inside = times < duration_ns
    times, outcome = times[inside], outcome[inside]
    order = np.argsort(times, kind="stable")
    times, outcome = times[order], outcome[order]
    # simultaneous clicks on one station merge into the first one
    first = np.ones(times.size, dtype=bool)
    first[1:] = times[1:] != times[:-1]
    return times[first], outcome[first]


def simulate_run(config: RunConfig, t_offset_ns: float = 0.0
                 ) -> tuple[TimeTagSeries, TimeTagSeries]:
    """One run at fixed settings; returns (Alice series, Bob series).

    ``t_offset_ns`` places the run on the laboratory clock, which is where
    the source drift profile is evaluated.
    """
    src_rng, a_rng, b_rng = _streams(config.seed)
    src = config.source
    if config.stage == DARK_ONLY:
        t_emit, xi = np.zeros(0), np.zeros(0)
    else:
        t_emit, xi = _emissions(src, src_rng, t_offset_ns)
    sp = config.setting_pair
    ta, oa = _station(config.alice_detector, sp.alice.angle, xi, t_emit, a_rng,
                      config.stage, src.duration_ns)
    tb, ob = _station(config.bob_detector, sp.bob.angle, xi + 90.0, t_emit, b_rng,
                      config.stage, src.duration_ns)
    return (TimeTagSeries(sp, ALICE, ta, oa, src.duration_ns),
            TimeTagSeries(sp, BOB, tb, ob, src.duration_ns))


def _varying_side(configs: Sequence[RunConfig]) -> str | None:
    base = configs[0]
    alice_varies = bob_varies = False
    for c in configs[1:]:
        if dataclasses.replace(c, setting_pair=base.setting_pair, seed=base.seed) != base:
            raise ValueError("configs may differ only in one station's setting")
        alice_varies |= c.setting_pair.alice != base.setting_pair.alice
        bob_varies |= c.setting_pair.bob != base.setting_pair.bob
    if alice_varies and bob_varies:
        raise ValueError("configs may differ only in one station's setting")
    return BOB if bob_varies else ALICE if alice_varies else None


def simulate_protocol_stage3(configs: Sequence[RunConfig]) -> list[Run]:
    """Runs that differ only in the distant setting, each with its own sub-seed.

    The sub-seed actually used is stored in the returned ``Run.config``.
    """
    if not configs:
        raise ValueError("at least one config is required")
    _varying_side(configs)
    runs = []
    for i, cfg in enumerate(configs):
        cfg = cfg.with_seed(derive_seed(configs[0].seed, i))
        a, b = simulate_run(cfg)
        runs.append(Run(cfg, a, b))
    return runs


def repeat_runs(config: RunConfig, M: int) -> list[tuple[TimeTagSeries, TimeTagSeries]]:
    """M consecutive runs with seeds seed+1 ... seed+M.

    Run k starts at k * duration on the laboratory clock, so a drift profile
    spanning several durations shows up as a trend across runs.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    dur = config.source.duration_ns
    return [simulate_run(config.with_seed(config.seed + k + 1), t_offset_ns=k * dur)
            for k in range(M)]


def simulate_contextual_run(model, x, y, n_trials: int, width_ns: int, seed: int,
                            setting_pair: SettingPair | None = None
                            ) -> tuple[TimeTagSeries, TimeTagSeries]:
    """Route draws of a contextual model through trivial timing.

    Trial i occupies the window [i W, (i+1) W); non-zero outcomes become a
    click in the middle of it, zero outcomes leave it empty.
    """
    from .contextual import sample_contextual

    draws = sample_contextual(model, x, y, n_trials, seed)
    if setting_pair is None:
        setting_pair = SettingPair(Setting(0.0, str(x)), Setting(0.0, str(y)))
    centre = np.arange(n_trials, dtype=np.int64) * width_ns + width_ns // 2
    duration = n_trials * width_ns
    out = []
    for col, side in ((0, ALICE), (1, BOB)):
        nz = draws[:, col] != 0
        out.append(TimeTagSeries(setting_pair, side, centre[nz], draws[nz, col], duration))
    return out[0], out[1]


def tuned_config(setting_pair: SettingPair, seed: int = 0, duration_ns: int = 1_000_000_000,
                 pair_rate_hz: float = 50_000.0, dark_rate_hz: float = 200.0,
                 efficiency: float = 0.9) -> RunConfig:
    """Full-stage run at the singlet-tuned delay parameters."""
    det = DetectorConfig(dark_rate_hz=dark_rate_hz, efficiency=efficiency)
    return RunConfig(SourceConfig(pair_rate_hz=pair_rate_hz, duration_ns=duration_ns),
                     det, det, setting_pair, FULL, seed)
