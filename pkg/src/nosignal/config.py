"""YAML configuration for the pipelines.

A file may name other files under ``include``; they are loaded first (in
order, relative to the including file) and the file's own keys are merged
over them. Physical quantities carry their unit in the key name
(``*_ns``, ``*_hz``, ``*_deg``). ``NOSIGNAL_SEED`` in the environment
replaces the top-level ``seed``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .core import Setting, SettingPair
from .photon_sim import FULL, DetectorConfig, RunConfig, SourceConfig
from .swap import SwapConfig

SEED_ENV = "NOSIGNAL_SEED"


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: Mapping) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path, _seen: tuple = ()) -> dict:
    path = Path(path).resolve()
    if path in _seen:
        raise ConfigError(f"include cycle through {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{path}{where}: invalid YAML") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    ctx = data.get("contextual")
    if isinstance(ctx, dict) and ctx.get("model_path"):
        # file references are relative to the file that names them
        ctx["model_path"] = str((path.parent / ctx["model_path"]).resolve())
    includes = data.pop("include", [])
    if isinstance(includes, str):
        includes = [includes]
    merged: dict = {}
    for inc in includes:
        merged = _merge(merged, load_config(path.parent / inc, _seen + (path,)))
    merged = _merge(merged, data)
    if not _seen:
        merged = apply_seed_override(merged)
    return merged


def apply_seed_override(cfg: dict) -> dict:
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return cfg
    try:
        seed = int(env)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return {**cfg, "seed": seed}


def config_digest(cfg: Mapping) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def _section(cfg: Mapping, key: str, allowed: set[str], where: str = "") -> dict:
    sec = cfg.get(key, {}) or {}
    if not isinstance(sec, Mapping):
        raise ConfigError(f"{where}{key} must be a mapping")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}{key}: {', '.join(sorted(unknown))}")
    return dict(sec)


def _check_keys(cfg: Mapping, allowed: set[str], where: str):
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


SOURCE_KEYS = {"pair_rate_hz", "duration_ns", "drift", "polarization_law", "xi_deg"}
DETECTOR_KEYS = {"dark_rate_hz", "efficiency", "delay_T0_ns", "delay_exponent_d",
                 "dark_plus_fraction", "channel_offset_ns"}


def source_from(cfg: Mapping) -> SourceConfig:
    sec = _section(cfg, "source", SOURCE_KEYS)
    if "drift" in sec:
        # [[t_ns, multiplier], ...]
        sec["drift"] = tuple(tuple(k) for k in sec["drift"])
    try:
        return SourceConfig(**sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"source: {exc}") from None


def detector_from(cfg: Mapping, name: str) -> DetectorConfig:
    base = _section(cfg, "detector", DETECTOR_KEYS)
    own = _section(cfg, name, DETECTOR_KEYS)
    try:
        return DetectorConfig(**{**base, **own})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def setting_pair_from(sec: Mapping) -> SettingPair:
    try:
        return SettingPair(Setting(float(sec["alice_deg"]), str(sec.get("alice_label", ""))),
                           Setting(float(sec["bob_deg"]), str(sec.get("bob_label", ""))))
    except KeyError as exc:
        raise ConfigError(f"setting lacks {exc.args[0]}") from None


RUN_KEYS = {"seed", "stage", "source", "detector", "alice_detector", "bob_detector", "setting"}


def run_config_from(cfg: Mapping) -> RunConfig:
    _check_keys(cfg, RUN_KEYS, "run config")
    try:
        return RunConfig(source_from(cfg), detector_from(cfg, "alice_detector"),
                         detector_from(cfg, "bob_detector"),
                         setting_pair_from(cfg.get("setting", {})),
                         cfg.get("stage", FULL), int(cfg.get("seed", 0)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def run_config_to_dict(config: RunConfig) -> dict:
    src = asdict(config.source)
    src["drift"] = [list(k) for k in config.source.drift]
    sp = config.setting_pair
    setting = {"alice_deg": sp.alice.angle, "bob_deg": sp.bob.angle}
    if sp.alice.label:
        setting["alice_label"] = sp.alice.label
    if sp.bob.label:
        setting["bob_label"] = sp.bob.label
    return {"seed": config.seed, "stage": config.stage, "source": src,
            "alice_detector": asdict(config.alice_detector),
            "bob_detector": asdict(config.bob_detector), "setting": setting}


SWAP_KEYS = {"p_bright_alice", "p_bright_bob", "trial_rate_hz", "duration_ns", "p_event_ready",
             "reflection_rate_hz", "reflection_decay_ns", "herald_start_T_ns",
             "herald_width_ns", "genuine_herald_offset_ns", "readout_offset_ns",
             "pairing_window_ns", "correlation", "injected_coupling"}


@dataclass
class SwapPipelineConfig:
    swap: SwapConfig
    alice_deg: tuple[float, float]
    bob_deg: tuple[float, float]
    window_ns: int
    alpha: float = 0.05
    homogeneity_blocks: int = 10
    seed: int = 0


def swap_pipeline_from(cfg: Mapping) -> SwapPipelineConfig:
    _check_keys(cfg, {"seed", "swap", "settings", "window_ns", "alpha", "homogeneity_blocks"},
                "swap config")
    sec = _section(cfg, "swap", SWAP_KEYS)
    settings = _section(cfg, "settings", {"alice_deg", "bob_deg"})
    seed = int(cfg.get("seed", 0))
    try:
        swap = SwapConfig(**sec, seed=seed)
        alice = tuple(float(v) for v in settings.get("alice_deg", (0.0, 45.0)))
        bob = tuple(float(v) for v in settings.get("bob_deg", (22.5, 67.5)))
        if len(alice) != 2 or len(bob) != 2:
            raise ValueError("settings need two angles per station")
        return SwapPipelineConfig(swap, alice, bob, int(cfg.get("window_ns", swap.period_ns)),
                                  float(cfg.get("alpha", 0.05)),
                                  int(cfg.get("homogeneity_blocks", 10)), seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"swap: {exc}") from None


PROTOCOL_KEYS = {"seed", "alpha", "source_kind", "source", "detector", "alice_detector",
                 "bob_detector", "settings", "M", "widths_ns", "shift_ns", "stages",
                 "homogeneity_blocks", "injected_coupling", "contextual", "workers"}


@dataclass
class ProtocolConfig:
    """Everything ``run_protocol`` needs; built by ``protocol_config_from``."""

    source: SourceConfig = field(default_factory=SourceConfig)
    alice_detector: DetectorConfig = field(default_factory=DetectorConfig)
    bob_detector: DetectorConfig = field(default_factory=DetectorConfig)
    alice_deg: tuple[float, ...] = (0.0, 45.0)
    bob_deg: tuple[float, ...] = (0.0, 45.0)
    M: int = 3
    widths_ns: tuple[int, ...] = (10,)
    shift_ns: int = 0
    alpha: float = 0.05
    seed: int = 0
    dark_only_duration_ns: int = 0
    no_pbs_duration_ns: int = 0
    source_kind: str = "photon"
    # contextual source: model file + trials per run
    model_path: str = ""
    contextual_trials: int = 10_000
    contextual_alice: tuple[str, ...] = ()
    contextual_bob: tuple[str, ...] = ()
    # deliberate signalling for power checks: efficiency shift of one station
    # keyed by the distant angle
    alice_efficiency_by_bob_deg: dict = field(default_factory=dict)
    bob_efficiency_by_alice_deg: dict = field(default_factory=dict)
    workers: int = 1
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if not self.widths_ns or any(int(w) < 1 for w in self.widths_ns):
            raise ConfigError("widths_ns must be positive integers")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.source_kind not in ("photon", "contextual"):
            raise ConfigError("source_kind must be 'photon' or 'contextual'")
        if self.source_kind == "photon" and (len(self.alice_deg) < 1 or len(self.bob_deg) < 2):
            raise ConfigError("settings need at least two distant angles to compare")


def protocol_config_from(cfg: Mapping) -> ProtocolConfig:
    _check_keys(cfg, PROTOCOL_KEYS, "protocol config")
    settings = _section(cfg, "settings", {"alice_deg", "bob_deg"})
    stages = _section(cfg, "stages", {"dark_only_duration_ns", "no_pbs_duration_ns"})
    coupling = _section(cfg, "injected_coupling",
                        {"alice_efficiency_by_bob_deg", "bob_efficiency_by_alice_deg"})
    ctx = _section(cfg, "contextual", {"model_path", "trials", "alice", "bob"})
    widths = cfg.get("widths_ns", [10])
    if isinstance(widths, int):
        widths = [widths]
    try:
        return ProtocolConfig(
            source=source_from(cfg),
            alice_detector=detector_from(cfg, "alice_detector"),
            bob_detector=detector_from(cfg, "bob_detector"),
            alice_deg=tuple(float(v) for v in settings.get("alice_deg", (0.0, 45.0))),
            bob_deg=tuple(float(v) for v in settings.get("bob_deg", (0.0, 45.0))),
            M=int(cfg.get("M", 3)),
            widths_ns=tuple(int(w) for w in widths),
            shift_ns=int(cfg.get("shift_ns", 0)),
            alpha=float(cfg.get("alpha", 0.05)),
            seed=int(cfg.get("seed", 0)),
            dark_only_duration_ns=int(stages.get("dark_only_duration_ns", 0)),
            no_pbs_duration_ns=int(stages.get("no_pbs_duration_ns", 0)),
            source_kind=str(cfg.get("source_kind", "photon")),
            model_path=str(ctx.get("model_path", "")),
            contextual_trials=int(ctx.get("trials", 10_000)),
            contextual_alice=tuple(str(v) for v in ctx.get("alice", ())),
            contextual_bob=tuple(str(v) for v in ctx.get("bob", ())),
            alice_efficiency_by_bob_deg={float(k): float(v) for k, v in
                                         coupling.get("alice_efficiency_by_bob_deg", {}).items()},
            bob_efficiency_by_alice_deg={float(k): float(v) for k, v in
                                         coupling.get("bob_efficiency_by_alice_deg", {}).items()},
            workers=int(cfg.get("workers", 1)),
            raw=dict(cfg),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def dump_config(cfg: Mapping[str, Any]) -> str:
    return yaml.safe_dump(dict(cfg), sort_keys=False)
