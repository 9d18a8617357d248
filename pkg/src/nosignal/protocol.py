"""End-to-end pipelines: the five-step no-signalling protocol and the
full-sample test for event-ready experiments.

Protocol steps, in order:

1. ``dark_only``: detectors without a source; dark click rates compared
   across distant settings.
2. ``no_pbs``: source on, polarizers removed; click rates compared across
   distant settings (same Poisson process?).
3. ``full_runs``: M repeated runs per setting pair; homogeneity of the
   windowed outcomes across runs.
4. ``pairing``: coincidences, correlations, CHSH and CDMD tests. These are
   informational and never enter the verdict.
5. ``no_signalling``: pre-selection windowed outcomes of each station
   compared across the distant settings.

The verdict uses Bonferroni over each family (steps 1, 2 and 5 for
signalling, step 3 for homogeneity); raw per-test verdicts are kept in the
reports.
"""

from __future__ import annotations

import dataclasses
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import inference
from .config import ProtocolConfig, SwapPipelineConfig, config_digest
from .contextual import load_model
from .core import ALICE, BOB, SIDES, PairedSample, Setting, SettingPair, concat_windowed
from .inference import TestReport, UNRELIABLE_SHL
from .pairing import (FIXED, NEAREST, CoincidenceConfig, bin_single, bin_windows, pair_nearest,
                      postselect)
from .photon_sim import (DARK_ONLY, FULL, NO_PBS, RunConfig, derive_seed, repeat_runs,
                         simulate_contextual_run, simulate_run)
from .swap import heralded_subsample, simulate_swap, test_fullsample_nosignalling

REPORT_SCHEMA = "nosignal-report/1"
NO_SIGNALLING_CONSISTENT = "NoSignallingConsistent"
SIGNALLING_SUSPECTED = "SignallingSuspected"
VERDICTS = (NO_SIGNALLING_CONSISTENT, SIGNALLING_SUSPECTED, UNRELIABLE_SHL)
SIGNALLING_TESTS = ("no_signalling", "poisson_rate")

STEP_DARK, STEP_NO_PBS, STEP_FULL, STEP_PAIRING, STEP_NOSIGNAL = (
    "dark_only", "no_pbs", "full_runs", "pairing", "no_signalling")
STAGE_CODES = {DARK_ONLY: 1, NO_PBS: 2, FULL: 3}


def _version() -> str:
    from . import __version__
    return __version__


@dataclass
class ProtocolStep:
    name: str
    reports: list[TestReport] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "reports": [r.to_dict() for r in self.reports],
                "summary": self.summary}


@dataclass
class ProtocolReport:
    steps: list[ProtocolStep]
    overall_verdict: str
    provenance: dict

    def step(self, name: str) -> ProtocolStep:
        for s in self.steps:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA, "kind": "protocol",
                "overall_verdict": self.overall_verdict, "provenance": self.provenance,
                "steps": [s.to_dict() for s in self.steps]}


def decide_verdict(signalling_reports: Sequence[TestReport],
                   homogeneity_reports: Sequence[TestReport],
                   insufficient_blocks: bool = False) -> str:
    """Overall verdict from the signalling and homogeneity families.

    CDMD reports are refused outright: a post-selection effect must never
    be able to produce ``SignallingSuspected``.
    """
    for r in signalling_reports:
        if r.test_name not in SIGNALLING_TESTS:
            raise ValueError(f"{r.test_name!r} reports cannot enter the signalling verdict")
    if insufficient_blocks:
        return UNRELIABLE_SHL
    if any(inference.bonferroni(homogeneity_reports)):
        return UNRELIABLE_SHL
    if any(not r.reliable for r in signalling_reports):
        return UNRELIABLE_SHL
    if any(inference.bonferroni(signalling_reports)):
        return SIGNALLING_SUSPECTED
    return NO_SIGNALLING_CONSISTENT


def _map(fn: Callable, jobs: Iterable, workers: int) -> list:
    jobs = list(jobs)
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))  # keeps job order


def _key(sp: SettingPair) -> str:
    def one(s: Setting):
        return s.label or f"{s.angle:g}"
    return f"A{one(sp.alice)}_B{one(sp.bob)}"


def _grid(cfg: ProtocolConfig) -> list[SettingPair]:
    if cfg.source_kind == "contextual":
        return [SettingPair(Setting(0.0, x), Setting(0.0, y))
                for x in cfg.contextual_alice for y in cfg.contextual_bob]
    return [SettingPair.from_degrees(x, y) for x in cfg.alice_deg for y in cfg.bob_deg]


def _distant_groups(grid: Sequence[SettingPair], side: str):
    """(own setting, [setting pairs sharing it]) in grid order."""
    groups: dict[Setting, list[SettingPair]] = {}
    for sp in grid:
        groups.setdefault(sp.own(side), []).append(sp)
    return list(groups.items())


def run_config_for(cfg: ProtocolConfig, sp: SettingPair, stage: str, seed: int) -> RunConfig:
    alice, bob = cfg.alice_detector, cfg.bob_detector
    shift_a = cfg.alice_efficiency_by_bob_deg.get(sp.bob.angle, 0.0)
    shift_b = cfg.bob_efficiency_by_alice_deg.get(sp.alice.angle, 0.0)
    if shift_a:
        alice = dataclasses.replace(alice, efficiency=min(max(alice.efficiency + shift_a, 0.0), 1.0))
    if shift_b:
        bob = dataclasses.replace(bob, efficiency=min(max(bob.efficiency + shift_b, 0.0), 1.0))
    source = cfg.source
    duration = {DARK_ONLY: cfg.dark_only_duration_ns, NO_PBS: cfg.no_pbs_duration_ns}.get(stage, 0)
    if duration:
        source = dataclasses.replace(source, duration_ns=duration)
    return RunConfig(source, alice, bob, sp, stage, seed)


def _rate_step(name: str, cfg: ProtocolConfig, grid, stage: str, seeds: dict) -> ProtocolStep:
    def job(item):
        i, sp = item
        seed = derive_seed(cfg.seed, STAGE_CODES[stage], i)
        seeds[f"{name}/{_key(sp)}"] = seed
        return simulate_run(run_config_for(cfg, sp, stage, seed))

    runs = dict(zip(grid, _map(job, enumerate(grid), cfg.workers)))
    step = ProtocolStep(name)
    clicks = {}
    for sp, (a, b) in runs.items():
        clicks[_key(sp)] = {"A": len(a), "B": len(b), "duration_ns": a.duration_ns}
    step.summary["clicks"] = clicks
    for side in SIDES:
        for own, sps in _distant_groups(grid, side):
            for s1, s2 in itertools.combinations(sps, 2):
                n1 = len(runs[s1][0 if side == ALICE else 1])
                n2 = len(runs[s2][0 if side == ALICE else 1])
                r = inference.test_poisson_rates(n1, runs[s1][0].duration_ns, n2,
                                                 runs[s2][0].duration_ns, cfg.alpha)
                r.diagnostics.update(side=side, first=_key(s1), second=_key(s2))
                step.reports.append(r)
    return step


def _full_runs(cfg: ProtocolConfig, grid, seeds: dict):
    """M (Alice, Bob) series per setting pair."""
    if cfg.source_kind == "contextual":
        model = load_model(cfg.model_path)
        width = cfg.widths_ns[0]

        def job(item):
            i, sp = item
            out = []
            for k in range(cfg.M):
                seed = derive_seed(cfg.seed, STAGE_CODES[FULL], i, k)
                seeds[f"{STEP_FULL}/{_key(sp)}/run{k}"] = seed
                out.append(simulate_contextual_run(model, sp.alice.label, sp.bob.label,
                                                   cfg.contextual_trials, width, seed, sp))
            return out
    else:
        def job(item):
            i, sp = item
            base = derive_seed(cfg.seed, STAGE_CODES[FULL], i)
            for k in range(cfg.M):
                seeds[f"{STEP_FULL}/{_key(sp)}/run{k}"] = base + k + 1
            return repeat_runs(run_config_for(cfg, sp, FULL, base), cfg.M)

    return dict(zip(grid, _map(job, enumerate(grid), cfg.workers)))


def run_protocol(cfg: ProtocolConfig) -> ProtocolReport:
    grid = _grid(cfg)
    if len(grid) < 2:
        raise ValueError("the settings grid needs at least two setting pairs")
    seeds: dict[str, int] = {}
    steps: list[ProtocolStep] = []

    if cfg.source_kind == "photon":
        steps.append(_rate_step(STEP_DARK, cfg, grid, DARK_ONLY, seeds))
        steps.append(_rate_step(STEP_NO_PBS, cfg, grid, NO_PBS, seeds))
    else:
        for name in (STEP_DARK, STEP_NO_PBS):
            steps.append(ProtocolStep(name, summary={"skipped": "contextual source"}))

    runs = _full_runs(cfg, grid, seeds)
    shift = cfg.shift_ns

    # windowed pre-selection samples, per W / setting pair / run
    windowed = {}
    for W in cfg.widths_ns:
        cc = CoincidenceConfig(FIXED, W, shift)
        for sp, rs in runs.items():
            windowed[(W, sp)] = [bin_windows(a, b, cc) for a, b in rs]

    # step 3: homogeneity across the M runs
    full = ProtocolStep(STEP_FULL, summary={"M": cfg.M})
    insufficient = cfg.M < 2
    if insufficient:
        full.summary["homogeneity"] = "insufficient blocks"
    else:
        for (W, sp), samples in windowed.items():
            for j, side in enumerate(SIDES):
                blocks = inference.equalize_lengths([s[j] for s in samples])
                r = inference.test_homogeneity(blocks, cfg.alpha)
                r.diagnostics.update(side=side, setting_pair=_key(sp), W_ns=W)
                full.reports.append(r)
    full.summary["clicks_per_run"] = {
        _key(sp): [{"A": len(a), "B": len(b)} for a, b in rs] for sp, rs in runs.items()}
    steps.append(full)

    # step 4: pairing, correlations, CHSH, CDMD (informational only)
    pairing = ProtocolStep(STEP_PAIRING, summary={"correlations": [], "chsh": []})
    for W in cfg.widths_ns:
        near = {}
        for sp, rs in runs.items():
            ps = [pair_nearest(a, b, CoincidenceConfig(NEAREST, W, shift)) for a, b in rs]
            near[sp] = PairedSample(sp, W, shift, np.concatenate([p.a for p in ps]),
                                    np.concatenate([p.b for p in ps]))
            binned = [postselect(*s) for s in windowed[(W, sp)]]
            n_b = sum(len(p) for p in binned)
            e_b = (sum(float(np.dot(p.a, p.b.astype(float))) for p in binned) / n_b
                   if n_b else None)
            n = len(near[sp])
            e = float(np.mean(near[sp].a * near[sp].b.astype(float))) if n else None
            pairing.summary["correlations"].append({
                "W_ns": W, "setting_pair": _key(sp), "alice_deg": sp.alice.angle,
                "bob_deg": sp.bob.angle, "pairs": n, "E_nearest": e,
                "std_err": float(np.sqrt((1 - e * e) / n)) if n else None,
                "pairs_binned": n_b, "E_binned": e_b})
        xs = list(dict.fromkeys(sp.alice for sp in grid))
        ys = list(dict.fromkeys(sp.bob for sp in grid))
        if len(xs) == 2 and len(ys) == 2:
            # all four placements of the minus sign; the largest |S| is the CHSH value
            best = None
            for x, xp in (xs, xs[::-1]):
                for y, yp in (ys, ys[::-1]):
                    try:
                        S, se = inference.estimate_chsh(near, x, xp, y, yp)
                    except ValueError:
                        continue
                    entry = {"W_ns": W, "x": _key(SettingPair(x, y)), "S": S, "std_err": se,
                             "minus_term": _key(SettingPair(xp, yp))}
                    pairing.summary["chsh"].append(entry)
                    if best is None or abs(S) > abs(best["S"]):
                        best = entry
            if best is not None:
                pairing.summary.setdefault("chsh_max_abs", []).append(best)
        for side in SIDES:
            for own, sps in _distant_groups(grid, side):
                for s1, s2 in itertools.combinations(sps, 2):
                    if min(len(near[s1]), len(near[s2])) == 0:
                        continue
                    r = inference.test_cdmd(near[s1], near[s2], cfg.alpha, side=side)
                    r.diagnostics.update(W_ns=W, first=_key(s1), second=_key(s2))
                    pairing.reports.append(r)
    pairing.summary["cdmd_rejections"] = sum(r.rejected for r in pairing.reports)
    steps.append(pairing)

    # step 5: no-signalling on pre-selection samples
    nosig = ProtocolStep(STEP_NOSIGNAL, summary={"singles": []})
    for W in cfg.widths_ns:
        pooled = {sp: tuple(concat_windowed([s[j] for s in windowed[(W, sp)]]) for j in (0, 1))
                  for sp in grid}
        for sp in grid:
            for j, side in enumerate(SIDES):
                c = pooled[sp][j].counts()
                nosig.summary["singles"].append({
                    "W_ns": W, "side": side, "setting_pair": _key(sp),
                    "alice_deg": sp.alice.angle, "bob_deg": sp.bob.angle,
                    "windows": pooled[sp][j].length, "minus": c[-1], "zero": c[0],
                    "plus": c[1]})
        for j, side in enumerate(SIDES):
            for own, sps in _distant_groups(grid, side):
                for s1, s2 in itertools.combinations(sps, 2):
                    r = inference.test_nosignalling(pooled[s1][j], pooled[s2][j], cfg.alpha,
                                                    homogeneity_blocks=0)
                    r.diagnostics.update(W_ns=W, side=side, first=_key(s1), second=_key(s2))
                    nosig.reports.append(r)
    steps.append(nosig)

    family = [r for s in steps if s.name in (STEP_DARK, STEP_NO_PBS, STEP_NOSIGNAL)
              for r in s.reports]
    verdict = decide_verdict(family, full.reports, insufficient)
    adjusted = inference.bonferroni(family)
    nosig.summary["family_size"] = len(family)
    nosig.summary["bonferroni_rejections"] = int(sum(adjusted))
    nosig.summary["raw_rejections"] = int(sum(r.rejected for r in family))

    provenance = {"config_digest": config_digest(cfg.raw), "seed": cfg.seed,
                  "seeds": dict(sorted(seeds.items())), "version": _version()}
    return ProtocolReport(steps, verdict, provenance)


def run_swap_pipeline(cfg: SwapPipelineConfig) -> dict:
    """Full-sample no-signalling for both stations plus heralded-subsample
    summaries; each (x, y) run has its own derived seed."""
    xs = [Setting(v) for v in cfg.alice_deg]
    ys = [Setting(v) for v in cfg.bob_deg]
    runs, seeds = {}, {}
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            seed = derive_seed(cfg.seed, 8, i, j)
            sp = SettingPair(x, y)
            seeds[_key(sp)] = seed
            runs[sp] = simulate_swap(dataclasses.replace(cfg.swap, seed=seed), x, y)
    reports = []
    for own_list, side, idx in ((xs, ALICE, 0), (ys, BOB, 1)):
        for own in own_list:
            sps = [sp for sp in runs if sp.own(side) == own]
            for s1, s2 in itertools.combinations(sps, 2):
                r = test_fullsample_nosignalling(runs[s1][idx], runs[s2][idx], cfg.window_ns,
                                                 cfg.alpha, homogeneity_blocks=0)
                r.diagnostics.update(side=side, first=_key(s1), second=_key(s2))
                reports.append(r)
    # stationarity of every record, one Bonferroni family
    homogeneity = []
    if cfg.homogeneity_blocks >= 2:
        for sp, run in runs.items():
            for idx, side in enumerate(SIDES):
                sample = bin_single(run[idx], cfg.window_ns)
                r = inference.test_homogeneity(sample.split(cfg.homogeneity_blocks), cfg.alpha)
                r.diagnostics.update(side=side, setting_pair=_key(sp))
                homogeneity.append(r)
    heralded = []
    for sp, (a, b, h) in runs.items():
        sub = heralded_subsample(a, b, h, cfg.swap)
        heralded.append({"setting_pair": _key(sp), "heralds": len(h),
                         "accepted": h.n_accepted,
                         "accepted_genuine": int(np.count_nonzero(h.accepted & h.genuine)),
                         "pairs": len(sub),
                         "E": float(np.mean(sub.a * sub.b.astype(float))) if len(sub) else None})
    verdict = decide_verdict(reports, homogeneity)
    return {"schema": REPORT_SCHEMA, "kind": "swap", "overall_verdict": verdict,
            "reports": [r.to_dict() for r in reports],
            "homogeneity": [r.to_dict() for r in homogeneity], "heralded": heralded,
            "provenance": {"seed": cfg.seed, "seeds": seeds, "window_ns": cfg.window_ns,
                           "version": _version()}}
