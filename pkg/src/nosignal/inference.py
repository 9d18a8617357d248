"""Estimators and hypothesis tests for no-signalling analyses.

No-signalling is tested on samples taken *before* any pairing: one
station's windowed outcomes {-1, 0, +1} under two distant settings must
come from the same population. The same machinery applied to
post-selected coincidences tests context dependence of marginal
distributions (CDMD), which is a property of the selection and is never
reported as signalling.

Two-sample and homogeneity tests are Pearson chi-square on a contingency
table (no Yates correction); categories whose expected count falls below
5 are pooled. A G-test is available with ``method="g"``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import special, stats

from .core import (ALICE, CountTable, PairedSample, SettingPair, WindowedSample, check_side)

REJECT = "RejectNull"
FAIL_TO_REJECT = "FailToReject"
UNRELIABLE_SHL = "Unreliable(SHL)"
CDMD_NOTE = "CDMD detected — not evidence of signalling"

UNCONDITIONED = "unconditioned"
OWN_NONZERO = "own_nonzero"
BOTH_NONZERO = "both_nonzero"

MIN_EXPECTED = 5.0


class InsufficientBlocks(ValueError):
    pass


def chi2_sf(statistic: float, dof: int) -> float:
    """Upper tail of the chi-square law via the regularized incomplete gamma."""
    if dof <= 0:
        return 1.0
    if statistic <= 0:
        return 1.0
    return float(special.gammaincc(dof / 2.0, statistic / 2.0))


def _pool(table: np.ndarray, min_expected: float) -> np.ndarray:
    table = table[:, table.sum(axis=0) > 0]
    while table.shape[1] > 2:
        col = table.sum(axis=0)
        expected = np.outer(table.sum(axis=1), col) / table.sum()
        if expected.min() >= min_expected:
            break
        lo, nxt = np.argsort(col, kind="stable")[:2]
        table[:, nxt] += table[:, lo]
        table = np.delete(table, lo, axis=1)
    return table


def contingency_test(table, method: str = "chi2", min_expected: float = MIN_EXPECTED
                     ) -> tuple[float, int, float]:
    """Homogeneity of the rows of an (r x k) count table.

    Returns (statistic, dof, p_value). Rows must be non-empty.
    """
    table = np.array(table, dtype=float)
    if table.ndim != 2 or table.shape[0] < 2:
        raise ValueError("need at least two rows of counts")
    if np.any(table.sum(axis=1) <= 0):
        raise ValueError("every sample must contain at least one observation")
    table = _pool(table, min_expected)
    r, k = table.shape
    if k < 2:
        return 0.0, 0, 1.0
    expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / table.sum()
    if method == "chi2":
        stat = float(np.sum((table - expected) ** 2 / expected))
    elif method == "g":
        nz = table > 0
        stat = float(2.0 * np.sum(table[nz] * np.log(table[nz] / expected[nz])))
    else:
        raise ValueError(f"unknown method {method!r}")
    dof = (r - 1) * (k - 1)
    return stat, dof, chi2_sf(stat, dof)


def runs_test(sequence: Sequence[int]) -> tuple[float, float]:
    """Wald-Wolfowitz runs test on a two-valued sequence; returns (z, p)."""
    s = np.asarray(sequence)
    n1 = int(np.count_nonzero(s == s[0])) if s.size else 0
    n2 = s.size - n1
    if n1 == 0 or n2 == 0:
        return 0.0, 1.0
    n = n1 + n2
    runs = 1 + int(np.count_nonzero(s[1:] != s[:-1]))
    mu = 2.0 * n1 * n2 / n + 1.0
    var = 2.0 * n1 * n2 * (2.0 * n1 * n2 - n) / (n * n * (n - 1.0))
    if var <= 0:
        return 0.0, 1.0
    z = (runs - mu) / math.sqrt(var)
    return z, math.erfc(abs(z) / math.sqrt(2.0))


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode() if isinstance(p, str) else p)
        h.update(b"|")
    return h.hexdigest()


@dataclass
class TestReport:
    test_name: str
    statistic: float
    dof: int
    p_value: float
    alpha: float
    verdict: str
    inputs_digest: str
    note: str = ""
    caveat: str = ""
    diagnostics: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        expected = REJECT if self.p_value < self.alpha else FAIL_TO_REJECT
        if self.verdict != expected:
            raise ValueError("verdict must be RejectNull exactly when p < alpha")

    @property
    def rejected(self) -> bool:
        return self.verdict == REJECT

    @property
    def reliable(self) -> bool:
        return self.caveat != UNRELIABLE_SHL

    def to_dict(self) -> dict:
        return asdict(self)


def _report(name, stat, dof, p, alpha, digest, **kw) -> TestReport:
    verdict = REJECT if p < alpha else FAIL_TO_REJECT
    return TestReport(name, float(stat), int(dof), float(p), float(alpha), verdict, digest, **kw)


@dataclass
class MarginalEstimate:
    setting_pair: SettingPair
    side: str
    condition: str
    probs: dict[int, float]
    n: int
    std_errs: dict[int, float]


def estimate_marginals(sample: WindowedSample | PairedSample, condition: str = UNCONDITIONED,
                       side: str | None = None) -> MarginalEstimate:
    """Empirical outcome frequencies with binomial standard errors.

    Windowed samples support ``unconditioned`` (over {-1,0,+1}) and
    ``own_nonzero``; paired samples are already both-nonzero and need a
    ``side``.
    """
    if isinstance(sample, PairedSample):
        if condition != BOTH_NONZERO:
            raise ValueError("paired samples are post-selected; use condition='both_nonzero'")
        side = check_side(side or ALICE)
        vals = sample.outcomes(side)
        counts = {o: int(np.count_nonzero(vals == o)) for o in (-1, 1)}
    elif isinstance(sample, WindowedSample):
        side = sample.side
        counts = sample.counts()
        if condition == OWN_NONZERO:
            counts.pop(0)
        elif condition != UNCONDITIONED:
            raise ValueError("windowed samples support 'unconditioned' or 'own_nonzero'")
    else:
        raise TypeError(f"unsupported sample type {type(sample).__name__}")
    n = sum(counts.values())
    if n == 0:
        raise ValueError("empty sample after conditioning")
    probs = {o: c / n for o, c in counts.items()}
    errs = {o: math.sqrt(p * (1.0 - p) / n) for o, p in probs.items()}
    return MarginalEstimate(sample.setting_pair, side, condition, probs, n, errs)


def _counts_vector(sample: WindowedSample) -> list[int]:
    c = sample.counts()
    return [c[-1], c[0], c[1]]


def _paired_counts(sample: PairedSample, side: str) -> list[int]:
    v = sample.outcomes(side)
    return [int(np.count_nonzero(v == -1)), int(np.count_nonzero(v == 1))]


def two_sample_test(counts_1, counts_2, alpha: float = 0.05, method: str = "chi2",
                    name: str = "two_sample") -> TestReport:
    stat, dof, p = contingency_test([counts_1, counts_2], method)
    digest = _digest(json.dumps([list(map(int, counts_1)), list(map(int, counts_2))]))
    return _report(name, stat, dof, p, alpha, digest)


def test_homogeneity(samples: Sequence[WindowedSample], alpha: float = 0.05,
                     method: str = "chi2") -> TestReport:
    """Chi-square homogeneity of outcome counts across M equal-length blocks.

    A runs test on the concatenated non-zero outcomes is attached as a
    diagnostic and does not enter the verdict.
    """
    if len(samples) < 2:
        raise InsufficientBlocks("homogeneity needs at least two blocks")
    if len({s.length for s in samples}) != 1:
        raise ValueError("blocks must have equal length; see equalize_lengths")
    table = [_counts_vector(s) for s in samples]
    stat, dof, p = contingency_test(table, method)
    z, p_runs = runs_test(np.concatenate([s.nz_value for s in samples]))
    digest = _digest(*(s.digest() for s in samples))
    return _report("homogeneity", stat, dof, p, alpha, digest,
                   diagnostics={"blocks": len(samples), "runs_z": z, "runs_p": p_runs})
test_homogeneity.__test__ = False


def equalize_lengths(samples: Sequence[WindowedSample]) -> list[WindowedSample]:
    """Truncate blocks to the shortest one, keeping the same number of points per run."""
    n = min(s.length for s in samples)
    return [s.truncate(n) for s in samples]


def _shl_caveat(samples: Sequence[WindowedSample], alpha: float, blocks: int) -> tuple[str, dict]:
    if blocks < 2:
        return "", {}
    ps = []
    for s in samples:
        if s.length < blocks:
            return UNRELIABLE_SHL, {"homogeneity": "insufficient data"}
        ps.append(test_homogeneity(s.split(blocks), alpha).p_value)
    caveat = UNRELIABLE_SHL if min(ps) < alpha / len(ps) else ""
    return caveat, {"homogeneity_p": ps}


def test_nosignalling(sample_own_y: WindowedSample, sample_own_yprime: WindowedSample,
                      alpha: float = 0.05, method: str = "chi2",
                      homogeneity_blocks: int = 10) -> TestReport:
    """Do one station's pre-selection outcomes depend on the distant setting?

    Each input is also split into ``homogeneity_blocks`` blocks; if either
    fails the (Bonferroni-adjusted) homogeneity check the report carries
    the ``Unreliable(SHL)`` caveat. The verdict itself is always p < alpha.
    """
    s1, s2 = sample_own_y, sample_own_yprime
    if s1.side != s2.side:
        raise ValueError("samples must come from the same station")
    if s1.setting_pair.own(s1.side) != s2.setting_pair.own(s2.side):
        raise ValueError("samples must share the station's own setting")
    stat, dof, p = contingency_test([_counts_vector(s1), _counts_vector(s2)], method)
    caveat, diag = _shl_caveat((s1, s2), alpha, homogeneity_blocks)
    diag.update(n=[s1.length, s2.length], counts=[_counts_vector(s1), _counts_vector(s2)])
    return _report("no_signalling", stat, dof, p, alpha, _digest(s1.digest(), s2.digest()),
                   caveat=caveat, diagnostics=diag)
test_nosignalling.__test__ = False


def test_cdmd(paired_y: PairedSample, paired_yprime: PairedSample, alpha: float = 0.05,
              side: str = ALICE, method: str = "chi2") -> TestReport:
    """Compare post-selected marginals of one station across distant settings.

    A rejection means the selected sub-samples differ (CDMD); it is not
    evidence of signalling.
    """
    check_side(side)
    if paired_y.setting_pair.own(side) != paired_yprime.setting_pair.own(side):
        raise ValueError("post-selected samples must share the station's own setting")
    c1, c2 = _paired_counts(paired_y, side), _paired_counts(paired_yprime, side)
    stat, dof, p = contingency_test([c1, c2], method)
    note = CDMD_NOTE if p < alpha else ""
    return _report("cdmd", stat, dof, p, alpha,
                   _digest(side, paired_y.digest(), paired_yprime.digest()), note=note,
                   diagnostics={"side": side, "counts": [c1, c2]})
test_cdmd.__test__ = False


def estimate_chsh(paired: Mapping[SettingPair, PairedSample], x, xp, y, yp
                  ) -> tuple[float, float]:
    """S = E(x,y) + E(x,y') + E(x',y) - E(x',y') with its standard error."""
    s, var = 0.0, 0.0
    for a, b, sign in ((x, y, 1), (x, yp, 1), (xp, y, 1), (xp, yp, -1)):
        key = SettingPair(a, b)
        try:
            sample = paired[key]
        except KeyError:
            raise KeyError(f"no post-selected sample for {key}") from None
        n = len(sample)
        if n == 0:
            raise ValueError(f"empty post-selected sample for {key}")
        e = float(np.mean(sample.a.astype(float) * sample.b))
        s += sign * e
        var += (1.0 - e * e) / n
    return s, math.sqrt(var)


@dataclass
class SinglesDeviation:
    first: SettingPair
    second: SettingPair
    n_first: int
    n_second: int
    relative_deviation: float
    z_score: float


def singles_deviation(table: CountTable, side: str, own_setting) -> list[SinglesDeviation]:
    """Relative deviation (n2 - n1)/n1 and Poisson z-score (n2 - n1)/sqrt(n1 + n2)
    for every pair of table rows sharing the station's own setting."""
    check_side(side)
    rows = [sp for sp in table.setting_pairs() if sp.own(side) == own_setting]
    if len(rows) < 2:
        raise KeyError(f"need at least two setting pairs with own setting {own_setting}")
    counts = [table.get(sp, side) for sp in rows]
    out = []
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            n1, n2 = counts[i], counts[j]
            out.append(SinglesDeviation(rows[i], rows[j], n1, n2, (n2 - n1) / n1,
                                        (n2 - n1) / math.sqrt(n1 + n2)))
    return out


def null_rejection_band(trials: int, alpha: float, level: float = 0.99) -> tuple[int, int]:
    """Central exact binomial interval for the number of rejections under the null."""
    tail = (1.0 - level) / 2.0
    return (int(stats.binom.ppf(tail, trials, alpha)),
            int(stats.binom.ppf(1.0 - tail, trials, alpha)))


def bonferroni(reports: Sequence[TestReport], alpha: float | None = None) -> list[bool]:
    """Family-wise rejections at level ``alpha`` (defaults to each report's own)."""
    m = max(len(reports), 1)
    return [r.p_value < (alpha if alpha is not None else r.alpha) / m for r in reports]


def test_poisson_rates(count_1: int, exposure_1_ns: float, count_2: int, exposure_2_ns: float,
                       alpha: float = 0.05, name: str = "poisson_rate") -> TestReport:
    """Exact conditional test that two click counts share one Poisson rate.

    Given the total, count_1 is binomial with success probability
    exposure_1 / (exposure_1 + exposure_2) under the null.
    """
    if exposure_1_ns <= 0 or exposure_2_ns <= 0:
        raise ValueError("exposures must be positive")
    n = int(count_1) + int(count_2)
    q = exposure_1_ns / (exposure_1_ns + exposure_2_ns)
    if n == 0:
        z, p = 0.0, 1.0
    else:
        z = (count_1 - n * q) / math.sqrt(n * q * (1.0 - q))
        p = float(stats.binomtest(int(count_1), n, q).pvalue)
    digest = _digest(json.dumps([int(count_1), float(exposure_1_ns), int(count_2),
                                 float(exposure_2_ns)]))
    return _report(name, z, 0, min(p, 1.0), alpha, digest,
                   diagnostics={"counts": [int(count_1), int(count_2)],
                                "rates_hz": [count_1 / exposure_1_ns * 1e9,
                                             count_2 / exposure_2_ns * 1e9]})
test_poisson_rates.__test__ = False
