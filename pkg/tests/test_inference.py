import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from nosignal import contextual as C
from nosignal import inference as I
from nosignal.core import ALICE, BOB, CountTable, PairedSample, Setting, SettingPair, WindowedSample
from nosignal.pairing import FIXED, CoincidenceConfig, bin_windows, postselect
from nosignal.photon_sim import simulate_contextual_run, simulate_run, tuned_config
from nosignal.qm import build_rho, sample_joint, singlet_correlation

SP_Y = SettingPair(Setting(0, "x"), Setting(0, "y"))
SP_YP = SettingPair(Setting(0, "x"), Setting(0, "y'"))


def win(values, sp=SP_Y, side=ALICE):
    return WindowedSample.from_values(values, sp, side)


# chi-square and its tail

def test_two_by_two_reference_value():
    stat, dof, p = I.contingency_test([[60, 40], [40, 60]])
    assert stat == pytest.approx(8.0, abs=1e-12) and dof == 1
    assert p == pytest.approx(oracles.chi2_sf_df1(8.0), rel=1e-10)
    assert p == pytest.approx(0.004677734981, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(st.integers(5, 500), min_size=3, max_size=3), min_size=2,
                max_size=6))
def test_chi2_matches_hand_oracle(table):
    stat, dof, p = I.contingency_test(table, min_expected=0)
    assert stat == pytest.approx(oracles.pearson_chi2(table), rel=1e-9, abs=1e-12)
    assert dof == 2 * (len(table) - 1)
    if dof == 2:
        assert p == pytest.approx(oracles.chi2_sf_df2(stat), rel=1e-10, abs=1e-300)


@pytest.mark.parametrize("x", [1e-6, 0.5, 3.0, 20.0, 60.0])
def test_chi2_tail_reference(x):
    assert I.chi2_sf(x, 1) == pytest.approx(oracles.chi2_sf_df1(x), rel=1e-10)
    assert I.chi2_sf(x, 2) == pytest.approx(oracles.chi2_sf_df2(x), rel=1e-10)
    assert I.chi2_sf(x, 4) == pytest.approx(math.exp(-x / 2) * (1 + x / 2), rel=1e-10)


def test_pooling_rare_and_empty_categories():
    # an all-zero category is dropped; a rare one is merged into its smallest neighbour
    stat, dof, _ = I.contingency_test([[50, 0, 50], [40, 0, 60]])
    assert dof == 1 and stat == pytest.approx(oracles.pearson_chi2([[50, 50], [40, 60]]))
    stat, dof, _ = I.contingency_test([[50, 1, 49], [50, 2, 48]])
    assert dof == 1
    assert stat == pytest.approx(oracles.pearson_chi2([[50, 50], [50, 50]]), abs=1e-12)


def test_single_category_is_degenerate():
    assert I.contingency_test([[10, 0], [7, 0]]) == (0.0, 0, 1.0)


def test_g_test_by_hand():
    table = [[60, 40], [40, 60]]
    stat, dof, p = I.contingency_test(table, "g")
    g = 2 * sum(o * math.log(o / 50) for row in table for o in row)
    assert stat == pytest.approx(g, rel=1e-12) and dof == 1
    assert p == pytest.approx(oracles.chi2_sf_df1(g), rel=1e-10)
    with pytest.raises(ValueError):
        I.contingency_test(table, "fisher")


def test_contingency_errors():
    with pytest.raises(ValueError):
        I.contingency_test([[1, 2]])
    with pytest.raises(ValueError):
        I.contingency_test([[0, 0], [1, 2]])


@pytest.mark.parametrize("k", [1, 2, 5, 10, 100])
def test_p_value_monotone_under_scaling(k):
    base = I.contingency_test([[55, 45], [45, 55]])[2]
    scaled = I.contingency_test([[55 * k, 45 * k], [45 * k, 55 * k]])[2]
    assert scaled <= base


# runs test

def test_runs_test_small_example():
    z, p = I.runs_test([1, 1, -1, -1])
    assert z == pytest.approx(-1 / math.sqrt(2 / 3), rel=1e-12)
    assert p == pytest.approx(math.erfc(abs(z) / math.sqrt(2)), rel=1e-12)


def test_runs_test_degenerate_and_alternating():
    assert I.runs_test([1, 1, 1]) == (0.0, 1.0)
    assert I.runs_test([]) == (0.0, 1.0)
    z, p = I.runs_test([1, -1] * 100)
    assert z > 10 and p < 1e-20


# marginals

def test_marginals_examples():
    w = win([1, 1, -1, 0])
    m = I.estimate_marginals(w)
    assert m.probs == {-1: 0.25, 0: 0.25, 1: 0.5} and m.n == 4
    assert m.std_errs[1] == pytest.approx(math.sqrt(0.25 / 4))
    m = I.estimate_marginals(w, I.OWN_NONZERO)
    assert m.probs[1] == pytest.approx(2 / 3) and m.probs[-1] == pytest.approx(1 / 3)
    assert abs(sum(m.probs.values()) - 1) < 1e-9


def test_marginals_errors():
    with pytest.raises(ValueError):
        I.estimate_marginals(win([0, 0]), I.OWN_NONZERO)
    with pytest.raises(ValueError):
        I.estimate_marginals(PairedSample.from_pairs([(1, 1)], SP_Y))
    with pytest.raises(ValueError):
        I.estimate_marginals(win([1]), I.BOTH_NONZERO)


def _witness_windows(y, n, seed):
    a, b = simulate_contextual_run(C.witness_model(), "x", y, n, 10, seed)
    return bin_windows(a, b, CoincidenceConfig(FIXED, 10))


def test_witness_pipeline_marginals_and_estimator_inequality():
    both = {}
    for y, seed in (("y", 1), ("y'", 2)):
        wa, wb = _witness_windows(y, 20_000, seed)
        own = I.estimate_marginals(wa, I.OWN_NONZERO)
        sel = I.estimate_marginals(postselect(wa, wb), I.BOTH_NONZERO, ALICE)
        both[y] = sel.probs[1]
        # own-click conditioning keeps P(+1) near 1/2; both-click selection does not
        assert abs(own.probs[1] - 0.5) <= 4 * own.std_errs[1]
        gap = abs(own.probs[1] - sel.probs[1])
        assert gap > 5 * math.hypot(own.std_errs[1], max(sel.std_errs[1], 1 / sel.n))
    assert both["y"] == 1.0 and both["y'"] == 0.0


def test_zero_free_estimators_agree():
    m = C.random_contextual_model(np.random.default_rng(3), zero_prob=0.0)
    a, b = simulate_contextual_run(m, "x", "y", 20_000, 10, 5)
    wa, wb = bin_windows(a, b, CoincidenceConfig(FIXED, 10))
    own = I.estimate_marginals(wa, I.OWN_NONZERO)
    sel = I.estimate_marginals(postselect(wa, wb), I.BOTH_NONZERO, ALICE)
    assert abs(own.probs[1] - sel.probs[1]) <= 4 * own.std_errs[1] + 1e-12


# no-signalling, CDMD, homogeneity

def test_nosignalling_identical_counts():
    v = [1, -1, 0, 0, 1] * 20
    r = I.test_nosignalling(win(v), win(v, SP_YP), homogeneity_blocks=0)
    assert r.statistic == 0 and r.p_value == 1 and r.verdict == I.FAIL_TO_REJECT


def test_nosignalling_reference_counts():
    s1 = win([1] * 60 + [-1] * 40)
    s2 = win([1] * 40 + [-1] * 60, SP_YP)
    r = I.test_nosignalling(s1, s2, homogeneity_blocks=0)
    assert r.statistic == pytest.approx(8.0) and r.p_value == pytest.approx(0.004677734981)
    assert r.verdict == I.REJECT


def test_nosignalling_preconditions():
    with pytest.raises(ValueError):
        I.test_nosignalling(win([1]), win([1], SP_YP, BOB))
    other = SettingPair(Setting(45, "x'"), Setting(0, "y'"))
    with pytest.raises(ValueError):
        I.test_nosignalling(win([1]), win([1], other))


def test_nosignalling_attaches_shl_caveat_on_drift():
    # first half all +1, second half all -1: inhomogeneous blocks
    drift = win([1] * 500 + [-1] * 500)
    flat = win([1, -1] * 500, SP_YP)
    r = I.test_nosignalling(drift, flat)
    assert r.caveat == I.UNRELIABLE_SHL and not r.reliable
    ok = I.test_nosignalling(win([1, -1] * 500), flat)
    assert ok.caveat == "" and ok.reliable


def test_report_reproducible():
    s1, s2 = win([1, 0, -1] * 50), win([1, 1, -1] * 50, SP_YP)
    assert I.test_nosignalling(s1, s2) == I.test_nosignalling(s1, s2)
    assert I.test_nosignalling(s1, s2).inputs_digest != I.test_nosignalling(s2, s1).inputs_digest
    with pytest.raises(ValueError):
        I.TestReport("x", 1.0, 1, 0.01, 0.05, I.FAIL_TO_REJECT, "")


def test_cdmd_identical_and_witness():
    p = PairedSample.from_pairs([(1, 1), (-1, 1)] * 10, SP_Y)
    q = PairedSample.from_pairs([(1, 1), (-1, 1)] * 10, SP_YP)
    r = I.test_cdmd(p, q)
    assert r.p_value == 1 and r.note == ""
    py = postselect(*_witness_windows("y", 20_000, 1))
    pyp = postselect(*_witness_windows("y'", 20_000, 2))
    assert len(py) >= 9_000 and len(pyp) >= 9_000
    r = I.test_cdmd(py, pyp)
    assert r.rejected and r.p_value < 1e-6
    assert r.note == I.CDMD_NOTE and "not evidence of signalling" in r.note


def _multinomial_window(rng, n, probs, sp):
    return win(rng.choice([-1, 0, 1], size=n, p=probs), sp)


def test_nosignalling_calibration_synthetic():
    rng = np.random.default_rng(11)
    trials = 200
    hits = sum(I.test_nosignalling(_multinomial_window(rng, 2000, [0.1, 0.8, 0.1], SP_Y),
                                   _multinomial_window(rng, 2000, [0.1, 0.8, 0.1], SP_YP),
                                   homogeneity_blocks=0).rejected
               for _ in range(trials))
    lo, hi = I.null_rejection_band(trials, 0.05)
    assert lo <= hits <= hi


def test_cdmd_calibration_zero_free_model():
    m = C.random_contextual_model(np.random.default_rng(8), zero_prob=0.0)
    trials = 200
    hits = 0
    for k in range(trials):
        d1 = C.sample_contextual(m, "x", "y", 1000, 2 * k)
        d2 = C.sample_contextual(m, "x", "y'", 1000, 2 * k + 1)
        hits += I.test_cdmd(PairedSample.from_pairs(d1, SP_Y),
                            PairedSample.from_pairs(d2, SP_YP)).rejected
    lo, hi = I.null_rejection_band(trials, 0.05)
    assert lo <= hits <= hi


def test_homogeneity_identical_and_degenerate():
    blocks = [win([1, -1, 0, 0])] * 5
    r = I.test_homogeneity(blocks)
    assert r.statistic == 0 and r.p_value == 1
    assert I.test_homogeneity([win([0, 0])] * 3).p_value == 1
    with pytest.raises(I.InsufficientBlocks):
        I.test_homogeneity([win([1])])
    with pytest.raises(ValueError):
        I.test_homogeneity([win([1]), win([1, 1])])


def test_homogeneity_dof():
    rng = np.random.default_rng(0)
    blocks = [_multinomial_window(rng, 3000, [0.2, 0.6, 0.2], SP_Y) for _ in range(6)]
    assert I.test_homogeneity(blocks).dof == 5 * 2


# CHSH

def test_chsh_all_plus_is_two():
    sps = [SettingPair.from_degrees(a, b) for a in (45, 0) for b in (22.5, 67.5)]
    paired = {sp: PairedSample.from_pairs([(1, 1)] * 10, sp) for sp in sps}
    s, err = I.estimate_chsh(paired, Setting(45), Setting(0), Setting(22.5), Setting(67.5))
    assert s == 2 and err == 0


def test_chsh_singlet_sampling():
    # the pure (r=V=1) state at mirrored Bob angles reproduces the singlet table
    state = build_rho(1, 1)
    rng = np.random.default_rng(5)
    paired = {}
    for a in (45, 0):
        for b in (22.5, 67.5):
            sp = SettingPair.from_degrees(a, b)
            d = sample_joint(state, a, -b, 100_000, rng)
            e = float(np.mean(d[:, 0] * d[:, 1].astype(float)))
            assert abs(e - singlet_correlation(a, b)) <= 4 * math.sqrt(1 / 100_000)
            paired[sp] = PairedSample.from_pairs(d, sp)
    s, err = I.estimate_chsh(paired, Setting(45), Setting(0), Setting(22.5), Setting(67.5))
    assert abs(abs(s) - 2 * math.sqrt(2)) <= 4 * err


def test_chsh_tuned_time_delay_violates():
    paired = {}
    for i, a in enumerate((45.0, 0.0)):
        for j, b in enumerate((22.5, 67.5)):
            sp = SettingPair.from_degrees(a, b)
            sa, sb = simulate_run(tuned_config(sp, seed=40 + 2 * i + j,
                                               duration_ns=1_000_000_000))
            paired[sp] = postselect(*bin_windows(sa, sb, CoincidenceConfig(FIXED, 10)))
    s, err = I.estimate_chsh(paired, Setting(45), Setting(0), Setting(22.5), Setting(67.5))
    assert abs(s) - 2 >= 5 * err


def test_chsh_missing_or_empty():
    sp = SettingPair.from_degrees(0, 0)
    with pytest.raises(KeyError):
        I.estimate_chsh({}, Setting(0), Setting(45), Setting(0), Setting(45))
    empty = {SettingPair.from_degrees(a, b): PairedSample.from_pairs([], sp)
             for a in (0, 45) for b in (0, 45)}
    with pytest.raises(ValueError):
        I.estimate_chsh(empty, Setting(0), Setting(45), Setting(0), Setting(45))


# singles counts

def _table():
    a1, a2 = Setting(0, "α1"), Setting(0, "α2")
    b1, b2 = Setting(0, "β1"), Setting(0, "β2")
    rows = {(a1, b1): (1526617, 1699881), (a1, b2): (1522865, 4515782),
            (a2, b2): (4729369, 4507497), (a2, b1): (4735046, 1693718)}
    counts = {}
    for (a, b), (na, nb) in rows.items():
        counts[(SettingPair(a, b), "A")] = na
        counts[(SettingPair(a, b), "B")] = nb
    return CountTable(counts), a1, b1


def test_singles_deviation_table_values():
    table, a1, b1 = _table()
    [da] = I.singles_deviation(table, "A", a1)
    assert da.relative_deviation * 100 == pytest.approx(-0.2458, abs=5e-4)
    assert da.z_score == pytest.approx(oracles.poisson_z(1526617, 1522865), rel=1e-12)
    [db] = I.singles_deviation(table, "B", b1)
    assert db.relative_deviation * 100 == pytest.approx(-0.3626, abs=5e-4)


def test_singles_deviation_equal_and_missing():
    sp1, sp2 = SettingPair.from_degrees(0, 0), SettingPair.from_degrees(0, 45)
    t = CountTable({(sp1, "A"): 100, (sp2, "A"): 100})
    [d] = I.singles_deviation(t, "A", Setting(0))
    assert d.relative_deviation == 0 and d.z_score == 0
    with pytest.raises(KeyError):
        I.singles_deviation(t, "A", Setting(45))


# Poisson rates, bands, multiplicity

def test_poisson_rate_test():
    r = I.test_poisson_rates(1000, 1e9, 1000, 1e9)
    assert r.statistic == 0 and r.p_value == pytest.approx(1.0)
    r = I.test_poisson_rates(10_000, 1e9, 10_600, 1e9)
    assert r.statistic == pytest.approx(-oracles.poisson_z(10_000, 10_600), rel=1e-12)
    assert r.p_value == pytest.approx(math.erfc(abs(r.statistic) / math.sqrt(2)), rel=0.05)
    assert r.rejected
    # unequal exposures at an equal rate
    assert not I.test_poisson_rates(1000, 1e9, 2000, 2e9).rejected
    assert I.test_poisson_rates(0, 1.0, 0, 1.0).p_value == 1.0
    with pytest.raises(ValueError):
        I.test_poisson_rates(1, 0, 1, 1)


def test_null_band_and_bonferroni():
    lo, hi = I.null_rejection_band(200, 0.05)
    assert lo < 10 < hi
    reps = [I.TestReport("t", 0, 1, p, 0.05, I.REJECT if p < 0.05 else I.FAIL_TO_REJECT, "")
            for p in (0.01, 0.02, 0.2)]
    assert I.bonferroni(reps) == [True, False, False]
