import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from nosignal import contextual as C
from nosignal.core import ALICE, BOB, Setting, SettingPair, TimeTagSeries, WindowedSample
from nosignal.pairing import (FIXED, NEAREST, CoincidenceConfig, bin_windows, pair_nearest,
                              postselect, sweep, sweep_table)
from nosignal.photon_sim import simulate_contextual_run, simulate_run, tuned_config

SP = SettingPair.from_degrees(0, 45)


def series(side, times, outcomes=None, duration=1000, sp=SP):
    outcomes = [1] * len(times) if outcomes is None else outcomes
    return TimeTagSeries(sp, side, times, outcomes, duration)


def near(W, delta=0):
    return CoincidenceConfig(NEAREST, W, delta)


def fixed(W, delta=0):
    return CoincidenceConfig(FIXED, W, delta)


def test_nearest_example():
    a = series(ALICE, [0, 100, 200], [1, -1, -1])
    b = series(BOB, [3, 150, 203], [-1, 1, 1])
    p = pair_nearest(a, b, near(10))
    assert len(p) == 2
    assert list(zip(p.a, p.b)) == [(1, -1), (-1, 1)]
    # one leftover per side: A@100 and B@150
    assert (p.unmatched_A, p.unmatched_B) == (1, 1)


def test_nearest_shift_aligns_exactly():
    a = series(ALICE, [0, 100, 200])
    b = series(BOB, [3, 150, 203])
    assert len(pair_nearest(a, b, near(10, -3))) == 2
    # W=1 only accepts zero offset, so both pairs must sit exactly on top of each other
    assert len(pair_nearest(a, b, near(1, -3))) == 2
    assert len(pair_nearest(a, b, near(1, 0))) == 0


def test_nearest_empty():
    p = pair_nearest(series(ALICE, []), series(BOB, [1, 2]), near(10))
    assert len(p) == 0 and p.unmatched_B == 2


def test_nearest_boundary_is_inclusive():
    a, b = series(ALICE, [10]), series(BOB, [15])
    assert len(pair_nearest(a, b, near(10))) == 1
    assert len(pair_nearest(a, b, near(9))) == 0


times_st = st.lists(st.integers(0, 2000), max_size=40, unique=True).map(sorted)


@settings(max_examples=200, deadline=None)
@given(times_st, times_st, st.integers(1, 60), st.integers(-30, 30))
def test_nearest_matches_quadratic_oracle(ta, tb, W, delta):
    a = series(ALICE, ta, duration=2001)
    b = series(BOB, tb, duration=2001)
    p = pair_nearest(a, b, near(W, delta))
    assert len(p) == len(oracles.greedy_pairs(ta, tb, W, delta))


@settings(max_examples=200, deadline=None)
@given(times_st, times_st, st.integers(1, 60))
def test_nearest_symmetric_under_swap(ta, tb, W):
    sp_swapped = SettingPair(SP.bob, SP.alice)
    p = pair_nearest(series(ALICE, ta, duration=2001), series(BOB, tb, duration=2001), near(W))
    q = pair_nearest(series(ALICE, tb, duration=2001, sp=sp_swapped),
                     series(BOB, ta, duration=2001, sp=sp_swapped), near(W))
    assert len(p) == len(q)


def test_bin_windows_empty_run():
    wa, wb = bin_windows(series(ALICE, [], duration=100), series(BOB, [], duration=100),
                         fixed(10))
    assert wa.length == wb.length == 10
    assert not wa.values.any() and not wb.values.any()


def test_bin_windows_multicount_skips_both_sides():
    a = series(ALICE, [12, 17, 35], [1, -1, 1], duration=100)
    b = series(BOB, [14, 33], [-1, -1], duration=100)
    wa, wb = bin_windows(a, b, fixed(10))
    assert wa.skipped_multicount == wb.skipped_multicount == 1
    assert wa.length == wb.length == 9
    assert list(wa.values) == [0, 0, 1, 0, 0, 0, 0, 0, 0]
    assert list(wb.values) == [0, 0, -1, 0, 0, 0, 0, 0, 0]


def test_bin_windows_drops_partial_window_and_shift():
    a = series(ALICE, [95], duration=105)
    b = series(BOB, [2], [-1], duration=105)
    wa, wb = bin_windows(a, b, fixed(10, 5))
    assert wa.length == 10
    assert wb.values[0] == -1
    assert wa.values[9] == 1


@settings(max_examples=100, deadline=None)
@given(times_st, times_st, st.integers(1, 300), st.integers(-50, 50))
def test_bin_windows_conservation(ta, tb, W, delta):
    a = series(ALICE, ta, duration=2001)
    b = series(BOB, tb, duration=2001)
    wa, wb = bin_windows(a, b, fixed(W, delta))
    assert wa.length == wb.length
    assert wa.length + wa.skipped_multicount == 2001 // W
    assert 0 <= wa.empty_windows <= wa.length
    assert len(postselect(wa, wb)) <= wa.length


def test_postselect_example():
    wa = WindowedSample.from_values([1, 0, -1], SP, ALICE)
    wb = WindowedSample.from_values([0, 1, -1], SP, BOB)
    p = postselect(wa, wb)
    assert list(zip(p.a, p.b)) == [(-1, -1)]


def test_postselect_zero_free_is_identity():
    rng = np.random.default_rng(0)
    va, vb = rng.choice([-1, 1], 50), rng.choice([-1, 1], 50)
    p = postselect(WindowedSample.from_values(va, SP, ALICE),
                   WindowedSample.from_values(vb, SP, BOB))
    assert np.array_equal(p.a, va) and np.array_equal(p.b, vb)


def test_postselect_misaligned():
    with pytest.raises(ValueError):
        postselect(WindowedSample.from_values([1, 0], SP, ALICE),
                   WindowedSample.from_values([1], SP, BOB))


def test_witness_model_end_to_end():
    w = C.witness_model()
    for y, expected in (("y", 1.0), ("y'", 0.0)):
        a, b = simulate_contextual_run(w, "x", y, 100_000, 10, seed=3)
        wa, wb = bin_windows(a, b, fixed(10))
        p = postselect(wa, wb)
        frac = float(np.mean(p.a == 1))
        exact = C.postselected_marginals(w, "x", y)[0][1]
        assert exact == expected
        assert abs(frac - exact) <= 4 * math.sqrt(exact * (1 - exact) / len(p)) + 1e-12


def test_empty_fraction_rises_as_window_shrinks():
    a, b = simulate_run(tuned_config(SP, seed=2, duration_ns=50_000_000))
    fractions = []
    for W in (2000, 200, 20):
        wa, _ = bin_windows(a, b, fixed(W))
        fractions.append(wa.empty_windows / wa.length)
    assert fractions == sorted(fractions)


def _chsh_runs(duration_ns, seed=1):
    runs = {}
    for i, x in enumerate((45.0, 0.0)):
        for j, y in enumerate((22.5, 67.5)):
            sp = SettingPair.from_degrees(x, y)
            runs[sp] = simulate_run(tuned_config(sp, seed=seed * 10 + 2 * i + j,
                                                 duration_ns=duration_ns))
    return runs


def test_sweep_single_point_equals_direct_pipeline():
    runs = _chsh_runs(20_000_000)
    sp = next(iter(runs))
    pts = sweep({sp: runs[sp]}, [10], [0])
    e = pts[(10, 0)].entries[sp]
    direct = pair_nearest(*runs[sp], near(10))
    assert e.pairs == len(direct)
    wa, wb = bin_windows(*runs[sp], fixed(10))
    assert e.L_xy == len(postselect(wa, wb))
    assert sweep({sp: runs[sp]}, [10], [0])[(10, 0)].entries[sp] == e


def test_sweep_pairs_monotone_in_width_and_loophole_signature():
    runs = _chsh_runs(1_000_000_000)
    settings_ = tuple(Setting(v) for v in (45.0, 0.0, 22.5, 67.5))
    pts = sweep(runs, [5, 10, 50, 500, 5000], [0], chsh_settings=settings_)
    for sp in runs:
        counts = [pts[(W, 0)].entries[sp].pairs for W in (5, 10, 50, 500, 5000)]
        assert counts == sorted(counts)
    small, large = abs(pts[(10, 0)].S_chsh), abs(pts[(5000, 0)].S_chsh)
    assert small > 2.5 and large < 2.0 and small > large
    table = sweep_table(pts)
    assert table.splitlines()[0].startswith("W_ns,delta_ns,")
    assert len(table.splitlines()) == 1 + 5 * 4


def test_sweep_needs_grid():
    with pytest.raises(ValueError):
        sweep({}, [], [0])
