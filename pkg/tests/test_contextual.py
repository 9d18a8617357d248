import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from nosignal import contextual as C

XS, YS = ("x", "x'"), ("y", "y'")


def two_valued(a_plus_if, b_plus_if, p_pair):
    return C.DiscreteContextualModel(
        p_pair=np.array(p_pair), p_x={"x": [1.0]}, p_y={"y": [1.0]},
        response_A={"x": [[a_plus_if[0]], [a_plus_if[1]]]},
        response_B={"y": [[b_plus_if[0]], [b_plus_if[1]]]})


def test_all_plus_gives_one():
    m = two_valued((1, 1), (1, 1), [[0.3, 0.2], [0.1, 0.4]])
    assert C.expectation_contextual(m, "x", "y") == pytest.approx(1.0, abs=1e-15)


def test_perfect_anticorrelation():
    m = two_valued((1, -1), (1, -1), [[0.0, 0.5], [0.5, 0.0]])
    assert C.expectation_contextual(m, "x", "y") == -1.0


def test_unregistered_setting():
    with pytest.raises(KeyError):
        C.expectation_contextual(C.witness_model(), "z", "y")


def test_model_validation():
    with pytest.raises(ValueError):
        C.DiscreteContextualModel(np.array([[0.5, 0.6]]), {"x": [1.0]}, {"y": [1.0]},
                                  {"x": [[1]]}, {"y": [[1], [1]]})
    with pytest.raises(ValueError):
        two_valued((2, 1), (1, 1), [[0.5, 0], [0, 0.5]])


def test_enumeration_cap():
    m = C.random_contextual_model(np.random.default_rng(0), 8, 8, 4, 4)
    with pytest.raises(C.EnumerationTooLarge):
        C.expectation_contextual(m, "x", "y", cap=100)


@pytest.mark.parametrize("seed", range(20))
def test_matches_nested_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    m = C.random_contextual_model(rng, 4, 4, 2, 2)
    for x in XS:
        for y in YS:
            assert abs(C.expectation_contextual(m, x, y)
                       - oracles.contextual_expectation(m, x, y)) < 1e-12
            pa, pb, norm = C.postselected_marginals(m, x, y)
            qa, qb, qnorm = oracles.contextual_postselected(m, x, y)
            assert abs(norm - qnorm) < 1e-12
            for o in (-1, 1):
                assert abs(pa[o] - qa[o]) < 1e-12 and abs(pb[o] - qb[o]) < 1e-12
            for side, own, distant in (("A", x, y), ("B", y, x)):
                got = C.singles_distribution(m, own, distant, side)
                want = oracles.contextual_singles(m, x, y, side)
                assert all(abs(got[o] - want[o]) < 1e-12 for o in (-1, 0, 1))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6), st.integers(1, 4),
       st.integers(1, 4))
def test_singles_ignore_distant_setting(seed, n1, n2, nx, ny):
    m = C.random_contextual_model(np.random.default_rng(seed), n1, n2, nx, ny, zero_prob=0.3)
    for x in XS:
        a = C.singles_distribution(m, x, "y", "A")
        b = C.singles_distribution(m, x, "y'", "A")
        assert all(abs(a[o] - b[o]) <= 1e-12 for o in (-1, 0, 1))
        assert abs(sum(a.values()) - 1) < 1e-12
    for y in YS:
        a = C.singles_distribution(m, y, "x", "B")
        b = C.singles_distribution(m, y, "x'", "B")
        assert all(abs(a[o] - b[o]) <= 1e-12 for o in (-1, 0, 1))


def test_witness_singles_and_postselection():
    w = C.witness_model()
    for y in YS:
        assert C.singles_distribution(w, "x", y, "A")[1] == 0.5
    pa_y, _, renorm = C.postselected_marginals(w, "x", "y")
    pa_yp, _, _ = C.postselected_marginals(w, "x", "y'")
    assert pa_y[1] == 1.0 and pa_yp[1] == 0.0 and renorm == 0.5
    assert C.expectation_postselected(w, "x", "y") == 1.0
    assert C.expectation_postselected(w, "x", "y'") == -1.0
    # conditioning on own click alone differs from the both-detected selection
    own = C.singles_distribution(w, "x", "y'", "A")
    own_nonzero_plus = own[1] / (own[1] + own[-1])
    assert own_nonzero_plus == 0.5 != pa_yp[1]


def test_all_zero_response():
    m = C.DiscreteContextualModel(np.array([[1.0]]), {"x": [1.0]}, {"y": [1.0]},
                                  {"x": [[0]]}, {"y": [[1]]})
    assert C.singles_distribution(m, "x", "y", "A")[0] == 1.0
    with pytest.raises(C.EmptySelectionError):
        C.postselected_marginals(m, "x", "y")


@pytest.mark.parametrize("seed", range(5))
def test_zero_free_selection_is_vacuous(seed):
    m = C.random_contextual_model(np.random.default_rng(seed), zero_prob=0.0)
    for x in XS:
        pa, _, renorm = C.postselected_marginals(m, x, "y")
        single = C.singles_distribution(m, x, "y", "A")
        assert renorm == pytest.approx(1.0, abs=1e-12)
        assert pa[1] == pytest.approx(single[1], abs=1e-12)
        assert C.expectation_postselected(m, x, "y") == pytest.approx(
            C.expectation_singles(m, x, "y"), abs=1e-12)


def test_sampling_basics():
    w = C.witness_model()
    assert C.sample_contextual(w, "x", "y", 0, 1).shape == (0, 2)
    a = C.sample_contextual(w, "x", "y", 1000, 3)
    assert np.array_equal(a, C.sample_contextual(w, "x", "y", 1000, 3))
    # Alice's column does not depend on Bob's setting for a fixed seed
    b = C.sample_contextual(w, "x", "y'", 1000, 3)
    assert np.array_equal(a[:, 0], b[:, 0])


def test_witness_monte_carlo_postselected():
    w = C.witness_model()
    n = 10**6
    d = C.sample_contextual(w, "x", "y'", n, 11)
    sel = (d[:, 0] != 0) & (d[:, 1] != 0)
    joint = C.postselected_joint(w, "x", "y'")
    e = sum(a * b * p for (a, b), p in joint.items())
    emp = np.mean(d[sel, 0] * d[sel, 1].astype(float))
    se = max(math.sqrt((1 - e * e) / sel.sum()), 1e-12)
    assert abs(emp - e) <= 4 * se


@pytest.mark.parametrize("seed", range(10))
def test_monte_carlo_cells_within_4_sigma(seed):
    rng = np.random.default_rng(seed)
    m = C.random_contextual_model(rng, 3, 3, 2, 2)
    n = 100_000
    d = C.sample_contextual(m, "x", "y", n, seed)
    exact = oracles.contextual_joint_all(m, "x", "y")
    for a in (-1, 0, 1):
        for b in (-1, 0, 1):
            p = exact.get((a, b), 0.0)
            f = np.mean((d[:, 0] == a) & (d[:, 1] == b))
            assert abs(f - p) <= 4 * math.sqrt(p * (1 - p) / n) + 1e-12


def test_lrhvm_basics_and_embedding():
    m = C.LrhvmModel([1.0], {"x": [1]}, {"y": [1]})
    assert C.expectation_lrhvm(m, "x", "y") == 1.0
    rng = np.random.default_rng(4)
    for _ in range(20):
        m = C.random_lrhvm(rng)
        emb = m.as_contextual()
        for x in XS:
            for y in YS:
                assert C.expectation_lrhvm(m, x, y) == pytest.approx(
                    C.expectation_contextual(emb, x, y), abs=1e-12)
    with pytest.raises(ValueError):
        C.LrhvmModel([1.0], {"x": [0]}, {"y": [1]})


def test_shvm_fair_coins_and_factorisation():
    m = C.ShvmModel([1.0], {"x": [0.5]}, {"y": [0.5]})
    for a in (-1, 1):
        for b in (-1, 1):
            assert C.probability_shvm(m, a, b, "x", "y") == 0.25
    m = C.ShvmModel([1.0], {"x": [0.3]}, {"y": [0.8]})
    pa = {1: 0.3, -1: 0.7}
    pb = {1: 0.8, -1: 0.2}
    for a in (-1, 1):
        for b in (-1, 1):
            assert C.probability_shvm(m, a, b, "x", "y") == pytest.approx(pa[a] * pb[b],
                                                                          abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bell_bound_random_local_models(seed):
    rng = np.random.default_rng(seed)
    for model, ex in ((C.random_lrhvm(rng), C.expectation_lrhvm),
                      (C.random_shvm(rng), C.expectation_shvm)):
        s = C.chsh_value(ex, model, "x", "x'", "y", "y'")
        assert abs(s) <= 2 + 1e-12


def test_fixture_parses_to_witness(tmp_path):
    from pathlib import Path

    fixture = Path(__file__).resolve().parents[1] / "fixtures" / "witness_cdmd.model"
    m = C.load_model(fixture)
    w = C.witness_model()
    for x in XS:
        for y in YS:
            assert C.postselected_joint(m, x, y) == C.postselected_joint(w, x, y)
            assert C.singles_distribution(m, x, y) == C.singles_distribution(w, x, y)
    r = C.random_contextual_model(np.random.default_rng(2), 3, 2, 2, 3)
    back = C.parse_model(C.format_model(r))
    assert C.expectation_contextual(back, "x'", "y") == C.expectation_contextual(r, "x'", "y")


def test_model_format_errors():
    with pytest.raises(C.ModelFormatError, match="line 2"):
        C.parse_model("sizes lambda1=1 lambda2=1 lambdaX=1 lambdaY=1\np_pair abc\n")
    with pytest.raises(C.ModelFormatError):
        C.parse_model("p_pair 1\n")
