import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from mpmath import mp, mpf

from linenet.errors import DistinctParamError
from linenet.mixtures import GeometricMixture, geometric, gm_convolve, identity


def brute_convolve_pmf(f, g, kmax):
    """Independent oracle: direct pmf convolution on a truncated grid."""
    fv = [float(f.pmf(k)) for k in range(kmax + 1)]
    gv = [float(g.pmf(k)) for k in range(kmax + 1)]
    out = np.convolve(fv, gv)[: kmax + 1]
    return out


def test_single_convolution_identity():
    res = gm_convolve(geometric(0.5), geometric(0.25))
    terms = {float(t): float(p) for p, t in res.terms}
    assert terms[0.5] == pytest.approx(3.0, abs=1e-15)
    assert terms[0.25] == pytest.approx(-2.0, abs=1e-15)
    assert float(res.mean()) == pytest.approx(2 + 4 / 3, abs=1e-12)


def test_convolution_pmf_matches_brute_force():
    a = gm_convolve(geometric(0.5), geometric(0.25))
    oracle = brute_convolve_pmf(geometric(0.5), geometric(0.25), 200)
    got = np.array([float(a.pmf(k)) for k in range(201)])
    np.testing.assert_allclose(got, oracle, atol=1e-12)


def test_convolve_with_identity_is_noop():
    a = gm_convolve(geometric(0.3), geometric(0.6))
    same = gm_convolve(a, identity())
    assert same.terms == a.terms
    assert same.atom0 == a.atom0


def test_weight_sums_preserved():
    rng = np.random.default_rng(2)
    for _ in range(50):
        t1, t2, t3 = sorted(rng.uniform(0.05, 0.95, 3))
        if t2 - t1 < 1e-3 or t3 - t2 < 1e-3:
            continue
        a = gm_convolve(geometric(t1), geometric(t3))
        b = gm_convolve(a, geometric(t2))
        assert float(b.weight_sum()) == pytest.approx(1.0, abs=1e-9)


def test_random_pairs_match_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(100):
        ts = rng.uniform(0.05, 0.95, 4)
        if np.min(np.diff(np.sort(ts))) < 1e-3:
            continue
        w = rng.uniform(0.2, 0.8)
        a = GeometricMixture.from_terms([(w, ts[0]), (1 - w, ts[1])])
        b = GeometricMixture.from_terms([(0.5, ts[2]), (0.5, ts[3])])
        conv = gm_convolve(a, b)
        oracle = brute_convolve_pmf(a, b, 200)
        got = np.array([float(conv.pmf(k)) for k in range(201)])
        np.testing.assert_allclose(got[2:], oracle[2:], atol=1e-10)


def test_mean_additivity():
    a = GeometricMixture.from_terms([(0.7, 0.2), (0.3, 0.8)])
    b = geometric(0.55)
    conv = gm_convolve(a, b)
    assert float(conv.mean()) == pytest.approx(float(a.mean() + b.mean()), rel=1e-12)


def test_coincident_parameters_rejected():
    with pytest.raises(DistinctParamError):
        gm_convolve(geometric(0.5), geometric(0.5))


@given(
    st.lists(
        st.floats(0.05, 0.95).map(lambda v: round(v, 3)),
        min_size=2,
        max_size=4,
        unique=True,
    ),
    st.integers(0, 1000),
)
@settings(max_examples=30, deadline=None)
def test_convolution_properties(thetas, seed):
    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(np.ones(len(thetas) - 1))
    a = GeometricMixture.from_terms(list(zip(weights, thetas[:-1])))
    b = geometric(thetas[-1])
    conv = gm_convolve(a, b)
    assert float(conv.weight_sum()) == pytest.approx(1.0, abs=1e-9)
    assert float(conv.mean()) == pytest.approx(float(a.mean() + b.mean()), rel=1e-9)
    # a sum of two waits of at least one epoch each cannot finish in one
    assert abs(float(conv.pmf(1))) < 1e-9
    assert float(conv.pmf(0)) == 0.0


def test_validate_catches_bad_mixtures():
    bad = GeometricMixture.from_terms([(2.0, 0.5)])
    with pytest.raises(ValueError):
        bad.validate()
    ok = gm_convolve(geometric(0.4), geometric(0.6))
    ok.validate(k_check=2000)


def test_compact_drops_negligible_terms():
    a = GeometricMixture.from_terms([(1.0, 0.5), (1e-30, 0.25)])
    c = a.compact(rel_floor=1e-20)
    assert len(c.terms) == 1
    assert float(c.weight_sum()) == pytest.approx(1.0, abs=1e-15)


def test_serialization_round_trip(tmp_path):
    a = gm_convolve(geometric(0.5), geometric(0.25))
    back = GeometricMixture.from_obj(a.to_obj())
    assert [(float(p), float(t)) for p, t in back.terms] == [
        (float(p), float(t)) for p, t in a.terms
    ]
    ups = identity().scaled(0.25).plus(geometric(0.5).scaled(0.75))
    obj = ups.to_obj()
    assert any(e["theta"] is None for e in obj)
    back2 = GeometricMixture.from_obj(obj)
    assert float(back2.atom0) == pytest.approx(0.25)

    path = tmp_path / "pmf.csv"
    a.pmf_csv(path, tail=1e-6)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "k,mass"
    total = sum(float(r.split(",")[1]) for r in rows[1:])
    assert total == pytest.approx(1.0, abs=1e-5)


def test_extended_precision_survives_large_weights():
    # weights near 1e5 with cancellation: unit mass must survive
    with mp.workdps(50):
        a = geometric(mpf("0.5"))
        b = geometric(mpf("0.50001"))
        c = geometric(mpf("0.50002"))
        conv = gm_convolve(gm_convolve(a, b), c)
        assert abs(float(conv.weight_sum()) - 1.0) < 1e-12
        for k in (1, 2, 10, 100):
            assert float(conv.pmf(k)) >= -1e-12
