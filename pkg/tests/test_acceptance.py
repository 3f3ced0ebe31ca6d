"""Acceptance suite: one test per criterion, at the stated tolerances.

Each test prints a PASS line when its criterion holds (run with -s to
see them).  Three assertions are expected to fail against published
reference values that two independent oracles contradict; their
messages point at the evidence (see also notes/decisions.md outside
the package).
"""

import time

import numpy as np
import pytest
from scipy import stats

from linenet import allocate, amc, dbie, delay, emc, netcod, rbie, sim
from linenet.mixtures import GeometricMixture, gm_convolve
from linenet.model import NetworkSpec, enumerate_states, index_state, state_index
from conftest import QueueOracle, random_spec

FOUR_HOP = NetworkSpec((0.5, 0.4999, 0.4998, 0.4), (5, 5, 5))
EIGHT_HOP = {m: NetworkSpec((0.25,) * 8, (m,) * 7) for m in (5, 10, 15)}


def _stamp(label: str, detail: str = "") -> None:
    print(f"[acceptance] {label}: PASS {detail}".rstrip())


# -- criterion 1: four-hop benchmark ----------------------------------------

def test_criterion_1_four_hop_agreement():
    t0 = time.perf_counter()
    rsol = rbie.solve(FOUR_HOP)
    t_rbie = time.perf_counter() - t0
    rcap = rbie.capacity(rsol)
    assert rcap == pytest.approx(0.43484, abs=2e-5)
    np.testing.assert_allclose(rsol.r, [0.5, 0.46797, 0.43958, 0.43484], atol=2e-5)
    np.testing.assert_allclose(rsol.pb, [0.13031, 0.07078, 0.01076, 0.0], atol=2e-5)

    t0 = time.perf_counter()
    dsol = dbie.solve(FOUR_HOP)
    t_dbie = time.perf_counter() - t0
    dcap = dbie.capacity(dsol)
    assert dcap == pytest.approx(0.435089, abs=1e-4)

    t0 = time.perf_counter()
    ecap = emc.capacity_exact(FOUR_HOP)
    t_exact = time.perf_counter() - t0
    assert FOUR_HOP.num_states == 216
    assert ecap == pytest.approx(0.43501, abs=1e-3)

    for name, t in (("rbie", t_rbie), ("dbie", t_dbie), ("exact", t_exact)):
        assert t < 5.0, f"{name} took {t:.2f}s, over the 5 s budget"
    _stamp(
        "criterion 1",
        f"(rbie {rcap:.6f}, dbie {dcap:.6f}, exact {ecap:.6f}; "
        f"times {t_rbie:.2f}/{t_dbie:.2f}/{t_exact:.2f}s)",
    )


# -- criterion 2: two-hop collapse -------------------------------------------

def test_criterion_2_two_hop_collapse():
    rng = np.random.default_rng(20240)
    worst = 0.0
    for _ in range(20):
        e1, e2 = rng.uniform(0.05, 0.95, 2)
        m1 = int(rng.integers(1, 7))
        spec = NetworkSpec((float(e1), float(e2)), (m1,))
        exact = emc.capacity_exact(spec)
        vals = {
            "rbie": rbie.capacity(rbie.solve(spec)),
            "dbie": dbie.capacity(dbie.solve(spec)),
            "lower": amc.capacity_lower(spec),
            "upper": amc.capacity_upper(spec),
        }
        for name, v in vals.items():
            diff = abs(v - exact)
            worst = max(worst, diff)
            assert diff <= 1e-6, f"{name} off by {diff:.2e} on {spec}"
    _stamp("criterion 2", f"(20 specs, worst |diff| {worst:.2e})")


# -- criterion 3: sandwich ----------------------------------------------------

def test_criterion_3_sandwich():
    rng = np.random.default_rng(30303)
    violations = 0
    for _ in range(50):
        spec = random_spec(rng, h_choices=(3, 4), m_max=4)
        res = amc.bounds(spec, with_exact=True)
        if not (res.lower - 1e-9 <= res.exact <= res.upper + 1e-9):
            violations += 1
    assert violations == 0
    _stamp("criterion 3", "(50 specs, zero violations)")


# -- criterion 4: coupled trajectory checks -----------------------------------

def test_criterion_4_coupling():
    rng = np.random.default_rng(40404)
    total = 0
    epochs = 10**5
    for h in (2, 3, 4):
        k = 334 if h == 2 else 333
        eps = rng.uniform(0.1, 0.9, (k, h))
        buf = rng.integers(1, 5, (k, h - 1))
        ok_low = amc.coupled_boundedness_batch(eps, buf, epochs, seed=1000 + h)
        assert ok_low.all(), f"dominance failed for h={h}"
        ok_up = amc.coupled_upper_batch(eps, buf, epochs, seed=2000 + h)
        assert ok_up.all(), f"suffix dominance failed for h={h}"
        total += k
    assert total == 1000

    spec = NetworkSpec((0.3, 0.5, 0.7), (2, 2))
    mutated_fails = sum(
        not amc.coupled_upper_check(spec, seed=s, epochs=5000, expand_buffers=False)
        for s in range(10)
    )
    assert mutated_fails >= 1
    _stamp("criterion 4", f"(1000 pairs x {epochs} epochs, mutation fails {mutated_fails}/10)")


# -- criterion 5: delay reproduction ------------------------------------------

@pytest.fixture(scope="module")
def delay_results():
    out = {}
    for m, spec in EIGHT_HOP.items():
        dsol = dbie.solve(spec)
        prof = delay.delay_profile(spec, delay.psi_rho_from_dbie(dsol, spec))
        rsol = rbie.solve(spec)
        little, _ = delay.mean_delay_little(rsol, spec)
        stats_ = sim.simulate_delay_fcfs(spec, 10**6, seed=505 + m)
        out[m] = (prof, little, stats_)
    return out


def test_criterion_5a_analytic_delay_values(delay_results):
    published = {5: 30.09, 10: 55.22, 15: 81.68}
    for m, (prof, _, stats_) in delay_results.items():
        assert prof.mean == pytest.approx(published[m], abs=0.05), (
            f"analytic mean {prof.mean:.2f} at m={m} vs published {published[m]}; "
            f"the exact-process simulation of the same network measures "
            f"{stats_.delay_mean:.2f} +/- {stats_.delay_se:.2f}, matching the analytic "
            f"value and contradicting the published one (see notes/decisions.md)"
        )
    _stamp("criterion 5a")


def test_criterion_5b_simulated_delay_values(delay_results):
    published = {5: 30.22, 10: 55.18, 15: 81.29}
    for m, (prof, _, stats_) in delay_results.items():
        assert stats_.delay_mean == pytest.approx(published[m], abs=0.5), (
            f"simulated mean {stats_.delay_mean:.2f} +/- {stats_.delay_se:.2f} at m={m} "
            f"vs published {published[m]}; the analytic profile of the same system "
            f"gives {prof.mean:.2f}, consistent with the simulation "
            f"(see notes/decisions.md)"
        )
    _stamp("criterion 5b")


def test_criterion_5c_little_vs_profile(delay_results):
    for m, (prof, little, _) in delay_results.items():
        rel = abs(little - prof.mean) / prof.mean
        assert rel < 0.02, f"m={m}: little {little:.3f} vs profile {prof.mean:.3f}"
    _stamp("criterion 5c", "(Little vs profile within 2%)")


def test_criterion_5_internal_consistency(delay_results):
    """Simulation validates the analytic profile on every configuration."""
    for m, (prof, _, stats_) in delay_results.items():
        tol = max(1.0, 4 * stats_.delay_se)
        assert abs(stats_.delay_mean - prof.mean) < tol
    _stamp(
        "criterion 5 cross-check",
        "(simulated means match analytic profile within 1 epoch)",
    )


# -- criterion 6: continuous bridge --------------------------------------------

@pytest.fixture(scope="module")
def bridge_results():
    lambdas = (10.0, 3.0, 2.99)
    disc = sim.discretize(sim.ContinuousSpec(lambdas, (3, 3), 0.001))
    scale = disc.rate_scale
    exact = scale * emc.capacity_exact(disc.network)
    db = scale * dbie.capacity(dbie.solve(disc.network))
    rb = scale * rbie.capacity(rbie.solve(disc.network))
    return exact, db, rb


def test_criterion_6a_exact_bridge(bridge_results):
    exact, _, _ = bridge_results
    assert abs(exact - 2.2467) / 2.2467 < 0.005
    _stamp("criterion 6a", f"(exact {exact:.4f} within 0.5% of 2.2467)")


def test_criterion_6b_estimate_bridge(bridge_results):
    _, db, rb = bridge_results
    assert db == pytest.approx(2.2447, abs=0.002) and rb == pytest.approx(2.2413, abs=0.002), (
        f"estimates (dbie {db:.4f}, rbie {rb:.4f}) vs published (2.2447, 2.2413); an "
        f"independent continuous-time chain solve puts the true continuous capacity at "
        f"2.2427, which the scaled discrete capacities approach as tau -> 0, so the "
        f"published pair cannot be met by a faithful solver (see notes/decisions.md)"
    )
    _stamp("criterion 6b")


def test_criterion_6c_tau_trend():
    lambdas = (10.0, 3.0, 2.99)
    lam_max = max(lambdas)
    errs = []
    for frac in (1 / 4, 1 / 8, 1 / 16, 1 / 64):
        tau = frac / lam_max
        disc = sim.discretize(sim.ContinuousSpec(lambdas, (3, 3), tau))
        val = disc.rate_scale * emc.capacity_exact(disc.network)
        errs.append(abs(val - 2.2467))
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:])), errs
    _stamp("criterion 6c", f"(errors {['%.4f' % e for e in errs]} non-increasing)")


# -- criterion 7: allocation reproduction --------------------------------------

def test_criterion_7_allocation():
    t0 = time.perf_counter()
    res_a = allocate.allocate((0.3, 0.5, 0.5, 0.2), 30, "max-throughput", rescore_dbie=0)
    t_a = time.perf_counter() - t0
    assert res_a.best.buffers == (5, 21, 4)
    assert res_a.best.capacity == pytest.approx(0.4871, abs=1e-4)
    assert t_a < 60

    t0 = time.perf_counter()
    res_b = allocate.allocate(
        (0.3, 0.5, 0.5, 0.2), 30, "min-delay", floor=0.485, rescore_dbie=0
    )
    t_b = time.perf_counter() - t0
    assert res_b.best.buffers == (4, 20, 6)
    assert res_b.best.mean_delay == pytest.approx(28.46, abs=0.1)
    assert t_b < 60

    t0 = time.perf_counter()
    res_c = allocate.allocate(
        (0.51, 0.50, 0.49, 0.48), 60, "max-throughput", rescore_dbie=0, rescore_exact_cap=0
    )
    t_c = time.perf_counter() - t0
    assert res_c.best.buffers == (27, 20, 13)
    assert t_c < 60
    _stamp(
        "criterion 7",
        f"((5,21,4)@{res_a.best.capacity:.4f}, (4,20,6)@{res_b.best.mean_delay:.2f}ep, "
        f"(27,20,13); {t_a:.1f}/{t_b:.1f}/{t_c:.1f}s)",
    )


# -- criterion 8: network-coding limit ------------------------------------------

def test_criterion_8_coding_limit():
    spec = NetworkSpec((0.5, 0.5, 0.5), (2, 2))
    exact = emc.capacity_exact(spec)
    big = netcod.simulate_no_feedback(spec, netcod.FieldSpec(65536), 10**6, seed=88)
    assert abs(big.innovative_rate - exact) < 1e-2

    small = netcod.simulate_no_feedback(spec, netcod.FieldSpec(2), 10**6, seed=89)
    gap = big.innovative_rate - small.innovative_rate
    sigma = np.hypot(big.innovative_rate_se, small.innovative_rate_se)
    assert gap > 3 * sigma
    _stamp(
        "criterion 8",
        f"(rate {big.innovative_rate:.4f} vs exact {exact:.4f}; q=2 gap {gap:.3f} > 3 sigma)",
    )


# -- criterion 9: property suites (no published numbers) -------------------------

def test_criterion_9a_block_structure():
    rng = np.random.default_rng(9991)
    for _ in range(50):
        emc.verify_block_structure(random_spec(rng, h_choices=(2, 3, 4), m_max=4))
    _stamp("criterion 9a", "(block structure on 50 specs)")


def test_criterion_9b_convolution_brute_force():
    rng = np.random.default_rng(9992)
    checked = 0
    while checked < 100:
        ts = rng.uniform(0.05, 0.95, 4)
        if np.min(np.diff(np.sort(ts))) < 1e-3:
            continue
        w1, w2 = rng.uniform(0.1, 0.9, 2)
        a = GeometricMixture.from_terms([(w1, ts[0]), (1 - w1, ts[1])])
        b = GeometricMixture.from_terms([(w2, ts[2]), (1 - w2, ts[3])])
        conv = gm_convolve(a, b)
        ks = np.arange(2, 201)
        got = np.array([float(conv.pmf(int(k))) for k in ks])
        av = np.array([float(a.pmf(int(k))) for k in range(201)])
        bv = np.array([float(b.pmf(int(k))) for k in range(201)])
        oracle = np.convolve(av, bv)[2:201]
        np.testing.assert_allclose(got, oracle, atol=1e-10)
        checked += 1
    _stamp("criterion 9b", "(100 mixture pairs vs direct convolution)")


def test_criterion_9c_queue_oracle():
    g = GeometricMixture.from_terms([(0.6, 0.3), (0.4, 0.7)])
    theta, q, m = 0.5, 0.2, 2
    oracle = QueueOracle(g, m, theta, q, 250_000, seed=9993)
    tt = dbie.effective_failure(theta, q)
    d = dbie.dj_distribution(g, tt)
    n = oracle.potential.size
    for j in range(6):
        p = float(d[j])
        p_hat = float((oracle.potential == j).mean())
        assert abs(p_hat - p) < 3 * np.sqrt(p * (1 - p) / n) + 1e-9

    _, pi = dbie.embedded_chain(g, m, theta, q)
    for k in (1, 2):
        p = float(pi[k - 1])
        p_hat = float((oracle.post == k).mean())
        assert abs(p_hat - p) < 3.5 * np.sqrt(p * (1 - p) / n)

    pb = float(dbie.blocking_prob(g, m, theta, q))
    pb_hat = float(oracle.blocked.mean())
    assert abs(pb_hat - pb) < 3.5 * np.sqrt(pb * (1 - pb) / n)

    fx = dbie.starvation_distribution(g, pi, theta, q)
    ns = oracle.starve.size
    for k in range(1, 6):
        p = float(fx.pmf(k))
        p_hat = float((oracle.starve == k).mean())
        assert abs(p_hat - p) < 3.5 * np.sqrt(p * (1 - p) / ns)
    _stamp("criterion 9c", f"(queue oracle: {n} arrivals, {ns} starvation gaps)")


def test_criterion_9d_occupancy_chi_square():
    rng = np.random.default_rng(9994)
    for trial in range(10):
        spec = random_spec(rng, h_choices=(2, 3), m_max=3)
        stats_ = sim.simulate_feedback(
            spec, 180_000, warmup=20_000, seed=7000 + trial, joint_stride=64
        )
        pi = emc.stationary(emc.build_emc(spec))
        counts = stats_.joint_counts.astype(float)
        n = counts.sum()
        expected = pi * n
        # pool sparse cells so the chi-square approximation is sound
        keep = expected >= 5
        chi = float(((counts[keep] - expected[keep]) ** 2 / expected[keep]).sum())
        df = int(keep.sum()) - 1
        rest_exp = expected[~keep].sum()
        if rest_exp > 0:
            chi += float((counts[~keep].sum() - rest_exp) ** 2 / rest_exp)
            df += 1
        assert chi < stats.chi2.ppf(0.999, df), f"trial {trial}: chi2 {chi:.1f} df {df}"
    _stamp("criterion 9d", "(occupancy chi-square, 10 specs at the 0.1% level)")


def test_criterion_9e_state_index_bijection():
    rng = np.random.default_rng(9995)
    for _ in range(20):
        spec = random_spec(rng, h_choices=(2, 3, 4, 5), m_max=4)
        seen = set()
        for s in map(tuple, enumerate_states(spec)):
            k = state_index(s, spec)
            assert index_state(k, spec) == s
            seen.add(k)
        assert seen == set(range(1, spec.num_states + 1))
    _stamp("criterion 9e", "(state indexing bijective on 20 specs)")


def test_criterion_9f_flow_conservation():
    rng = np.random.default_rng(9996)
    worst = 0.0
    for _ in range(20):
        spec = random_spec(rng, h_choices=(2, 3, 4, 5), m_max=6)
        sol = rbie.solve(spec)
        flows = sol.r * (1 - sol.pb)
        worst = max(worst, float(flows.max() - flows.min()))
        assert flows.max() - flows.min() <= 1e-9
    _stamp("criterion 9f", f"(flow conservation residual worst {worst:.1e})")
