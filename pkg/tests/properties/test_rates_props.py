import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from lfmac.rates import (full_csi_rate, mc_estimate, no_feedback_covariances, pentagon,
                         region_2user, select_batch)
from lfmac.waterfill import PowerBudget

from .strategies import covariances, crandn, seeds

small = st.integers(min_value=1, max_value=3)
powers = st.floats(min_value=0.01, max_value=100.0)


@settings(settings.get_profile("props"))
@given(seeds, small, small, small, st.integers(min_value=1, max_value=4), powers)
def test_selected_rate_below_full_csi(seed, K, Mt, Mr, C, P):
    rng = np.random.default_rng(seed)
    H = crandn(rng, Mr, K * Mt)
    entries = np.array([covariances(rng, K, Mt, P) for _ in range(C)])
    _, r = select_batch(H[None], entries, 1.0)
    assert r[0] <= full_csi_rate(H, PowerBudget.sum(P), 1.0, K) + 1e-3


@settings(settings.get_profile("props"))
@given(seeds, small, small, small, st.integers(min_value=1, max_value=4), powers,
       st.floats(min_value=0.05, max_value=0.95))
def test_select_ignores_dominated_entries(seed, K, Mt, Mr, C, P, shrink):
    rng = np.random.default_rng(seed)
    H = crandn(rng, 8, Mr, K * Mt)
    entries = np.array([covariances(rng, K, Mt, P) for _ in range(C)])
    idx, r = select_batch(H, entries, 1.0)
    # a shrunken copy of a codeword is strictly worse on every non-zero draw
    extra = shrink * entries[rng.integers(0, C, size=2)]
    idx2, r2 = select_batch(H, np.concatenate([entries, extra]), 1.0)
    assert np.array_equal(idx, idx2)
    assert np.array_equal(r, r2)


@settings(settings.get_profile("props"))
@given(seeds, small, small, st.integers(min_value=1, max_value=3), powers, powers)
def test_region_convex_and_contains_no_feedback(seed, Mt, Mr, C, P1, P2):
    rng = np.random.default_rng(seed)
    H = crandn(rng, 20, Mr, 2 * Mt)
    entries = []
    for _ in range(C):
        Q = covariances(rng, 2, Mt, 1.0)
        Q[0] *= P1 / np.trace(Q[0]).real
        Q[1] *= P2 / np.trace(Q[1]).real
        entries.append(Q)
    nf = no_feedback_covariances(PowerBudget.individual([P1, P2]), 2, Mt)
    entries = np.array(entries + [nf])
    region = region_2user(H, entries, P1, P2, 1.0, n_directions=7)
    assert region.is_convex(tol=1e-9)
    # expected pentagon of always using the identity codeword
    ru = []
    for k in range(2):
        Hk = H[:, :, k * Mt:(k + 1) * Mt]
        G = np.einsum("nri,ij,nsj->nrs", Hk, nf[k], Hk.conj())
        ru.append(np.mean(np.linalg.slogdet(np.eye(Mr) + G)[1]) / np.log(2))
    Gs = sum(np.einsum("nri,ij,nsj->nrs", H[:, :, k * Mt:(k + 1) * Mt], nf[k],
                       H[:, :, k * Mt:(k + 1) * Mt].conj()) for k in range(2))
    rs = np.mean(np.linalg.slogdet(np.eye(Mr) + Gs)[1]) / np.log(2)
    for v in pentagon(ru[0], ru[1], rs):
        assert region.distance_outside(v) <= 1e-9 * (1 + rs)


@settings(settings.get_profile("props"))
@given(seeds, st.integers(min_value=2, max_value=200))
def test_mc_estimate_is_mean_and_standard_error(seed, n):
    x = np.random.default_rng(seed).standard_normal(n)
    m, se = mc_estimate(x)
    assert m == x.mean()
    assert np.isclose(se, np.sqrt(np.sum((x - m) ** 2) / (n - 1) / n))


def test_independent_runs_agree_within_three_standard_errors():
    # 1000 randomized cases; a calibrated standard error leaves about 0.27 %
    # of pairs outside three combined standard errors
    agree = 0
    cases = 1000
    for case in range(cases):
        rng = np.random.default_rng(case)
        K, Mt, Mr = rng.integers(1, 4, size=3)
        P = 10 ** rng.uniform(-1, 2)
        Q = no_feedback_covariances(PowerBudget.sum(P), K, Mt)
        est = []
        for rep in range(2):
            H = crandn(np.random.default_rng([case, rep]), 200, Mr, K * Mt)
            G = sum(np.einsum("nri,ij,nsj->nrs", H[:, :, k * Mt:(k + 1) * Mt], Q[k],
                              H[:, :, k * Mt:(k + 1) * Mt].conj()) for k in range(K))
            est.append(mc_estimate(np.linalg.slogdet(np.eye(Mr) + G)[1] / np.log(2)))
        (m1, s1), (m2, s2) = est
        agree += abs(m1 - m2) <= 3 * np.hypot(s1, s2)
    assert agree / cases >= 0.99
