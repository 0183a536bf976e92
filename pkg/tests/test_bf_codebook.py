import numpy as np
import pytest

from lfmac.bf_codebook import (BeamformingCodebook, GrassmannOptions, distortion_d2,
                               eigenbeam_centroid, eigenbeam_design, fubini_study,
                               grassmann_design, min_distance, random_directions, random_power,
                               rotate_codebook, statistical_beams)
from lfmac.channel import ChannelModel, SystemDims, correlation_from_eigenvalues, sample_batch
from lfmac.cov_codebook import LloydOptions, TrainingSet
from lfmac.rates import bf_rates
from lfmac.waterfill import PowerBudget

from conftest import crandn, random_psd


def _training(d, n, seed=0):
    return TrainingSet(sample_batch(ChannelModel(d), np.random.default_rng(seed), n), 1.0, d)


def test_centroid_single_user(rng):
    d = SystemDims(1, 3, 2)
    H = crandn(rng, 40, 2, 3)
    V, a = eigenbeam_centroid(H, d, 5.0)
    R = np.einsum("nri,nrj->ij", H.conj(), H) / 40
    w, U = np.linalg.eigh(R)
    assert a[0] == pytest.approx(np.sqrt(5.0))
    assert abs(np.vdot(U[:, -1], V[0])) == pytest.approx(1.0)


def _two_user_region(g1, g2):
    H = np.zeros((1, 2, 4), dtype=complex)
    H[0, 0, 0] = np.sqrt(g1)
    H[0, 1, 2] = np.sqrt(g2)
    return H


def test_centroid_equal_split():
    _, a = eigenbeam_centroid(_two_user_region(2.0, 2.0), SystemDims(2, 2, 2), 4.0)
    assert np.allclose(a ** 2, [2.0, 2.0])


def test_centroid_weighted_split():
    _, a = eigenbeam_centroid(_two_user_region(3.0, 1.0), SystemDims(2, 2, 2), 4.0)
    assert np.allclose(a ** 2, [3.0, 1.0])


def test_centroid_zero_rejected():
    with pytest.raises(ValueError):
        eigenbeam_centroid(np.zeros((3, 2, 4)), SystemDims(2, 2, 2), 1.0)


def test_eigenbeam_b0():
    d = SystemDims(2, 2, 2)
    tr = _training(d, 50)
    cb = eigenbeam_design(tr, 0, 2.0)
    V, a = eigenbeam_centroid(tr.H, d, 2.0)
    assert np.allclose(cb.directions[0], V) and np.allclose(cb.amplitudes[0], a)


def test_eigenbeam_objective_increases_with_bits():
    d = SystemDims(5, 3, 3)
    tr = _training(d, 400, seed=6)
    objs = [eigenbeam_design(tr, B, 3.0, LloydOptions(restarts=1, max_rounds=20, seed=B))
            .design_meta["objective"] for B in (1, 2, 3, 4)]
    assert all(b >= a - 1e-9 for a, b in zip(objs, objs[1:])), objs


def test_eigenbeam_beats_random_codebooks():
    d = SystemDims(2, 1, 2)
    tr = _training(d, 400, seed=3)
    cb = eigenbeam_design(tr, 2, 4.0, LloydOptions(restarts=2, seed=0))
    rnd = []
    for s in range(20):
        rng = np.random.default_rng(s)
        V = random_directions(rng, (4, 2, 1))
        a = np.array([random_power(4.0, 2, rng) for _ in range(4)])
        rnd.append(bf_rates(tr.H, a[..., None] * V, 1.0).max(axis=1).mean())
    assert cb.design_meta["objective"] >= np.mean(rnd)


def test_fubini_study_examples():
    e1, e2 = np.array([1.0, 0]), np.array([0, 1.0])
    Va = np.array([e1, e1])
    assert fubini_study(Va, Va) == 0.0
    assert fubini_study(Va, np.array([e1, e2])) == pytest.approx(np.pi / 2)
    h = np.array([1.0, 1.0]) / np.sqrt(2)
    assert fubini_study(Va, np.array([h, h])) == pytest.approx(np.pi / 3)


def test_min_distance_and_d2(rng):
    V = random_directions(rng, (5, 2, 3))
    brute = min(fubini_study(V[i], V[j]) for i in range(5) for j in range(i + 1, 5))
    assert min_distance(V) == pytest.approx(brute)
    G = random_directions(rng, (10, 2, 3))
    D = distortion_d2(G, V)
    assert D.shape == (10, 5)
    assert np.all((D >= -1) & (D <= 0))


def test_grassmann_two_lines_orthogonal():
    res = grassmann_design(1, SystemDims(1, 2, 1), GrassmannOptions(seed=0))
    # Lloyd on 10^4 sampled lines lands close to the orthogonal pair
    assert res.delta == pytest.approx(np.pi / 2, abs=0.02)


def test_grassmann_snapshot_is_max():
    res = grassmann_design(2, SystemDims(2, 2, 1), GrassmannOptions(training_size=2000, rounds=20, seed=1))
    assert res.delta >= max(res.history)
    assert res.delta == pytest.approx(min_distance(res.directions))
    last = grassmann_design(2, SystemDims(2, 2, 1),
                            GrassmannOptions(training_size=2000, rounds=20, seed=1, snapshot="last"))
    assert last.delta == last.history[-1]


def test_grassmann_beats_random_packing():
    d = SystemDims(2, 2, 3)
    res = grassmann_design(3, d, GrassmannOptions(training_size=5000, rounds=40, seed=2))
    rng = np.random.default_rng(0)
    rand = [min_distance(random_directions(rng, (8, 2, 2))) for _ in range(50)]
    assert res.delta >= np.mean(rand)


def test_grassmann_reproducible():
    d = SystemDims(2, 2, 1)
    o = GrassmannOptions(training_size=500, rounds=5, seed=9)
    assert np.array_equal(grassmann_design(2, d, o).directions, grassmann_design(2, d, o).directions)


def test_grassmann_rejects_b0():
    with pytest.raises(ValueError):
        grassmann_design(0, SystemDims(1, 2, 1))


def test_random_power_properties():
    rng = np.random.default_rng(0)
    assert random_power(3.0, 1, rng)[0] == pytest.approx(np.sqrt(3.0))
    A = np.array([random_power(2.0, 3, rng) for _ in range(100_000)])
    assert np.all(np.abs((A ** 2).sum(axis=1) - 2.0) < 1e-12)
    assert np.allclose((A ** 2).mean(axis=0), 2.0 / 3, rtol=0.02)


def test_statistical_beams():
    v = statistical_beams(np.array([np.eye(2), np.diag([1.2, 0.8])]))
    assert np.allclose(v[0], [1, 0])
    assert np.allclose(v[1], [1, 0])
    rng = np.random.default_rng(4)
    R = random_psd(rng, 3)
    u = statistical_beams(R[None])[0]
    lam = np.linalg.eigvalsh(R)[-1]
    assert np.allclose(R @ u, lam * u, atol=1e-10)


def test_rotation():
    rng = np.random.default_rng(1)
    V = random_directions(rng, (8, 2, 2))
    assert np.allclose(rotate_codebook(V, V[0]), V, atol=1e-12)
    target = statistical_beams(correlation_from_eigenvalues([1.2, 0.8], 2))
    W = rotate_codebook(V, target)
    assert min_distance(W) == pytest.approx(min_distance(V), abs=1e-10)
    for k in range(2):
        ph = np.vdot(target[k], W[0, k])
        assert abs(ph) == pytest.approx(1.0, abs=1e-10)
        assert np.allclose(W[0, k], ph * target[k], atol=1e-10)


def test_codebook_roundtrip_and_power(tmp_path):
    d = SystemDims(2, 2, 3)
    rng = np.random.default_rng(2)
    V = random_directions(rng, (2, 2, 2))
    a = np.array([random_power(3.0, 2, rng) for _ in range(2)])
    cb = BeamformingCodebook(1, V, a, PowerBudget.sum(3.0), d, {"delta_fs": 1.0})
    cb.save(tmp_path / "b.json")
    back = BeamformingCodebook.load(tmp_path / "b.json")
    assert np.array_equal(back.directions, cb.directions)
    assert np.array_equal(back.amplitudes, cb.amplitudes)
    cb2 = cb.with_power(12.0)
    assert np.allclose((cb2.amplitudes ** 2).sum(axis=1), 12.0)
    assert np.allclose(cb.covariances()[0, 0], np.outer(cb.beamformers()[0, 0], cb.beamformers()[0, 0].conj()))


def test_codebook_invariants_enforced():
    d = SystemDims(1, 2, 1)
    V = np.array([[[1.0, 0]]])
    with pytest.raises(ValueError):
        BeamformingCodebook(0, V, np.array([[1.0]]), PowerBudget.sum(2.0), d)
    with pytest.raises(ValueError):
        BeamformingCodebook(0, 2 * V, np.array([[1.0]]), PowerBudget.sum(1.0), d)
    with pytest.raises(ValueError):
        BeamformingCodebook(0, V, np.array([[1.0]]), PowerBudget.individual([1.0]), d)
