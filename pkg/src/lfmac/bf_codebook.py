"""
Beamforming codebooks: each codeword gives every user a unit direction
``v_k`` and an amplitude ``alpha_k`` with ``sum_k alpha_k**2 = P``.

Two designs are provided:

* eigenbeamforming, a Lloyd loop whose centroid beams along the top
  eigenvector of each user's mean Gramian with power proportional to the
  top eigenvalue;
* Grassmannian packing of block-diagonal direction matrices under the
  Fubini-Study distance, paired with random power splits.

For correlated channels a packed codebook can be rotated so that its first
codeword coincides with statistical beamforming.
"""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel import SystemDims
from .cov_codebook import (EmptyCellError, LloydOptions, MIN_DRAWS_PER_CELL, TrainingSet,
                           complex_from_json, complex_to_json, lloyd)
from .numerics import top_eigvec
from .rates import bf_rates
from .waterfill import PowerBudget

__all__ = [
    "BeamformingCodebook",
    "GrassmannOptions",
    "GrassmannResult",
    "eigenbeam_centroid",
    "eigenbeam_design",
    "fubini_study",
    "min_distance",
    "distortion_d2",
    "random_directions",
    "grassmann_design",
    "random_power",
    "statistical_beams",
    "rotate_codebook",
]


@dataclass
class BeamformingCodebook:
    """
    ``directions`` has shape ``(2**B, K, Mt)`` with unit-norm rows and
    ``amplitudes`` shape ``(2**B, K)``.  Only sum budgets are supported.
    """

    B: int
    directions: np.ndarray
    amplitudes: np.ndarray
    budget: PowerBudget
    dims: SystemDims
    design_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=complex)
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        d = self.dims
        C = 2 ** self.B
        if self.directions.shape != (C, d.K, d.Mt) or self.amplitudes.shape != (C, d.K):
            raise ValueError(f"expected {C} codewords for K={d.K}, Mt={d.Mt}")
        if self.budget.kind != "sum":
            raise ValueError("beamforming codebooks use a sum power budget")
        norms = np.linalg.norm(self.directions, axis=-1)
        if np.any(np.abs(norms - 1) > 1e-10):
            raise ValueError("beam directions must have unit norm")
        if np.any(self.amplitudes < 0):
            raise ValueError("amplitudes must be non-negative")
        P = self.budget.powers[0]
        if np.any(np.abs((self.amplitudes ** 2).sum(axis=1) - P) > 1e-8 * P):
            raise ValueError("every codeword must use exactly the sum power")

    def __len__(self):
        return self.directions.shape[0]

    def beamformers(self) -> np.ndarray:
        """Per-user beamforming vectors ``w_k = alpha_k v_k``, shape ``(C, K, Mt)``."""
        return self.amplitudes[..., None] * self.directions

    def covariances(self) -> np.ndarray:
        w = self.beamformers()
        return np.einsum("cki,ckj->ckij", w, w.conj())

    def with_power(self, P: float) -> "BeamformingCodebook":
        """Same directions and power split at a different total power."""
        scale = np.sqrt(P / self.budget.powers[0])
        return BeamformingCodebook(self.B, self.directions, self.amplitudes * scale,
                                   PowerBudget.sum(P), self.dims, dict(self.design_meta))

    def to_dict(self) -> dict:
        d = self.dims
        return {
            "type": "beamforming",
            "dims": {"K": d.K, "Mt": d.Mt, "Mr": d.Mr},
            "B": self.B,
            "budget": self.budget.to_dict(),
            "entries": [
                [{"alpha": float(a), "v": complex_to_json(v)} for a, v in zip(A, V)]
                for A, V in zip(self.amplitudes, self.directions)
            ],
            "design_meta": self.design_meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BeamformingCodebook":
        amps = np.array([[u["alpha"] for u in e] for e in d["entries"]], dtype=float)
        dirs = np.array([[complex_from_json(u["v"]) for u in e] for e in d["entries"]])
        return cls(d["B"], dirs, amps, PowerBudget.from_dict(d["budget"]),
                   SystemDims(**d["dims"]), d.get("design_meta", {}))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "BeamformingCodebook":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def eigenbeam_centroid(H_region: np.ndarray, dims: SystemDims, P: float):
    """
    Eigenbeam codeword for a cell of draws.

    Each user beams along the top eigenvector of its mean Gramian
    ``R_k = mean(H_k^* H_k)``; with ``lam_k`` the top eigenvalue the
    amplitudes are ``alpha_k = sqrt(P * lam_k / sum_j lam_j)``.

    Returns
    -------
    (directions, amplitudes) : ((K, Mt) complex, (K,) float)
    """
    H_region = np.asarray(H_region)
    if H_region.shape[0] == 0:
        raise EmptyCellError("cannot compute a centroid for an empty cell")
    N = H_region.shape[0]
    Hk = H_region.reshape(N, dims.Mr, dims.K, dims.Mt)
    R = np.einsum("nrki,nrkj->kij", Hk.conj(), Hk) / N
    lam = np.empty(dims.K)
    V = np.empty((dims.K, dims.Mt), dtype=complex)
    for k in range(dims.K):
        lam[k], V[k] = top_eigvec(0.5 * (R[k] + R[k].conj().T))
    lam = np.clip(lam, 0.0, None)
    if lam.sum() <= 0:
        raise ValueError("all mean Gramians are zero; no beam direction is defined")
    alpha = np.sqrt(P * lam / lam.sum())
    return V, alpha


def eigenbeam_design(training: TrainingSet, B: int, P: float,
                     opts: LloydOptions = LloydOptions()) -> BeamformingCodebook:
    """
    Lloyd design of an eigenbeamforming codebook under sum power ``P``.

    Draws are partitioned by their achieved beamforming sum-rate and each
    cell is replaced by :func:`eigenbeam_centroid`.  Restarts, stopping and
    empty-cell repair follow :func:`lfmac.cov_codebook.design`.
    """
    if B < 0:
        raise ValueError("B must be non-negative")
    C = 2 ** B
    N = len(training)
    if N < MIN_DRAWS_PER_CELL * C:
        raise ValueError(f"training set too small: {N} draws for {C} codewords, "
                         f"need at least {MIN_DRAWS_PER_CELL * C}")
    dims, sigma2 = training.dims, training.sigma2

    def centroid(H_cell):
        return eigenbeam_centroid(H_cell, dims, P)

    def rates(H, entries):
        beams = np.array([a[:, None] * V for V, a in entries])
        return bf_rates(H, beams, sigma2)

    meta = {"seed": opts.seed, "training_size": N, "restarts": opts.restarts,
            "max_rounds": opts.max_rounds, "tol": opts.tol}
    if C == 1:
        entries = [centroid(training.H)]
        obj = float(rates(training.H, entries).mean())
        meta.update(objective=obj, rounds=0, restart=0, converged=True, flags=[])
    else:
        res = lloyd(training.H, C, centroid, rates, opts)
        entries = res.entries
        meta.update(objective=res.objective, rounds=res.round, restart=res.restart,
                    converged=res.converged, histories=res.histories, flags=list(res.flags))
    dirs = np.array([V for V, _ in entries])
    amps = np.array([a for _, a in entries])
    return BeamformingCodebook(B, dirs, amps, PowerBudget.sum(P), dims, meta)


def fubini_study(Va: np.ndarray, Vb: np.ndarray) -> float:
    """
    Fubini-Study distance between block-diagonal direction matrices given
    as ``(K, Mt)`` stacks of unit vectors: ``arccos(prod_k |<v_a^k, v_b^k>|)``.
    """
    Va, Vb = np.asarray(Va), np.asarray(Vb)
    if Va.shape != Vb.shape:
        raise ValueError("direction stacks must have the same shape")
    prod = np.prod(np.abs(np.sum(Va.conj() * Vb, axis=-1)), axis=-1)
    return float(np.arccos(np.clip(prod, -1.0, 1.0)))


def _pairwise_products(V: np.ndarray) -> np.ndarray:
    # prod_k |<v_q^k, v_r^k>| for all codeword pairs, shape (C, C)
    G = np.abs(np.einsum("qki,rki->qrk", V.conj(), V))
    return np.prod(G, axis=-1)


def min_distance(V: np.ndarray) -> float:
    """Minimum pairwise Fubini-Study distance of a ``(C, K, Mt)`` direction codebook."""
    V = np.asarray(V)
    if V.shape[0] < 2:
        return float(np.pi / 2)
    P = _pairwise_products(V)
    iu = np.triu_indices(V.shape[0], k=1)
    return float(np.arccos(np.clip(P[iu].max(), -1.0, 1.0)))


def distortion_d2(G: np.ndarray, V: np.ndarray) -> np.ndarray:
    """
    Modified packing distortion ``-prod_k |<v_q^k, g^k>|**2``.

    ``G`` is ``(N, K, Mt)``, ``V`` is ``(C, K, Mt)``; the result is ``(N, C)``
    with values in ``[-1, 0]``.
    """
    ip = np.abs(np.einsum("cki,nki->nck", np.conj(V), G)) ** 2
    return -np.prod(ip, axis=-1)


def random_directions(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit vectors uniform on the complex sphere; the last axis is the vector."""
    shape = tuple(shape)
    x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


@dataclass(frozen=True)
class GrassmannOptions:
    training_size: int = 10000
    rounds: int = 60
    snapshot: str = "max"  # "max": best recorded min-distance; "last": final round
    seed: int = 0


@dataclass
class GrassmannResult:
    directions: np.ndarray
    delta: float
    history: list
    best_round: int


def grassmann_design(B: int, dims: SystemDims,
                     opts: GrassmannOptions = GrassmannOptions()) -> GrassmannResult:
    """
    Pack ``2**B`` block-diagonal direction matrices by Lloyd's algorithm.

    Synthetic training directions (uniform per user) are assigned to the
    codeword minimizing :func:`distortion_d2`; each user's centroid is the
    top eigenvector of the cell's mean ``g g^*``.  The minimum distance is
    recorded after every round and, with ``snapshot="max"``, the codebook
    of the best round is returned.
    """
    if B < 1:
        raise ValueError("Grassmannian design needs B >= 1")
    if opts.snapshot not in ("max", "last"):
        raise ValueError(f"unknown snapshot policy {opts.snapshot!r}")
    C = 2 ** B
    rng = np.random.default_rng(opts.seed)
    G = random_directions(rng, (opts.training_size, dims.K, dims.Mt))
    V = random_directions(rng, (C, dims.K, dims.Mt))
    history = [min_distance(V)]
    best_V, best_delta, best_round = V, history[0], 0
    for rnd in range(1, opts.rounds + 1):
        D = distortion_d2(G, V)
        assign = np.argmin(D, axis=1)
        served = D[np.arange(G.shape[0]), assign]
        worst = iter(np.argsort(-served, kind="stable"))
        newV = np.empty_like(V)
        for q in range(C):
            members = assign == q
            cell = G[members] if members.any() else G[[next(worst)]]
            R = np.einsum("nki,nkj->kij", cell, cell.conj()) / cell.shape[0]
            for k in range(dims.K):
                newV[q, k] = top_eigvec(0.5 * (R[k] + R[k].conj().T))[1]
        V = newV
        delta = min_distance(V)
        history.append(delta)
        if delta > best_delta:
            best_V, best_delta, best_round = V, delta, rnd
    if opts.snapshot == "last":
        return GrassmannResult(V, history[-1], history, opts.rounds)
    return GrassmannResult(best_V, best_delta, history, best_round)


def random_power(P: float, K: int, rng: np.random.Generator) -> np.ndarray:
    """
    Random amplitudes with ``sum(alpha**2) = P``; the squared amplitudes are
    uniform on the scaled simplex.
    """
    if not P > 0:
        raise ValueError("P must be positive")
    x = rng.standard_normal(K) + 1j * rng.standard_normal(K)
    a = np.abs(x)
    alpha = np.sqrt(P) * a / np.sqrt(np.sum(a ** 2))
    return alpha


def statistical_beams(tx_correlation: np.ndarray) -> np.ndarray:
    """Top eigenvector of each user's transmit correlation, shape ``(K, Mt)``."""
    R = np.asarray(tx_correlation, dtype=complex)
    return np.array([top_eigvec(Rk)[1] for Rk in R])


def _householder(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # unitary U with U a = e^{i theta} b for unit vectors a, b
    ip = np.vdot(b, a)
    phase = ip / abs(ip) if abs(ip) > 1e-15 else 1.0
    c = phase * b
    u = a - c
    nu = np.linalg.norm(u)
    if nu < 1e-14:
        return np.eye(a.size, dtype=complex)
    u = u / nu
    return np.eye(a.size, dtype=complex) - 2.0 * np.outer(u, u.conj())


def rotate_codebook(V: np.ndarray, target: np.ndarray) -> np.ndarray:
    """
    Rotate a ``(C, K, Mt)`` direction codebook so that its first codeword
    matches ``target`` (``(K, Mt)``) per user up to a phase.

    A per-user Householder reflection is applied to every codeword, which
    leaves all pairwise Fubini-Study distances unchanged.
    """
    V = np.asarray(V, dtype=complex)
    target = np.asarray(target, dtype=complex)
    if V.shape[1:] != target.shape:
        raise ValueError("target must have shape (K, Mt) matching the codebook")
    out = np.empty_like(V)
    for k in range(V.shape[1]):
        U = _householder(V[0, k], target[k])
        out[:, k, :] = V[:, k, :] @ U.T
    return out
