"""
Covariance codebook design with Lloyd's algorithm.

A codebook holds ``2**B`` codewords, each a set of per-user transmit
covariances.  Design alternates two steps over a training set of channel
draws:

* partition: each draw goes to the codeword with the highest sum-rate;
* centroid: each cell's codeword is re-optimized by iterative waterfilling
  on the "effective channel" ``S`` with ``S^* S`` equal to the cell's mean
  Gramian ``E[H^* H]``.
"""

import json
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .channel import SystemDims
from .numerics import psd_sqrt
from .rates import cov_rates
from .waterfill import PowerBudget, SolverOptions, solve

__all__ = [
    "EmptyCellError",
    "TrainingSet",
    "LloydOptions",
    "CovarianceCodebook",
    "assign_partition",
    "centroid_update",
    "lloyd",
    "design",
    "nested_subsets",
    "complex_to_json",
    "complex_from_json",
]

MIN_DRAWS_PER_CELL = 20


class EmptyCellError(ValueError):
    """Raised when a centroid is requested for a cell without training draws."""


@dataclass
class TrainingSet:
    """Channel draws ``(N, Mr, K*Mt)`` plus the noise variance used for design."""

    H: np.ndarray
    sigma2: float
    dims: SystemDims

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=complex)
        d = self.dims
        if self.H.ndim != 3 or self.H.shape[0] == 0:
            raise ValueError("training set must be a non-empty (N, Mr, K*Mt) stack")
        if self.H.shape[1:] != (d.Mr, d.n_tx):
            raise ValueError(f"training draws have shape {self.H.shape[1:]}, expected {(d.Mr, d.n_tx)}")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    def __len__(self):
        return self.H.shape[0]


@dataclass(frozen=True)
class LloydOptions:
    restarts: int = 4
    max_rounds: int = 50
    tol: float = 1e-4
    seed: int = 0
    solver: SolverOptions = SolverOptions()


def complex_to_json(A: np.ndarray) -> dict:
    A = np.asarray(A)
    return {"re": A.real.tolist(), "im": A.imag.tolist()}


def complex_from_json(d: dict) -> np.ndarray:
    return np.asarray(d["re"], dtype=float) + 1j * np.asarray(d["im"], dtype=float)


@dataclass
class CovarianceCodebook:
    """``2**B`` codewords stored as a ``(2**B, K, Mt, Mt)`` covariance array."""

    B: int
    entries: np.ndarray
    budget: PowerBudget
    dims: SystemDims
    design_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=complex)
        d = self.dims
        if self.entries.shape != (2 ** self.B, d.K, d.Mt, d.Mt):
            raise ValueError(f"expected {2 ** self.B} entries of shape {(d.K, d.Mt, d.Mt)}, "
                             f"got array of shape {self.entries.shape}")
        for q, Q in enumerate(self.entries):
            if not self.budget.is_feasible(Q):
                raise ValueError(f"codeword {q} violates the power budget")

    def __len__(self):
        return self.entries.shape[0]

    def to_dict(self) -> dict:
        d = self.dims
        return {
            "type": "covariance",
            "dims": {"K": d.K, "Mt": d.Mt, "Mr": d.Mr},
            "B": self.B,
            "budget": self.budget.to_dict(),
            "entries": [[complex_to_json(Qk) for Qk in Q] for Q in self.entries],
            "design_meta": self.design_meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CovarianceCodebook":
        entries = np.array([[complex_from_json(Qk) for Qk in Q] for Q in d["entries"]])
        return cls(d["B"], entries, PowerBudget.from_dict(d["budget"]),
                   SystemDims(**d["dims"]), d.get("design_meta", {}))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "CovarianceCodebook":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def assign_partition(training: TrainingSet, codebook: CovarianceCodebook) -> np.ndarray:
    """Index (0-based) of the best codeword for every training draw; ties go to the lowest index."""
    if codebook.dims != training.dims:
        raise ValueError("codebook and training set dimensions differ")
    R = cov_rates(training.H, codebook.entries, training.sigma2)
    return np.argmax(R, axis=1)


def centroid_update(H_region: np.ndarray, dims: SystemDims, budget: PowerBudget, sigma2: float,
                    opts: SolverOptions = SolverOptions()):
    """
    Re-optimize one codeword for a cell of draws.

    The cell's mean Gramian ``R = mean(H^* H)`` is factored as ``S^* S``
    with ``S`` its Hermitian square root; the k-th ``Mt``-column block of
    ``S`` is user k's effective channel for iterative waterfilling.

    Returns the :class:`~lfmac.waterfill.IWFResult`.
    """
    H_region = np.asarray(H_region)
    if H_region.shape[0] == 0:
        raise EmptyCellError("cannot compute a centroid for an empty cell")
    R = np.einsum("nri,nrj->ij", H_region.conj(), H_region) / H_region.shape[0]
    S = psd_sqrt(0.5 * (R + R.conj().T))
    channels = np.transpose(S.reshape(dims.n_tx, dims.K, dims.Mt), (1, 0, 2))
    return solve(channels, budget, sigma2, opts)


@dataclass
class LloydResult:
    entries: list
    objective: float
    restart: int
    round: int
    histories: List[List[float]]
    converged: bool
    flags: List[str]


def lloyd(H: np.ndarray, n_cells: int, centroid: Callable, rates: Callable,
          opts: LloydOptions) -> LloydResult:
    """
    Generic Lloyd loop shared by the covariance and eigenbeam designers.

    ``centroid(H_cell)`` builds a codeword from a non-empty cell of draws and
    ``rates(H, entries)`` returns the ``(N, C)`` matrix of sum-rates.  The
    codebook with the best training objective seen over all restarts and
    rounds is returned.
    """
    rng = np.random.default_rng(opts.seed)
    N = H.shape[0]
    best = None
    histories = []
    flags = []
    for restart in range(opts.restarts):
        start = rng.choice(N, size=n_cells, replace=False)
        entries = [centroid(H[[i]]) for i in start]
        history = []
        prev = -np.inf
        converged = False
        for rnd in range(opts.max_rounds):
            R = rates(H, entries)
            assign = np.argmax(R, axis=1)
            served = R[np.arange(N), assign]
            obj = float(served.mean())
            history.append(obj)
            if best is None or obj > best.objective:
                best = LloydResult(list(entries), obj, restart, rnd, histories, False, flags)
            if obj - prev < opts.tol:
                converged = True
                break
            prev = obj
            worst = iter(np.argsort(served, kind="stable"))
            new = []
            for q in range(n_cells):
                members = assign == q
                if members.any():
                    new.append(centroid(H[members]))
                else:
                    # reseed an empty cell from the worst-served draw
                    new.append(centroid(H[[next(worst)]]))
                    flags.append(f"restart {restart} round {rnd}: empty cell {q} reseeded")
            entries = new
        histories.append(history)
        if best.restart == restart:
            best.converged = converged
    return best


def design(training: TrainingSet, B: int, budget: PowerBudget,
           opts: LloydOptions = LloydOptions()) -> CovarianceCodebook:
    """
    Design a ``2**B``-entry covariance codebook.

    Parameters
    ----------
    training : TrainingSet
        Channel draws; at least ``20 * 2**B`` are required.
    B : int
        Feedback bits.
    budget : PowerBudget
        Sum or individual power budget (powers in units of the noise
        variance times ``training.sigma2``).
    opts : LloydOptions
        Restarts, round limit, stopping tolerance in bits and seed.

    Returns
    -------
    CovarianceCodebook
        The best codebook over all restarts; ``design_meta`` records seed,
        rounds, training size, objective and convergence flags.
    """
    if B < 0:
        raise ValueError("B must be non-negative")
    C = 2 ** B
    N = len(training)
    if N < MIN_DRAWS_PER_CELL * C:
        raise ValueError(f"training set too small: {N} draws for {C} codewords, "
                         f"need at least {MIN_DRAWS_PER_CELL * C}")
    dims, sigma2 = training.dims, training.sigma2
    nonconv = []

    def centroid(H_cell):
        res = centroid_update(H_cell, dims, budget, sigma2, opts.solver)
        if not res.converged:
            nonconv.append(res.iterations)
        return res.covariances

    def rates(H, entries):
        return cov_rates(H, np.asarray(entries), sigma2)

    meta = {"seed": opts.seed, "training_size": N, "restarts": opts.restarts,
            "max_rounds": opts.max_rounds, "tol": opts.tol}
    if C == 1:
        Q = centroid(training.H)
        obj = float(rates(training.H, [Q]).mean())
        meta.update(objective=obj, rounds=0, restart=0, converged=True, flags=[])
        return CovarianceCodebook(B, np.asarray([Q]), budget, dims, meta)
    res = lloyd(training.H, C, centroid, rates, opts)
    flags = list(res.flags)
    if nonconv:
        flags.append(f"{len(nonconv)} waterfilling solves hit max_iters")
    meta.update(objective=res.objective, rounds=res.round, restart=res.restart,
                converged=res.converged, histories=res.histories, flags=flags)
    return CovarianceCodebook(B, np.asarray(res.entries), budget, dims, meta)


def nested_subsets(entries: np.ndarray, H: np.ndarray, sigma2: float, sizes) -> dict:
    """
    Greedy nested sub-codebooks of a covariance codebook.

    Codewords are added one at a time, each time picking the one that most
    increases the average selected sum-rate over ``H``.  Returns a mapping
    ``size -> index array``; smaller sub-codebooks are prefixes of larger ones.
    """
    R = cov_rates(H, entries, sigma2)
    n = max(sizes)
    if n > R.shape[1]:
        raise ValueError("requested subset larger than the codebook")
    chosen = []
    current = np.full(R.shape[0], -np.inf)
    for _ in range(n):
        gains = [np.mean(np.maximum(current, R[:, q])) if q not in chosen else -np.inf
                 for q in range(R.shape[1])]
        q = int(np.argmax(gains))
        chosen.append(q)
        current = np.maximum(current, R[:, q])
    return {s: np.array(chosen[:s]) for s in sizes}
