"""
Power allocation for the Gaussian MIMO multiple-access channel.

``waterfill_single`` solves the parallel-channel problem exactly.  The two
iterative solvers maximize the sum-rate

    log2 det(I + sigma^-2 * sum_k S_k Q_k S_k^*)

over per-user covariances ``Q_k`` under either per-user trace budgets
(``iwf_individual``, cyclic single-user waterfilling against the others'
interference) or one shared trace budget (``iwf_sum_power``, joint
waterfilling of all users' whitened channels with a common water level).
"""

from dataclasses import dataclass, field
from typing import List, Sequence, Union

import numpy as np

from .numerics import log2det_eye_plus_batch

__all__ = [
    "PowerBudget",
    "SolverOptions",
    "IWFResult",
    "waterfill_single",
    "sum_rate_objective",
    "iwf_sum_power",
    "iwf_individual",
    "solve",
]

# eigenvalues at or below this are treated as unusable modes
GAIN_FLOOR = 1e-300


@dataclass(frozen=True)
class PowerBudget:
    """
    Either a shared budget ``Sum(P)`` or per-user budgets ``Individual(P_1..P_K)``.

    Use :meth:`sum` and :meth:`individual` to build one.
    """

    kind: str
    powers: tuple

    def __post_init__(self):
        if self.kind not in ("sum", "individual"):
            raise ValueError(f"unknown budget kind {self.kind!r}")
        p = tuple(float(x) for x in self.powers)
        if not p or any(not np.isfinite(x) or x <= 0 for x in p):
            raise ValueError("powers must be positive and finite")
        if self.kind == "sum" and len(p) != 1:
            raise ValueError("a sum budget has exactly one power")
        object.__setattr__(self, "powers", p)

    @classmethod
    def sum(cls, P: float) -> "PowerBudget":
        return cls("sum", (P,))

    @classmethod
    def individual(cls, P_k: Sequence[float]) -> "PowerBudget":
        return cls("individual", tuple(P_k))

    @property
    def total(self) -> float:
        return float(np.sum(self.powers))

    def scaled(self, factor: float) -> "PowerBudget":
        return PowerBudget(self.kind, tuple(factor * p for p in self.powers))

    def is_feasible(self, covariances: np.ndarray, rtol: float = 1e-9) -> bool:
        """Check the trace constraint(s) of a ``(K, Mt, Mt)`` covariance stack."""
        tr = np.real(np.trace(covariances, axis1=-2, axis2=-1))
        if self.kind == "sum":
            return bool(tr.sum() <= self.powers[0] * (1 + rtol))
        if len(self.powers) != tr.size:
            return False
        return bool(np.all(tr <= np.asarray(self.powers) * (1 + rtol)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "powers": list(self.powers)}

    @classmethod
    def from_dict(cls, d: dict) -> "PowerBudget":
        return cls(d["kind"], tuple(d["powers"]))


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-9
    max_iters: int = 500


@dataclass
class IWFResult:
    """Output of the iterative solvers.

    ``covariances`` has shape ``(K, Mt, Mt)``.  ``degenerate`` marks users
    whose effective channel is zero; their covariance follows the fixed
    degenerate rule instead of the optimization.
    """

    covariances: np.ndarray
    objective: float
    iterations: int
    converged: bool
    history: List[float] = field(default_factory=list)
    degenerate: np.ndarray = None


def waterfill_single(eigenvalues, P: float, sigma2: float = 1.0, return_level: bool = False):
    """
    Waterfilling over parallel channels with power gains ``eigenvalues``.

    Parameters
    ----------
    eigenvalues : array_like
        Channel power gains (any order).  Gains at or below 1e-300 get no power.
    P : float
        Total power.
    sigma2 : float
        Noise variance.
    return_level : bool
        Also return the water level ``mu``.

    Returns
    -------
    np.ndarray or (np.ndarray, float)
        Powers ``p_i = max(0, mu - sigma2/lambda_i)`` in input order, summing to ``P``.
    """
    lam = np.asarray(eigenvalues, dtype=float).ravel()
    if not P > 0 or not sigma2 > 0:
        raise ValueError("P and sigma2 must be positive")
    usable = lam > GAIN_FLOOR
    if not np.any(usable):
        raise ValueError("waterfilling needs at least one positive eigenvalue")
    idx = np.flatnonzero(usable)
    order = idx[np.argsort(-lam[idx], kind="stable")]
    floors = sigma2 / lam[order]
    csum = np.cumsum(floors)
    # largest m such that the level using the m best modes clears the m-th floor
    m_all = np.arange(1, floors.size + 1)
    levels = (P + csum) / m_all
    ok = levels > floors
    m = int(np.flatnonzero(ok)[-1]) + 1
    mu = levels[m - 1]
    p = np.zeros_like(lam)
    p[order[:m]] = mu - floors[:m]
    # exact budget despite rounding
    p[order[:m]] *= P / p[order[:m]].sum()
    if return_level:
        return p, float(mu)
    return p


def _as_stack(channels) -> np.ndarray:
    S = np.asarray(channels, dtype=complex)
    if S.ndim != 3:
        raise ValueError("channels must be a (K, rows, Mt) stack of matrices")
    return S


def sum_rate_objective(channels, covariances, sigma2: float) -> float:
    """``log2 det(I + sigma^-2 sum_k S_k Q_k S_k^*)`` in bits."""
    S = _as_stack(channels)
    M = np.einsum("kri,kij,ksj->rs", S, covariances, S.conj())
    return float(log2det_eye_plus_batch(M / sigma2))


def _zero_users(S: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.sum(np.abs(S) ** 2, axis=(1, 2)))
    ref = norms.max() if norms.size else 0.0
    return (norms <= 1e-150) | (norms <= 1e-14 * ref)


def _whitened_modes(S_k, Z):
    # single-user problem of user k against interference-plus-noise Z
    M = S_k.conj().T @ np.linalg.solve(Z, S_k)
    M = 0.5 * (M + M.conj().T)
    w, U = np.linalg.eigh(M)
    return np.clip(w, 0.0, None), U


def _covariance(U, p):
    return (U * p) @ U.conj().T


def iwf_individual(channels, P_k: Sequence[float], sigma2: float,
                   opts: SolverOptions = SolverOptions()) -> IWFResult:
    """
    Individual-power iterative waterfilling.

    Users are updated cyclically; each update is the exact single-user
    optimum given the others, so the objective never decreases.  Users with
    a zero channel keep ``Q = (P_k/Mt) I`` and are flagged as degenerate.
    """
    S = _as_stack(channels)
    K, n, Mt = S.shape
    P_k = np.asarray(P_k, dtype=float)
    if P_k.shape != (K,) or np.any(P_k <= 0):
        raise ValueError("need one positive power per user")
    zero = _zero_users(S)
    Q = np.zeros((K, Mt, Mt), dtype=complex)
    for k in np.flatnonzero(zero):
        Q[k] = np.eye(Mt) * (P_k[k] / Mt)
    active = np.flatnonzero(~zero)

    def total_cov():
        return sigma2 * np.eye(n) + np.einsum("kri,kij,ksj->rs", S, Q, S.conj())

    obj = sum_rate_objective(S, Q, sigma2)
    history = [obj]
    converged = active.size == 0
    it = 0
    while not converged and it < opts.max_iters:
        it += 1
        T = total_cov()
        for k in active:
            own = S[k] @ Q[k] @ S[k].conj().T
            Z = T - own
            w, U = _whitened_modes(S[k], Z)
            Q[k] = _covariance(U, waterfill_single(w, P_k[k], 1.0))
            T = Z + S[k] @ Q[k] @ S[k].conj().T
        new = sum_rate_objective(S, Q, sigma2)
        history.append(new)
        converged = abs(new - obj) <= opts.tol * max(abs(new), 1e-300) or new == obj
        obj = new
    return IWFResult(Q, obj, it, converged, history, zero)


def iwf_sum_power(channels, P: float, sigma2: float,
                  opts: SolverOptions = SolverOptions()) -> IWFResult:
    """
    Sum-power iterative waterfilling.

    Every iteration whitens each user's channel against the current
    interference of the others, waterfills all users' modes jointly under
    the shared budget ``P`` and moves toward that point.  The step starts
    at 1 and 1/K (the averaging of the original scheme) and is halved until
    the objective does not decrease, which keeps the iteration monotone.
    Zero-channel users get a zero covariance and are flagged.
    """
    S = _as_stack(channels)
    K, n, Mt = S.shape
    if not P > 0:
        raise ValueError("P must be positive")
    zero = _zero_users(S)
    active = np.flatnonzero(~zero)
    Q = np.zeros((K, Mt, Mt), dtype=complex)
    if active.size == 0:
        return IWFResult(Q, 0.0, 0, True, [0.0], zero)
    for k in active:
        Q[k] = np.eye(Mt) * (P / (active.size * Mt))

    obj = sum_rate_objective(S, Q, sigma2)
    history = [obj]
    converged = False
    it = 0
    while not converged and it < opts.max_iters:
        it += 1
        T = sigma2 * np.eye(n) + np.einsum("kri,kij,ksj->rs", S, Q, S.conj())
        modes = []
        for k in active:
            Z = T - S[k] @ Q[k] @ S[k].conj().T
            modes.append(_whitened_modes(S[k], Z))
        gains = np.concatenate([w for w, _ in modes])
        if not np.any(gains > GAIN_FLOOR):
            break
        p = waterfill_single(gains, P, 1.0)
        Q_wf = Q.copy()
        for j, k in enumerate(active):
            Q_wf[k] = _covariance(modes[j][1], p[j * Mt:(j + 1) * Mt])

        best_obj, best_Q = obj, None
        steps = [1.0] if active.size == 1 else [1.0, 1.0 / active.size]
        for t in steps:
            cand = Q + t * (Q_wf - Q)
            val = sum_rate_objective(S, cand, sigma2)
            if val > best_obj:
                best_obj, best_Q = val, cand
        t = steps[-1]
        while best_Q is None and t > 1e-9:
            t *= 0.5
            cand = Q + t * (Q_wf - Q)
            val = sum_rate_objective(S, cand, sigma2)
            if val > best_obj:
                best_obj, best_Q = val, cand
        if best_Q is None:
            # no ascent along the waterfilling direction: fixed point
            converged = True
            history.append(obj)
            break
        Q = 0.5 * (best_Q + np.conj(np.swapaxes(best_Q, 1, 2)))
        converged = (best_obj - obj) <= opts.tol * max(abs(best_obj), 1e-300)
        obj = best_obj
        history.append(obj)
    return IWFResult(Q, obj, it, converged, history, zero)


def solve(channels, budget: PowerBudget, sigma2: float,
          opts: SolverOptions = SolverOptions()) -> IWFResult:
    """Dispatch to the solver matching ``budget``."""
    if budget.kind == "sum":
        return iwf_sum_power(channels, budget.powers[0], sigma2, opts)
    return iwf_individual(channels, budget.powers, sigma2, opts)
