"""Rayleigh fading channel models for the K-user MIMO uplink."""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .numerics import check_psd, psd_sqrt

__all__ = [
    "SystemDims",
    "ChannelModel",
    "ChannelRealization",
    "sample",
    "sample_batch",
    "correlation_from_eigenvalues",
]


@dataclass(frozen=True)
class SystemDims:
    """A ``(K, Mt, Mr)`` system: K users with Mt antennas each, Mr at the basestation."""

    K: int
    Mt: int
    Mr: int

    def __post_init__(self):
        for name in ("K", "Mt", "Mr"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    @property
    def n_tx(self) -> int:
        """Total number of transmit antennas, ``K * Mt``."""
        return self.K * self.Mt


@dataclass(frozen=True)
class ChannelModel:
    """
    I.i.d. Rayleigh fading, or transmit-correlated Kronecker fading when
    ``tx_correlation`` is given as a ``(K, Mt, Mt)`` stack of matrices.

    Correlation matrices must be Hermitian PSD with trace ``Mt``.
    """

    dims: SystemDims
    tx_correlation: Optional[np.ndarray] = None
    _roots: Optional[np.ndarray] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.tx_correlation is None:
            return
        R = np.asarray(self.tx_correlation, dtype=complex)
        K, Mt = self.dims.K, self.dims.Mt
        if R.shape != (K, Mt, Mt):
            raise ValueError(f"tx_correlation must have shape {(K, Mt, Mt)}, got {R.shape}")
        roots = np.empty_like(R)
        for k in range(K):
            R[k] = check_psd(R[k], name=f"tx_correlation[{k}]")
            tr = np.trace(R[k]).real
            if abs(tr - Mt) > 1e-9 * Mt:
                raise ValueError(f"tx_correlation[{k}] must have trace {Mt}, got {tr:.12g}")
            roots[k] = psd_sqrt(R[k])
        object.__setattr__(self, "tx_correlation", R)
        object.__setattr__(self, "_roots", roots)

    @property
    def kind(self) -> str:
        return "iid" if self.tx_correlation is None else "kronecker"

    @property
    def tx_roots(self) -> Optional[np.ndarray]:
        """Hermitian square roots of the transmit correlation matrices."""
        return self._roots


@dataclass(frozen=True)
class ChannelRealization:
    """One fading draw, stored as the stacked ``Mr x (K*Mt)`` matrix ``[H1 ... HK]``."""

    stacked: np.ndarray
    K: int

    @property
    def blocks(self) -> list:
        return np.split(self.stacked, self.K, axis=1)

    @classmethod
    def from_blocks(cls, blocks: Sequence[np.ndarray]) -> "ChannelRealization":
        return cls(np.hstack([np.asarray(b, dtype=complex) for b in blocks]), len(blocks))


def correlation_from_eigenvalues(eigenvalues: Sequence[float], K: int,
                                 basis: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Build identical per-user correlation matrices ``U diag(eigenvalues) U*``.

    ``basis`` defaults to the identity, giving diagonal matrices.  The
    eigenvalues are rescaled to sum to ``Mt``.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if np.any(lam < 0):
        raise ValueError("correlation eigenvalues must be non-negative")
    Mt = lam.size
    lam = lam * (Mt / lam.sum())
    U = np.eye(Mt) if basis is None else np.asarray(basis, dtype=complex)
    R = (U * lam) @ U.conj().T
    return np.repeat(R[None, :, :], K, axis=0).astype(complex)


def sample_batch(model: ChannelModel, rng: np.random.Generator, n: int) -> np.ndarray:
    """
    Draw ``n`` channel realizations.

    Returns
    -------
    np.ndarray
        Complex array of shape ``(n, Mr, K*Mt)``; the k-th ``Mt``-column
        block of each slice is user k's channel.
    """
    d = model.dims
    shape = (n, d.Mr, d.n_tx)
    H = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    if model.tx_roots is not None:
        Hk = H.reshape(n, d.Mr, d.K, d.Mt)
        # H^(k) = H_w^(k) (R_t^(k))^{1/2}
        H = np.einsum("nrki,kij->nrkj", Hk, model.tx_roots).reshape(shape)
    return H


def sample(model: ChannelModel, rng: np.random.Generator) -> ChannelRealization:
    """Draw a single realization."""
    return ChannelRealization(sample_batch(model, rng, 1)[0], model.dims.K)
