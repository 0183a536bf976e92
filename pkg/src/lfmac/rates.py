"""
Sum-rate evaluation, codeword selection and reference schemes.

Channel batches are complex arrays of shape ``(N, Mr, K*Mt)``; a single
channel may be passed as ``(Mr, K*Mt)`` or a :class:`ChannelRealization`.
Covariance stacks have shape ``(K, Mt, Mt)``; covariance codebooks
``(C, K, Mt, Mt)``; beamformer codebooks ``(C, K, Mt)``.

Codeword indices are 0-based throughout.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import block_diag

from .channel import ChannelRealization
from .numerics import log2_det_I_plus, log2det_eye_plus_batch
from .waterfill import PowerBudget, SolverOptions, solve, waterfill_single

__all__ = [
    "block_diagonal",
    "sum_rate",
    "beamforming_sum_rate",
    "cov_rates",
    "bf_rates",
    "codebook_rates",
    "select",
    "select_batch",
    "full_csi_rate",
    "full_csi_rates",
    "no_feedback_rate",
    "no_feedback_covariances",
    "tdma_rate",
    "tdma_rates",
    "rate_ratio",
    "mc_estimate",
    "RatePoint2U",
    "RegionPolygon",
    "convex_hull_2d",
    "pentagon",
    "region_2user",
]


def _as_batch(H) -> Tuple[np.ndarray, bool]:
    if isinstance(H, ChannelRealization):
        H = H.stacked
    H = np.asarray(H, dtype=complex)
    if H.ndim == 2:
        return H[None], True
    if H.ndim != 3:
        raise ValueError(f"channel batch must be 2-D or 3-D, got shape {H.shape}")
    return H, False


def block_diagonal(covariances: np.ndarray) -> np.ndarray:
    """``diag(Q_1, ..., Q_K)`` for a ``(K, Mt, Mt)`` stack."""
    return block_diag(*covariances)


def _user_blocks(H: np.ndarray, K: int) -> np.ndarray:
    N, Mr, n = H.shape
    return H.reshape(N, Mr, K, n // K)


def sum_rate(H, Q: np.ndarray, sigma2: float) -> float:
    """
    Sum-rate of one channel for per-user covariances ``Q`` (``(K, Mt, Mt)``).

    Evaluated as ``log2 det(I + sigma^-2 sum_k H_k Q_k H_k^*)`` with the
    structural checks of :func:`log2_det_I_plus`.
    """
    Hb, _ = _as_batch(H)
    Q = np.asarray(Q, dtype=complex)
    Hk = _user_blocks(Hb, Q.shape[0])[0]
    G = np.einsum("rki,kij,skj->rs", Hk, Q, Hk.conj())
    return log2_det_I_plus(1.0 / sigma2, G)


def beamforming_sum_rate(H, w: np.ndarray, sigma2: float) -> float:
    """
    Sum-rate with rank-one transmission: user k sends along ``w[k]`` (``(K, Mt)``).

    Uses the ``K x K`` form ``log2 det(I + sigma^-2 W^* H^* H W)`` with the
    block-diagonal augmented beamformer ``W``.
    """
    Hb, _ = _as_batch(H)
    w = np.asarray(w, dtype=complex)
    return float(bf_rates(Hb, w[None], sigma2)[0, 0])


def cov_rates(H, entries: np.ndarray, sigma2: float) -> np.ndarray:
    """Sum-rates of every draw against every covariance codeword, shape ``(N, C)``."""
    Hb, _ = _as_batch(H)
    entries = np.asarray(entries)
    C = entries.shape[0]
    Hh = np.conj(np.swapaxes(Hb, 1, 2))
    out = np.empty((Hb.shape[0], C))
    for c in range(C):
        M = Hb @ block_diagonal(entries[c]) @ Hh
        out[:, c] = log2det_eye_plus_batch(M / sigma2)
    return out


def bf_rates(H, beams: np.ndarray, sigma2: float) -> np.ndarray:
    """Sum-rates of every draw against every beamforming codeword ``beams[c, k, :]``."""
    Hb, _ = _as_batch(H)
    beams = np.asarray(beams, dtype=complex)
    C, K, Mt = beams.shape
    N, Mr, _ = Hb.shape
    Hk = _user_blocks(Hb, K)
    # effective channel H_k w_k of every user and codeword, (N, Mr, C, K)
    E = np.empty((N, Mr, C, K), dtype=complex)
    for k in range(K):
        E[..., k] = (Hk[:, :, k, :].reshape(N * Mr, Mt) @ beams[:, k, :].T).reshape(N, Mr, C)
    # determinant identity: use whichever Gram matrix is smaller
    if K <= Mr:
        G = np.einsum("nrck,nrcl->nckl", E.conj(), E, optimize=True)
    else:
        G = np.einsum("nrck,nsck->ncrs", E, E.conj(), optimize=True)
    return log2det_eye_plus_batch(G / sigma2)


def codebook_rates(H, codebook, sigma2: float) -> np.ndarray:
    """Dispatch on codebook type: covariance or beamforming."""
    if hasattr(codebook, "beamformers"):
        return bf_rates(H, codebook.beamformers(), sigma2)
    if hasattr(codebook, "entries"):
        return cov_rates(H, codebook.entries, sigma2)
    entries = np.asarray(codebook)
    if entries.ndim == 3:
        return bf_rates(H, entries, sigma2)
    return cov_rates(H, entries, sigma2)


def select_batch(H, codebook, sigma2: float) -> Tuple[np.ndarray, np.ndarray]:
    """Best codeword per draw (lowest index on ties) and the achieved rates."""
    R = codebook_rates(H, codebook, sigma2)
    idx = np.argmax(R, axis=1)
    return idx, R[np.arange(R.shape[0]), idx]


def select(H, codebook, sigma2: float) -> Tuple[int, float]:
    """
    Pick the codeword maximizing the instantaneous sum-rate.

    Returns
    -------
    (index, bits) : (int, float)
        0-based index of the selected codeword and its sum-rate.
    """
    Hb, _ = _as_batch(H)
    idx, r = select_batch(Hb[:1], codebook, sigma2)
    return int(idx[0]), float(r[0])


def _channel_stack(H_single: np.ndarray, K: int) -> np.ndarray:
    Mr, n = H_single.shape
    return np.transpose(H_single.reshape(Mr, K, n // K), (1, 0, 2))


def full_csi_rate(H, budget: PowerBudget, sigma2: float, K: int,
                  opts: SolverOptions = SolverOptions()) -> float:
    """Sum-rate with iterative waterfilling on the realized channel."""
    Hb, _ = _as_batch(H)
    return float(solve(_channel_stack(Hb[0], K), budget, sigma2, opts).objective)


def full_csi_rates(H, budget: PowerBudget, sigma2: float, K: int,
                   opts: SolverOptions = SolverOptions()) -> np.ndarray:
    Hb, _ = _as_batch(H)
    return np.array([solve(_channel_stack(h, K), budget, sigma2, opts).objective for h in Hb])


def no_feedback_covariances(budget: PowerBudget, K: int, Mt: int) -> np.ndarray:
    """Scaled identities: ``P/(K Mt) I`` (sum budget) or ``P_k/Mt I`` (individual)."""
    if budget.kind == "sum":
        p = np.full(K, budget.powers[0] / (K * Mt))
    else:
        p = np.asarray(budget.powers) / Mt
    return p[:, None, None] * np.eye(Mt)[None].astype(complex)


def no_feedback_rate(H, budget: PowerBudget, sigma2: float, K: int, Mt: int) -> np.ndarray:
    """No-CSIT rate per draw (scalar for a single channel)."""
    Hb, single = _as_batch(H)
    r = cov_rates(Hb, no_feedback_covariances(budget, K, Mt)[None], sigma2)[:, 0]
    return float(r[0]) if single else r


def _single_user_wf_rate(gains: np.ndarray, P: float, sigma2: float) -> float:
    if not np.any(gains > 1e-300):
        return 0.0
    p = waterfill_single(gains, P, sigma2)
    return float(np.sum(np.log2(1.0 + gains * p / sigma2)))


def tdma_rates(H, P: float, sigma2: float, K: int) -> np.ndarray:
    """
    Per-draw TDMA rate: each user owns ``1/K`` of the time with full CSI and
    power ``P`` in its slot, so the rate is the average single-user capacity.
    """
    Hb, _ = _as_batch(H)
    Hk = _user_blocks(Hb, K)
    gram = np.einsum("nrki,nrkj->nkij", Hk.conj(), Hk)
    gains = np.clip(np.linalg.eigvalsh(gram), 0.0, None)
    out = np.empty(Hb.shape[0])
    for n in range(Hb.shape[0]):
        out[n] = np.mean([_single_user_wf_rate(gains[n, k], P, sigma2) for k in range(K)])
    return out


def tdma_rate(H, P: float, sigma2: float, K: int) -> float:
    Hb, _ = _as_batch(H)
    return float(tdma_rates(Hb[:1], P, sigma2, K)[0])


def rate_ratio(codebook_curve, tdma_curve) -> np.ndarray:
    """Pointwise ratio of expected sum-rates, codebook over TDMA."""
    a = np.asarray(codebook_curve, dtype=float)
    b = np.asarray(tdma_curve, dtype=float)
    if a.shape != b.shape:
        raise ValueError("curves must have the same length")
    return a / b


def mc_estimate(samples) -> Tuple[float, float]:
    """Sample mean and its standard error."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        return float(x.mean()), float("nan")
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


@dataclass(frozen=True)
class RatePoint2U:
    R1: float
    R2: float

    def __post_init__(self):
        if self.R1 < 0 or self.R2 < 0:
            raise ValueError("rates must be non-negative")


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Counterclockwise convex hull (monotone chain); tolerates degenerate input."""
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def _segment_distance(p, a, b) -> float:
    ab = b - a
    L = ab @ ab
    t = 0.0 if L == 0 else float(np.clip((p - a) @ ab / L, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


@dataclass
class RegionPolygon:
    """Convex down-closed rate region given by counterclockwise vertices ``(m, 2)``."""

    vertices: np.ndarray

    def points(self):
        return [RatePoint2U(float(max(x, 0.0)), float(max(y, 0.0))) for x, y in self.vertices]

    def distance_outside(self, p) -> float:
        """Euclidean distance from ``p`` to the region (0 when inside)."""
        p = np.asarray(p, dtype=float)
        V = self.vertices
        if len(V) == 1:
            return float(np.linalg.norm(p - V[0]))
        if len(V) == 2:
            return _segment_distance(p, V[0], V[1])
        inside = True
        for i in range(len(V)):
            a, b = V[i], V[(i + 1) % len(V)]
            if (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) < 0:
                inside = False
                break
        if inside:
            return 0.0
        return min(_segment_distance(p, V[i], V[(i + 1) % len(V)]) for i in range(len(V)))

    def contains(self, other: "RegionPolygon", tol: float = 0.0) -> bool:
        return all(self.distance_outside(v) <= tol for v in other.vertices)

    def area(self) -> float:
        V = self.vertices
        if len(V) < 3:
            return 0.0
        x, y = V[:, 0], V[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def is_convex(self, tol: float = 1e-12) -> bool:
        V = self.vertices
        if len(V) < 3:
            return True
        for i in range(len(V)):
            a, b, c = V[i], V[(i + 1) % len(V)], V[(i + 2) % len(V)]
            if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) < -tol:
                return False
        return True


def pentagon(r1: float, r2: float, rs: float) -> np.ndarray:
    """Vertices of ``{R1 <= r1, R2 <= r2, R1 + R2 <= rs}`` in the positive quadrant."""
    r1, r2 = min(r1, rs), min(r2, rs)
    return np.array([
        [0.0, 0.0],
        [r1, 0.0],
        [r1, max(rs - r1, 0.0)],
        [max(rs - r2, 0.0), r2],
        [0.0, r2],
    ])


def _user_rates(H: np.ndarray, entries: np.ndarray, sigma2: float) -> np.ndarray:
    # rates of each user alone, shape (N, C, K)
    C, K = entries.shape[:2]
    Hk = _user_blocks(H, K)
    out = np.empty((H.shape[0], C, K))
    for c in range(C):
        for k in range(K):
            HQ = Hk[:, :, k, :] @ entries[c, k]
            M = HQ @ np.conj(np.swapaxes(Hk[:, :, k, :], 1, 2))
            out[:, c, k] = log2det_eye_plus_batch(M / sigma2)
    return out


def _cov_entries(codebook) -> np.ndarray:
    if hasattr(codebook, "beamformers"):
        w = codebook.beamformers()
        return np.einsum("cki,ckj->ckij", w, w.conj())
    if hasattr(codebook, "entries"):
        return np.asarray(codebook.entries)
    return np.asarray(codebook)


def region_2user(H, codebook, P1: float, P2: float, sigma2: float,
                 n_directions: int = 33, return_details: bool = False):
    """
    Expected two-user rate region achievable with a finite codebook.

    Every weight direction ``(mu1, mu2)`` on a grid of ``n_directions``
    angles in ``[0, pi/2]`` defines one feedback mapping: per draw, the
    codeword maximizing the weighted rate of the draw's pentagon corner.
    The constant mappings that always use one codeword are added as well.
    Each mapping yields an expected pentagon (per-user and sum constraints
    averaged over the draws); the region is the convex hull of their union.

    Parameters
    ----------
    H : np.ndarray
        Channel draws ``(N, Mr, 2*Mt)``.
    codebook
        Covariance or beamforming codebook (or a raw covariance stack).
    P1, P2 : float
        Per-user power budgets every codeword must respect.
    sigma2 : float
        Noise variance.
    n_directions : int
        Number of weight directions.
    return_details : bool
        Also return the per-mapping mean ``(R1, R2, R1 + R2)`` bounds and
        their standard errors, both ``(n_directions + C, 3)``; the weighted
        mappings come first, then the constant ones in codeword order.
    """
    Hb, _ = _as_batch(H)
    entries = _cov_entries(codebook)
    if entries.shape[1] != 2:
        raise ValueError("region_2user needs exactly K = 2 users")
    tr = np.real(np.trace(entries, axis1=-2, axis2=-1))
    if np.any(tr > np.array([P1, P2]) * (1 + 1e-9)):
        raise ValueError("codebook violates the per-user budgets (P1, P2)")
    rs = cov_rates(Hb, entries, sigma2)
    ru = _user_rates(Hb, entries, sigma2)
    N = Hb.shape[0]
    rows = np.arange(N)
    pents, means, errs = [], [], []
    for theta in np.linspace(0.0, np.pi / 2, n_directions):
        mu1, mu2 = np.cos(theta), np.sin(theta)
        # weighted rate of the pentagon corner favoured by (mu1, mu2)
        if mu1 >= mu2:
            score = mu1 * ru[:, :, 0] + mu2 * (rs - ru[:, :, 0])
        else:
            score = mu2 * ru[:, :, 1] + mu1 * (rs - ru[:, :, 1])
        q = np.argmax(score, axis=1)
        cols = (ru[rows, q, 0], ru[rows, q, 1], rs[rows, q])
        m = tuple(float(c.mean()) for c in cols)
        means.append(m)
        errs.append([mc_estimate(c)[1] for c in cols])
        pents.append(pentagon(*m))
    # constant mappings (always the same codeword) belong to the family too
    for q in range(entries.shape[0]):
        cols = (ru[:, q, 0], ru[:, q, 1], rs[:, q])
        m = tuple(float(c.mean()) for c in cols)
        means.append(m)
        errs.append([mc_estimate(c)[1] for c in cols])
        pents.append(pentagon(*m))
    hull = convex_hull_2d(np.vstack(pents))
    # start at the origin for readability
    if len(hull) > 1:
        start = int(np.argmin(hull[:, 0] + hull[:, 1]))
        hull = np.roll(hull, -start, axis=0)
    region = RegionPolygon(hull)
    if return_details:
        return region, np.array(means), np.array(errs)
    return region
