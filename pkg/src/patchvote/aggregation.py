"""Robust per-keypoint vote aggregation by Gaussian mean-shift."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateKernelError
from .votes import VoteSet

# exp(x) underflows to exactly 0.0 below this
_EXP_UNDERFLOW = float(np.log(np.nextafter(0.0, 1.0)))


@dataclass(frozen=True)
class MeanShiftConfig:
    """Gaussian kernel mean-shift settings (meters).

    ``bandwidth`` is the kernel standard deviation (40 mm by default).
    With ``multi_start`` the median start is joined by ``n_starts`` randomly
    chosen votes and the converged mode of highest kernel density wins.
    """

    bandwidth: float = 0.040
    tol: float = 1e-4
    max_iter: int = 100
    multi_start: bool = False
    n_starts: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")


@dataclass(frozen=True, eq=False)
class AggregatedKeypoints:
    points: np.ndarray       # (M, 3) modes, camera frame
    counts: np.ndarray       # votes per cluster
    iterations: np.ndarray   # mean-shift steps taken
    shifts: np.ndarray       # last step length
    variances: np.ndarray    # mean squared vote distance to the mode

    @property
    def M(self) -> int:
        return len(self.points)


def _mean_shift_batch(P: np.ndarray, X0: np.ndarray, cfg: MeanShiftConfig, labels=None):
    """Run mean-shift on ``B`` independent clusters ``P (B, N, 3)`` from ``X0 (B, 3)``."""
    X = np.array(X0, dtype=float)
    B = len(X)
    iters = np.zeros(B, dtype=np.int64)
    shift = np.full(B, np.inf)
    active = np.ones(B, dtype=bool)
    inv = 1.0 / (2.0 * cfg.bandwidth * cfg.bandwidth)
    for _ in range(cfg.max_iter):
        idx = np.flatnonzero(active)
        Pa = P[idx]
        diff = Pa - X[idx, None, :]
        E = -np.einsum("bnk,bnk->bn", diff, diff) * inv
        emax = E.max(axis=1)
        bad = emax < _EXP_UNDERFLOW
        if bad.any():
            b = int(idx[np.flatnonzero(bad)[0]])
            raise DegenerateKernelError(
                "every kernel weight underflows; start is too far from the votes for this bandwidth",
                cluster=b if labels is None else labels[b])
        W = np.exp(E - emax[:, None])
        Xn = np.einsum("bn,bnk->bk", W, Pa) / W.sum(axis=1)[:, None]
        s = np.linalg.norm(Xn - X[idx], axis=1)
        X[idx] = Xn
        iters[idx] += 1
        shift[idx] = s
        active[idx[s < cfg.tol]] = False
        if not active.any():
            break
    return X, iters, shift


def mean_shift_mode(points, cfg: MeanShiftConfig, init) -> np.ndarray:
    """Local mode of the Gaussian kernel density of ``points`` reached from ``init``."""
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or P.shape[1] != 3 or len(P) == 0:
        raise ValueError("points must be a non-empty (N, 3) array")
    X, _, _ = _mean_shift_batch(P[None], np.asarray(init, dtype=float)[None], cfg)
    return X[0]


def _log_density(P: np.ndarray, X: np.ndarray, bandwidth: float) -> np.ndarray:
    d2 = np.sum((P - X[:, None, :]) ** 2, axis=-1)
    E = -d2 / (2.0 * bandwidth**2)
    m = E.max(axis=1)
    return m + np.log(np.exp(E - m[:, None]).sum(axis=1))


def aggregate(votes: VoteSet, cfg: MeanShiftConfig = MeanShiftConfig()) -> AggregatedKeypoints:
    """Reduce each keypoint's vote cluster to its mean-shift mode.

    Every cluster starts at its component-wise median.
    """
    P = np.ascontiguousarray(np.swapaxes(votes.positions, 0, 1))  # (M, N, 3)
    M, N = P.shape[:2]
    init = np.median(P, axis=1)
    if not cfg.multi_start:
        modes, iters, shifts = _mean_shift_batch(P, init, cfg)
    else:
        rng = np.random.default_rng([cfg.seed, 7])
        k = min(cfg.n_starts, N)
        picks = np.stack([rng.choice(N, size=k, replace=False) for _ in range(M)])
        starts = np.concatenate([init[:, None, :], P[np.arange(M)[:, None], picks]], axis=1)  # (M, S, 3)
        S = starts.shape[1]
        labels = np.repeat(np.arange(M), S)
        X, it, sh = _mean_shift_batch(np.repeat(P, S, axis=0), starts.reshape(-1, 3), cfg, labels)
        X, it, sh = X.reshape(M, S, 3), it.reshape(M, S), sh.reshape(M, S)
        dens = np.stack([_log_density(P[j], X[j], cfg.bandwidth) for j in range(M)])
        best = np.argmax(dens, axis=1)
        rows = np.arange(M)
        modes, iters, shifts = X[rows, best], it[rows, best], sh[rows, best]
    var = np.mean(np.sum((P - modes[:, None, :]) ** 2, axis=-1), axis=1)
    return AggregatedKeypoints(modes, np.full(M, N), iters, shifts, var)


def select_low_variance_clusters(agg: AggregatedKeypoints, k: int) -> np.ndarray:
    """Indices (ascending) of the ``k`` clusters with the smallest vote variance."""
    if k < 3:
        raise ValueError("at least 3 clusters are needed to register a pose")
    if k > agg.M:
        raise ValueError(f"cannot select {k} of {agg.M} clusters")
    order = np.argsort(agg.variances, kind="stable")
    return np.sort(order[:k])
