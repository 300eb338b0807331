"""Dense truncated SVD and scree-based rank selection."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError


@dataclass(frozen=True)
class TruncatedSvd:
    """Top-``r`` singular triplets, ``A ~= U @ diag(S) @ V.T``."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return self.S.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T


def _fix_signs(U: np.ndarray, V: np.ndarray) -> None:
    # Largest-magnitude entry of each right vector made nonnegative;
    # argmax returns the lowest index on ties.
    idx = np.argmax(np.abs(V), axis=0)
    flip = V[idx, np.arange(V.shape[1])] < 0
    U[:, flip] *= -1.0
    V[:, flip] *= -1.0


def truncated_svd(A, r: int) -> TruncatedSvd:
    """Rank-``r`` truncated SVD with a deterministic sign convention.

    Parameters
    ----------
    A : array_like, shape (n, m)
        Finite real matrix.
    r : int
        Number of leading singular triplets, ``1 <= r <= min(n, m)``.

    Returns
    -------
    TruncatedSvd
        ``U`` (n x r) and ``V`` (m x r) with orthonormal columns, ``S``
        non-increasing. Each column of ``V`` has its largest-magnitude entry
        nonnegative (ties go to the lowest index); ``U`` is flipped to match.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {A.shape}")
    r = int(r)
    if r < 1 or r > min(A.shape):
        raise DimensionError(f"rank {r} outside [1, {min(A.shape)}] for a {A.shape[0]}x{A.shape[1]} matrix")
    if not np.all(np.isfinite(A)):
        raise InputError("matrix contains non-finite entries")
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    U = np.ascontiguousarray(U[:, :r])
    V = np.ascontiguousarray(Vt[:r].T)
    _fix_signs(U, V)
    return TruncatedSvd(U=U, S=S[:r].copy(), V=V)


def select_rank(singular_values, max_rank: int | None = None) -> int:
    """Pick a rank at the largest consecutive singular-value ratio.

    Automates the "elbow" read off a scree plot: returns the 1-based ``j`` in
    ``[1, max_rank - 1]`` maximising ``S[j] / S[j+1]``, ties going to the
    smaller ``j``. A zero ``S[j+1]`` is an infinite gap and wins at the first
    place it occurs.
    """
    s = np.asarray(singular_values, dtype=float).ravel()
    if s.size < 2:
        raise InputError("need at least two singular values to select a rank")
    if np.any(s < 0) or np.any(np.diff(s) > 0):
        raise InputError("singular values must be nonnegative and non-increasing")
    if max_rank is None:
        max_rank = s.size
    max_rank = min(int(max_rank), s.size)
    if max_rank < 2:
        raise InputError("max_rank must be at least 2")
    best_j, best = 1, -1.0
    for j in range(1, max_rank):
        num, den = s[j - 1], s[j]
        if den == 0.0:
            return j
        ratio = num / den
        if ratio > best:
            best_j, best = j, ratio
    return best_j
