"""Estimation and inference for the four-block design.

Layout (rows = units, columns = times)::

        T1     T2
    N1 [ Y_a | Y_b ]
    N2 [ Y_c |  ?  ]

The bottom-right block is the counterfactual of the treated units after
adoption. Indices into the full ``N x T`` matrix are 0-based throughout, so
the unobserved cells are ``N1 <= i < N`` and ``T1 <= t < T``.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import (
    ConditioningError,
    DimensionError,
    DomainError,
    InputError,
    RankInfeasibleError,
)
from .lowrank import truncated_svd
from .normal import norm_ppf

MAX_GRAM_CONDITION = 1e12
# Relative size of rounding error in noiseless fits; decisions that compare an
# interval with a value (coverage hits, sign tests) allow this much slack.
ROUNDOFF_RTOL = 1e-10


@dataclass(frozen=True)
class FourBlockProblem:
    Y_a: np.ndarray
    Y_b: np.ndarray
    Y_c: np.ndarray

    def __post_init__(self):
        for name in ("Y_a", "Y_b", "Y_c"):
            block = np.asarray(getattr(self, name), dtype=float)
            if block.ndim != 2:
                raise DimensionError(f"{name} must be 2-d, got shape {block.shape}")
            if not np.all(np.isfinite(block)):
                raise InputError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, block)
        n1, t1 = self.Y_a.shape
        if n1 < 1 or t1 < 1:
            raise DimensionError("Y_a must have at least one row and one column")
        if self.Y_b.shape[0] != n1 or self.Y_b.shape[1] < 1:
            raise DimensionError(f"Y_b shape {self.Y_b.shape} incompatible with Y_a {self.Y_a.shape}")
        if self.Y_c.shape[1] != t1 or self.Y_c.shape[0] < 1:
            raise DimensionError(f"Y_c shape {self.Y_c.shape} incompatible with Y_a {self.Y_a.shape}")

    @classmethod
    def from_matrix(cls, Y, N1: int, T1: int) -> "FourBlockProblem":
        """Split a full ``N x T`` matrix; the bottom-right block is ignored."""
        Y = np.asarray(Y, dtype=float)
        return cls(Y[:N1, :T1], Y[:N1, T1:], Y[N1:, :T1])

    N1 = property(lambda self: self.Y_a.shape[0])
    T1 = property(lambda self: self.Y_a.shape[1])
    N2 = property(lambda self: self.Y_c.shape[0])
    T2 = property(lambda self: self.Y_b.shape[1])
    N = property(lambda self: self.N1 + self.N2)
    T = property(lambda self: self.T1 + self.T2)

    @property
    def left(self) -> np.ndarray:
        return np.vstack([self.Y_a, self.Y_c])

    @property
    def upper(self) -> np.ndarray:
        return np.hstack([self.Y_a, self.Y_b])


def _gram_solve(G: np.ndarray, B: np.ndarray, what: str, label: str | None) -> np.ndarray:
    """Solve ``G X = B`` for a symmetric positive-definite Gram matrix."""
    eig = np.linalg.eigvalsh(G)
    cond = np.inf if eig[0] <= 0 else eig[-1] / eig[0]
    if cond > MAX_GRAM_CONDITION:
        where = f" in sub-problem {label}" if label else ""
        raise ConditioningError(f"{what} is ill-conditioned (condition number {cond:.3g}){where}")
    return scipy.linalg.solve(G, B, assume_a="pos")


@dataclass(frozen=True)
class FourBlockFit:
    """Fitted quantities of the four-block estimator.

    Attributes
    ----------
    M_hat_d : (N2, T2) estimate of the hidden block.
    M_hat_b : (N1, T2) denoised estimate of the upper-right block.
    U_hat : (N, r) left singular vectors of the left submatrix ``[Y_a; Y_c]``.
    V_hat : (T, r) right singular vectors of the upper submatrix ``[Y_a, Y_b]``.
    left_reconstruction : (N, T1) rank-``r`` reconstruction of ``[Y_a; Y_c]``.
    """

    M_hat_d: np.ndarray
    M_hat_b: np.ndarray
    U_hat: np.ndarray
    V_hat: np.ndarray
    left_reconstruction: np.ndarray
    rank: int
    N1: int
    T1: int
    left_singular_values: np.ndarray
    upper_singular_values: np.ndarray
    label: str | None = None

    N2 = property(lambda self: self.U_hat.shape[0] - self.N1)
    T2 = property(lambda self: self.V_hat.shape[0] - self.T1)

    @cached_property
    def row_projection(self) -> np.ndarray:
        """``U2 (U1'U1)^{-1} U1'``, shape (N2, N1); row ``i`` holds the weights of cell row ``N1 + i``."""
        U1, U2 = self.U_hat[: self.N1], self.U_hat[self.N1 :]
        return U2 @ _gram_solve(U1.T @ U1, U1.T, "U1'U1", self.label)

    @cached_property
    def col_projection(self) -> np.ndarray:
        """``V2 (V1'V1)^{-1} V1'``, shape (T2, T1)."""
        V1, V2 = self.V_hat[: self.T1], self.V_hat[self.T1 :]
        return V2 @ _gram_solve(V1.T @ V1, V1.T, "V1'V1", self.label)


@dataclass(frozen=True)
class ResidualMatrix:
    E_a: np.ndarray
    E_b: np.ndarray
    E_c: np.ndarray


@dataclass(frozen=True)
class CellInference:
    point: float
    variance: float
    lower: float
    upper: float
    alpha: float

    @property
    def se(self) -> float:
        return float(np.sqrt(self.variance))

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def four_block_estimate(p: FourBlockProblem, r: int, label: str | None = None) -> FourBlockFit:
    """Impute the hidden block from the three observed ones.

    Left subspace from the rank-``r`` SVD of ``[Y_a; Y_c]``, right subspace and
    the denoised ``M_b`` from the rank-``r`` SVD of ``[Y_a, Y_b]``, then
    ``M_d = U2 (U1'U1)^{-1} U1' M_b``.
    """
    r = int(r)
    if r < 1 or r > min(p.N1, p.T1):
        where = f"sub-problem {label}: " if label else ""
        raise RankInfeasibleError(
            f"{where}rank {r} infeasible for N1={p.N1}, T1={p.T1} (need 1 <= r <= min(N1, T1))"
        )
    left = truncated_svd(p.left, r)
    upper = truncated_svd(p.upper, r)

    U_hat = left.U
    V_hat = upper.V
    V2 = V_hat[p.T1 :]
    M_hat_b = (upper.U * upper.S) @ V2.T

    U1, U2 = U_hat[: p.N1], U_hat[p.N1 :]
    coef = _gram_solve(U1.T @ U1, U1.T @ M_hat_b, "U1'U1", label)
    M_hat_d = U2 @ coef

    return FourBlockFit(
        M_hat_d=M_hat_d,
        M_hat_b=M_hat_b,
        U_hat=U_hat,
        V_hat=V_hat,
        left_reconstruction=left.reconstruct(),
        rank=r,
        N1=p.N1,
        T1=p.T1,
        left_singular_values=left.S,
        upper_singular_values=upper.S,
        label=label,
    )


def estimate_residuals(p: FourBlockProblem, fit: FourBlockFit) -> ResidualMatrix:
    """Residuals on the observed blocks.

    Blocks a and c are taken against the left reconstruction, block b against
    ``M_hat_b``.
    """
    if fit.left_reconstruction.shape != (p.N, p.T1) or fit.M_hat_b.shape != (p.N1, p.T2):
        raise DimensionError("fit does not match the problem dimensions")
    left_res = p.left - fit.left_reconstruction
    return ResidualMatrix(E_a=left_res[: p.N1], E_b=p.Y_b - fit.M_hat_b, E_c=left_res[p.N1 :])


def _check_unobserved(fit: FourBlockFit, i: int, t: int) -> tuple[int, int]:
    N, T = fit.U_hat.shape[0], fit.V_hat.shape[0]
    if not (fit.N1 <= i < N and fit.T1 <= t < T):
        raise DomainError(f"cell ({i}, {t}) is not in the unobserved block [{fit.N1}, {N}) x [{fit.T1}, {T})")
    return i - fit.N1, t - fit.T1


def cell_variance(fit: FourBlockFit, res: ResidualMatrix, i: int, t: int) -> float:
    """Variance estimate for the hidden cell ``(i, t)`` (full-matrix indices)."""
    ii, tt = _check_unobserved(fit, i, t)
    u_weights = fit.row_projection[ii]  # over k < N1
    v_weights = fit.col_projection[tt]  # over s < T1
    total = 0.0
    for k in range(fit.N1):
        total += res.E_b[k, tt] ** 2 * u_weights[k] ** 2
    for s in range(fit.T1):
        total += res.E_c[ii, s] ** 2 * v_weights[s] ** 2
    return float(total)


def variance_grid(fit: FourBlockFit, res: ResidualMatrix) -> np.ndarray:
    """All hidden-cell variance estimates at once, shape (N2, T2)."""
    P2 = fit.row_projection ** 2
    Q2 = fit.col_projection ** 2
    return P2 @ res.E_b ** 2 + res.E_c ** 2 @ Q2.T


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def critical_value(alpha: float) -> float:
    return norm_ppf(1.0 - _check_alpha(alpha) / 2.0)


def cell_ci(point: float, variance: float, alpha: float) -> CellInference:
    """Normal-approximation interval ``point +/- z_{1-alpha/2} sqrt(variance)``."""
    z = critical_value(alpha)
    if variance < 0 or not np.isfinite(variance):
        raise InputError(f"variance must be finite and nonnegative, got {variance}")
    half = z * np.sqrt(variance)
    return CellInference(float(point), float(variance), float(point - half), float(point + half), alpha)


def _check_weights(fit: FourBlockFit, c1, c2) -> tuple[np.ndarray, np.ndarray]:
    c1 = np.asarray(c1, dtype=float).ravel()
    c2 = np.asarray(c2, dtype=float).ravel()
    if c1.shape != (fit.N2,) or c2.shape != (fit.T2,):
        raise DimensionError(f"weight lengths ({c1.size}, {c2.size}) do not match hidden block ({fit.N2}, {fit.T2})")
    return c1, c2


def bilinear_point(fit: FourBlockFit, c1, c2) -> float:
    c1, c2 = _check_weights(fit, c1, c2)
    return float(c1 @ fit.M_hat_d @ c2)


def bilinear_variance(fit: FourBlockFit, res: ResidualMatrix, c1, c2) -> float:
    """Variance estimate for ``c1' M_d c2``.

    Reduces to :func:`cell_variance` when ``c1`` and ``c2`` are canonical
    basis vectors.
    """
    c1, c2 = _check_weights(fit, c1, c2)
    # [U1 (U1'U1)^{-1} U2' c1 c2']  and  [c1 c2' V2 (V1'V1)^{-1} V1'] are rank one.
    row_w = fit.row_projection.T @ c1  # (N1,)
    col_w = fit.col_projection.T @ c2  # (T1,)
    term_b = np.sum(res.E_b ** 2 * np.outer(row_w, c2) ** 2)
    term_c = np.sum(res.E_c ** 2 * np.outer(c1, col_w) ** 2)
    return float(term_b + term_c)


def column_bilinear_variances(fit: FourBlockFit, res: ResidualMatrix, c1) -> np.ndarray:
    """``bilinear_variance(fit, res, c1, e_t)`` for every hidden column ``t``."""
    c1 = np.asarray(c1, dtype=float).ravel()
    if c1.shape != (fit.N2,):
        raise DimensionError(f"c1 has length {c1.size}, expected {fit.N2}")
    row_w = fit.row_projection.T @ c1
    return row_w ** 2 @ res.E_b ** 2 + (c1 ** 2 @ res.E_c ** 2) @ (fit.col_projection ** 2).T


def bilinear_ci(fit: FourBlockFit, res: ResidualMatrix, c1, c2, alpha: float) -> CellInference:
    return cell_ci(bilinear_point(fit, c1, c2), bilinear_variance(fit, res, c1, c2), alpha)


def oracle_cell_variance(U_star, V_star, sigma, N1: int, T1: int, i: int, t: int) -> float:
    """Asymptotic variance of the hidden cell under the true factors.

    ``sigma`` holds noise standard deviations for every cell of the ``N x T``
    panel; only the observed blocks are read.
    """
    U = np.asarray(U_star, dtype=float)
    V = np.asarray(V_star, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    N, T = U.shape[0], V.shape[0]
    if not (N1 <= i < N and T1 <= t < T):
        raise DomainError(f"cell ({i}, {t}) is not in the unobserved block")
    U1, V1 = U[:N1], V[:T1]
    a = U[i] @ np.linalg.solve(U1.T @ U1, U1.T)
    b = V[t] @ np.linalg.solve(V1.T @ V1, V1.T)
    return float(np.sum(sigma[:N1, t] ** 2 * a ** 2) + np.sum(sigma[i, :T1] ** 2 * b ** 2))


def oracle_variance_grid(U_star, V_star, sigma, N1: int, T1: int) -> np.ndarray:
    """:func:`oracle_cell_variance` for every hidden cell, shape (N2, T2)."""
    U = np.asarray(U_star, dtype=float)
    V = np.asarray(V_star, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    U1, U2, V1, V2 = U[:N1], U[N1:], V[:T1], V[T1:]
    P = U2 @ np.linalg.solve(U1.T @ U1, U1.T)
    Q = V2 @ np.linalg.solve(V1.T @ V1, V1.T)
    return P ** 2 @ sigma[:N1, T1:] ** 2 + sigma[N1:, :T1] ** 2 @ (Q ** 2).T


def isnr_advisory(fit: FourBlockFit, res: ResidualMatrix) -> float:
    """Plug-in inverse signal-to-noise ratio; advisory only.

    ``sigma_max / gamma_r * sqrt(N T / min(N1, T1))`` with ``sigma_max`` the
    largest per-unit residual RMS and ``gamma_r`` the smallest retained
    singular value of the left submatrix.
    """
    N, T = fit.U_hat.shape[0], fit.V_hat.shape[0]
    top = np.hstack([res.E_a, res.E_b])
    ms = np.concatenate([np.mean(top ** 2, axis=1), np.mean(res.E_c ** 2, axis=1)])
    sigma_max = float(np.sqrt(ms.max()))
    gamma_r = float(fit.left_singular_values[-1])
    if gamma_r == 0.0:
        return float("inf")
    return sigma_max / gamma_r * float(np.sqrt(N * T / min(fit.N1, fit.T1)))


@dataclass(frozen=True)
class FourBlockInference:
    """Entrywise inference for the hidden block of one four-block problem."""

    fit: FourBlockFit
    residuals: ResidualMatrix
    variance: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float

    @property
    def point(self) -> np.ndarray:
        return self.fit.M_hat_d


def four_block_conf(p: FourBlockProblem, r: int, alpha: float, label: str | None = None) -> FourBlockInference:
    """Point estimates, variance estimates and intervals for every hidden cell."""
    z = critical_value(alpha)
    fit = four_block_estimate(p, r, label=label)
    res = estimate_residuals(p, fit)
    var = variance_grid(fit, res)
    half = z * np.sqrt(var)
    return FourBlockInference(fit, res, var, fit.M_hat_d - half, fit.M_hat_d + half, float(alpha))
