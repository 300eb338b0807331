"""Staircase partitioning of staggered designs and treatment-effect aggregation.

Adoption times are 1-based period numbers as in the usual panel notation
(``t_i = 3`` means unit ``i`` is treated from the third column on) and
``inf`` marks a never-treated unit. Matrix indices are 0-based, so cell
``(i, c)`` is treated iff ``c + 1 >= t_i``.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, InputError, RankInfeasibleError, UnsupportedDesignError
from .fourblock import (
    ROUNDOFF_RTOL,
    CellInference,
    FourBlockInference,
    FourBlockProblem,
    bilinear_variance,
    cell_ci,
    critical_value,
    four_block_conf,
    isnr_advisory,
)

NEVER = np.inf


@dataclass(frozen=True)
class PanelData:
    """Outcome matrix with unit and time labels."""

    Y: np.ndarray
    unit_labels: tuple = ()
    time_labels: tuple = ()
    weights: np.ndarray | None = None

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim != 2:
            raise DimensionError(f"panel must be 2-d, got shape {Y.shape}")
        object.__setattr__(self, "Y", Y)
        if not self.unit_labels:
            object.__setattr__(self, "unit_labels", tuple(str(i) for i in range(Y.shape[0])))
        if not self.time_labels:
            object.__setattr__(self, "time_labels", tuple(str(t + 1) for t in range(Y.shape[1])))
        object.__setattr__(self, "unit_labels", tuple(self.unit_labels))
        object.__setattr__(self, "time_labels", tuple(self.time_labels))
        if len(self.unit_labels) != Y.shape[0] or len(self.time_labels) != Y.shape[1]:
            raise DimensionError("label counts do not match the panel shape")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (Y.shape[0],):
                raise DimensionError("weights must have one entry per unit")
            object.__setattr__(self, "weights", w)

    @property
    def shape(self):
        return self.Y.shape


@dataclass(frozen=True)
class AdoptionSchedule:
    """Per-unit adoption period (1-based) or ``inf`` for never treated."""

    adoption_time: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.adoption_time, dtype=float).ravel()
        finite = np.isfinite(t)
        if np.any(np.isnan(t)) or np.any(t[~finite] < 0):
            raise InputError("adoption times must be positive integers or inf")
        if np.any(t[finite] != np.round(t[finite])):
            raise InputError("adoption times must be integers")
        object.__setattr__(self, "adoption_time", t)

    @classmethod
    def from_times(cls, times) -> "AdoptionSchedule":
        """Build from a sequence where ``None`` (or ``inf``) means never treated."""
        return cls(np.array([NEVER if x is None else float(x) for x in times]))

    def __len__(self):
        return self.adoption_time.size

    def treated_mask(self, T: int) -> np.ndarray:
        cols = np.arange(1, T + 1)
        return cols[None, :] >= self.adoption_time[:, None]


@dataclass(frozen=True)
class StaircasePartition:
    """Groups x stages decomposition of a staggered design.

    Group 1 is the never-treated units; group ``i >= 2`` adopts at
    ``stage_boundaries[k - i]`` (later adopters get smaller group numbers).
    Group ``i`` is observed in stages ``1 .. k + 1 - i``.

    ``order[p]`` is the original unit index at staircase position ``p`` and
    ``position`` is its inverse.
    """

    k: int
    group_sizes: tuple
    stage_lengths: tuple
    stage_boundaries: tuple
    order: np.ndarray
    position: np.ndarray
    group_of_unit: np.ndarray

    @property
    def N(self) -> int:
        return sum(self.group_sizes)

    @property
    def T(self) -> int:
        return sum(self.stage_lengths)

    def group_rows(self, i: int) -> np.ndarray:
        """Original unit indices of group ``i`` (1-based) in staircase order."""
        start = sum(self.group_sizes[: i - 1])
        return self.order[start : start + self.group_sizes[i - 1]]

    def stage_cols(self, j: int) -> np.ndarray:
        start = sum(self.stage_lengths[: j - 1])
        return np.arange(start, start + self.stage_lengths[j - 1])

    def rows_of_groups(self, lo: int, hi: int) -> np.ndarray:
        """Units of groups ``lo .. hi`` inclusive, staircase order."""
        start = sum(self.group_sizes[: lo - 1])
        stop = sum(self.group_sizes[:hi])
        return self.order[start:stop]

    def cols_of_stages(self, lo: int, hi: int) -> np.ndarray:
        return np.arange(sum(self.stage_lengths[: lo - 1]), sum(self.stage_lengths[:hi]))

    def observed_mask(self) -> np.ndarray:
        """Boolean ``N x T`` mask of observed control cells, original unit order."""
        mask = np.zeros((self.N, self.T), dtype=bool)
        for i in range(1, self.k + 1):
            cols = self.cols_of_stages(1, self.k + 1 - i)
            mask[np.ix_(self.group_rows(i), cols)] = True
        return mask


def build_staircase(schedule: AdoptionSchedule, T: int) -> StaircasePartition:
    """Reorder units into staircase form and read off groups and stages."""
    t = schedule.adoption_time
    finite = np.isfinite(t)
    if not np.any(~finite):
        raise UnsupportedDesignError("design has no never-treated unit; every sub-problem needs one")
    early = np.flatnonzero(finite & (t < 2))
    if early.size:
        raise UnsupportedDesignError(
            f"unit {int(early[0])} adopts at period {int(t[early[0]])}; it has no pre-treatment observations"
        )
    late = np.flatnonzero(finite & (t > T))
    if late.size:
        raise InputError(f"unit {int(late[0])} adopts at period {int(t[late[0]])} > T={T}")

    boundaries = tuple(int(s) for s in np.unique(t[finite]))
    k = 1 + len(boundaries)
    # Never-treated first, then adoption time descending; stable within a group.
    key = np.where(finite, -t, -np.inf)
    order = np.argsort(key, kind="stable")
    position = np.empty_like(order)
    position[order] = np.arange(order.size)

    group_of_unit = np.ones(t.size, dtype=int)
    for idx, s in enumerate(boundaries):
        # adopters at the (idx+1)-th smallest boundary form group k - idx
        group_of_unit[t == s] = k - idx
    group_sizes = tuple(int(np.sum(group_of_unit == g)) for g in range(1, k + 1))

    edges = (1,) + boundaries + (T + 1,)
    stage_lengths = tuple(edges[j + 1] - edges[j] for j in range(k))
    return StaircasePartition(
        k=k,
        group_sizes=group_sizes,
        stage_lengths=stage_lengths,
        stage_boundaries=boundaries,
        order=order,
        position=position,
        group_of_unit=group_of_unit,
    )


@dataclass(frozen=True)
class SubproblemSpec:
    """Index bookkeeping of the four-block problem targeting block ``(i0, j0)``."""

    i0: int
    j0: int
    rows: np.ndarray  # original unit indices, top (N1) then bottom (N2)
    cols: np.ndarray  # time indices 0 .. end of stage j0
    N1: int
    T1: int
    target_rows: np.ndarray
    target_cols: np.ndarray

    @property
    def label(self) -> str:
        return f"({self.i0},{self.j0})"


def subproblem_spec(part: StaircasePartition, i0: int, j0: int) -> SubproblemSpec:
    k = part.k
    if not (1 <= i0 <= k and k + 1 - i0 < j0 <= k):
        raise DomainError(f"(i0, j0) = ({i0}, {j0}) is not an unobserved block for k={k}")
    k1 = k + 1 - j0
    k2 = k + 1 - i0
    rows = part.rows_of_groups(1, i0)
    cols = part.cols_of_stages(1, j0)
    N1 = sum(part.group_sizes[:k1])
    T1 = sum(part.stage_lengths[:k2])
    return SubproblemSpec(
        i0=i0,
        j0=j0,
        rows=rows,
        cols=cols,
        N1=N1,
        T1=T1,
        target_rows=part.group_rows(i0),
        target_cols=part.stage_cols(j0),
    )


def extract_subproblem(Y, part: StaircasePartition, i0: int, j0: int) -> FourBlockProblem:
    """Observation blocks of the four-block problem for target block ``(i0, j0)``.

    With ``k1 = k + 1 - j0`` and ``k2 = k + 1 - i0``: ``Y_a`` is groups
    ``1..k1`` by stages ``1..k2``, ``Y_b`` groups ``1..k1`` by stages
    ``k2+1..j0``, ``Y_c`` groups ``k1+1..i0`` by stages ``1..k2``.
    """
    Y = Y.Y if isinstance(Y, PanelData) else np.asarray(Y, dtype=float)
    spec = subproblem_spec(part, i0, j0)
    sub = Y[np.ix_(spec.rows, spec.cols)]
    return FourBlockProblem.from_matrix(sub, spec.N1, spec.T1)


@dataclass(frozen=True)
class SubproblemResult:
    spec: SubproblemSpec
    inference: FourBlockInference
    isnr: float

    def diagnostics(self) -> dict:
        fit = self.inference.fit
        return {
            "block": [self.spec.i0, self.spec.j0],
            "N1": self.spec.N1,
            "T1": self.spec.T1,
            "N2": fit.N2,
            "T2": fit.T2,
            "left_singular_values": fit.left_singular_values.tolist(),
            "upper_singular_values": fit.upper_singular_values.tolist(),
            "isnr_advisory": self.isnr,
        }


@dataclass
class InferenceGrid:
    """Counterfactual estimates and intervals over all treated cells.

    Arrays are ``N x T`` in original unit order; entries outside ``treated``
    are NaN. ``source[i, t]`` indexes ``subproblems`` (-1 for observed cells).
    """

    Y: np.ndarray
    point: np.ndarray
    variance: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    treated: np.ndarray
    source: np.ndarray
    subproblems: list
    partition: StaircasePartition
    rank: int
    alpha: float
    metadata: dict = field(default_factory=dict)

    def cell(self, i: int, t: int) -> CellInference:
        if not self.treated[i, t]:
            raise DomainError(f"cell ({i}, {t}) is an observed control cell")
        return CellInference(
            float(self.point[i, t]),
            float(self.variance[i, t]),
            float(self.lower[i, t]),
            float(self.upper[i, t]),
            self.alpha,
        )


def _thread_count(n_jobs: int | None) -> int:
    if n_jobs is None:
        n_jobs = int(os.environ.get("CASTPANEL_THREADS", "1") or 1)
    return max(1, int(n_jobs))


def staggered_conf(Y, schedule: AdoptionSchedule, r: int, alpha: float, n_jobs: int | None = None) -> InferenceGrid:
    """Entrywise estimates and intervals for every treated cell.

    Each unobserved block ``(i0, j0)`` of the staircase is handled by its own
    four-block problem; the target block is the last ``N_{i0}`` rows and last
    ``T_{j0}`` columns of that problem's hidden block. Sub-problems are
    independent and run on ``n_jobs`` threads (default from the
    ``CASTPANEL_THREADS`` environment variable).
    """
    Y = Y.Y if isinstance(Y, PanelData) else np.asarray(Y, dtype=float)
    N, T = Y.shape
    if len(schedule) != N:
        raise DimensionError(f"schedule has {len(schedule)} units, panel has {N}")
    critical_value(alpha)
    part = build_staircase(schedule, T)
    treated = schedule.treated_mask(T)

    specs = [subproblem_spec(part, i0, j0) for i0 in range(1, part.k + 1) for j0 in range(part.k + 2 - i0, part.k + 1)]
    for spec in specs:
        if r > min(spec.N1, spec.T1):
            raise RankInfeasibleError(
                f"rank {r} infeasible for sub-problem {spec.label}: effective N1={spec.N1}, T1={spec.T1}"
            )

    def solve(spec):
        sub = Y[np.ix_(spec.rows, spec.cols)]
        inf = four_block_conf(FourBlockProblem.from_matrix(sub, spec.N1, spec.T1), r, alpha, label=spec.label)
        return SubproblemResult(spec, inf, isnr_advisory(inf.fit, inf.residuals))

    workers = _thread_count(n_jobs)
    if workers > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve, specs))
    else:
        results = [solve(spec) for spec in specs]

    shape = (N, T)
    point = np.full(shape, np.nan)
    variance = np.full(shape, np.nan)
    lower = np.full(shape, np.nan)
    upper = np.full(shape, np.nan)
    source = np.full(shape, -1, dtype=int)
    for idx, res in enumerate(results):
        spec, inf = res.spec, res.inference
        nr, nc = spec.target_rows.size, spec.target_cols.size
        block = np.ix_(spec.target_rows, spec.target_cols)
        if np.any(source[block] != -1):
            raise AssertionError(f"sub-problem {spec.label} overlaps an earlier target block")
        source[block] = idx
        point[block] = inf.point[-nr:, -nc:]
        variance[block] = inf.variance[-nr:, -nc:]
        lower[block] = inf.lower[-nr:, -nc:]
        upper[block] = inf.upper[-nr:, -nc:]
    if not np.array_equal(source >= 0, treated):
        raise AssertionError("target blocks do not tile the treated region")

    return InferenceGrid(
        Y=Y,
        point=point,
        variance=variance,
        lower=lower,
        upper=upper,
        treated=treated,
        source=source,
        subproblems=results,
        partition=part,
        rank=int(r),
        alpha=float(alpha),
        metadata={"variance_aggregation": "independent across sub-problems (approximation)"},
    )


def _y(Y) -> np.ndarray:
    return Y.Y if isinstance(Y, PanelData) else np.asarray(Y, dtype=float)


def ite(Y, grid: InferenceGrid, i: int, t: int, alpha: float | None = None) -> CellInference:
    """Individual treatment effect ``Y[i, t] - M[i, t]`` with its interval.

    The interval is the counterfactual interval reflected through the
    observed outcome, so its width is unchanged.
    """
    Y = _y(Y)
    m = grid.cell(i, t)
    if alpha is not None and alpha != grid.alpha:
        m = cell_ci(m.point, m.variance, alpha)
    y = float(Y[i, t])
    return CellInference(y - m.point, m.variance, y - m.upper, y - m.lower, m.alpha)


def weighted_effect(Y, grid: InferenceGrid, w, t: int, alpha: float | None = None) -> CellInference:
    """Weighted sum of ITEs over the units treated at column ``t``.

    Within each sub-problem the variance is the bilinear-form estimate with
    the unit weights of that sub-problem's target rows and the canonical
    vector of column ``t``; contributions from different sub-problems are
    summed as if independent.
    """
    Y = _y(Y)
    w = np.asarray(w, dtype=float).ravel()
    if w.shape != (Y.shape[0],):
        raise DimensionError("need one weight per unit")
    if not np.all(np.isfinite(w)):
        raise InputError("weights must be finite")
    rows = np.flatnonzero(grid.treated[:, t])
    if rows.size == 0:
        raise DomainError(f"no treated units at column {t}")
    alpha = grid.alpha if alpha is None else alpha

    point = float(np.sum(w[rows] * (Y[rows, t] - grid.point[rows, t])))
    var = 0.0
    for idx in np.unique(grid.source[rows, t]):
        res = grid.subproblems[idx]
        spec, inf = res.spec, res.inference
        fit = inf.fit
        c1 = np.zeros(fit.N2)
        # target rows are the last N_{i0} of the hidden block
        c1[fit.N2 - spec.target_rows.size :] = w[spec.target_rows]
        c2 = np.zeros(fit.T2)
        c2[t - spec.T1] = 1.0
        var += bilinear_variance(fit, inf.residuals, c1, c2)
    return cell_ci(point, var, alpha)


def atet(Y, grid: InferenceGrid, t: int, alpha: float | None = None) -> CellInference:
    """Average treatment effect on the units treated at column ``t``."""
    n = int(np.sum(grid.treated[:, t]))
    if n == 0:
        raise DomainError(f"no treated units at column {t}")
    w = grid.treated[:, t] / n
    return weighted_effect(Y, grid, w, t, alpha)


def significance_report(Y, grid: InferenceGrid, alpha: float | None = None, per_year: bool = True,
                        scale_weights=None, time_labels=None) -> list[dict]:
    """Per-period counts of significant ITEs plus ATET and scaled effect.

    A treated unit counts as positive (negative) when its ITE interval lies
    above (below) zero by more than rounding error, null otherwise. ``scale_weights`` (e.g.
    populations) give ``population_effect`` as an unnormalised weighted sum of
    ITEs. With ``per_year=False`` the periods are pooled into a single row
    whose ATET is the mean of the per-period ATETs, its variance summed as if
    periods were independent.
    """
    Y = _y(Y)
    alpha = grid.alpha if alpha is None else float(alpha)
    z = critical_value(alpha)
    T = Y.shape[1]
    if time_labels is None:
        time_labels = [str(c + 1) for c in range(T)]
    if scale_weights is not None:
        scale_weights = np.asarray(scale_weights, dtype=float)
    tol = ROUNDOFF_RTOL * float(np.max(np.abs(Y), initial=0.0))

    rows = []
    for t in range(T):
        units = np.flatnonzero(grid.treated[:, t])
        if units.size == 0:
            continue
        tau = Y[units, t] - grid.point[units, t]
        half = z * np.sqrt(grid.variance[units, t])
        lo, hi = tau - half, tau + half
        pos = int(np.sum(lo > tol))
        neg = int(np.sum(hi < -tol))
        a = atet(Y, grid, t, alpha)
        row = {
            "time": time_labels[t],
            "n_treated": int(units.size),
            "positive": pos,
            "negative": neg,
            "null": int(units.size) - pos - neg,
            "atet": a.point,
            "atet_se": a.se,
            "population_effect": np.nan,
            "population_se": np.nan,
        }
        if scale_weights is not None:
            pe = weighted_effect(Y, grid, scale_weights, t, alpha)
            row["population_effect"] = pe.point
            row["population_se"] = pe.se
        rows.append(row)

    if per_year or not rows:
        return rows
    pooled = {
        "time": "all",
        "n_treated": sum(r["n_treated"] for r in rows),
        "positive": sum(r["positive"] for r in rows),
        "negative": sum(r["negative"] for r in rows),
        "null": sum(r["null"] for r in rows),
        "atet": float(np.mean([r["atet"] for r in rows])),
        "atet_se": float(np.sqrt(np.sum([r["atet_se"] ** 2 for r in rows])) / len(rows)),
        "population_effect": float(np.sum([r["population_effect"] for r in rows])),
        "population_se": float(np.sqrt(np.sum([r["population_se"] ** 2 for r in rows]))),
    }
    return [pooled]
