"""Semi-synthetic factor-model panels and Monte-Carlo experiments.

A rank-``r`` factor model is fitted to a real panel, new panels are sampled
from it, and the estimator's intervals are checked against the known truth.

Every replication draws from its own counter-based stream keyed by
``(seed, purpose, rep)``, so results do not depend on execution order or on
how replications are split across workers.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CastError, ConfigError, NumericalError
from .fourblock import (
    ROUNDOFF_RTOL,
    FourBlockProblem,
    column_bilinear_variances,
    critical_value,
    four_block_conf,
    oracle_variance_grid,
)
from .lowrank import truncated_svd
from .normal import rng_stream, standard_normal
from .staggered import NEVER, AdoptionSchedule, atet, staggered_conf

_COVERAGE, _CALIBRATION, _POWER = 0, 1, 2


class ParameterError(NumericalError):
    pass


def _psd_root(cov: np.ndarray, name: str) -> np.ndarray:
    """Lower-triangular-ish square root ``L`` with ``L @ L.T == cov``.

    Cholesky first; rank-deficient (but PSD within 1e-10) matrices fall back
    to a symmetric eigen-root so exact zeros stay exact.
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    w, Q = np.linalg.eigh((cov + cov.T) / 2.0)
    if w.min() < -1e-10 * max(1.0, abs(w).max()):
        raise ParameterError(f"{name} is not positive semi-definite (min eigenvalue {w.min():.3g})")
    return Q * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class FactorModelParams:
    """Gaussian factor model: unit loadings ~ N(v_mean, v_cov), time factors ~ N(u_mean, u_cov)."""

    r: int
    u_mean: np.ndarray
    v_mean: np.ndarray
    u_cov: np.ndarray
    v_cov: np.ndarray
    noise_var: float

    def __post_init__(self):
        r = int(self.r)
        for name in ("u_mean", "v_mean"):
            a = np.asarray(getattr(self, name), dtype=float).ravel()
            if a.shape != (r,):
                raise ParameterError(f"{name} must have length {r}")
            object.__setattr__(self, name, a)
        for name in ("u_cov", "v_cov"):
            a = np.asarray(getattr(self, name), dtype=float).reshape(r, r)
            if not np.allclose(a, a.T, atol=1e-12):
                raise ParameterError(f"{name} must be symmetric")
            _psd_root(a, name)
            object.__setattr__(self, name, a)
        if not self.noise_var >= 0:
            raise ParameterError("noise_var must be nonnegative")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "noise_var", float(self.noise_var))

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "FactorModelParams":
        return cls(**d)


def default_params(r: int = 2, noise_var: float = 1.0) -> FactorModelParams:
    """Stand-in model when no real panel is available.

    Mean loading ``e_1`` with identity covariances, so the leading factor is a
    common level and the rest are mean-zero.
    """
    mean = np.zeros(r)
    mean[0] = 1.0
    return FactorModelParams(r, mean, mean.copy(), np.eye(r), np.eye(r), noise_var)


def fit_factor_model(Y, r: int) -> FactorModelParams:
    """Fit loadings and factor moments from a rank-``r`` truncated SVD.

    Singular vectors are scaled by the square roots of their singular values;
    means and covariances are taken over the rows of the scaled factors and
    the noise variance is the mean squared residual.
    """
    Y = np.asarray(Y, dtype=float)
    svd = truncated_svd(Y, r)
    root = np.sqrt(svd.S)
    Ug = svd.U * root
    Vg = svd.V * root
    resid = Y - Ug @ Vg.T
    noise_var = float(np.sum(resid ** 2) / Y.size)

    def moments(F):
        cov = np.cov(F, rowvar=False, ddof=1) if F.shape[0] > 1 else np.zeros((r, r))
        return F.mean(axis=0), np.atleast_2d(cov)

    u_mean, u_cov = moments(Ug)
    v_mean, v_cov = moments(Vg)
    return FactorModelParams(r, u_mean, v_mean, u_cov, v_cov, noise_var)


@dataclass(frozen=True)
class SyntheticPanel:
    Y: np.ndarray
    M_star: np.ndarray
    sigma: np.ndarray  # per-cell noise standard deviation
    schedule: AdoptionSchedule
    seed: int


def treatment_times(rng: np.random.Generator, n_units: int, T: int, rule: str = "scaled") -> np.ndarray:
    """Adoption periods uniform on ``[0.7 L, 1.3 L]`` with ``L = T`` (``scaled``) or ``L = n_units`` (``units``).

    Draws after ``T`` become never-treated and draws before period 2 are
    clamped to 2.
    """
    if rule == "scaled":
        base = T
    elif rule == "units":
        base = n_units
    else:
        raise ConfigError(f"unknown treatment rule {rule!r}")
    lo = max(1, math.ceil(0.7 * base))
    hi = max(lo, math.floor(1.3 * base))
    t = rng.integers(lo, hi + 1, size=n_units).astype(float)
    t = np.maximum(t, 2.0)
    t[t > T] = NEVER
    return t


def generate_panel(params: FactorModelParams, N: int, T: int, seed: int, *, rule: str = "scaled",
                   heteroskedastic: bool = False, rng: np.random.Generator | None = None) -> SyntheticPanel:
    """Sample a panel from the factor model.

    Unit loadings follow the ``v`` moments and time factors the ``u``
    moments; ``Y = <phi_i, mu_t> + noise``. Adoption times come from
    :func:`treatment_times`. With ``heteroskedastic`` the noise standard
    deviation is multiplied by independent per-unit and per-time factors drawn
    uniformly on [0.5, 1.5].
    """
    if rng is None:
        rng = rng_stream(seed)
    r = params.r
    Lv = _psd_root(params.v_cov, "v_cov")
    Lu = _psd_root(params.u_cov, "u_cov")
    phi = params.v_mean + standard_normal(rng, (N, r)) @ Lv.T
    mu = params.u_mean + standard_normal(rng, (T, r)) @ Lu.T
    M_star = phi @ mu.T
    sd = math.sqrt(params.noise_var)
    if heteroskedastic:
        sigma = sd * np.outer(rng.uniform(0.5, 1.5, N), rng.uniform(0.5, 1.5, T))
    else:
        sigma = np.full((N, T), sd)
    Y = M_star + sigma * standard_normal(rng, (N, T))
    schedule = AdoptionSchedule(treatment_times(rng, N, T, rule))
    return SyntheticPanel(Y=Y, M_star=M_star, sigma=sigma, schedule=schedule, seed=int(seed))


@dataclass
class ExperimentConfig:
    """Monte-Carlo experiment settings.

    ``design`` is ``four_block`` (first ``N1`` units never treated, the rest
    adopt at period ``T1 + 1``) or ``staggered`` (adoption times from
    ``treatment_rule``). ``alpha`` is the size; the nominal level is
    ``1 - alpha``.
    """

    N: int = 200
    T: int = 200
    N1: int | None = None
    T1: int | None = None
    r: int = 2
    alpha: float = 0.05
    reps: int = 1000
    seed: int = 0
    design: str = "four_block"
    noise: str = "homoskedastic"
    treatment_rule: str = "scaled"
    params: FactorModelParams | None = None
    effect_size: float = 0.0
    alphas: tuple = (0.01, 0.05, 0.1, 0.2, 0.3, 0.5)
    target: str = "ite"
    calibration_reps: int | None = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.N1 is None:
            self.N1 = self.N // 2
        if self.T1 is None:
            self.T1 = self.T // 2
        if isinstance(self.params, dict):
            self.params = FactorModelParams.from_dict(self.params)
        self.alphas = tuple(float(a) for a in self.alphas)
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if not 0 < self.alpha < 1 or any(not 0 < a < 1 for a in self.alphas):
            raise ConfigError("alpha values must lie in (0, 1)")
        if self.design not in ("four_block", "staggered"):
            raise ConfigError(f"unknown design {self.design!r}")
        if self.noise not in ("homoskedastic", "heteroskedastic"):
            raise ConfigError(f"unknown noise model {self.noise!r}")
        if self.target not in ("ite", "atet"):
            raise ConfigError(f"unknown target {self.target!r}")
        if self.design == "four_block" and not (0 < self.N1 < self.N and 0 < self.T1 < self.T):
            raise ConfigError("four-block design needs 0 < N1 < N and 0 < T1 < T")
        if not math.isfinite(self.effect_size):
            raise ConfigError("effect_size must be finite")

    def model(self) -> FactorModelParams:
        return self.params if self.params is not None else default_params(self.r)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = self.model().to_dict()
        d["alphas"] = list(self.alphas)
        return d


def _draw(cfg: ExperimentConfig, purpose: int, rep: int) -> SyntheticPanel:
    rng = rng_stream(cfg.seed, purpose, rep)
    panel = generate_panel(cfg.model(), cfg.N, cfg.T, cfg.seed, rule=cfg.treatment_rule,
                           heteroskedastic=cfg.noise == "heteroskedastic", rng=rng)
    if cfg.design == "four_block":
        t = np.full(cfg.N, NEVER)
        t[cfg.N1:] = cfg.T1 + 1
        panel = SyntheticPanel(panel.Y, panel.M_star, panel.sigma, AdoptionSchedule(t), panel.seed)
    return panel


@dataclass
class Replication:
    """Per-replication errors and standard errors, all over treated targets."""

    ite_err: np.ndarray  # M_hat - M_star on treated cells
    ite_se: np.ndarray
    atet_err: np.ndarray  # per treated column
    atet_se: np.ndarray
    var_rel_err: np.ndarray = field(default_factory=lambda: np.empty(0))
    scale: float = 0.0  # max |M_star|, sets the rounding slack of a hit


def run_replication(cfg: ExperimentConfig, panel: SyntheticPanel, rep: int = 0) -> Replication:
    """Fit one panel and compare against its ground truth."""
    try:
        if cfg.design == "four_block":
            return _four_block_replication(cfg, panel)
        return _staggered_replication(cfg, panel)
    except CastError as exc:
        raise type(exc)(f"replication {rep}: {exc}") from exc


def _four_block_replication(cfg: ExperimentConfig, panel: SyntheticPanel) -> Replication:
    N1, T1 = cfg.N1, cfg.T1
    prob = FourBlockProblem.from_matrix(panel.Y, N1, T1)
    inf = four_block_conf(prob, cfg.r, cfg.alpha)
    truth_d = panel.M_star[N1:, T1:]
    err = inf.point - truth_d
    c1 = np.full(prob.N2, 1.0 / prob.N2)
    atet_var = column_bilinear_variances(inf.fit, inf.residuals, c1)
    atet_err = c1 @ err

    # true subspaces of the full counterfactual matrix
    star = truncated_svd(panel.M_star, cfg.r)
    gamma_star = oracle_variance_grid(star.U, star.V, panel.sigma, N1, T1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(inf.variance - gamma_star) / gamma_star
    return Replication(err.ravel(), np.sqrt(inf.variance).ravel(), atet_err, np.sqrt(atet_var), rel.ravel(),
                       float(np.max(np.abs(panel.M_star))))


def _staggered_replication(cfg: ExperimentConfig, panel: SyntheticPanel) -> Replication:
    grid = staggered_conf(panel.Y, panel.schedule, cfg.r, cfg.alpha)
    mask = grid.treated
    err = (grid.point - panel.M_star)[mask]
    se = np.sqrt(grid.variance[mask])
    # ITEs of the truth panel have zero error, so an ATET computed on M_star
    # in place of Y isolates the counterfactual error.
    atet_err, atet_se = [], []
    for t in np.flatnonzero(mask.any(axis=0)):
        a = atet(panel.M_star, grid, int(t))
        atet_err.append(-a.point)
        atet_se.append(a.se)
    return Replication(err, se, np.array(atet_err), np.array(atet_se), scale=float(np.max(np.abs(panel.M_star))))


def _map_reps(cfg: ExperimentConfig, purpose: int, n: int) -> list:
    def one(rep):
        return run_replication(cfg, _draw(cfg, purpose, rep), rep)

    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            return list(pool.map(one, range(n)))
    return [one(rep) for rep in range(n)]


def _binom_se(p: float, n: int) -> float:
    return float(math.sqrt(max(p * (1 - p), 0.0) / n)) if n > 0 else float("nan")


def _covered(err: np.ndarray, se: np.ndarray, z: float, scale: float) -> np.ndarray:
    return np.abs(err) <= z * se + ROUNDOFF_RTOL * scale


@dataclass
class CoverageResult:
    alpha: float
    nominal_level: float
    reps: int
    ite_coverage: float
    ite_coverage_se: float
    ite_coverage_se_rep: float
    atet_coverage: float
    atet_coverage_se: float
    atet_coverage_se_rep: float
    ite_ci_width: float
    atet_ci_width: float
    mse_ite: float
    mse_atet: float
    variance_rel_error_median: float

    def to_dict(self) -> dict:
        return asdict(self)


def summarize_coverage(reps: list, alpha: float) -> CoverageResult:
    """Aggregate replications into hit rates, widths and errors.

    ``*_se`` is the binomial standard error over all pooled targets;
    ``*_se_rep`` is the spread of per-replication hit rates, which accounts
    for dependence between targets of one replication.
    """
    z = critical_value(alpha)
    n = len(reps)
    ite_hits = [_covered(r.ite_err, r.ite_se, z, r.scale) for r in reps]
    atet_hits = [_covered(r.atet_err, r.atet_se, z, r.scale) for r in reps]
    ite_all = np.concatenate(ite_hits)
    atet_all = np.concatenate(atet_hits)
    ite_cov = float(ite_all.mean())
    atet_cov = float(atet_all.mean())

    def rep_se(hits):
        rates = np.array([h.mean() for h in hits])
        return float(rates.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")

    rel = np.concatenate([r.var_rel_err for r in reps])
    rel = rel[np.isfinite(rel)]
    return CoverageResult(
        alpha=float(alpha),
        nominal_level=1.0 - float(alpha),
        reps=n,
        ite_coverage=ite_cov,
        ite_coverage_se=_binom_se(ite_cov, ite_all.size),
        ite_coverage_se_rep=rep_se(ite_hits),
        atet_coverage=atet_cov,
        atet_coverage_se=_binom_se(atet_cov, atet_all.size),
        atet_coverage_se_rep=rep_se(atet_hits),
        ite_ci_width=float(2 * z * np.mean(np.concatenate([r.ite_se for r in reps]))),
        atet_ci_width=float(2 * z * np.mean(np.concatenate([r.atet_se for r in reps]))),
        mse_ite=float(np.mean(np.concatenate([r.ite_err for r in reps]) ** 2)),
        mse_atet=float(np.mean(np.concatenate([r.atet_err for r in reps]) ** 2)),
        variance_rel_error_median=float(np.median(rel)) if rel.size else float("nan"),
    )


def coverage_experiment(cfg: ExperimentConfig) -> CoverageResult:
    """Empirical coverage, interval width and MSE for ITE cells and ATETs."""
    return summarize_coverage(_map_reps(cfg, _COVERAGE, cfg.reps), cfg.alpha)


@dataclass
class PowerPoint:
    alpha: float
    critical_value: float
    power: float
    power_se: float
    n_tests: int


def _stats(reps: list, target: str, shift: float = 0.0) -> list:
    """Per-replication test statistics ``(effect_hat - 0) / se``.

    ``effect_hat - true_effect = -(M_hat - M_star)``, so an injected effect
    ``shift`` enters as ``shift - err``.
    """
    out = []
    for r in reps:
        err, se = (r.ite_err, r.ite_se) if target == "ite" else (r.atet_err, r.atet_se)
        est = shift - err
        with np.errstate(divide="ignore", invalid="ignore"):
            stat = np.abs(est) / se
        stat = np.where(se > 0, stat, np.where(est == 0, 0.0, np.inf))
        out.append(stat)
    return out


def power_experiment(cfg: ExperimentConfig) -> list[PowerPoint]:
    """Size-versus-power curve with empirically calibrated critical values.

    Step 1: on ``calibration_reps`` independent panels, the critical value
    for size ``alpha`` is the ``1 - alpha`` quantile of ``|estimate - truth| /
    se``. Step 2: on ``reps`` fresh panels whose treated outcomes equal the
    counterfactual plus ``effect_size``, report how often ``|estimate| / se``
    exceeds it. ``power_se`` is binomial with one draw per replication,
    which is conservative for pooled, positively correlated targets.
    """
    min_alpha = min(cfg.alphas)
    need = math.ceil(1.0 / min_alpha)
    n_cal = cfg.calibration_reps or cfg.reps
    if cfg.reps < need or n_cal < need:
        raise ConfigError(f"alpha={min_alpha} needs at least {need} replications (got reps={cfg.reps}, calibration_reps={n_cal})")

    null = np.concatenate(_stats(_map_reps(cfg, _CALIBRATION, n_cal), cfg.target))
    test_reps = _map_reps(cfg, _POWER, cfg.reps)
    test = _stats(test_reps, cfg.target, cfg.effect_size)
    pooled = np.concatenate(test)

    points = []
    for a in sorted(cfg.alphas):
        crit = float(np.quantile(null, 1.0 - a))
        power = float(np.mean(pooled > crit))
        points.append(PowerPoint(a, crit, power, _binom_se(power, cfg.reps), int(pooled.size)))
    return points
