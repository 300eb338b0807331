"""Command-line entry point: ``castpanel analyze`` and ``castpanel simulate``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
error (infeasible rank, ill-conditioned sub-problem).
"""

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CastError, ConfigError
from .lowrank import select_rank
from .panel_io import (
    fmt,
    moving_average,
    read_adoption_csv,
    read_panel_csv,
    read_panel_header,
    read_weights_csv,
)
from .staggered import (
    AdoptionSchedule,
    PanelData,
    build_staircase,
    significance_report,
    staggered_conf,
    subproblem_spec,
)
from .synth import ExperimentConfig, coverage_experiment, fit_factor_model, power_experiment

log = logging.getLogger("castpanel")


@dataclass
class RunConfig:
    panel: str
    adoption: str
    out: str
    rank: int | str = "auto"
    alpha: float = 0.05
    moving_average: int | None = None
    exclude_times: tuple = ()
    weights: str | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0 < float(self.alpha) < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        self.alpha = float(self.alpha)
        if self.rank != "auto":
            try:
                self.rank = int(self.rank)
            except (TypeError, ValueError):
                raise ConfigError(f"rank must be a positive integer or 'auto', got {self.rank!r}") from None
            if self.rank < 1:
                raise ConfigError("rank must be positive")
        if self.moving_average is not None:
            w = int(self.moving_average)
            if w < 1 or w % 2 == 0:
                raise ConfigError(f"moving-average window must be a positive odd integer, got {w}")
            self.moving_average = w
        self.exclude_times = tuple(str(x) for x in self.exclude_times)


def ingest(panel_csv, adoption_csv, cfg: RunConfig | None = None) -> tuple[PanelData, AdoptionSchedule]:
    exclude = cfg.exclude_times if cfg is not None else ()
    panel = read_panel_csv(panel_csv, exclude)
    schedule = read_adoption_csv(adoption_csv, panel, read_panel_header(panel_csv))
    if cfg is not None and cfg.weights:
        panel = PanelData(panel.Y, panel.unit_labels, panel.time_labels, read_weights_csv(cfg.weights, panel))
    return panel, schedule


def _max_feasible_rank(schedule: AdoptionSchedule, T: int) -> int:
    part = build_staircase(schedule, T)
    k = part.k
    dims = [
        min(s.N1, s.T1)
        for s in (subproblem_spec(part, i0, j0) for i0 in range(1, k + 1) for j0 in range(k + 2 - i0, k + 1))
    ]
    return min(dims) if dims else min(part.N, T)


def scree(Y, schedule: AdoptionSchedule) -> np.ndarray:
    """Singular values of the never-treated units over all periods."""
    never = ~np.isfinite(schedule.adoption_time)
    return np.linalg.svd(np.asarray(Y, dtype=float)[never], compute_uv=False)


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        out.writerows(rows)


def _rounded(x, digits=3) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)) or isinstance(x, str):
        return str(x)
    return f"{x:.{digits}g}" if abs(x) >= 1e4 else f"{x:.{digits}f}"


def run_analysis(cfg: RunConfig) -> dict:
    """Fit the staggered design and write counterfactual, report and metadata files."""
    panel, schedule = ingest(cfg.panel, cfg.adoption, cfg)
    Y = panel.Y if cfg.moving_average is None else moving_average(panel.Y, cfg.moving_average)
    N, T = Y.shape
    sv = scree(Y, schedule)
    max_rank = _max_feasible_rank(schedule, T)
    if cfg.rank == "auto":
        rank = select_rank(sv, max_rank=min(sv.size, max_rank + 1)) if sv.size >= 2 else 1
        rank_source = "auto"
    else:
        rank, rank_source = cfg.rank, "user"
    log.info("scree: %s", " ".join(f"{s:.4g}" for s in sv))
    log.info("rank %d (%s)", rank, rank_source)

    grid = staggered_conf(Y, schedule, rank, cfg.alpha)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    ite_rows = []
    for i, unit in enumerate(panel.unit_labels):
        for t, lab in enumerate(panel.time_labels):
            if grid.treated[i, t]:
                m, lo, hi, var = grid.point[i, t], grid.lower[i, t], grid.upper[i, t], grid.variance[i, t]
                y = Y[i, t]
                ite_rows.append([unit, lab, fmt(y), 1, fmt(m), fmt(lo), fmt(hi), fmt(np.sqrt(var)),
                                 fmt(y - m), fmt(y - hi), fmt(y - lo)])
            else:
                ite_rows.append([unit, lab, fmt(Y[i, t]), 0, "", "", "", "", "", "", ""])
    _write_csv(out / "counterfactual.csv",
               ["unit", "time", "observed", "treated", "counterfactual", "cf_lower", "cf_upper", "cf_se",
                "ite", "ite_lower", "ite_upper"], ite_rows)

    report = significance_report(Y, grid, cfg.alpha, per_year=True, scale_weights=panel.weights,
                                 time_labels=panel.time_labels)
    cols = ["time", "n_treated", "positive", "negative", "null", "atet", "atet_se", "population_effect",
            "population_se"]
    _write_csv(out / "significance.csv", cols,
               [[r[c] if isinstance(r[c], (int, str)) else fmt(r[c]) for c in cols] for r in report])
    _write_csv(out / "significance_rounded.csv", cols, [[_rounded(r[c]) for c in cols] for r in report])

    part = grid.partition
    meta = {
        "version": __version__,
        "inputs": {"panel": str(cfg.panel), "adoption": str(cfg.adoption), "weights": cfg.weights},
        "rank": rank,
        "rank_source": rank_source,
        "max_feasible_rank": max_rank,
        "scree": [float(s) for s in sv],
        "alpha": cfg.alpha,
        "moving_average": cfg.moving_average,
        "excluded_times": list(cfg.exclude_times),
        "units": list(panel.unit_labels),
        "times": list(panel.time_labels),
        "partition": {
            "k": part.k,
            "group_sizes": list(part.group_sizes),
            "stage_lengths": list(part.stage_lengths),
            "stage_start_times": [panel.time_labels[s - 1] for s in part.stage_boundaries],
        },
        "subproblems": [s.diagnostics() for s in grid.subproblems],
        "isnr_advisory_max": max((s.isnr for s in grid.subproblems), default=None),
        "variance_aggregation": grid.metadata["variance_aggregation"],
        "seed": cfg.seed,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"grid": grid, "report": report, "metadata": meta, "out": out}


def load_simulation_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


_EXPERIMENT_FIELDS = {f.name for f in fields(ExperimentConfig)}


def _experiment_config(raw: dict, base_dir: Path) -> ExperimentConfig:
    raw = dict(raw)
    src = raw.pop("params_from_panel", None)
    if src is not None:
        rank = int(src.get("rank", raw.get("r", 2)))
        panel = read_panel_csv(base_dir / src["path"], src.get("exclude_times", ()))
        raw["params"] = fit_factor_model(panel.Y, rank)
        raw["r"] = rank
    unknown = set(raw) - _EXPERIMENT_FIELDS
    if unknown:
        raise ConfigError(f"unknown experiment settings: {sorted(unknown)}")
    if "alphas" in raw:
        raw["alphas"] = tuple(raw["alphas"])
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def run_simulation(config_path, out_dir) -> dict:
    """Run each condition of a simulation config; write ``results.csv`` and ``summary.json``.

    Config schema (JSON)::

        {"experiment": "coverage" | "power",
         "defaults": {...ExperimentConfig fields...},
         "conditions": [{...overrides...}, ...],
         "params_from_panel": {"path": "panel.csv", "rank": 2}}   # optional

    Without ``conditions`` a single condition runs with ``defaults``.
    """
    config_path = Path(config_path)
    raw = load_simulation_config(config_path)
    kind = raw.get("experiment", "coverage")
    if kind not in ("coverage", "power"):
        raise ConfigError(f"unknown experiment {kind!r}")
    defaults = dict(raw.get("defaults", {}))
    if "params_from_panel" in raw:
        defaults["params_from_panel"] = raw["params_from_panel"]
    conditions = raw.get("conditions") or [{}]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, summary = [], {"experiment": kind, "version": __version__, "conditions": []}
    for idx, over in enumerate(conditions):
        cfg = _experiment_config({**defaults, **over}, config_path.parent)
        entry = {"condition": idx, "config": cfg.to_dict()}
        if kind == "coverage":
            res = coverage_experiment(cfg).to_dict()
            entry["result"] = res
            rows.append({"condition": idx, "N": cfg.N, "T": cfg.T, "N1": cfg.N1, "T1": cfg.T1, "r": cfg.r,
                         "design": cfg.design, "noise": cfg.noise, "seed": cfg.seed, **res})
        else:
            points = power_experiment(cfg)
            entry["result"] = [asdict(p) for p in points]
            for p in points:
                rows.append({"condition": idx, "N": cfg.N, "T": cfg.T, "N1": cfg.N1, "T1": cfg.T1, "r": cfg.r,
                             "target": cfg.target, "effect_size": cfg.effect_size, "seed": cfg.seed, **asdict(p)})
        summary["conditions"].append(entry)
        log.info("condition %d done", idx)

    header = list(rows[0])
    _write_csv(out / "results.csv", header,
               [[r[h] if isinstance(r[h], (int, str)) else fmt(r[h]) for h in header] for r in rows])
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n",
                                      encoding="utf-8")
    return summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="castpanel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="estimate counterfactuals and intervals for a staggered panel")
    a.add_argument("--panel", required=True, help="wide CSV: unit id column, one column per period")
    a.add_argument("--adoption", required=True, help="CSV: unit id, adoption period label or 'never'")
    a.add_argument("--rank", default="auto", help="integer rank or 'auto' (largest scree ratio)")
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--moving-average", type=int, default=None, metavar="W")
    a.add_argument("--exclude-times", default="", help="comma-separated period labels to drop")
    a.add_argument("--weights", default=None, help="CSV: unit id, weight (e.g. population)")
    a.add_argument("--out", required=True)

    s = sub.add_parser("simulate", help="run coverage or power experiments from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "analyze":
            cfg = RunConfig(
                panel=args.panel,
                adoption=args.adoption,
                out=args.out,
                rank=args.rank,
                alpha=args.alpha,
                moving_average=args.moving_average,
                exclude_times=tuple(x for x in args.exclude_times.split(",") if x.strip()),
                weights=args.weights,
            )
            result = run_analysis(cfg)
            meta = result["metadata"]
            print(f"rank {meta['rank']} ({meta['rank_source']}); scree: "
                  + " ".join(f"{s:.4g}" for s in meta["scree"]))
            print(f"wrote {result['out']}")
        else:
            run_simulation(args.config, args.out)
            print(f"wrote {args.out}")
    except CastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
