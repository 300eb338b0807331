"""CSV ingestion and emission for wide panels, adoption files and weights."""

import csv
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .staggered import NEVER, AdoptionSchedule, PanelData


def fmt(x) -> str:
    """Machine format: 17 significant digits, empty for NaN."""
    if x is None:
        return ""
    x = float(x)
    if np.isnan(x):
        return ""
    return format(x, ".17g")


def _read_rows(path) -> list[list[str]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        raise DataError(f"{path}: empty file")
    return rows


def _increasing(labels) -> bool:
    try:
        vals = [float(x) for x in labels]
    except ValueError:
        vals = list(labels)
    return all(a < b for a, b in zip(vals, vals[1:]))


def read_panel_header(path) -> tuple[str, ...]:
    return tuple(c.strip() for c in _read_rows(path)[0][1:])


def read_panel_csv(path, exclude_times=()) -> PanelData:
    """Wide panel: first column unit ids, remaining header cells time labels.

    Empty cells are missing. A time column listed in ``exclude_times`` is
    dropped; any missing cell left after that is an error.
    """
    rows = _read_rows(path)
    header = [c.strip() for c in rows[0]]
    times = header[1:]
    if not times:
        raise DataError(f"{path}: no time columns")
    if len(set(times)) != len(times) or not _increasing(times):
        raise DataError(f"{path}: time labels must be unique and strictly increasing")
    exclude = {str(x).strip() for x in exclude_times}
    unknown = exclude - set(times)
    if unknown:
        raise ConfigError(f"excluded time labels not in panel: {sorted(unknown)}")
    keep = [j for j, lab in enumerate(times) if lab not in exclude]
    if not keep:
        raise ConfigError("all time columns excluded")

    units, values, missing = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        unit = row[0].strip()
        vals = []
        for j in keep:
            cell = row[j + 1].strip()
            if cell == "":
                missing.append(f"{unit}@{times[j]}")
                vals.append(np.nan)
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value {cell!r} for {unit}@{times[j]}") from None
        units.append(unit)
        values.append(vals)
    if len(set(units)) != len(units):
        dup = sorted({u for u in units if units.count(u) > 1})
        raise DataError(f"{path}: duplicate unit ids {dup}")
    if missing:
        raise DataError(f"{path}: missing cells in non-excluded columns: {', '.join(missing)}")
    Y = np.array(values, dtype=float).reshape(len(units), len(keep))
    if not np.all(np.isfinite(Y)):
        raise DataError(f"{path}: non-finite values")
    return PanelData(Y, tuple(units), tuple(times[j] for j in keep))


def read_adoption_csv(path, panel: PanelData, all_time_labels=None) -> AdoptionSchedule:
    """Two columns: unit id and adoption time label (or ``never``).

    Labels are resolved against ``all_time_labels`` (the panel header before
    exclusions) and mapped to the first retained period at or after them.
    """
    rows = _read_rows(path)
    body = rows[1:]  # header row is required
    labels = tuple(all_time_labels) if all_time_labels is not None else panel.time_labels
    kept = {lab: j for j, lab in enumerate(panel.time_labels)}
    unit_index = {u: i for i, u in enumerate(panel.unit_labels)}
    times = np.full(len(panel.unit_labels), np.nan)
    for lineno, row in enumerate(body, start=2):
        if len(row) < 2:
            raise DataError(f"{path}:{lineno}: expected unit id and adoption label")
        unit, lab = row[0].strip(), row[1].strip()
        if unit not in unit_index:
            raise DataError(f"{path}:{lineno}: unknown unit {unit!r}")
        i = unit_index[unit]
        if not np.isnan(times[i]):
            raise DataError(f"{path}:{lineno}: unit {unit!r} listed twice")
        if lab.lower() == "never":
            times[i] = NEVER
            continue
        if lab not in labels:
            raise DataError(f"{path}:{lineno}: adoption label {lab!r} is not a panel time label")
        later = [kept[x] for x in labels[labels.index(lab):] if x in kept]
        times[i] = later[0] + 1 if later else NEVER
    absent = [u for u, i in unit_index.items() if np.isnan(times[i])]
    if absent:
        raise DataError(f"{path}: no adoption entry for units {absent}")
    return AdoptionSchedule(times)


def read_weights_csv(path, panel: PanelData) -> np.ndarray:
    rows = _read_rows(path)
    unit_index = {u: i for i, u in enumerate(panel.unit_labels)}
    w = np.full(len(unit_index), np.nan)
    for lineno, row in enumerate(rows[1:], start=2):
        unit = row[0].strip()
        if unit not in unit_index:
            raise DataError(f"{path}:{lineno}: unknown unit {unit!r}")
        try:
            w[unit_index[unit]] = float(row[1])
        except (IndexError, ValueError):
            raise DataError(f"{path}:{lineno}: bad weight") from None
    if np.any(np.isnan(w)):
        raise DataError(f"{path}: weights missing for some units")
    return w


def write_panel_csv(panel: PanelData, path, unit_header: str = "unit") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow([unit_header, *panel.time_labels])
        for unit, row in zip(panel.unit_labels, panel.Y):
            out.writerow([unit, *(fmt(x) for x in row)])


def write_adoption_csv(panel: PanelData, schedule: AdoptionSchedule, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["unit", "adoption"])
        for unit, t in zip(panel.unit_labels, schedule.adoption_time):
            out.writerow([unit, "never" if not np.isfinite(t) else panel.time_labels[int(t) - 1]])


def long_to_wide(src, dst, unit_col: str = "unit", time_col: str = "time", value_col: str = "value") -> None:
    """Convert a long ``unit,time,value`` CSV into the wide panel layout.

    Time labels are ordered numerically when they all parse as numbers;
    absent combinations become empty cells.
    """
    with Path(src).open(newline="", encoding="utf-8-sig") as fh:
        records = list(csv.DictReader(fh))
    if not records:
        raise DataError(f"{src}: empty file")
    for col in (unit_col, time_col, value_col):
        if col not in records[0]:
            raise DataError(f"{src}: missing column {col!r}")
    units = list(dict.fromkeys(r[unit_col].strip() for r in records))
    times = list(dict.fromkeys(r[time_col].strip() for r in records))
    try:
        times.sort(key=float)
    except ValueError:
        times.sort()
    cells = {(r[unit_col].strip(), r[time_col].strip()): r[value_col].strip() for r in records}
    with Path(dst).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow([unit_col, *times])
        for u in units:
            out.writerow([u, *(cells.get((u, t), "") for t in times)])


def moving_average(Y, window: int) -> np.ndarray:
    """Centred moving average along each row; edge windows shrink to the available columns."""
    Y = np.asarray(Y, dtype=float)
    window = int(window)
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"moving-average window must be a positive odd integer, got {window}")
    T = Y.shape[1]
    if window > T:
        raise ConfigError(f"moving-average window {window} exceeds the {T} time periods")
    if window == 1:
        return Y.copy()
    h = window // 2
    out = np.empty_like(Y)
    for t in range(T):
        out[:, t] = Y[:, max(t - h, 0) : t + h + 1].mean(axis=1)
    return out


preprocess_moving_average = moving_average
