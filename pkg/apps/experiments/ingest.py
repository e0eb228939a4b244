"""
CSV ingestion for observed series and option quotes.

Every rejection is an IngestError whose code names the kind of problem and
whose details carry the offending line number (the header is line 1).
"""

from __future__ import annotations

import logging
import re
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import numpy.typing as npt
import pandas as pd

from apps.core.exceptions import ArtifactIOError, DiffLabError, IngestError, ValidationError
from apps.derivatives.positions import QUOTE_COLUMNS, OptionQuote, QuoteSet
from apps.sde.paths import SamplePath

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SPACING_TOLERANCE = 1e-9
UNITS_PER_YEAR = {"days252": 252.0, "weeks52": 52.0, "months12": 12.0}
TIME_COLUMNS = ("t", "x")
DATE_COLUMNS = ("date", "x")
_LINE_IN_MESSAGE = re.compile(r"line (\d+)")


def _line(row: int) -> int:
    """File line of data row `row` (0-based)."""
    return row + 2


"""
GOAL: Read a CSV as strings and check its header against accepted schemas.

PARAMETERS:
  file: str | Path - CSV file
  schemas: Sequence[tuple[str, ...]] - Accepted column lists, in order

RETURNS:
  tuple[pd.DataFrame, tuple[str, ...]] - String table and the matched schema

RAISES:
  ArtifactIOError: file missing or unreadable
  IngestError: EMPTY_FILE, MALFORMED_ROW (wrong field count or empty cell), SCHEMA_MISMATCH
"""
def _read_table(file: PathLike, schemas: Sequence[tuple[str, ...]]) -> tuple[pd.DataFrame, tuple[str, ...]]:
    path = Path(file)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError as exc:
        raise ArtifactIOError(f"input file not found: {path}", details={"path": str(path)}) from exc
    except pd.errors.EmptyDataError as exc:
        raise IngestError("EMPTY_FILE", f"input file is empty: {path}", details={"path": str(path)}) from exc
    except pd.errors.ParserError as exc:
        match = _LINE_IN_MESSAGE.search(str(exc))
        line = int(match.group(1)) if match else None
        raise IngestError(
            "MALFORMED_ROW", f"malformed row in {path.name}: {exc}", details={"path": str(path), "line": line}
        ) from exc
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc}", details={"path": str(path)}) from exc

    columns = tuple(str(c).strip() for c in frame.columns)
    frame.columns = list(columns)
    schema = next((s for s in schemas if columns == s), None)
    if schema is None:
        raise IngestError(
            "SCHEMA_MISMATCH",
            f"unexpected header {','.join(columns)}; expected {' or '.join(','.join(s) for s in schemas)}",
            details={"found": list(columns), "expected": [list(s) for s in schemas]},
        )
    if frame.empty:
        raise IngestError("EMPTY_FILE", f"{path.name} has a header but no rows", details={"path": str(path)})
    blank = frame.apply(lambda column: column.str.strip() == "")
    if blank.to_numpy().any():
        row = int(np.flatnonzero(blank.to_numpy().any(axis=1))[0])
        raise IngestError("MALFORMED_ROW", f"missing field on line {_line(row)}", details={"line": _line(row)})
    return frame, schema


def _numeric(frame: pd.DataFrame, column: str) -> npt.NDArray[np.float64]:
    values = pd.to_numeric(frame[column].str.strip(), errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise IngestError(
            "NON_NUMERIC_VALUE",
            f"non-numeric {column} value {frame[column].iloc[row]!r} on line {_line(row)}",
            details={"line": _line(row), "column": column, "value": frame[column].iloc[row]},
        )
    return values


def _calendar_units(dates: pd.DatetimeIndex, calendar: str) -> npt.NDArray[np.float64]:
    """Spacing between consecutive dates in calendar units."""
    if calendar == "days252":
        days = dates.values.astype("datetime64[D]")
        return np.busday_count(days[:-1], days[1:]).astype(np.float64)
    if calendar == "weeks52":
        return np.diff(dates.values.astype("datetime64[D]").astype(np.int64)).astype(np.float64) / 7.0
    months = dates.year.to_numpy() * 12 + dates.month.to_numpy()
    return np.diff(months).astype(np.float64)


"""
GOAL: Check spacings against a step and collect gap transitions.

PARAMETERS:
  spacing: array - Consecutive spacings in some unit
  step: float - Reference step in the same unit - > 0
  allow_gaps: bool - Accept whole multiples of the step as gaps

RETURNS:
  tuple[int, ...] - Transitions spanning a gap

RAISES:
  IngestError: NON_UNIFORM_SPACING naming the line; GAP_DETECTED when gaps are not allowed
"""
def _gap_transitions(spacing: npt.NDArray[np.float64], step: float, allow_gaps: bool) -> tuple[int, ...]:
    ratio = spacing / step
    multiple = np.rint(ratio)
    off_grid = (multiple < 1) | (np.abs(ratio - multiple) > SPACING_TOLERANCE * np.maximum(multiple, 1.0))
    if off_grid.any():
        i = int(np.flatnonzero(off_grid)[0])
        raise IngestError(
            "NON_UNIFORM_SPACING",
            f"spacing before line {_line(i + 1)} is {spacing[i]:g}, expected a multiple of {step:g}",
            details={"line": _line(i + 1), "spacing": float(spacing[i]), "step": float(step)},
        )
    gaps = tuple(int(i) for i in np.flatnonzero(multiple > 1))
    if gaps and not allow_gaps:
        raise IngestError(
            "GAP_DETECTED",
            f"{len(gaps)} gap(s) in the series, first before line {_line(gaps[0] + 1)}; pass --allow-gaps to drop them",
            details={"line": _line(gaps[0] + 1), "gaps": len(gaps)},
        )
    return gaps


"""
GOAL: Load an observed series into a SamplePath.

PARAMETERS:
  file: str | Path - CSV with header t,x (t in years) or date,x (ISO dates)
  calendar: str - years for t,x files; days252, weeks52 or months12 for date files
  allow_gaps: bool - Keep series with missing rows, excluding the transitions that span them

RETURNS:
  SamplePath - delta inferred from the spacing; gap transitions in excluded_transitions

RAISES:
  IngestError: EMPTY_FILE, SCHEMA_MISMATCH, MALFORMED_ROW, NON_NUMERIC_VALUE,
               TOO_FEW_ROWS, NON_UNIFORM_SPACING, GAP_DETECTED
  ValidationError: calendar does not fit the file kind
  ArtifactIOError: unreadable file

GUARANTEES:
  - The input file is never modified
  - Rows are kept in file order; duplicated timestamps are spacing errors
"""
def ingest_series(file: PathLike, calendar: str = "years", allow_gaps: bool = False) -> SamplePath:
    frame, schema = _read_table(file, [TIME_COLUMNS, DATE_COLUMNS])
    x = _numeric(frame, "x")
    if x.size < 2:
        raise IngestError("TOO_FEW_ROWS", "a series needs at least 2 rows", details={"rows": int(x.size)})

    if schema == TIME_COLUMNS:
        if calendar != "years":
            raise ValidationError("t,x files are in years; use --calendar years", details={"calendar": calendar})
        t = _numeric(frame, "t")
        spacing = np.diff(t)
        positive = spacing[spacing > 0]
        step = float(np.min(positive)) if positive.size else 0.0
        if step <= 0:
            raise IngestError("NON_UNIFORM_SPACING", "time column does not increase", details={"line": _line(1)})
        gaps = _gap_transitions(spacing, step, allow_gaps)
        delta, origin = step, float(t[0])
    else:
        if calendar not in UNITS_PER_YEAR:
            raise ValidationError(
                "date files need --calendar days252, weeks52 or months12", details={"calendar": calendar}
            )
        try:
            dates = pd.DatetimeIndex(pd.to_datetime(frame["date"].str.strip(), format="ISO8601"))
        except (ValueError, TypeError) as exc:
            raise IngestError("MALFORMED_ROW", f"unparseable date: {exc}", details={"column": "date"}) from exc
        spacing = _calendar_units(dates, calendar)
        positive = spacing[spacing > 0]
        if positive.size == 0:
            raise IngestError("NON_UNIFORM_SPACING", "dates do not increase", details={"line": _line(1)})
        step = float(pd.Series(positive).mode().iloc[0])
        gaps = _gap_transitions(spacing, step, allow_gaps)
        delta, origin = step / UNITS_PER_YEAR[calendar], 0.0

    if gaps:
        logger.warning("ingest_series: excluding %d transition(s) that span gaps", len(gaps))
    logger.info("ingest_series: %d observations, delta=%.6g (%s)", x.size, delta, calendar)
    return SamplePath(
        delta,
        x,
        origin_time=origin,
        excluded_transitions=gaps,
        diagnostics={"source": str(file), "calendar": calendar},
    )


"""
GOAL: Load option quotes with header S,K,T,r,delta,C.

RETURNS:
  QuoteSet - Quotes in file order; rows violating no-arbitrage bounds are flagged, not dropped

RAISES:
  IngestError: EMPTY_FILE, SCHEMA_MISMATCH listing the expected columns, MALFORMED_ROW
               with the line number for rows that are not valid quotes, NON_NUMERIC_VALUE
"""
def ingest_options(file: PathLike) -> QuoteSet:
    frame, _ = _read_table(file, [QUOTE_COLUMNS])
    columns = {name: _numeric(frame, name) for name in QUOTE_COLUMNS}
    quotes = []
    for row in range(len(frame)):
        try:
            quotes.append(OptionQuote(*(float(columns[name][row]) for name in QUOTE_COLUMNS)))
        except DiffLabError as exc:
            raise IngestError(
                "MALFORMED_ROW",
                f"invalid quote on line {_line(row)}: {exc.message}",
                details={"line": _line(row), **exc.details},
            ) from exc
    result = QuoteSet.of(quotes)
    logger.info("ingest_options: %d quotes, %d flagged", len(result), len(result.flagged))
    return result
