"""Validate ingested activity and trigger tables, and configuration keys."""

import logging
from typing import Dict, Iterable, List, Optional

import pandas as pd

from activity_forecast.errors import ConfigError
from activity_forecast.types import ValidationReport

logger = logging.getLogger(__name__)

ACTIVITY_SCHEMA: Dict[str, str] = {"user_id": "string", "day": "integer"}
TRIGGER_SCHEMA: Dict[str, str] = {"user_id": "string", "first_day": "integer"}

# CSV line of the first data row (the header is line 1).
_FIRST_DATA_LINE = 2
_MAX_LINES_SHOWN = 10


def validate_activity_frame(
    df: pd.DataFrame,
    d: Optional[int] = None,
) -> ValidationReport:
    """Validate a long-format activity table (``user_id,day``).

    Runs three categories of checks:

    1. **Schema** -- exactly the ``user_id`` and ``day`` columns.
    2. **Ranges** -- ``day`` is an integer ``>= 1`` (and ``<= d`` when
       *d* is given); ``user_id`` is non-empty.
    3. **Duplicates** -- repeated ``(user_id, day)`` rows are reported as
       an anomaly only; ingestion deduplicates them.

    Args:
        df: Raw frame as read from CSV, all columns as strings.
        d: Optional number of observed days.

    Returns:
        A report dict with keys ``record_count``, ``schema_errors``,
        ``range_errors``, ``duplicates``, ``anomalies`` and ``valid``.
    """
    report = _empty_report(len(df))
    if not _check_schema(df, ACTIVITY_SCHEMA, report):
        return _finish(report)

    _check_user_ids(df, report)
    _check_day_column(df, "day", d, report)

    dup_mask = df.duplicated(subset=["user_id", "day"], keep="first")
    if dup_mask.any():
        msg = f"{int(dup_mask.sum())} duplicate (user_id, day) row(s) dropped{_lines(dup_mask)}"
        logger.warning("Anomaly: %s", msg)
        report["anomalies"].append(msg)

    return _finish(report)


def validate_trigger_frame(
    df: pd.DataFrame,
    d: Optional[int] = None,
) -> ValidationReport:
    """Validate a first-trigger table (``user_id,first_day``).

    Same checks as :func:`validate_activity_frame`, except that a
    repeated ``user_id`` is a hard error: a user has one first day.

    Args:
        df: Raw frame as read from CSV, all columns as strings.
        d: Optional number of observed days; ``first_day > d`` is an error.

    Returns:
        The validation report.
    """
    report = _empty_report(len(df))
    if not _check_schema(df, TRIGGER_SCHEMA, report):
        return _finish(report)

    _check_user_ids(df, report)
    _check_day_column(df, "first_day", d, report)

    dup_mask = df.duplicated(subset=["user_id"], keep=False)
    if dup_mask.any():
        users = sorted(df.loc[dup_mask, "user_id"].astype(str).unique())
        msg = f"Duplicate user_id(s) {users[:_MAX_LINES_SHOWN]}{_lines(dup_mask)}"
        logger.warning("Duplicates: %s", msg)
        report["duplicates"].append(msg)
        report["valid"] = False

    return _finish(report)


def validate_config_keys(
    section: str,
    given: Iterable[str],
    allowed: Iterable[str],
) -> None:
    """Reject configuration keys that are not part of *allowed*.

    Args:
        section: Name of the configuration section, used in the message.
        given: Keys present in the user configuration.
        allowed: Keys the section understands.

    Raises:
        ConfigError: Listing every unknown key.
    """
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        msg = f"Unknown key(s) in {section}: {unknown}; allowed: {sorted(allowed)}"
        logger.warning("Config: %s", msg)
        raise ConfigError(msg)


def _empty_report(record_count: int) -> ValidationReport:
    return {
        "record_count": record_count,
        "schema_errors": [],
        "range_errors": [],
        "duplicates": [],
        "anomalies": [],
        "valid": True,
    }


def _check_schema(df: pd.DataFrame, schema: Dict[str, str],
                  report: ValidationReport) -> bool:
    """Verify that *df* has exactly the columns of *schema*.

    Returns:
        ``True`` when the remaining checks can run.
    """
    expected_cols = list(schema)
    actual_cols = [str(c).strip() for c in df.columns]

    missing = set(expected_cols) - set(actual_cols)
    extra = set(actual_cols) - set(expected_cols)

    if missing:
        msg = f"Missing columns: {sorted(missing)}"
        logger.warning("Schema: %s", msg)
        report["schema_errors"].append(msg)
        report["valid"] = False

    if extra:
        msg = f"Unexpected columns: {sorted(extra)}"
        logger.warning("Schema: %s", msg)
        report["schema_errors"].append(msg)
        report["valid"] = False

    return not missing


def _check_user_ids(df: pd.DataFrame, report: ValidationReport) -> None:
    blank = df["user_id"].isna() | (df["user_id"].astype(str).str.strip() == "")
    if blank.any():
        msg = f"Column 'user_id' has {int(blank.sum())} null/empty value(s){_lines(blank)}"
        logger.warning("Range: %s", msg)
        report["range_errors"].append(msg)
        report["valid"] = False


def _check_day_column(df: pd.DataFrame, col: str, d: Optional[int],
                      report: ValidationReport) -> None:
    """Days must be integers in ``[1, d]``."""
    numeric = pd.to_numeric(df[col], errors="coerce")
    not_int = numeric.isna() | (numeric != numeric.round())
    if not_int.any():
        msg = f"Column '{col}' has {int(not_int.sum())} non-integer value(s){_lines(not_int)}"
        logger.warning("Range: %s", msg)
        report["range_errors"].append(msg)
        report["valid"] = False

    too_small = ~not_int & (numeric < 1)
    if too_small.any():
        msg = f"Column '{col}' has {int(too_small.sum())} value(s) < 1{_lines(too_small)}"
        logger.warning("Range: %s", msg)
        report["range_errors"].append(msg)
        report["valid"] = False

    if d is not None:
        too_large = ~not_int & (numeric > d)
        if too_large.any():
            msg = (f"Column '{col}' has {int(too_large.sum())} value(s) "
                   f"> d={d}{_lines(too_large)}")
            logger.warning("Range: %s", msg)
            report["range_errors"].append(msg)
            report["valid"] = False


def _lines(mask: pd.Series) -> str:
    """Format the CSV line numbers of the rows flagged in *mask*."""
    positions: List[int] = [int(i) for i in mask.to_numpy().nonzero()[0]]
    if not positions:
        return ""
    lines = [p + _FIRST_DATA_LINE for p in positions[:_MAX_LINES_SHOWN]]
    more = "" if len(positions) <= _MAX_LINES_SHOWN else f" (+{len(positions) - _MAX_LINES_SHOWN} more)"
    return f" at line(s) {lines}{more}"


def _finish(report: ValidationReport) -> ValidationReport:
    if report["valid"]:
        logger.info("Validation passed: %d records.", report["record_count"])
    else:
        total = (
            len(report["schema_errors"])
            + len(report["range_errors"])
            + len(report["duplicates"])
        )
        logger.warning("Validation found %d issue(s). "
                       "See report for details.", total)
    return report
