"""Write datasets, credible bands and report tables to CSV files."""

import logging
from pathlib import Path
from typing import List, Union

import pandas as pd

from activity_forecast.data_model import ActivityMatrix, TriggerData
from activity_forecast.errors import DataValidationError
from activity_forecast.types import Json

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

EXTERNAL_PREDICTION_COLUMNS: List[str] = [
    "experiment_id", "model_name", "predicted_new_users",
]
BAND_COLUMNS: List[str] = ["day", "lo", "mean", "hi"]


def _prepare(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_activity_csv(matrix: ActivityMatrix, output_path: PathLike) -> None:
    """Write an activity matrix in long ``user_id,day`` format.

    Rows are sorted by ``(user_id, day)`` and deduplicated.  An empty
    matrix still produces the header line (a warning is logged).

    Args:
        matrix: Activity to persist.
        output_path: Destination CSV path; parent directories are created.
    """
    output_path = _prepare(output_path)
    frame = matrix.to_frame().drop_duplicates(subset=["user_id", "day"], keep="last")
    if frame.empty:
        logger.warning("No activity rows to write; writing header only.")
    frame.to_csv(output_path, index=False, lineterminator="\n")
    logger.info("Wrote %d activity rows (%d users) to %s",
                len(frame), matrix.n_users, output_path)


def write_trigger_csv(data: TriggerData, output_path: PathLike) -> None:
    """Write first-trigger days in ``user_id,first_day`` format."""
    output_path = _prepare(output_path)
    frame = data.to_frame()
    if frame.empty:
        logger.warning("No trigger rows to write; writing header only.")
    frame.to_csv(output_path, index=False, lineterminator="\n")
    logger.info("Wrote %d first triggers to %s", len(frame), output_path)


def write_band_csv(band, output_path: PathLike) -> None:
    """Write a credible band as ``day,lo,mean,hi`` rows, one per future day."""
    output_path = _prepare(output_path)
    frame = band.to_frame()[BAND_COLUMNS]
    frame.to_csv(output_path, index=False, lineterminator="\n")
    logger.info("Wrote %d band rows to %s", len(frame), output_path)


def write_table_csv(table: Union[pd.DataFrame, List[Json]], output_path: PathLike) -> None:
    """Write a report table (a frame or a list of flat row dicts)."""
    output_path = _prepare(output_path)
    frame = table if isinstance(table, pd.DataFrame) else pd.DataFrame(table)
    frame.to_csv(output_path, index=False, lineterminator="\n")
    logger.info("Wrote %d rows to %s", len(frame), output_path)


def read_prediction_csv(path: PathLike) -> pd.DataFrame:
    """Read external predictions ``experiment_id,model_name,predicted_new_users``.

    Duplicate ``(experiment_id, model_name)`` pairs keep the last row.

    Raises:
        DataValidationError: On a missing file, wrong header or a
            non-numeric prediction.
    """
    path = Path(path)
    if not path.is_file():
        raise DataValidationError(f"external prediction file not found: {path}")
    df = pd.read_csv(path, dtype={"experiment_id": str, "model_name": str})
    df.columns = [str(c).strip() for c in df.columns]
    if sorted(df.columns) != sorted(EXTERNAL_PREDICTION_COLUMNS):
        raise DataValidationError(
            f"{path}: expected columns {EXTERNAL_PREDICTION_COLUMNS}, got {list(df.columns)}"
        )
    predicted = pd.to_numeric(df["predicted_new_users"], errors="coerce")
    bad = predicted.isna().to_numpy().nonzero()[0]
    if bad.size:
        raise DataValidationError(f"{path}: non-numeric predicted_new_users",
                                  lines=(int(i) + 2 for i in bad))
    df["predicted_new_users"] = predicted.astype(float)
    df = df.drop_duplicates(subset=["experiment_id", "model_name"], keep="last")
    logger.info("Read %d external predictions from %s", len(df), path)
    return df.reset_index(drop=True)
