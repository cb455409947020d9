"""Observation containers, sufficient statistics, and CSV ingestion.

Two kinds of observations are supported:

* :class:`ActivityMatrix` -- daily 0/1 activity, stored sparsely as the
  set of active days of each observed user (CSV ``user_id,day``).
* :class:`TriggerData` -- the first day each observed user was active
  (CSV ``user_id,first_day``).

User ids are opaque labels; they are never used numerically.
"""

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from activity_forecast.errors import DataValidationError, DomainError
from activity_forecast.validation import (
    validate_activity_frame,
    validate_trigger_frame,
)

logger = logging.getLogger(__name__)

UserActivity = Tuple[str, Tuple[int, ...]]
UserTrigger = Tuple[str, int]


class ModelKind(str, enum.Enum):
    """Which SB-SP model a set of sufficient statistics feeds."""

    BERNOULLI = "bernoulli"
    GEOMETRIC = "geometric"

    @classmethod
    def parse(cls, value: Union[str, "ModelKind"]) -> "ModelKind":
        """Accept ``bernoulli``/``bm`` and ``geometric``/``gm``."""
        if isinstance(value, ModelKind):
            return value
        aliases = {"bm": cls.BERNOULLI, "gm": cls.GEOMETRIC}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise DomainError(f"unknown model kind {value!r}; use bm/gm") from None


@dataclass(frozen=True)
class ActivityMatrix:
    """Daily activity of the users observed during days ``1..d``.

    Attributes:
        d: Number of observed days, ``>= 1``.
        users: ``(user_id, active_days)`` pairs; ``active_days`` is a
            sorted, non-empty tuple of days in ``[1, d]``.
    """

    d: int
    users: Tuple[UserActivity, ...] = ()

    def __post_init__(self) -> None:
        if self.d < 1:
            raise DomainError(f"ActivityMatrix needs d >= 1, got {self.d}")
        seen = set()
        for user_id, days in self.users:
            if user_id in seen:
                raise DomainError(f"duplicate user_id {user_id!r}")
            seen.add(user_id)
            if not days:
                raise DomainError(f"user {user_id!r} has no active day")
            if days[0] < 1 or days[-1] > self.d:
                raise DomainError(f"user {user_id!r} has days outside [1, {self.d}]")

    @classmethod
    def from_frame(cls, df: pd.DataFrame, d: Optional[int] = None) -> "ActivityMatrix":
        """Build from a long ``user_id,day`` frame, deduplicating rows.

        Args:
            df: Frame with integer-valued ``day`` column.
            d: Number of observed days; defaults to the largest day seen.
        """
        if df.empty:
            if d is None:
                raise DataValidationError("no activity rows: the number of days d must be supplied")
            return cls(d=d, users=())
        days = pd.to_numeric(df["day"]).astype(np.int64)
        frame = pd.DataFrame({"user_id": df["user_id"].astype(str), "day": days})
        frame = frame.drop_duplicates().sort_values(["user_id", "day"])
        d_eff = int(frame["day"].max()) if d is None else int(d)
        users = tuple(
            (str(user_id), tuple(int(x) for x in group["day"]))
            for user_id, group in frame.groupby("user_id", sort=True)
        )
        return cls(d=d_eff, users=users)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def user_ids(self) -> Tuple[str, ...]:
        return tuple(u for u, _ in self.users)

    def active_counts(self) -> np.ndarray:
        """``M_i``: number of active days of each user."""
        return np.fromiter((len(days) for _, days in self.users), dtype=np.int64,
                           count=len(self.users))

    def first_days(self) -> np.ndarray:
        """First active day of each user."""
        return np.fromiter((days[0] for _, days in self.users), dtype=np.int64,
                           count=len(self.users))

    def to_frame(self) -> pd.DataFrame:
        """Long ``user_id,day`` frame sorted by user then day."""
        rows = [(u, day) for u, days in self.users for day in days]
        frame = pd.DataFrame(rows, columns=["user_id", "day"])
        return frame.sort_values(["user_id", "day"], ignore_index=True)

    def restrict_to_days(self, d: int) -> "ActivityMatrix":
        """Keep days ``1..d``; users with no activity left are dropped."""
        if d < 1:
            raise DomainError(f"cannot restrict to d={d} days")
        users = []
        for user_id, days in self.users:
            kept = tuple(x for x in days if x <= d)
            if kept:
                users.append((user_id, kept))
        return ActivityMatrix(d=d, users=tuple(users))


@dataclass(frozen=True)
class TriggerData:
    """First-trigger days of the users observed during days ``1..d``.

    Attributes:
        d: Number of observed days, ``>= 1``.
        triggers: ``(user_id, first_day)`` pairs with ``first_day`` in ``[1, d]``.
    """

    d: int
    triggers: Tuple[UserTrigger, ...] = ()

    def __post_init__(self) -> None:
        if self.d < 1:
            raise DomainError(f"TriggerData needs d >= 1, got {self.d}")
        ids = [u for u, _ in self.triggers]
        if len(set(ids)) != len(ids):
            raise DomainError("duplicate user_id in trigger data")
        for user_id, day in self.triggers:
            if not 1 <= day <= self.d:
                raise DomainError(f"user {user_id!r} first_day {day} outside [1, {self.d}]")

    @classmethod
    def from_frame(cls, df: pd.DataFrame, d: Optional[int] = None) -> "TriggerData":
        if df.empty:
            if d is None:
                raise DataValidationError("no trigger rows: the number of days d must be supplied")
            return cls(d=d, triggers=())
        frame = pd.DataFrame({
            "user_id": df["user_id"].astype(str),
            "first_day": pd.to_numeric(df["first_day"]).astype(np.int64),
        }).sort_values("user_id")
        d_eff = int(frame["first_day"].max()) if d is None else int(d)
        triggers = tuple(
            (str(u), int(y)) for u, y in zip(frame["user_id"], frame["first_day"])
        )
        return cls(d=d_eff, triggers=triggers)

    @property
    def n_users(self) -> int:
        return len(self.triggers)

    def first_days(self) -> np.ndarray:
        return np.fromiter((y for _, y in self.triggers), dtype=np.int64,
                           count=len(self.triggers))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(list(self.triggers), columns=["user_id", "first_day"])
        return frame.sort_values(["user_id"], ignore_index=True)


@dataclass(frozen=True)
class SufficientStats:
    """Everything the SB-SP formulas need from a dataset.

    Attributes:
        d: Number of observed days.
        counts: Per-user ``M_i`` (bernoulli) or first trigger day ``Y_i``
            (geometric); all in ``[1, d]``.
        kind: Which model the counts belong to.
    """

    d: int
    counts: np.ndarray = field(compare=False)
    kind: ModelKind = ModelKind.BERNOULLI

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "kind", ModelKind.parse(self.kind))
        if self.d < 1:
            raise DomainError(f"SufficientStats needs d >= 1, got {self.d}")
        if counts.size and (counts.min() < 1 or counts.max() > self.d):
            raise DomainError(f"{self.kind.value} counts must lie in [1, {self.d}]")

    @property
    def n_users(self) -> int:
        """``N_d``: number of distinct observed users."""
        return int(self.counts.size)


ObservedData = Union[ActivityMatrix, TriggerData]


def to_stats(data: ObservedData,
             kind: Optional[Union[str, ModelKind]] = None) -> SufficientStats:
    """Reduce observations to sufficient statistics.

    Args:
        data: Activity matrix or trigger data.
        kind: Target model.  Activity matrices default to ``bernoulli``
            (``M_i = |active days|``) and can be reduced to ``geometric``
            (first active day).  Trigger data only supports ``geometric``.

    Returns:
        The sufficient statistics.

    Raises:
        DomainError: When bernoulli statistics are requested from trigger data.
    """
    if isinstance(data, TriggerData):
        target = ModelKind.GEOMETRIC if kind is None else ModelKind.parse(kind)
        if target is not ModelKind.GEOMETRIC:
            raise DomainError("trigger data only supports the geometric model")
        return SufficientStats(d=data.d, counts=data.first_days(), kind=target)

    target = ModelKind.BERNOULLI if kind is None else ModelKind.parse(kind)
    if target is ModelKind.BERNOULLI:
        return SufficientStats(d=data.d, counts=data.active_counts(), kind=target)
    return SufficientStats(d=data.d, counts=data.first_days(), kind=target)


def first_trigger_data(matrix: ActivityMatrix) -> TriggerData:
    """Reduce an activity matrix to first-trigger days."""
    return TriggerData(d=matrix.d,
                       triggers=tuple((u, days[0]) for u, days in matrix.users))


def _read_raw(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DataValidationError(f"input file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""],
                         encoding="utf-8", skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DataValidationError(f"{path}: file is empty (a header line is required)") from None
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataValidationError(f"{path}: cannot parse CSV: {exc}") from None
    df.columns = [str(c).strip() for c in df.columns]
    return df


def _raise_if_invalid(path: Union[str, Path], report) -> None:
    if report["valid"]:
        return
    problems = report["schema_errors"] + report["range_errors"] + report["duplicates"]
    raise DataValidationError(f"{path}: " + "; ".join(problems))


def ingest_activity_csv(path: Union[str, Path], d: Optional[int] = None) -> ActivityMatrix:
    """Read a ``user_id,day`` CSV into an :class:`ActivityMatrix`.

    Duplicate ``(user, day)`` rows are dropped.  ``d`` defaults to the
    largest day observed; pass it explicitly when the final days may be
    silent or the body is empty.

    Raises:
        DataValidationError: On a missing file, bad header, non-integer
            or out-of-range days (with CSV line numbers).
    """
    df = _read_raw(path)
    _raise_if_invalid(path, validate_activity_frame(df, d))
    matrix = ActivityMatrix.from_frame(df, d)
    logger.info("Ingested %d users over d=%d days from %s", matrix.n_users, matrix.d, path)
    return matrix


def ingest_trigger_csv(path: Union[str, Path], d: Optional[int] = None) -> TriggerData:
    """Read a ``user_id,first_day`` CSV into :class:`TriggerData`.

    Raises:
        DataValidationError: On a missing file, bad header, duplicate
            users, or ``first_day`` outside ``[1, d]``.
    """
    df = _read_raw(path)
    _raise_if_invalid(path, validate_trigger_frame(df, d))
    data = TriggerData.from_frame(df, d)
    logger.info("Ingested %d first triggers over d=%d days from %s", data.n_users, data.d, path)
    return data


def ingest_csv(path: Union[str, Path], d: Optional[int] = None) -> ObservedData:
    """Read either CSV kind, choosing by header (``day`` vs ``first_day``)."""
    header = _read_raw(path).columns
    if "first_day" in header:
        return ingest_trigger_csv(path, d)
    return ingest_activity_csv(path, d)
