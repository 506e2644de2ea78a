"""Trial data model and CSV ingestion for Study A and Study B."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np
import pandas as pd

from ..core.errors import DataValidationError, ParseError, RowValidationError, SchemaError

LOGGER = logging.getLogger(__name__)


class StudyRole(str, Enum):
    A = "A"
    B = "B"


HEADERS: dict[StudyRole, tuple[str, ...]] = {
    StudyRole.A: ("arm", "w", "s", "y"),
    StudyRole.B: ("arm", "w", "delta", "s", "y"),
}

MIN_PER_ARM = 2


class RegionLike(Protocol):
    def contains(self, ws: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class Subject:
    """One trial participant. Absent optional values are ``None``."""

    arm: int
    w: float
    s: float | None = None
    y: float | None = None
    delta: int | None = None


def _readonly(values: Iterable[float] | np.ndarray, dtype: type) -> np.ndarray:
    array = np.array(values, dtype=dtype).ravel()
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Study:
    """Validated, immutable trial dataset stored column-wise.

    Absent surrogate or outcome values are ``NaN``; ``delta`` is ``None`` for
    role A.
    """

    role: StudyRole
    arm: np.ndarray
    w: np.ndarray
    s: np.ndarray
    y: np.ndarray
    delta: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", StudyRole(self.role))
        object.__setattr__(self, "arm", _readonly(self.arm, np.int8))
        object.__setattr__(self, "w", _readonly(self.w, float))
        object.__setattr__(self, "s", _readonly(self.s, float))
        object.__setattr__(self, "y", _readonly(self.y, float))
        if self.delta is not None:
            object.__setattr__(self, "delta", _readonly(self.delta, np.int8))
        self._validate()

    def _validate(self) -> None:
        n = self.arm.size
        lengths = {self.w.size, self.s.size, self.y.size}
        if self.delta is not None:
            lengths.add(self.delta.size)
        if lengths != {n}:
            raise DataValidationError("study columns have unequal lengths")

        _first_bad(~np.isin(self.arm, (0, 1)), "arm must be 0 or 1")
        _first_bad(~np.isfinite(self.w), "w is required")

        has_s = np.isfinite(self.s)
        has_y = np.isfinite(self.y)
        if self.role is StudyRole.A:
            if self.delta is not None:
                raise DataValidationError("role A studies do not carry delta")
            _first_bad(~has_s, "s is required for role A")
            _first_bad(~has_y, "y is required for role A")
        else:
            if self.delta is None:
                raise SchemaError("role B studies require the delta column")
            _first_bad(~np.isin(self.delta, (0, 1)), "delta must be 0 or 1")
            surrogate_only = self.delta == 1
            _first_bad(surrogate_only & ~has_s, "delta=1 requires s")
            _first_bad(surrogate_only & has_y, "delta=1 requires y to be empty")
            _first_bad(~surrogate_only & ~has_y, "delta=0 requires y")
            _first_bad(~surrogate_only & has_s, "delta=0 requires s to be empty")

        for g in (1, 0):
            count = int(np.count_nonzero(self.arm == g))
            if count < MIN_PER_ARM:
                raise DataValidationError(
                    f"arm {g} has {count} subject(s); at least {MIN_PER_ARM} are required"
                )

    @property
    def n(self) -> int:
        return int(self.arm.size)

    @property
    def n1(self) -> int:
        return int(np.count_nonzero(self.arm == 1))

    @property
    def n0(self) -> int:
        return int(np.count_nonzero(self.arm == 0))

    def arm_indices(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.arm == g)

    @property
    def has_full_y(self) -> bool:
        return bool(np.all(np.isfinite(self.y)))

    @property
    def has_full_s(self) -> bool:
        return bool(np.all(np.isfinite(self.s)))

    @property
    def subjects(self) -> tuple[Subject, ...]:
        rows = []
        for i in range(self.n):
            rows.append(
                Subject(
                    arm=int(self.arm[i]),
                    w=float(self.w[i]),
                    s=float(self.s[i]) if np.isfinite(self.s[i]) else None,
                    y=float(self.y[i]) if np.isfinite(self.y[i]) else None,
                    delta=int(self.delta[i]) if self.delta is not None else None,
                )
            )
        return tuple(rows)

    def subset(self, indices: np.ndarray) -> "Study":
        """Return the subjects at ``indices`` (in the given order) as a new study."""
        index = np.asarray(indices, dtype=int)
        return Study(
            role=self.role,
            arm=self.arm[index],
            w=self.w[index],
            s=self.s[index],
            y=self.y[index],
            delta=self.delta[index] if self.delta is not None else None,
        )

    @classmethod
    def from_subjects(cls, role: StudyRole | str, subjects: Iterable[Subject]) -> "Study":
        rows = list(subjects)
        nan = float("nan")
        return cls(
            role=StudyRole(role),
            arm=[row.arm for row in rows],
            w=[row.w for row in rows],
            s=[nan if row.s is None else row.s for row in rows],
            y=[nan if row.y is None else row.y for row in rows],
            delta=(
                None
                if StudyRole(role) is StudyRole.A
                else [-1 if row.delta is None else row.delta for row in rows]
            ),
        )


def _first_bad(mask: np.ndarray, message: str) -> None:
    if mask.any():
        row = int(np.argmax(mask)) + 1
        raise RowValidationError(f"row {row}: {message}")


def detect_role(path: str | Path) -> StudyRole:
    """Infer the role from the header alone."""
    try:
        header = pd.read_csv(path, nrows=0, encoding="utf-8-sig").columns
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path}: file is empty") from exc
    columns = tuple(str(column).strip() for column in header)
    for role, expected in HEADERS.items():
        if columns == expected:
            return role
    raise SchemaError(f"{path}: header {','.join(columns)} matches neither study schema")


def load_study(path: str | Path, role: StudyRole | str) -> Study:
    """Read and validate a trial CSV for the given role."""

    study_role = StudyRole(role)
    expected = HEADERS[study_role]
    try:
        frame = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            na_filter=False,
            encoding="utf-8-sig",
        )
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path}: file is empty; expected header {','.join(expected)}") from exc
    except pd.errors.ParserError as exc:
        raise ParseError(f"{path}: malformed CSV ({exc})") from exc

    columns = [str(column).strip() for column in frame.columns]
    missing = [column for column in expected if column not in columns]
    if missing:
        raise SchemaError(f"{path}: missing column '{missing[0]}'")
    extra = [column for column in columns if column not in expected]
    if extra:
        raise SchemaError(f"{path}: unexpected column '{extra[0]}'")
    if tuple(columns) != expected:
        raise SchemaError(f"{path}: header must be exactly {','.join(expected)}")
    frame.columns = columns

    parsed: dict[str, np.ndarray] = {}
    for column in expected:
        raw = frame[column].astype(str).str.strip()
        absent = raw == ""
        numbers = pd.to_numeric(raw.where(~absent), errors="coerce")
        bad = ~absent & ~np.isfinite(numbers.to_numpy(dtype=float))
        if bad.any():
            row = int(np.argmax(bad.to_numpy())) + 1
            raise ParseError(
                f"{path}: row {row}, column '{column}': cannot parse {raw.iloc[row - 1]!r}"
            )
        parsed[column] = numbers.to_numpy(dtype=float)

    for column in ("arm", "delta"):
        if column not in parsed:
            continue
        values = parsed[column]
        _first_bad(~np.isfinite(values), f"{column} is required")
        _first_bad(~np.isin(values, (0.0, 1.0)), f"{column} must be 0 or 1")

    try:
        study = Study(
            role=study_role,
            arm=parsed["arm"],
            w=parsed["w"],
            s=parsed["s"],
            y=parsed["y"],
            delta=parsed.get("delta"),
        )
    except DataValidationError as exc:
        raise type(exc)(f"{path}: {exc}") from exc

    LOGGER.info(
        "Loaded study",
        extra={"path": str(path), "role": study_role.value, "n1": study.n1, "n0": study.n0},
    )
    return study


def write_study(study: Study, path: str | Path) -> None:
    """Write ``study`` with its role's exact header; absent values become empty fields."""

    columns: dict[str, object] = {"arm": study.arm.astype(int), "w": study.w}
    if study.delta is not None:
        columns["delta"] = study.delta.astype(int)
    columns["s"] = study.s
    columns["y"] = study.y
    frame = pd.DataFrame(columns, columns=list(HEADERS[study.role]))
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(target, index=False, na_rep="", lineterminator="\n")


def mask_study_b(full: Study, region: RegionLike) -> Study:
    """Purposefully mask a fully observed study: keep S inside the region, Y outside."""

    if full.role is not StudyRole.A:
        raise ValueError("masking needs a fully observed (role A schema) study")
    inside = np.asarray(region.contains(full.w), dtype=bool)
    nan = np.nan
    return Study(
        role=StudyRole.B,
        arm=full.arm,
        w=full.w,
        s=np.where(inside, full.s, nan),
        y=np.where(inside, nan, full.y),
        delta=inside.astype(np.int8),
    )


@dataclass(frozen=True)
class ArmCounts:
    n: int
    n_c: int | None = None
    n_w: int | None = None
    pi: float | None = None


@dataclass(frozen=True)
class StudySummary:
    role: StudyRole
    arm1: ArmCounts
    arm0: ArmCounts
    w_range: tuple[float, float]
    s_range: tuple[float, float] | None
    y_range: tuple[float, float] | None


def _range(values: np.ndarray) -> tuple[float, float] | None:
    present = values[np.isfinite(values)]
    if present.size == 0:
        return None
    return float(present.min()), float(present.max())


def summarize(study: Study, region: RegionLike | None = None) -> StudySummary:
    """Per-arm counts and strata.

    Role B strata come from ``delta``; role A strata come from region
    membership and are only reported when a region is supplied.
    """

    if study.role is StudyRole.B:
        assert study.delta is not None
        in_region: np.ndarray | None = study.delta == 1
        if region is not None:
            disagree = int(np.count_nonzero(np.asarray(region.contains(study.w)) != in_region))
            if disagree:
                LOGGER.warning(
                    "delta disagrees with region membership",
                    extra={"rows": disagree},
                )
    elif region is not None:
        in_region = np.asarray(region.contains(study.w), dtype=bool)
    else:
        in_region = None

    arms: dict[int, ArmCounts] = {}
    for g in (1, 0):
        members = study.arm == g
        n_g = int(np.count_nonzero(members))
        if n_g == 0:
            raise DataValidationError(f"arm {g} is empty")
        if in_region is None:
            arms[g] = ArmCounts(n=n_g)
            continue
        n_w = int(np.count_nonzero(members & in_region))
        arms[g] = ArmCounts(n=n_g, n_c=n_g - n_w, n_w=n_w, pi=n_w / n_g)

    w_range = _range(study.w)
    assert w_range is not None
    return StudySummary(
        role=study.role,
        arm1=arms[1],
        arm0=arms[0],
        w_range=w_range,
        s_range=_range(study.s),
        y_range=_range(study.y),
    )


__all__ = [
    "ArmCounts",
    "HEADERS",
    "Study",
    "StudyRole",
    "StudySummary",
    "Subject",
    "detect_role",
    "load_study",
    "mask_study_b",
    "summarize",
    "write_study",
]
