"""Dataset container, CSV ingestion, missing-value handling and the TEG protocol encodings."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from sctmle.errors import CsvParseError, DomainError

OutcomeFamily = Literal["binary", "continuous"]
MISSING_TOKENS = frozenset({"", "NA"})
MISS_SUFFIX = "_miss"


@dataclass(frozen=True)
class Dataset:
    """Observed data ``O = (W, A, Y)``.

    ``W`` is an ``n x p`` float matrix whose columns are named by ``names``;
    missing covariate cells are stored as NaN until :func:`impute_and_flag`
    re-encodes them.
    """

    names: tuple[str, ...]
    W: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    outcome_family: OutcomeFamily = "continuous"
    treatment_name: str = "a"
    outcome_name: str = "y"

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        A = np.asarray(self.A)
        Y = np.asarray(self.Y, dtype=float)
        n = A.shape[0]
        if W.ndim == 1:
            W = W.reshape(n, -1)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "names", tuple(self.names))
        if n < 1:
            raise DomainError("dataset needs at least one row")
        if W.shape != (n, len(self.names)) or Y.shape != (n,):
            raise DomainError(
                f"shape mismatch: W {W.shape}, A {A.shape}, Y {Y.shape}, {len(self.names)} names"
            )
        if len(set(self.names)) != len(self.names):
            raise DomainError("column names must be unique")
        if not np.all((A == 0) | (A == 1)):
            raise DomainError("treatment values must be 0 or 1")
        object.__setattr__(self, "A", A.astype(np.int64))
        if self.outcome_family not in ("binary", "continuous"):
            raise DomainError(f"unknown outcome family {self.outcome_family!r}")
        if np.any(np.isnan(Y)):
            raise DomainError("outcome contains missing values")
        if self.outcome_family == "binary" and not np.all((Y == 0) | (Y == 1)):
            raise DomainError("binary outcome values must be 0 or 1")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return len(self.names)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.W)

    def column(self, name: str) -> np.ndarray:
        return self.W[:, self.names.index(name)]

    def columns(self, names: Sequence[str]) -> np.ndarray:
        idx = [self.names.index(nm) for nm in names]
        return self.W[:, idx]

    def subset(self, rows: np.ndarray) -> Dataset:
        return replace(self, W=self.W[rows], A=self.A[rows], Y=self.Y[rows])


def _parse_float(token: str) -> float | None:
    try:
        value = float(token)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def load_csv(
    path: str | Path,
    treatment_col: str,
    outcome_col: str,
    outcome_family: OutcomeFamily = "continuous",
) -> Dataset:
    """Read a header-first CSV into a :class:`Dataset`.

    Empty cells and ``NA`` are missing. Only covariates may be missing.
    Non-numeric covariate columns are one-hot encoded with the first sorted
    level as reference; a missing categorical cell sets ``<name>_miss``.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh, strict=True)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError("empty file, header row required", row=None) from None
        except csv.Error as exc:
            raise CsvParseError(f"header: {exc}", row=None) from exc
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise CsvParseError("duplicate column names in header", row=None)
        for col in (treatment_col, outcome_col):
            if col not in header:
                raise DomainError(f"column {col!r} not found in header {header}")
        rows: list[list[str]] = []
        try:
            for i, row in enumerate(reader, start=1):
                if not row:
                    continue
                if len(row) != len(header):
                    raise CsvParseError(
                        f"row {i}: expected {len(header)} fields, got {len(row)}", row=i
                    )
                rows.append([cell.strip() for cell in row])
        except csv.Error as exc:
            raise CsvParseError(f"row {reader.line_num - 1}: {exc}", row=reader.line_num - 1) from exc
    if not rows:
        raise DomainError("no data rows")

    a_idx, y_idx = header.index(treatment_col), header.index(outcome_col)
    A = np.empty(len(rows), dtype=np.int64)
    Y = np.empty(len(rows), dtype=float)
    for i, row in enumerate(rows, start=1):
        a_tok, y_tok = row[a_idx], row[y_idx]
        if a_tok in MISSING_TOKENS:
            raise DomainError(f"row {i}: missing treatment value")
        if a_tok not in ("0", "1", "0.0", "1.0"):
            raise DomainError(f"row {i}: treatment value {a_tok!r} not in {{0,1}}")
        A[i - 1] = int(float(a_tok))
        if y_tok in MISSING_TOKENS:
            raise DomainError(f"row {i}: missing outcome value")
        y = _parse_float(y_tok)
        if y is None:
            raise CsvParseError(f"row {i}: non-numeric outcome {y_tok!r}", row=i)
        if outcome_family == "binary" and y not in (0.0, 1.0):
            raise DomainError(f"row {i}: binary outcome value {y_tok!r} not in {{0,1}}")
        Y[i - 1] = y

    names: list[str] = []
    cols: list[np.ndarray] = []
    for j, name in enumerate(header):
        if j in (a_idx, y_idx):
            continue
        tokens = [row[j] for row in rows]
        parsed = [None if t in MISSING_TOKENS else _parse_float(t) for t in tokens]
        non_numeric = [t for t, v in zip(tokens, parsed) if t not in MISSING_TOKENS and v is None]
        if not non_numeric:
            names.append(name)
            cols.append(np.array([np.nan if v is None else v for v in parsed]))
            continue
        # categorical: one-hot, first sorted level is the reference
        levels = sorted({t for t in tokens if t not in MISSING_TOKENS})
        is_missing = np.array([t in MISSING_TOKENS for t in tokens])
        for level in levels[1:]:
            names.append(f"{name}_{level}")
            cols.append(np.array([1.0 if t == level else 0.0 for t in tokens]))
        if is_missing.any():
            names.append(name + MISS_SUFFIX)
            cols.append(is_missing.astype(float))

    W = np.column_stack(cols) if cols else np.empty((len(rows), 0))
    return Dataset(
        names=tuple(names),
        W=W,
        A=A,
        Y=Y,
        outcome_family=outcome_family,
        treatment_name=treatment_col,
        outcome_name=outcome_col,
    )


def impute_and_flag(d: Dataset) -> Dataset:
    """Median-impute missing covariates and append a ``<name>_miss`` indicator per affected column."""
    missing = d.missing
    if not missing.any():
        return d
    W = d.W.copy()
    names = list(d.names)
    flags = []
    for j, name in enumerate(d.names):
        mask = missing[:, j]
        if not mask.any():
            continue
        if mask.all():
            raise DomainError(f"column {name!r} has no observed values")
        W[mask, j] = np.median(W[~mask, j])
        flag_name = name + MISS_SUFFIX
        if flag_name in names:
            raise DomainError(f"indicator column {flag_name!r} already exists")
        names.append(flag_name)
        flags.append(mask.astype(float))
    W = np.column_stack([W, *flags])
    return replace(d, names=tuple(names), W=W)


def _fmt(value: float) -> str:
    if math.isnan(value):
        return "NA"
    return repr(float(value)) if not float(value).is_integer() else str(int(value))


def write_csv(d: Dataset, path: str | Path) -> None:
    """Write ``d`` back to CSV using the same conventions :func:`load_csv` reads."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*d.names, d.treatment_name, d.outcome_name])
        for i in range(d.n):
            writer.writerow([*(_fmt(v) for v in d.W[i]), str(int(d.A[i])), _fmt(d.Y[i])])


# --- TEG protocol -----------------------------------------------------------


class RuleId(enum.Enum):
    PLASMA = 1
    CRYO = 2
    PLATELET = 3

    @classmethod
    def parse(cls, name: str) -> RuleId:
        aliases = {"plasma": cls.PLASMA, "cryo": cls.CRYO, "platelet": cls.PLATELET, "plt": cls.PLATELET}
        try:
            return aliases[name.lower()]
        except KeyError:
            raise DomainError(f"unknown rule {name!r}; expected one of plasma, cryo, platelet") from None


@dataclass(frozen=True)
class TegRecord:
    act: float = 0.0
    alpha: float = 0.0
    ma: float = 0.0
    plasma_units: int = 0
    cryo_units: int = 0
    plt_units: int = 0

    def __post_init__(self):
        for name in ("act", "alpha", "ma", "plasma_units", "cryo_units", "plt_units"):
            value = getattr(self, name)
            if not (value >= 0):
                raise DomainError(f"{name} must be nonnegative, got {value!r}")


# (measure field, units field, threshold) per rule
_RULE_INPUTS = {
    RuleId.PLASMA: ("act", "plasma_units", 128.0),
    RuleId.CRYO: ("alpha", "cryo_units", 65.0),
    RuleId.PLATELET: ("ma", "plt_units", 55.0),
}


def protocol_branch(r: TegRecord, rule: RuleId) -> tuple[int, int]:
    """Return ``(branch, A)`` where ``branch`` is the 1-based row of the rule's case table that fired.

    Row 4 is the ``else`` row. For the cryo and platelet rules the zero-measure
    row (3) is checked before the ``<=`` rows it overlaps with.
    """
    measure_name, units_name, threshold = _RULE_INPUTS[rule]
    measure = getattr(r, measure_name)
    units = getattr(r, units_name)
    if rule is RuleId.PLASMA:
        if measure >= threshold and units > 0:
            return 1, 1
        if measure >= threshold and units == 0:
            return 2, 0
        if measure == 0 or (measure < threshold and units == 0):
            return 3, 1
        return 4, 0
    if measure == 0 and units == 0:
        return 3, 1
    if measure <= threshold and units > 0:
        return 1, 1
    if measure <= threshold and units == 0:
        return 2, 0
    return 4, 0


def map_protocol(r: TegRecord, rule: RuleId) -> int:
    """On/off-protocol indicator ``A`` for one patient under ``rule``."""
    return protocol_branch(r, rule)[1]


def derive_hemostasis(received_packed_rbc_7_to_12h):
    """1 when no packed RBC was given in the 7-12h window, else 0. Scalars or arrays."""
    received = np.asarray(received_packed_rbc_7_to_12h, dtype=bool)
    out = (~received).astype(np.int64)
    return int(out) if out.ndim == 0 else out
