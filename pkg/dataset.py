"""
Dataset representation, CSV ingestion and row selection.

A Dataset holds continuous covariates x (n x p), one categorical column g coded
as dense 0-based level indices in first-appearance order, and an optional
response y. Datasets are immutable once built.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from dotenv import dotenv_values

from errors import BoundsError, DataError, EmptyDataError, SchemaError

log = logging.getLogger(__name__)

ROLES = ("covariate", "category", "response", "ignore")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ColumnSchema:
    """Maps every CSV header to its role"""

    roles: Mapping[str, str]

    def __post_init__(self):
        roles = {str(k): str(v).strip().lower() for k, v in self.roles.items()}
        for name, role in roles.items():
            if role not in ROLES:
                raise SchemaError(f"column {name!r}: unknown role {role!r}")
        n_cat = sum(r == "category" for r in roles.values())
        if n_cat != 1:
            raise SchemaError(f"schema needs exactly one category column, got {n_cat}")
        if sum(r == "response" for r in roles.values()) > 1:
            raise SchemaError("schema allows at most one response column")
        object.__setattr__(self, "roles", roles)

    @property
    def category(self) -> str:
        return next(k for k, v in self.roles.items() if v == "category")

    @property
    def response(self) -> Optional[str]:
        return next((k for k, v in self.roles.items() if v == "response"), None)

    def covariates(self, headers: Sequence[str]) -> list:
        """Covariate columns in file order"""
        return [h for h in headers if self.roles.get(h) == "covariate"]

    def check_headers(self, headers: Sequence[str]) -> None:
        missing = [name for name in self.roles if name not in headers]
        if missing:
            raise SchemaError(f"schema column(s) missing from file: {', '.join(missing)}")
        unmapped = [h for h in headers if h not in self.roles]
        if unmapped:
            raise SchemaError(f"file column(s) without a role: {', '.join(unmapped)}")


def load_schema(path) -> ColumnSchema:
    """Read a `header=role` schema file"""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"schema file not found: {path}")
    try:
        values = dotenv_values(path, encoding="utf-8")
    except UnicodeDecodeError as e:
        raise SchemaError(f"{path}: schema file is not valid UTF-8") from e
    roles = {}
    for name, role in values.items():
        if role is None:
            raise SchemaError(f"schema line for {name!r} has no role")
        roles[name] = role
    return ColumnSchema(roles)


def infer_schema(headers: Sequence[str]) -> ColumnSchema:
    """Schema for files written by the simulator: x* covariates, g, y"""
    roles = {}
    for h in headers:
        if h == "g":
            roles[h] = "category"
        elif h == "y":
            roles[h] = "response"
        elif h.startswith("x"):
            roles[h] = "covariate"
        else:
            roles[h] = "ignore"
    return ColumnSchema(roles)


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    g: np.ndarray
    level_names: Tuple[str, ...]
    y: Optional[np.ndarray] = None
    covariate_names: Tuple[str, ...] = ()
    category_name: str = "g"
    response_name: str = "y"
    require_all_levels: bool = field(default=True, compare=False)

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64, copy=True)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise DataError("x must be a 2-D matrix")
        g = np.array(self.g, dtype=np.int64, copy=True).ravel()
        n = x.shape[0]
        if g.shape[0] != n:
            raise DataError(f"g has {g.shape[0]} entries, x has {n} rows")
        if n == 0:
            raise EmptyDataError("dataset has no rows")
        names = tuple(str(s) for s in self.level_names)
        m = len(names)
        if m == 0:
            raise DataError("dataset has no category levels")
        if g.min() < 0 or g.max() >= m:
            raise DataError(f"category index out of range [0, {m - 1}]")
        if not np.all(np.isfinite(x)):
            row, col = np.argwhere(~np.isfinite(x))[0]
            raise DataError(f"non-finite covariate at row {row}, column {col}")
        if self.require_all_levels:
            unused = np.flatnonzero(np.bincount(g, minlength=m) == 0)
            if unused.size:
                raise DataError(f"level {names[unused[0]]!r} has no rows")

        y = None
        if self.y is not None:
            y = np.array(self.y, dtype=np.float64, copy=True).ravel()
            if y.shape[0] != n:
                raise DataError(f"y has {y.shape[0]} entries, x has {n} rows")
            if not np.all(np.isfinite(y)):
                raise DataError(f"non-finite response at row {np.flatnonzero(~np.isfinite(y))[0]}")

        cov_names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(cov_names) != x.shape[1]:
            raise DataError("covariate_names does not match the number of columns of x")

        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "g", _frozen(g))
        object.__setattr__(self, "y", None if y is None else _frozen(y))
        object.__setattr__(self, "level_names", names)
        object.__setattr__(self, "covariate_names", cov_names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def M(self) -> int:
        return len(self.level_names)

    def level_counts(self) -> np.ndarray:
        return np.bincount(self.g, minlength=self.M)

    @property
    def present(self) -> np.ndarray:
        """False for catalog levels with zero rows in this dataset"""
        return self.level_counts() > 0

    def with_y(self, y) -> "Dataset":
        return Dataset(
            x=self.x,
            g=self.g,
            level_names=self.level_names,
            y=y,
            covariate_names=self.covariate_names,
            category_name=self.category_name,
            response_name=self.response_name,
            require_all_levels=False,
        )


def _parse_numeric(frame: pd.DataFrame, column: str) -> np.ndarray:
    values = pd.to_numeric(frame[column].str.strip(), errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raw = frame[column].iloc[row]
        # +2: header line plus 1-based numbering
        raise DataError(f"row {row + 2}, column {column!r}: cannot use value {raw!r}")
    return values


def _first_undecodable_line(path: Path) -> int:
    for number, line in enumerate(path.read_bytes().splitlines(), start=1):
        try:
            line.decode("utf-8")
        except UnicodeDecodeError:
            return number
    return 1


def _read_frame(path: Path, **kwargs) -> pd.DataFrame:
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8", **kwargs)
    except pd.errors.EmptyDataError as e:
        raise EmptyDataError(f"{path}: no header row") from e
    except pd.errors.ParserError as e:
        raise DataError(f"{path}: malformed CSV: {e}") from e
    except UnicodeDecodeError as e:
        raise DataError(f"{path}: line {_first_undecodable_line(path)} is not valid UTF-8") from e
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror or e}") from e


def read_headers(path) -> List[str]:
    """Column names of a CSV file, without parsing its rows"""
    return list(_read_frame(Path(path), nrows=0).columns)


def load_csv(path, schema: ColumnSchema) -> Dataset:
    """Read a comma-separated file with a header row into a validated Dataset"""
    path = Path(path)
    frame = _read_frame(path)

    headers = list(frame.columns)
    schema.check_headers(headers)
    if len(frame) == 0:
        raise EmptyDataError(f"{path}: no data rows")

    covariates = schema.covariates(headers)
    if covariates:
        x = np.column_stack([_parse_numeric(frame, c) for c in covariates])
    else:
        x = np.zeros((len(frame), 0))

    codes, uniques = pd.factorize(frame[schema.category], sort=False)
    y = _parse_numeric(frame, schema.response) if schema.response else None

    log.info("loaded %s: n=%d p=%d M=%d", path, len(frame), len(covariates), len(uniques))
    return Dataset(
        x=x,
        g=codes,
        level_names=tuple(uniques),
        y=y,
        covariate_names=tuple(covariates),
        category_name=schema.category,
        response_name=schema.response or "y",
    )


def write_csv(d: Dataset, path, extra: Optional[Dict[str, Iterable]] = None) -> None:
    """Serialize a Dataset so that load_csv reproduces it exactly"""
    frame = pd.DataFrame(d.x, columns=list(d.covariate_names))
    frame[d.category_name] = np.asarray(d.level_names, dtype=object)[d.g]
    if d.y is not None:
        frame[d.response_name] = d.y
    for name, values in (extra or {}).items():
        frame[name] = list(values)
    frame.to_csv(path, index=False, lineterminator="\n")


def schema_for(d: Dataset) -> ColumnSchema:
    roles = {c: "covariate" for c in d.covariate_names}
    roles[d.category_name] = "category"
    if d.y is not None:
        roles[d.response_name] = "response"
    return ColumnSchema(roles)


def split_rows(d: Dataset, index_set) -> Dataset:
    """Restrict a dataset to the given rows, keeping the full level catalog"""
    if isinstance(index_set, (set, frozenset)):
        index_set = sorted(index_set)
    idx = np.asarray(list(index_set) if not isinstance(index_set, np.ndarray) else index_set,
                     dtype=np.int64).ravel()
    if idx.size == 0:
        raise EmptyDataError("row subset is empty")
    if idx.min() < 0 or idx.max() >= d.n:
        bad = idx[(idx < 0) | (idx >= d.n)][0]
        raise BoundsError(f"row index {bad} outside [0, {d.n - 1}]")
    if np.unique(idx).size != idx.size:
        raise BoundsError("row subset contains duplicate indices")

    return Dataset(
        x=d.x[idx],
        g=d.g[idx],
        level_names=d.level_names,
        y=None if d.y is None else d.y[idx],
        covariate_names=d.covariate_names,
        category_name=d.category_name,
        response_name=d.response_name,
        require_all_levels=False,
    )
