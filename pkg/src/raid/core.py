"""Data model shared by every stage: typed columns, datasets, standardization
and quantile discretization of continuous covariates."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed input data."""


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class ColumnSpec:
    """One covariate column.

    ``levels`` is ``None`` for a continuous column and a tuple of level
    names for a categorical one.
    """

    name: str
    levels: Optional[tuple] = None

    def __post_init__(self):
        if self.levels is not None:
            levels = tuple(str(lv) for lv in self.levels)
            if not levels:
                raise SchemaError(f"categorical column {self.name!r} has no levels")
            if len(set(levels)) != len(levels):
                raise SchemaError(f"categorical column {self.name!r} has duplicate levels")
            object.__setattr__(self, "levels", levels)

    @property
    def kind(self):
        return "continuous" if self.levels is None else "categorical"

    @property
    def is_categorical(self):
        return self.levels is not None

    @classmethod
    def continuous(cls, name):
        return cls(name, None)

    @classmethod
    def categorical(cls, name, levels):
        return cls(name, tuple(levels))

    def to_dict(self):
        d = {"name": self.name, "kind": self.kind}
        if self.levels is not None:
            d["levels"] = list(self.levels)
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind", "continuous")
        if kind == "continuous":
            return cls(d["name"])
        if kind == "categorical":
            return cls(d["name"], tuple(d["levels"]))
        raise SchemaError(f"unknown column kind {kind!r}")


@dataclass(frozen=True)
class Transform:
    """Affine standardization parameters, kept for inverse mapping."""

    center: float
    scale: float

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.scale

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.center


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates plus response.

    Categorical cells are stored as integer codes into ``ColumnSpec.levels``;
    continuous cells as floats. ``response_kind`` is ``"continuous"`` or
    ``"ordinal"``; ordinal responses take values ``0..n_grades-1``.
    """

    columns: tuple
    X: np.ndarray
    y: np.ndarray
    response_kind: str = "continuous"
    n_grades: Optional[int] = None
    standardized: bool = False
    transforms: dict = field(default_factory=dict)

    def __post_init__(self):
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1 and len(cols) == 0:
            X = X.reshape(-1, 0)
        if X.ndim != 2 or X.shape[1] != len(cols):
            raise SchemaError(f"X has shape {X.shape}, expected (m, {len(cols)})")
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise SchemaError("response length does not match number of rows")
        if np.isnan(X).any() or np.isnan(y).any():
            raise DataError("missing cells are not supported (complete cases only)")
        for j, c in enumerate(cols):
            if c.is_categorical:
                codes = X[:, j]
                if np.any(codes != np.round(codes)) or codes.min(initial=0) < 0 \
                        or codes.max(initial=0) >= len(c.levels):
                    raise SchemaError(f"column {c.name!r} has codes outside its levels")
        if self.response_kind == "ordinal":
            if self.n_grades is None or self.n_grades < 2:
                raise SchemaError("ordinal response needs n_grades >= 2")
            if np.any(y != np.round(y)) or y.min(initial=0) < 0 or y.max(initial=0) >= self.n_grades:
                raise SchemaError("ordinal response outside 0..n_grades-1")
        elif self.response_kind != "continuous":
            raise SchemaError(f"unknown response kind {self.response_kind!r}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def m(self):
        return self.X.shape[0]

    @property
    def p(self):
        return len(self.columns)

    @property
    def names(self):
        return [c.name for c in self.columns]

    def index(self, name):
        for j, c in enumerate(self.columns):
            if c.name == name:
                return j
        raise KeyError(f"unknown column {name!r}")

    @property
    def continuous_idx(self):
        return [j for j, c in enumerate(self.columns) if not c.is_categorical]

    @property
    def categorical_idx(self):
        return [j for j, c in enumerate(self.columns) if c.is_categorical]

    def covariate_blocks(self):
        """Return ``(Xc, Xq, n_levels)``: continuous float block, integer
        categorical code block, and level counts per categorical column."""
        ci, qi = self.continuous_idx, self.categorical_idx
        Xc = np.ascontiguousarray(self.X[:, ci], dtype=np.float64)
        Xq = np.ascontiguousarray(self.X[:, qi], dtype=np.int64)
        nlev = np.array([len(self.columns[j].levels) for j in qi], dtype=np.int64)
        return Xc, Xq, nlev

    def with_response(self, y):
        return replace(self, y=np.asarray(y, dtype=float))

    def to_dict(self):
        return {
            "columns": [c.to_dict() for c in self.columns],
            "response_kind": self.response_kind,
            "n_grades": self.n_grades,
        }


def make_dataset(X, y, columns=None, response_kind="continuous", n_grades=None):
    """Build a :class:`Dataset` from an array, treating every column as
    continuous unless ``columns`` says otherwise."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if columns is None:
        columns = [ColumnSpec(f"X{j + 1}") for j in range(X.shape[1])]
    return Dataset(tuple(columns), X, np.asarray(y, dtype=float), response_kind, n_grades)


def load_dataset(path, schema: Sequence[ColumnSpec], response="Y",
                 response_kind="continuous", n_grades=None, delimiter=","):
    """Read a delimiter-separated file with a header row.

    Categorical cells must match one of the declared level names. Errors name
    the offending row (1-based, header excluded) and column.
    """
    schema = list(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        needed = [c.name for c in schema] + [response]
        missing = [n for n in needed if n not in header]
        if missing:
            raise SchemaError(f"{path}: header lacks columns {missing}")
        pos = {h: k for k, h in enumerate(header)}
        X_rows, y_vals = [], []
        for r, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"row {r}: expected {len(header)} cells, got {len(row)}", row=r)
            vals = []
            for c in schema:
                cell = row[pos[c.name]].strip()
                if c.is_categorical:
                    if cell not in c.levels:
                        raise ParseError(f"row {r}, column {c.name!r}: level {cell!r} not in {list(c.levels)}",
                                         row=r, column=c.name)
                    vals.append(c.levels.index(cell))
                else:
                    try:
                        vals.append(float(cell))
                    except ValueError:
                        raise ParseError(f"row {r}, column {c.name!r}: non-numeric cell {cell!r}",
                                         row=r, column=c.name) from None
            cell = row[pos[response]].strip()
            try:
                yv = float(cell)
            except ValueError:
                raise ParseError(f"row {r}, column {response!r}: non-numeric response {cell!r}",
                                 row=r, column=response) from None
            if response_kind == "ordinal":
                if yv != int(yv) or not 0 <= yv < n_grades:
                    raise ParseError(f"row {r}: ordinal response {cell} outside 0..{n_grades - 1}",
                                     row=r, column=response)
            X_rows.append(vals)
            y_vals.append(yv)
    X = np.array(X_rows, dtype=float).reshape(len(X_rows), len(schema))
    return Dataset(tuple(schema), X, np.array(y_vals), response_kind, n_grades)


def write_dataset(ds: Dataset, path, response="Y", delimiter=","):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(ds.names + [response])
        for i in range(ds.m):
            row = []
            for j, c in enumerate(ds.columns):
                v = ds.X[i, j]
                row.append(c.levels[int(v)] if c.is_categorical else repr(float(v)))
            yv = ds.y[i]
            row.append(str(int(yv)) if ds.response_kind == "ordinal" else repr(float(yv)))
            w.writerow(row)


def standardize(ds: Dataset, response=False) -> Dataset:
    """Center and scale every continuous covariate (sample sd, ddof=1).

    The response is standardized only when ``response`` is true, and never
    for ordinal responses. Transform parameters are stored on the result
    under the column name (``"__response__"`` for the response).
    """
    if ds.standardized:
        raise DataError("dataset is already standardized")
    X = ds.X.copy()
    transforms = {}
    for j in ds.continuous_idx:
        t = _fit_transform(X[:, j], ds.columns[j].name)
        X[:, j] = t.apply(X[:, j])
        transforms[ds.columns[j].name] = t
    y = ds.y
    if response and ds.response_kind == "continuous":
        t = _fit_transform(y, "response")
        y = t.apply(y)
        transforms["__response__"] = t
    return Dataset(ds.columns, X, y, ds.response_kind, ds.n_grades, True, transforms)


def unstandardize(ds: Dataset) -> Dataset:
    X = ds.X.copy()
    for name, t in ds.transforms.items():
        if name != "__response__":
            j = ds.index(name)
            X[:, j] = t.inverse(X[:, j])
    y = ds.y
    if "__response__" in ds.transforms:
        y = ds.transforms["__response__"].inverse(y)
    return Dataset(ds.columns, X, y, ds.response_kind, ds.n_grades, False, {})


def _fit_transform(x, name):
    if x.shape[0] < 2:
        raise DataError(f"column {name!r} needs at least two rows to standardize")
    sd = float(np.std(x, ddof=1))
    if not sd > 0:
        raise DataError(f"column {name!r} has zero variance")
    return Transform(float(np.mean(x)), sd)


BIN_LABELS = {2: ("Low", "High"), 3: ("Low", "Medium", "High")}


@dataclass(frozen=True, eq=False)
class DiscretizedView:
    """Every covariate mapped to a finite set of levels.

    ``codes[i, j]`` indexes ``levels[j]``. For continuous columns the levels
    are the bin labels, ``cutpoints[name]`` the interior quantile cuts and
    ``representatives[name]`` the within-bin medians, all on the scale of
    ``source.X``.
    """

    source: Dataset
    bins: int
    codes: np.ndarray
    levels: tuple
    cutpoints: dict
    representatives: dict

    @property
    def m(self):
        return self.codes.shape[0]

    @property
    def names(self):
        return self.source.names

    def items(self, i):
        """Items of row ``i`` as ``(column, level)`` pairs."""
        return [(name, self.levels[j][self.codes[i, j]]) for j, name in enumerate(self.names)]

    def subset(self, rows):
        return self.codes[np.asarray(rows, dtype=np.int64)]


def discretize(ds: Dataset, bins: int = 2) -> DiscretizedView:
    """Split continuous columns at empirical (type 7) quantiles.

    A value equal to a cutpoint goes to the lower bin. Categorical columns
    keep their own levels.
    """
    if bins not in BIN_LABELS:
        raise ValueError(f"bins must be 2 or 3, got {bins}")
    m, p = ds.X.shape
    codes = np.zeros((m, p), dtype=np.int64)
    levels, cuts, reps = [], {}, {}
    probs = np.arange(1, bins) / bins
    for j, c in enumerate(ds.columns):
        x = ds.X[:, j]
        if c.is_categorical:
            codes[:, j] = x.astype(np.int64)
            levels.append(c.levels)
            continue
        q = np.quantile(x, probs, method="linear")
        # searchsorted(side="left") sends x == q to the lower bin
        codes[:, j] = np.searchsorted(q, x, side="left")
        levels.append(BIN_LABELS[bins])
        cuts[c.name] = q
        reps[c.name] = np.array([np.median(x[codes[:, j] == b]) if np.any(codes[:, j] == b)
                                 else np.nan for b in range(bins)])
    codes.setflags(write=False)
    return DiscretizedView(ds, bins, codes, tuple(levels), cuts, reps)
