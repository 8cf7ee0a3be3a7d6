"""Variable roles, level coding and the small dense design helpers.

Discrete and categorical variables are stored as integer codes ``0..k-1``
(plus an optional offset when their numeric value enters a polynomial).
Categorical codes follow the declared level order; discrete codes follow
the sorted distinct values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import CodingError, DegenerateLevelError, SchemaError

ROLES = ("response", "predictor", "covariate")
KINDS = ("discrete", "categorical", "continuous")


@dataclass(frozen=True)
class VariableSpec:
    name: str
    role: str
    kind: str
    levels: tuple | None = None
    param_degree: int | None = None
    smoother_degree: int = 0
    bandwidth: float | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise SchemaError(f"{self.name}: role must be one of {ROLES}, got {self.role!r}")
        if self.kind not in KINDS:
            raise SchemaError(f"{self.name}: kind must be one of {KINDS}, got {self.kind!r}")
        if self.role == "predictor" and self.kind == "continuous":
            raise SchemaError(f"{self.name}: predictors must be discrete or categorical")
        if self.role == "response" and self.kind != "continuous":
            # a coded response would silently lose its numeric meaning
            raise SchemaError(f"{self.name}: the response must be declared continuous")
        if self.levels is not None:
            levels = tuple(self.levels)
            if len(set(levels)) != len(levels):
                raise SchemaError(f"{self.name}: duplicate entries in levels")
            if len(levels) < 2:
                raise SchemaError(f"{self.name}: need at least two levels")
            object.__setattr__(self, "levels", levels)
        if self.kind == "categorical" and self.levels is None:
            raise SchemaError(f"{self.name}: categorical variables need a declared level order")
        if self.param_degree is not None and int(self.param_degree) < 1:
            raise SchemaError(f"{self.name}: param_degree must be >= 1")
        if int(self.smoother_degree) < 0:
            raise SchemaError(f"{self.name}: smoother_degree must be >= 0")
        if self.bandwidth is not None and not float(self.bandwidth) > 0:
            raise SchemaError(f"{self.name}: bandwidth must be positive")

    @property
    def is_discrete(self) -> bool:
        return self.kind in ("discrete", "categorical")

    @classmethod
    def from_dict(cls, name: str, d: Mapping[str, Any]) -> "VariableSpec":
        unknown = set(d) - {"role", "kind", "levels", "param_degree", "smoother_degree", "bandwidth"}
        if unknown:
            raise SchemaError(f"{name}: unknown schema fields {sorted(unknown)}")
        try:
            return cls(
                name=name,
                role=d["role"],
                kind=d["kind"],
                levels=tuple(d["levels"]) if d.get("levels") is not None else None,
                param_degree=d.get("param_degree"),
                smoother_degree=int(d.get("smoother_degree", 0)),
                bandwidth=d.get("bandwidth"),
            )
        except KeyError as exc:
            raise SchemaError(f"{name}: missing schema field {exc.args[0]!r}") from None


@dataclass(frozen=True)
class LevelStats:
    """Per-level counts and empirical probabilities of one coded variable."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def k(self) -> int:
        return self.counts.size

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def probs(self) -> np.ndarray:
        return self.counts / self.n

    @property
    def sqrt_probs(self) -> np.ndarray:
        """The vector ``c_p`` of square-root level probabilities (unit norm)."""
        return np.sqrt(self.probs)


def encode_levels(column, spec: VariableSpec) -> tuple[np.ndarray, LevelStats, tuple]:
    """Map a raw column to integer codes.

    Returns ``(codes, stats, labels)`` where ``labels[j]`` is the raw value
    coded as ``j``.

    Raises
    ------
    CodingError
        Value outside the declared levels, or non-integer discrete data.
    DegenerateLevelError
        A declared level never occurs.
    """
    values = np.asarray(column, dtype=object).ravel()
    if spec.kind == "continuous":
        raise CodingError(f"{spec.name}: continuous variables are not level-coded")
    if any(v is None or (isinstance(v, float) and np.isnan(v)) for v in values):
        raise CodingError(f"{spec.name}: missing values are not supported")
    if spec.kind == "discrete":
        try:
            as_float = np.asarray(values, dtype=float)
        except (TypeError, ValueError):
            raise CodingError(f"{spec.name}: discrete values must be integers") from None
        if np.any(as_float != np.round(as_float)):
            raise CodingError(f"{spec.name}: discrete values must be integers")
        ints = as_float.astype(np.int64)
        labels = tuple(int(v) for v in spec.levels) if spec.levels is not None else tuple(int(v) for v in np.unique(ints))
        values = ints
    else:
        labels = spec.levels
    lookup = {label: j for j, label in enumerate(labels)}
    try:
        codes = np.fromiter((lookup[v] for v in values), dtype=np.int64, count=len(values))
    except KeyError as exc:
        raise CodingError(f"{spec.name}: value {exc.args[0]!r} is not a declared level") from None
    counts = np.bincount(codes, minlength=len(labels))
    empty = [labels[j] for j in np.flatnonzero(counts == 0)]
    if empty:
        raise DegenerateLevelError(f"{spec.name}: level(s) {empty} have no observations")
    return codes, LevelStats(counts), labels


def poly_design(codes, a: int, b: int) -> np.ndarray:
    """Columns ``x**a .. x**b`` evaluated at ``codes`` (``0**0 == 1``)."""
    if a < 0 or a > b:
        raise ValueError(f"need 0 <= a <= b, got a={a}, b={b}")
    x = np.asarray(codes, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("codes must be nonempty")
    return x[:, None] ** np.arange(a, b + 1)[None, :]


def center(v) -> tuple[np.ndarray, float]:
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("cannot center an empty vector")
    mean = float(v.mean())
    return v - mean, mean


def joint_level_probs(codes_p, codes_q, k_p: int | None = None, k_q: int | None = None) -> np.ndarray:
    """Empirical joint probability table ``P(X_p = i, X_q = j)``."""
    a = np.asarray(codes_p, dtype=np.int64)
    b = np.asarray(codes_q, dtype=np.int64)
    if a.shape != b.shape:
        raise ValueError("code vectors must have equal length")
    k_p = int(a.max()) + 1 if k_p is None else k_p
    k_q = int(b.max()) + 1 if k_q is None else k_q
    table = np.bincount(a * k_q + b, minlength=k_p * k_q).reshape(k_p, k_q)
    return table / a.size


@dataclass(frozen=True)
class Dataset:
    """Validated, coded data.

    ``columns`` holds float arrays for continuous variables and integer codes
    for discrete/categorical ones.
    """

    specs: tuple[VariableSpec, ...]
    columns: Mapping[str, np.ndarray]
    level_stats: Mapping[str, LevelStats] = field(default_factory=dict)
    labels: Mapping[str, tuple] = field(default_factory=dict)
    level_offset: int = 0

    def __post_init__(self):
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate variable names")
        responses = [s.name for s in self.specs if s.role == "response"]
        if len(responses) != 1:
            raise SchemaError(f"exactly one response is required, found {len(responses)}")
        lengths = {len(self.columns[n]) for n in names}
        if len(lengths) != 1:
            raise SchemaError("all columns must have the same length")
        for s in self.specs:
            if s.is_discrete:
                codes = self.columns[s.name]
                k = self.level_stats[s.name].k
                if codes.min() < 0 or codes.max() >= k:
                    raise CodingError(f"{s.name}: codes must lie in [0, {k})")
                if s.role == "predictor" and s.param_degree is not None and not 0 < s.param_degree < k - 1:
                    raise SchemaError(f"{s.name}: param_degree must satisfy 0 < r < k-1 = {k - 1}")
            elif not np.all(np.isfinite(self.columns[s.name])):
                raise SchemaError(f"{s.name}: missing or non-finite values are not supported")
        for arr in self.columns.values():
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.columns[self.specs[0].name])

    @property
    def response(self) -> str:
        return next(s.name for s in self.specs if s.role == "response")

    @property
    def y(self) -> np.ndarray:
        return self.columns[self.response]

    def spec(self, name: str) -> VariableSpec:
        for s in self.specs:
            if s.name == name:
                return s
        raise KeyError(name)

    def names(self, role: str | None = None) -> list[str]:
        return [s.name for s in self.specs if role is None or s.role == role]

    def codes(self, name: str) -> np.ndarray:
        if not self.spec(name).is_discrete:
            raise KeyError(f"{name} is not discrete/categorical")
        return self.columns[name]

    def numeric(self, name: str) -> np.ndarray:
        """Values entering polynomial terms: codes (+ offset) or raw values."""
        if self.spec(name).is_discrete:
            return self.columns[name].astype(float) + self.level_offset
        return self.columns[name]

    def with_response(self, y) -> "Dataset":
        cols = dict(self.columns)
        cols[self.response] = np.array(y, dtype=float)
        return Dataset(self.specs, cols, self.level_stats, self.labels, self.level_offset)

    @classmethod
    def from_arrays(cls, specs: Sequence[VariableSpec], data: Mapping[str, Any], level_offset: int = 0) -> "Dataset":
        columns: dict[str, np.ndarray] = {}
        stats: dict[str, LevelStats] = {}
        labels: dict[str, tuple] = {}
        for s in specs:
            if s.name not in data:
                raise SchemaError(f"column {s.name!r} declared in schema but absent from data")
            if s.is_discrete:
                codes, st, lab = encode_levels(data[s.name], s)
                columns[s.name], stats[s.name], labels[s.name] = codes, st, lab
            else:
                try:
                    columns[s.name] = np.asarray(data[s.name], dtype=float).ravel().copy()
                except (TypeError, ValueError):
                    raise SchemaError(f"{s.name}: continuous column has non-numeric values") from None
        return cls(tuple(specs), columns, stats, labels, level_offset)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, specs: Sequence[VariableSpec], level_offset: int = 0) -> "Dataset":
        missing = [s.name for s in specs if s.name not in frame.columns]
        if missing:
            raise SchemaError(f"unknown column(s) in schema: {missing}")
        data = {}
        for s in specs:
            col = frame[s.name]
            if col.isna().any():
                raise SchemaError(f"{s.name}: missing values are not supported")
            if s.kind == "categorical":
                # labels are compared as strings, the way they appear in a CSV
                data[s.name] = col.astype(str).to_numpy()
            else:
                data[s.name] = col.to_numpy()
        if any(s.kind == "categorical" for s in specs):
            specs = [
                VariableSpec(**{**s.__dict__, "levels": tuple(str(v) for v in s.levels)}) if s.kind == "categorical" else s
                for s in specs
            ]
        return cls.from_arrays(specs, data, level_offset)


def load_schema(path) -> list[VariableSpec]:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise SchemaError("schema must map column names to variable descriptions")
    return [VariableSpec.from_dict(name, d) for name, d in raw.items()]


def read_dataset(csv_path, schema_path, level_offset: int = 0) -> Dataset:
    specs = load_schema(schema_path)
    try:
        frame = pd.read_csv(csv_path, dtype=str, keep_default_na=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise SchemaError(f"could not parse {csv_path}: {exc}") from None
    for s in specs:
        if s.name in frame.columns and s.kind != "categorical":
            try:
                frame[s.name] = pd.to_numeric(frame[s.name])
            except ValueError:
                raise SchemaError(f"{s.name}: non-numeric value in a {s.kind} column") from None
    return Dataset.from_frame(frame, specs, level_offset)
