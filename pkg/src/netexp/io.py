from __future__ import annotations

import typing as t
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd

from .errors import DataError, NetexpWarning
from .graph import FloatArray, Graph, IntArray, dedupe_edges

EDGE_COLUMNS = ("src", "dst")
MISSING_BLOCK = -1
TRUE_VALUES = ("1", "true", "yes", "y", "t")
FALSE_VALUES = ("0", "false", "no", "n", "f", "")


@dataclass(frozen=True)
class LoadReport:
    path: str
    n: int
    edges: int
    duplicates: int
    self_loops: int


@dataclass(frozen=True, eq=False)
class NodeTable:
    """Per-unit data, row `i` describing unit `i`."""

    path: str
    eligible: npt.NDArray[np.bool_]
    block: IntArray
    d: IntArray | None
    y: FloatArray | None
    x: FloatArray
    x_names: tuple[str, ...] = ()
    p: FloatArray | None = None
    extra: t.Mapping[str, np.ndarray] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.eligible)

    def columns(self) -> dict[str, np.ndarray]:
        """Unit-level columns a design spec may refer to by name."""
        cols: dict[str, np.ndarray] = dict(self.extra)
        cols["block"] = self.block
        cols["eligible"] = self.eligible
        if self.p is not None:
            cols["p"] = self.p
        for j, name in enumerate(self.x_names):
            cols[name] = self.x[:, j]
        return cols

    def require_d(self) -> IntArray:
        if self.d is None:
            raise DataError(f"{self.path}: column D is required")
        return self.d

    def require_y(self) -> FloatArray:
        if self.y is None:
            raise DataError(f"{self.path}: column Y is required")
        return self.y


def _read_csv(path: str | Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, skipinitialspace=True)
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"{path}: cannot parse CSV: {e}") from e


def _integer_column(frame: pd.DataFrame, column: str, path: str | Path) -> IntArray:
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = values.isna() | (values != np.round(values))
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataError(
            f"{path}: column {column} row {row + 1} is not an integer ({frame[column].iloc[row]!r})"
        )
    return values.to_numpy().astype(np.int64)


def load_graph(
    path: str | Path, n: int | None = None, directed: bool = False
) -> tuple[Graph, LoadReport]:
    """Read an edge list with `src,dst` columns (or the first two columns).

    Unit ids are 0-based. Without `n`, the unit count is one more than the
    largest id seen.
    """
    frame = _read_csv(path)
    if all(c in frame.columns for c in EDGE_COLUMNS):
        columns = list(EDGE_COLUMNS)
    elif len(frame.columns) >= 2:
        columns = list(frame.columns[:2])
    else:
        raise DataError(f"{path}: an edge list needs two columns")

    src = _integer_column(frame, columns[0], path)
    dst = _integer_column(frame, columns[1], path)
    if n is None:
        n = int(max(src.max(initial=-1), dst.max(initial=-1))) + 1
    for column, ids in zip(columns, (src, dst)):
        bad = (ids < 0) | (ids >= n)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise DataError(
                f"{path}: column {column} row {row + 1} has unit id {ids[row]} outside [0, {n})"
            )

    src, dst, duplicates, loops = dedupe_edges(n, src, dst, directed)
    if duplicates or loops:
        warnings.warn(
            f"{path}: dropped {duplicates} duplicate edge(s) and {loops} self-loop(s)",
            NetexpWarning,
            stacklevel=2,
        )
    graph = Graph.from_edges(n, src, dst, directed=directed)
    return graph, LoadReport(str(path), n, len(src), duplicates, loops)


def _boolean_column(
    frame: pd.DataFrame, column: str, path: str | Path
) -> npt.NDArray[np.bool_]:
    text = frame[column].fillna("").astype(str).str.strip().str.lower()
    text = text.str.replace(r"\.0$", "", regex=True)
    truthy = text.isin(TRUE_VALUES)
    bad = ~(truthy | text.isin(FALSE_VALUES))
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        unit = frame["id"].iloc[row]
        value = frame[column].iloc[row]
        raise DataError(f"{path}: column {column} of unit {unit} is not boolean ({value!r})")
    return truthy.to_numpy()


def _numeric_column(frame: pd.DataFrame, column: str, path: str | Path) -> FloatArray:
    values = pd.to_numeric(frame[column], errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        unit = frame["id"].iloc[int(np.flatnonzero(bad)[0])]
        raise DataError(f"{path}: column {column} of unit {unit} is missing or not numeric")
    return values


def load_nodes(path: str | Path, n: int | None = None) -> NodeTable:
    """Read a node table with columns `id,eligible,block,D,Y,x*,p`.

    Only `id` is mandatory. Ids must be exactly `0..n-1`; rows are reordered by id.
    A missing `eligible` column makes every unit eligible and a missing block
    entry becomes -1. Columns starting with `x` are covariates; other
    columns are kept by name for design specs.
    """
    frame = _read_csv(path)
    if "id" not in frame.columns:
        raise DataError(f"{path}: column id is required")
    ids = _integer_column(frame, "id", path)
    frame = frame.assign(id=ids).sort_values("id", kind="stable").reset_index(drop=True)
    ids = frame["id"].to_numpy()
    count = len(frame) if n is None else n
    if len(frame) != count or not np.array_equal(ids, np.arange(count)):
        seen = np.zeros(count, dtype=bool)
        seen[ids[(ids >= 0) & (ids < count)]] = True
        dupes = frame["id"][frame["id"].duplicated()]
        if len(dupes):
            raise DataError(f"{path}: column id repeats unit {int(dupes.iloc[0])}")
        outside = ids[(ids < 0) | (ids >= count)]
        if len(outside):
            raise DataError(f"{path}: column id has unit {int(outside[0])} outside [0, {count})")
        raise DataError(f"{path}: column id is missing unit {int(np.flatnonzero(~seen)[0])}")

    if "eligible" in frame.columns:
        eligible = _boolean_column(frame, "eligible", path)
    else:
        eligible = np.ones(count, dtype=bool)

    block = np.full(count, MISSING_BLOCK, dtype=np.int64)
    if "block" in frame.columns:
        present = frame["block"].notna().to_numpy()
        block[present] = _integer_column(frame[present], "block", path)

    d = _integer_column(frame, "D", path) if "D" in frame.columns else None
    y = _numeric_column(frame, "Y", path) if "Y" in frame.columns else None
    p = _numeric_column(frame, "p", path) if "p" in frame.columns else None

    x_names = tuple(c for c in frame.columns if isinstance(c, str) and c.startswith("x"))
    x = np.zeros((count, 0))
    if x_names:
        x = np.column_stack([_numeric_column(frame, c, path) for c in x_names])

    known = {"id", "eligible", "block", "D", "Y", "p", *x_names}
    extra = {
        str(c): frame[c].to_numpy()
        for c in frame.columns
        if c not in known and pd.api.types.is_numeric_dtype(frame[c])
    }
    return NodeTable(str(path), eligible, block, d, y, x, x_names, p, extra)
