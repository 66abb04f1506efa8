from __future__ import annotations

import enum
import json
import math
import typing as t
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

T = t.TypeVar("T")
R = t.TypeVar("R")

ROUNDING_MODES = ("half_away", "half_even")


def round_half(value: float, mode: str = "half_away") -> int:
    if mode == "half_away":
        return int(math.copysign(math.floor(abs(value) + 0.5), value))
    if mode == "half_even":
        return int(round(value))
    raise ValueError(f"Unknown rounding mode {mode!r}")


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the stream identified by `key` under `seed`.

    Streams depend only on (seed, key), never on the order in which they are
    requested, so parallel draws reproduce serial ones exactly.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def parallel_map(fn: t.Callable[[T], R], items: t.Iterable[T], threads: int = 1) -> list[R]:
    """Order-preserving map, threaded when `threads` > 1."""
    if threads <= 1:
        return [fn(item) for item in items]
    return list(Parallel(n_jobs=threads, prefer="threads")(delayed(fn)(item) for item in items))


def jsonable(obj: t.Any) -> t.Any:
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path: str | Path, obj: t.Any) -> None:
    text = json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def write_csv(path: str | Path, table: pd.DataFrame) -> None:
    table.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")


class Stream(enum.IntEnum):
    """First spawn key of each family of random streams derived from a seed."""

    POPULATION = 0
    ORACLE = 1
    ESTIMATE = 2
    PROPENSITY = 3
    ASSIGNMENT = 4
