from __future__ import annotations

import logging
import typing as t
import warnings
from dataclasses import field

import numpy as np
import numpy.typing as npt
import pandas as pd
from scipy import stats

from .covariance import EIGEN_TOL, psd_split
from .errors import DataError, NetexpWarning, SizeGuardError
from .graph import DENSE_CAP, FloatArray, Graph, all_pairs_distances
from .record import Record, nested
from .utils import parallel_map

LOG = logging.getLogger(__name__)

DEFAULT_GRID = tuple(range(1, 11))

# Quantities whose growth in the bandwidth is summarized by a log-log slope.
SLOPE_QUANTITIES = ("m1", "m2", "m1_minus", "m2_minus", "max_j_minus")


class NegativeMoments(Record):
    """Moments of the row sums of `|K-|`, and the largest distance-shell sum."""

    m1_minus: float
    m2_minus: float
    max_j_minus: float
    argmax_s: int


class DiagnosticsRow(Record):
    bandwidth: int
    m1: float
    m2: float
    m1_minus: float
    m2_minus: float
    max_j_minus: float
    argmax_s: int
    min_eigenvalue: float
    kernel_psd: bool


class DiagnosticsReport(Record):
    n: int
    grid: t.Tuple[int, ...]
    rows: t.Tuple[DiagnosticsRow, ...] = nested(DiagnosticsRow, default=())
    slopes: t.Dict[str, t.Optional[float]] = field(default_factory=dict)

    def to_table(self) -> pd.DataFrame:
        columns = list(DiagnosticsRow.__dataclass_fields__)
        return pd.DataFrame([row.to_dict() for row in self.rows], columns=columns)


def shell_sums(dist: FloatArray, r: FloatArray) -> FloatArray:
    """`J(s) = sum over pairs exactly s apart of r_i r_j`, for every finite s.

    Accumulated row by row; unreachable pairs (infinite distance) are skipped.
    """
    size = int(np.max(dist, where=np.isfinite(dist), initial=-1)) + 1
    sums = np.zeros(size)
    for i, row in enumerate(dist):
        finite = np.isfinite(row)
        sums += np.bincount(row[finite].astype(np.int64), weights=r[i] * r[finite], minlength=size)
    return sums


def _moments(
    dist: FloatArray, b: int, eigen_tol: float
) -> tuple[float, float, NegativeMoments, float, bool]:
    kernel = (dist <= b).astype(np.float64)
    rows = kernel.sum(axis=1)
    split = psd_split(kernel, eigen_tol, size_cap=len(dist))
    r = np.abs(split.k_minus).sum(axis=1)
    shells = shell_sums(dist, r)
    s = int(np.argmax(shells)) if len(shells) else 0
    negative = NegativeMoments(
        m1_minus=float(r.mean()),
        m2_minus=float((r**2).mean()),
        max_j_minus=float(shells[s]) if len(shells) else 0.0,
        argmax_s=s,
    )
    m1, m2 = float(rows.mean()), float((rows**2).mean())
    return m1, m2, negative, split.min_eigenvalue, split.is_psd


def kernel_negative_moments(
    g: Graph,
    b: int,
    eigen_tol: float = EIGEN_TOL,
    size_cap: int = DENSE_CAP,
    dist: FloatArray | None = None,
) -> NegativeMoments:
    """Moments of the negative eigen-part of the bandwidth-`b` kernel over all units.

    `dist` may carry precomputed all-pairs distances of `g`.
    """
    if b < 0:
        raise ValueError("Bandwidth must be nonnegative")
    if g.n > size_cap:
        raise SizeGuardError(g.n, size_cap)
    if dist is None:
        dist = all_pairs_distances(g, size_cap)
    return _moments(dist, b, eigen_tol)[2]


def loglog_slope(
    values: npt.ArrayLike, grid: npt.ArrayLike
) -> tuple[float, bool]:
    """OLS slope of `log(value)` on `log(b)` with an intercept.

    Nonpositive values (and bandwidths) cannot enter the regression; they are
    dropped and the second return value flags that this happened.
    """
    y = np.asarray(values, dtype=np.float64)
    b = np.asarray(grid, dtype=np.float64)
    if y.shape != b.shape:
        raise ValueError("One value per bandwidth is required")
    usable = (y > 0) & (b > 0) & np.isfinite(y)
    dropped = not usable.all()
    if dropped:
        warnings.warn(
            f"Dropping {int((~usable).sum())} nonpositive point(s) from the log-log fit",
            NetexpWarning,
            stacklevel=2,
        )
    if usable.sum() < 2:
        raise DataError("Log-log slope needs at least two positive values")
    if np.unique(b[usable]).size < 2:
        raise DataError("Log-log slope needs at least two distinct bandwidths")
    fit = stats.linregress(np.log(b[usable]), np.log(y[usable]))
    return float(fit.slope), dropped


def diagnose(
    g: Graph,
    grid: t.Sequence[int] = DEFAULT_GRID,
    eigen_tol: float = EIGEN_TOL,
    size_cap: int = DENSE_CAP,
    threads: int = 1,
) -> DiagnosticsReport:
    """Kernel moments across a bandwidth grid, with growth slopes.

    Slopes are descriptive; a quantity with fewer than two positive values
    gets no slope.
    """
    bandwidths = tuple(int(b) for b in grid)
    if not bandwidths:
        raise ValueError("Bandwidth grid is empty")
    if min(bandwidths) < 0:
        raise ValueError("Bandwidths must be nonnegative")
    if g.n > size_cap:
        raise SizeGuardError(g.n, size_cap)
    dist = all_pairs_distances(g, size_cap)

    def row(b: int) -> DiagnosticsRow:
        LOG.debug("Diagnostics at bandwidth %d", b)
        m1, m2, negative, min_eig, psd = _moments(dist, b, eigen_tol)
        return DiagnosticsRow(
            bandwidth=b,
            m1=m1,
            m2=m2,
            m1_minus=negative.m1_minus,
            m2_minus=negative.m2_minus,
            max_j_minus=negative.max_j_minus,
            argmax_s=negative.argmax_s,
            min_eigenvalue=min_eig,
            kernel_psd=psd,
        )

    rows = parallel_map(row, bandwidths, threads)
    slopes: dict[str, float | None] = {}
    for name in SLOPE_QUANTITIES:
        values = [getattr(r, name) for r in rows]
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", NetexpWarning)
                slopes[name] = loglog_slope(values, bandwidths)[0]
        except DataError:
            LOG.info("No slope for %s: fewer than two positive values", name)
            slopes[name] = None
    return DiagnosticsReport(n=g.n, grid=bandwidths, rows=tuple(rows), slopes=slopes)
