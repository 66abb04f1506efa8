from __future__ import annotations

import enum
import itertools
import typing as t
import warnings
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from scipy import linalg
from scipy.linalg import lapack
from typing_extensions import Self

from .design import PropensityTable
from .errors import ConfigError, DataError, NetexpWarning, RankDeficientError
from .exposure import ExposureVector, Label, format_label
from .graph import FloatArray, IntArray

RANK_TOL = 1e-10
CENTER_TOL = 1e-12


class FitSpec(str, enum.Enum):
    UNADJUSTED = "unadjusted"
    ADDITIVE = "additive"
    FULLY_INTERACTED = "fully_interacted"
    HT_TRANSFORMED = "ht"

    @property
    def short(self) -> str:
        return _SHORT_NAMES[self]

    @classmethod
    def parse(cls, name: str) -> FitSpec:
        lookup = {s.value: s for s in cls}
        lookup.update({s.short.lower(): s for s in cls})
        try:
            return lookup[name.lower()]
        except KeyError:
            raise ConfigError(f"Unknown regression specification {name!r}") from None


_SHORT_NAMES = {
    FitSpec.UNADJUSTED: "Unadj",
    FitSpec.ADDITIVE: "Add",
    FitSpec.FULLY_INTERACTED: "Sat",
    FitSpec.HT_TRANSFORMED: "HT",
}

WLS_SPECS = (FitSpec.UNADJUSTED, FitSpec.ADDITIVE, FitSpec.FULLY_INTERACTED)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Effective-sample data: outcomes, centered covariates, exposures and propensities."""

    units: IntArray
    y: FloatArray
    x: FloatArray
    t: IntArray
    pi: FloatArray
    support: tuple[Label, ...]
    x_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        n = len(self.units)
        y = np.asarray(self.y, dtype=np.float64)
        x = np.asarray(self.x, dtype=np.float64).reshape(n, -1)
        t_idx = np.asarray(self.t, dtype=np.int64)
        pi = np.asarray(self.pi, dtype=np.float64)
        if y.shape != (n,) or t_idx.shape != (n,) or pi.shape != (n, len(self.support)):
            raise ValueError("Dataset arrays must have one row per unit")
        if ((t_idx < 0) | (t_idx >= len(self.support))).any():
            raise ValueError("Exposure index outside the support")
        if not np.isfinite(y).all():
            unit = self.units[int(np.flatnonzero(~np.isfinite(y))[0])]
            raise DataError(f"Outcome of unit {unit} is not finite")
        realized = pi[np.arange(n), t_idx]
        bad = (realized <= 0) | (realized >= 1)
        if bad.any():
            unit = self.units[int(np.flatnonzero(bad)[0])]
            raise DataError(f"Unit {unit} has realized propensity outside (0, 1)")
        names = self.x_names or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise ValueError("One name per covariate column is required")
        for name, value in (("y", y), ("x", x), ("t", t_idx), ("pi", pi), ("x_names", names)):
            object.__setattr__(self, name, value)

    @classmethod
    def build(
        cls,
        y: npt.ArrayLike,
        exposures: ExposureVector,
        propensities: PropensityTable,
        units: npt.ArrayLike,
        x: npt.ArrayLike | None = None,
        x_names: t.Sequence[str] = (),
    ) -> Self:
        """Restrict unit-level arrays to `units` and center covariates over them.

        Covariates that are constant over the sample carry no information and
        are dropped with a warning.
        """
        idx = np.asarray(units, dtype=np.int64)
        if x is None:
            cov = np.zeros((len(idx), 0))
        else:
            cov = np.asarray(x, dtype=np.float64).reshape(len(exposures.index), -1)[idx]
        names = list(x_names) or [f"x{j + 1}" for j in range(cov.shape[1])]
        cov = cov - cov.mean(axis=0) if len(idx) else cov
        scale = np.maximum(np.abs(cov).max(axis=0, initial=0.0), 1.0)
        keep = (np.abs(cov).max(axis=0, initial=0.0) > CENTER_TOL * scale)
        if not keep.all():
            dropped = [n for n, k in zip(names, keep) if not k]
            warnings.warn(
                f"Dropping constant covariate(s) {', '.join(dropped)}",
                NetexpWarning,
                stacklevel=2,
            )
        return cls(
            idx,
            np.asarray(y, dtype=np.float64)[idx],
            cov[:, keep],
            exposures.index[idx],
            propensities.pi[idx],
            exposures.support,
            tuple(n for n, k in zip(names, keep) if k),
        )

    @property
    def n(self) -> int:
        return len(self.units)

    @property
    def n_levels(self) -> int:
        return len(self.support)

    @property
    def n_covariates(self) -> int:
        return self.x.shape[1]

    @property
    def realized_pi(self) -> FloatArray:
        return self.pi[np.arange(self.n), self.t]

    def counts(self) -> IntArray:
        return np.bincount(self.t, minlength=self.n_levels)

    def indicators(self) -> FloatArray:
        z = np.zeros((self.n, self.n_levels))
        z[np.arange(self.n), self.t] = 1.0
        return z

    def level(self, t: int) -> str:
        return format_label(self.support[t])


@dataclass(frozen=True, eq=False)
class WlsFit:
    spec: FitSpec
    coef: FloatArray
    residuals: FloatArray
    weights: FloatArray
    design: FloatArray
    columns: tuple[str, ...]
    n_levels: int
    bread: FloatArray

    @property
    def beta(self) -> FloatArray:
        return self.coef[: self.n_levels]

    @property
    def gamma(self) -> FloatArray | None:
        rest = self.coef[self.n_levels :]
        if self.spec == FitSpec.ADDITIVE:
            return rest
        if self.spec == FitSpec.FULLY_INTERACTED:
            return rest.reshape(self.n_levels, -1)
        return None

    @property
    def n(self) -> int:
        return len(self.residuals)

    def scores(self) -> FloatArray:
        """Rows `w_i e_i c_i` entering the middle of the sandwich."""
        return (self.weights * self.residuals)[:, None] * self.design


@dataclass(frozen=True, eq=False)
class Contrast:
    matrix: FloatArray
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        g = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        if g.ndim != 2 or not np.isfinite(g).all():
            raise ValueError("Contrast matrix must be a finite 2-D array")
        labels = self.labels or tuple(f"g{k + 1}" for k in range(g.shape[0]))
        if len(labels) != g.shape[0]:
            raise ValueError("One label per contrast row is required")
        object.__setattr__(self, "matrix", g)
        object.__setattr__(self, "labels", tuple(labels))

    @classmethod
    def identity(cls, support: t.Sequence[Label]) -> Self:
        return cls(np.eye(len(support)), tuple(f"mu{format_label(s)}" for s in support))

    @classmethod
    def pairwise(cls, support: t.Sequence[Label], t: Label, t_prime: Label) -> Self:
        """Difference `mu(t) - mu(t_prime)`."""
        levels = list(support)
        try:
            a, b = levels.index(t), levels.index(t_prime)
        except ValueError:
            raise ConfigError(f"Exposure value {t!r} or {t_prime!r} not in the support") from None
        row = np.zeros(len(levels))
        row[a] += 1.0
        row[b] -= 1.0
        return cls(row[None, :], (f"{format_label(t)}-{format_label(t_prime)}",))

    @classmethod
    def factorial(cls, n_components: int, interactions: bool = True) -> Self:
        """Main effects, and optionally pairwise interactions, of a 2^c factorial exposure.

        Each row averages the component's effect over the levels of the others.
        """
        support = list(itertools.product((0, 1), repeat=n_components))
        signs = 2 * np.array(support, dtype=np.float64) - 1
        scale = 2.0 ** -(n_components - 1)
        rows = [scale * signs[:, k] for k in range(n_components)]
        labels = [f"c{k + 1}" for k in range(n_components)]
        if interactions:
            for k, j in itertools.combinations(range(n_components), 2):
                rows.append(scale * signs[:, k] * signs[:, j])
                labels.append(f"c{k + 1}:c{j + 1}")
        return cls(np.array(rows), tuple(labels))

    @classmethod
    def default(cls, support: t.Sequence[Label]) -> Self:
        """Factorial effects for tuple-valued exposures, else last level minus first."""
        if isinstance(support[0], tuple):
            return cls.factorial(len(support[0]))
        return cls.pairwise(support, support[-1], support[0])

    @classmethod
    def from_spec(cls, spec: t.Mapping[str, t.Any], support: t.Sequence[Label]) -> Self:
        def label(value: t.Any) -> Label:
            return tuple(value) if isinstance(value, list) else value

        kind = spec.get("kind", "matrix")
        try:
            if kind == "matrix":
                return cls(np.array(spec["rows"], dtype=np.float64), tuple(spec.get("labels", ())))
            if kind == "identity":
                return cls.identity(support)
            if kind == "pairwise":
                return cls.pairwise(support, label(spec["t"]), label(spec["t_prime"]))
            if kind == "factorial":
                first = support[0]
                width = len(first) if isinstance(first, tuple) else 1
                return cls.factorial(width, bool(spec.get("interactions", True)))
        except KeyError as e:
            raise ConfigError(f"Contrast {kind!r} is missing field {e}") from e
        except ValueError as e:
            raise ConfigError(f"Invalid contrast: {e}") from e
        raise ConfigError(f"Unknown contrast kind {kind!r}")

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]


def _check_level(ds: Dataset, t: int) -> npt.NDArray[np.bool_]:
    if not 0 <= t < ds.n_levels:
        raise ValueError(f"Exposure index {t} outside the support")
    return ds.t == t


def hajek(ds: Dataset, t: int) -> float:
    cell = _check_level(ds, t)
    if not cell.any():
        raise DataError(f"No unit has exposure {ds.level(t)}")
    w = 1 / ds.pi[cell, t]
    return float(np.sum(w * ds.y[cell]) / np.sum(w))


def horvitz_thompson(ds: Dataset, t: int) -> float:
    cell = _check_level(ds, t)
    return float(np.sum(ds.y[cell] / ds.pi[cell, t]) / ds.n)


def one_ht(ds: Dataset, t: int) -> float:
    """Horvitz-Thompson estimate of the constant 1 for exposure `t`."""
    cell = _check_level(ds, t)
    return float(np.sum(1 / ds.pi[cell, t]) / ds.n)


def _check_cells(ds: Dataset, minimum: int) -> None:
    counts = ds.counts()
    for t, count in enumerate(counts):
        if count < minimum:
            raise RankDeficientError(
                f"Exposure cell {ds.level(t)} has {count} unit(s); at least {minimum} needed",
                f"t={ds.level(t)}",
            )


def _solve(
    c: FloatArray, y: FloatArray, w: FloatArray, columns: tuple[str, ...]
) -> tuple[FloatArray, FloatArray]:
    """Weighted normal equations via pivoted Cholesky; returns (coef, inverse gram).

    The rank tolerance is relative: a pivot below `RANK_TOL` times the largest
    diagonal entry of the Gram matrix counts as zero, so a covariate on a much
    smaller scale than the others can be reported as not identified.
    """
    gram = c.T @ (w[:, None] * c)
    rhs = c.T @ (w * y)
    size = gram.shape[0]
    tol = RANK_TOL * max(float(np.max(np.diag(gram), initial=0.0)), np.finfo(float).tiny)
    factor, piv, rank, info = lapack.dpstrf(gram, tol=tol, lower=0)
    piv = piv[:size] - 1
    if info < 0:
        raise RankDeficientError("Invalid normal equations", columns[0])
    if rank < size:
        column = columns[piv[rank]]
        raise RankDeficientError(
            f"Design matrix is rank deficient: column {column} is not identified", column
        )
    upper = np.triu(factor)
    coef = np.empty(size)
    coef[piv] = linalg.cho_solve((upper, False), rhs[piv])
    inverse = np.empty((size, size))
    inverse[np.ix_(piv, piv)] = linalg.cho_solve((upper, False), np.eye(size))
    return coef, inverse


def _fit(
    spec: FitSpec, c: FloatArray, y: FloatArray, w: FloatArray, columns: tuple[str, ...], n_levels: int
) -> WlsFit:
    coef, bread = _solve(c, y, w, columns)
    residuals = y - c @ coef
    return WlsFit(spec, coef, residuals, w, c, columns, n_levels, bread)


def fit_wls(ds: Dataset, spec: FitSpec) -> WlsFit:
    """Regress Y on exposure indicators (and covariates) with weights `1 / pi_i(T_i)`."""
    z = ds.indicators()
    levels = [f"t={ds.level(t)}" for t in range(ds.n_levels)]
    if spec == FitSpec.UNADJUSTED:
        _check_cells(ds, 1)
        c, columns = z, levels
    elif spec == FitSpec.ADDITIVE:
        _check_cells(ds, 1)
        c, columns = np.hstack([z, ds.x]), levels + list(ds.x_names)
    elif spec == FitSpec.FULLY_INTERACTED:
        _check_cells(ds, 1 + ds.n_covariates)
        blocks = [z] + [z[:, [t]] * ds.x for t in range(ds.n_levels)]
        c = np.hstack(blocks)
        columns = levels + [f"{lv}*{x}" for lv in levels for x in ds.x_names]
    else:
        raise ValueError(f"Use fit_ht_wls for the {spec.value} specification")
    return _fit(spec, c, ds.y, 1 / ds.realized_pi, tuple(columns), ds.n_levels)


def fit_ht_wls(ds: Dataset) -> WlsFit:
    """Weighted regression whose coefficients reproduce the Horvitz-Thompson estimator.

    Outcomes are scaled by the HT estimate of 1 in the unit's cell, and the
    weights divided by it.
    """
    _check_cells(ds, 1)
    ones = np.array([one_ht(ds, t) for t in range(ds.n_levels)])[ds.t]
    y = ones * ds.y
    w = 1 / (ones * ds.realized_pi)
    columns = tuple(f"t={ds.level(t)}" for t in range(ds.n_levels))
    return _fit(FitSpec.HT_TRANSFORMED, ds.indicators(), y, w, columns, ds.n_levels)


def fit(ds: Dataset, spec: FitSpec) -> WlsFit:
    if spec == FitSpec.HT_TRANSFORMED:
        return fit_ht_wls(ds)
    return fit_wls(ds, spec)


def contrast_estimate(fit: WlsFit, G: Contrast) -> FloatArray:
    if G.matrix.shape[1] != fit.n_levels:
        raise ValueError(
            f"Contrast has {G.matrix.shape[1]} columns but the fit has {fit.n_levels} exposure levels"
        )
    return G.matrix @ fit.beta


def continuous_mu_hat(
    y: npt.ArrayLike,
    t_exp: npt.ArrayLike,
    window_prob: npt.ArrayLike,
    t: float,
    h: float,
) -> float:
    """Local inverse-probability-weighted average of outcomes with exposure within `h` of `t`."""
    if h <= 0:
        raise ValueError("Window half-width must be positive")
    y_arr = np.asarray(y, dtype=np.float64)
    inside = np.abs(np.asarray(t_exp, dtype=np.float64) - t) <= h
    if not inside.any():
        raise DataError(f"No unit has exposure within {h} of {t}")
    prob = np.asarray(window_prob, dtype=np.float64)[inside]
    if ((prob <= 0) | (prob > 1)).any():
        raise ValueError("Window probabilities must lie in (0, 1]")
    w = 1 / prob
    return float(np.sum(w * y_arr[inside]) / np.sum(w))


def continuous_wls_slope(
    y: npt.ArrayLike,
    t_exp: npt.ArrayLike,
    mean_t: npt.ArrayLike,
    var_t: npt.ArrayLike,
) -> float:
    var = np.asarray(var_t, dtype=np.float64)
    if (var <= 0).any():
        raise DataError(f"Unit {int(np.flatnonzero(var <= 0)[0])} has zero exposure variance")
    centered = np.asarray(t_exp, dtype=np.float64) - np.asarray(mean_t, dtype=np.float64)
    denominator = np.sum(centered**2 / var)
    if denominator == 0:
        raise DataError("Every unit sits at its expected exposure; slope undefined")
    return float(np.sum(centered * np.asarray(y, dtype=np.float64) / var) / denominator)
