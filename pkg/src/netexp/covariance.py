from __future__ import annotations

import math
import typing as t
import warnings
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy import linalg, sparse, stats

from .errors import NetexpWarning, NumericalError, SizeGuardError
from .estimate import Contrast, Dataset, WlsFit
from .graph import (
    DENSE_CAP,
    FloatArray,
    Graph,
    IntArray,
    average_degree,
    average_path_length,
    iter_distance_blocks,
)
from .utils import round_half

EIGEN_TOL = 1e-9
Z95 = float(stats.norm.ppf(0.975))

MatrixLike = t.Union[FloatArray, sparse.spmatrix, "KernelMatrix"]


def bandwidth_select(
    apl: float, n: int, avg_degree: float, K: int, rounding: str = "half_away"
) -> int:
    """Suggested HAC bandwidth from the average path length, size and degree.

    Short path lengths relative to `2 log n / log degree` take half the path
    length; otherwise its cube root. Never below twice the exposure locality.
    """
    if n < 2:
        raise ValueError("Bandwidth selection needs at least two units")
    if avg_degree <= 1:
        warnings.warn(
            f"Average degree {avg_degree:.3g} <= 1; using the cube-root bandwidth branch",
            NetexpWarning,
            stacklevel=2,
        )
        raw = apl ** (1 / 3)
    elif apl < 2 * math.log(n) / math.log(avg_degree):
        raw = apl / 2
    else:
        raw = apl ** (1 / 3)
    return round_half(max(raw, 2 * K), rounding)


def suggest_bandwidth(g: Graph, K: int, rounding: str = "half_away") -> int:
    return bandwidth_select(average_path_length(g), g.n, average_degree(g), K, rounding)


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Uniform kernel `1(dist(i, j) <= b)` over the listed units, stored by rows."""

    bandwidth: int
    matrix: sparse.csr_matrix
    units: IntArray

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> FloatArray:
        return self.matrix.toarray()


@dataclass(frozen=True, eq=False)
class KernelSplit:
    k_plus: FloatArray
    k_minus: FloatArray
    eigenvalues: FloatArray
    eigen_tol: float
    bandwidth: int | None = None

    @property
    def norm(self) -> float:
        return float(np.max(np.abs(self.eigenvalues), initial=0.0))

    @property
    def min_eigenvalue(self) -> float:
        return float(np.min(self.eigenvalues, initial=0.0))

    @property
    def is_psd(self) -> bool:
        return bool(self.min_eigenvalue >= -self.eigen_tol * self.norm)


@dataclass(frozen=True, eq=False)
class ContrastSE:
    variance: FloatArray
    se: FloatArray
    negative: npt.NDArray[np.bool_]


@dataclass(frozen=True, eq=False)
class HacResult:
    bandwidth: int
    V: FloatArray
    V_plus: FloatArray
    kernel_psd: bool
    min_eigenvalue: float
    raw: ContrastSE
    plus: ContrastSE


def build_kernel(g: Graph, units: npt.ArrayLike, b: int) -> KernelMatrix:
    """Kernel over `units`; distances are measured in the whole network."""
    if b < 0:
        raise ValueError("Bandwidth must be nonnegative")
    idx = np.asarray(units, dtype=np.int64)
    rows = [
        sparse.csr_matrix(dist[:, idx] <= b, dtype=np.float64)
        for _, dist in iter_distance_blocks(g, b, idx)
    ]
    if rows:
        matrix = sparse.vstack(rows, format="csr")
    else:
        matrix = sparse.csr_matrix((0, 0))
    return KernelMatrix(b, matrix, idx)


def _dense(K: MatrixLike) -> FloatArray:
    if isinstance(K, KernelMatrix):
        return K.dense()
    if sparse.issparse(K):
        return K.toarray()
    return np.asarray(K, dtype=np.float64)


def psd_split(
    K: MatrixLike, eigen_tol: float = EIGEN_TOL, size_cap: int = DENSE_CAP
) -> KernelSplit:
    """Split a symmetric kernel into positive and negative eigen-parts.

    `k_plus` keeps the positive eigenvalues and `k_minus` the magnitudes of the
    negative ones, so `k_plus - k_minus` is the kernel. Eigenvalues within
    `eigen_tol` times the spectral norm count as zero.
    """
    dense = _dense(K)
    if dense.shape[0] > size_cap:
        raise SizeGuardError(dense.shape[0], size_cap)
    try:
        eigenvalues, q = linalg.eigh(dense)
    except linalg.LinAlgError as e:
        raise NumericalError(f"Kernel eigendecomposition failed: {e}") from e

    norm = float(np.max(np.abs(eigenvalues), initial=0.0))
    eigenvalues = np.where(np.abs(eigenvalues) <= eigen_tol * norm, 0.0, eigenvalues)
    k_plus = (q * np.maximum(eigenvalues, 0.0)) @ q.T
    k_minus = (q * -np.minimum(eigenvalues, 0.0)) @ q.T
    bandwidth = K.bandwidth if isinstance(K, KernelMatrix) else None
    return KernelSplit(
        (k_plus + k_plus.T) / 2,
        (k_minus + k_minus.T) / 2,
        eigenvalues,
        eigen_tol,
        bandwidth,
    )


def _middle(scores: FloatArray, K: MatrixLike) -> FloatArray:
    matrix = K.matrix if isinstance(K, KernelMatrix) else K
    if matrix.shape != (len(scores), len(scores)):
        raise ValueError(
            f"Kernel of shape {matrix.shape} does not match {len(scores)} fitted units"
        )
    return scores.T @ np.asarray(matrix @ scores)


def _sandwich(fit: WlsFit, middle: FloatArray, submatrix: bool) -> FloatArray:
    v = fit.bread @ middle @ fit.bread
    v = (v + v.T) / 2
    if submatrix:
        return v[: fit.n_levels, : fit.n_levels]
    return v


def hac_cov(fit: WlsFit, K: MatrixLike, submatrix: bool = True) -> FloatArray:
    """Network HAC sandwich for the fitted coefficients."""
    return _sandwich(fit, _middle(fit.scores(), K), submatrix)


def hac_cov_plus(fit: WlsFit, split: KernelSplit, submatrix: bool = True) -> FloatArray:
    return hac_cov(fit, split.k_plus, submatrix)


def ehw_cov(fit: WlsFit, submatrix: bool = True) -> FloatArray:
    """Heteroskedasticity-robust sandwich, ignoring interference."""
    scores = fit.scores()
    return _sandwich(fit, scores.T @ scores, submatrix)


def ht_contrast_terms(ds: Dataset, row: npt.ArrayLike) -> tuple[FloatArray, float]:
    """Per-unit terms of the HT estimate of `row @ mu` and their mean.

    For `row = e_t - e_t'` the terms are `1_i(t) Y_i / pi_i(t) - 1_i(t') Y_i / pi_i(t')`.
    """
    weights = np.asarray(row, dtype=np.float64)
    if weights.shape != (ds.n_levels,):
        raise ValueError(f"Contrast row needs {ds.n_levels} entries")
    delta = weights[ds.t] * ds.y / ds.realized_pi
    return delta, float(delta.mean())


def leung_ht_variance(delta: npt.ArrayLike, tau_hat: float, K: MatrixLike) -> float:
    """Kernel-weighted second moment of the centered HT terms."""
    r = np.asarray(delta, dtype=np.float64) - tau_hat
    matrix = K.matrix if isinstance(K, KernelMatrix) else K
    if matrix.shape != (len(r), len(r)):
        raise ValueError(f"Kernel of shape {matrix.shape} does not match {len(r)} units")
    return float(r @ np.asarray(matrix @ r)) / len(r)


def leung_ht_variance_plus(delta: npt.ArrayLike, tau_hat: float, split: KernelSplit) -> float:
    return leung_ht_variance(delta, tau_hat, split.k_plus)


def contrast_se(
    V: FloatArray, G: Contrast | npt.ArrayLike, n: int | None = None
) -> ContrastSE:
    """Standard errors of `G beta`.

    With `n` given, `V` is taken as the covariance of `sqrt(n) beta` and scaled down.
    Negative variances get a NaN standard error and a flag.
    """
    g = G.matrix if isinstance(G, Contrast) else np.atleast_2d(np.asarray(G, dtype=np.float64))
    v = np.atleast_2d(np.asarray(V, dtype=np.float64))
    if g.shape[1] != v.shape[0]:
        raise ValueError(f"Contrast has {g.shape[1]} columns but V is {v.shape[0]}x{v.shape[1]}")
    variance = np.einsum("ij,jk,ik->i", g, v, g)
    if n is not None:
        variance = variance / n
    negative = variance < 0
    se = np.where(negative, np.nan, np.sqrt(np.abs(variance)))
    return ContrastSE(variance, se, negative)


def ci95(estimate: npt.ArrayLike, se: npt.ArrayLike) -> tuple[FloatArray, FloatArray]:
    est = np.asarray(estimate, dtype=np.float64)
    half = Z95 * np.asarray(se, dtype=np.float64)
    return est - half, est + half


def network_hac(
    fit: WlsFit, kernel: KernelMatrix, split: KernelSplit, G: Contrast
) -> HacResult:
    V = hac_cov(fit, kernel)
    V_plus = hac_cov_plus(fit, split)
    return HacResult(
        kernel.bandwidth,
        V,
        V_plus,
        split.is_psd,
        split.min_eigenvalue,
        contrast_se(V, G),
        contrast_se(V_plus, G),
    )
