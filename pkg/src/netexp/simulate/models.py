from __future__ import annotations

import math
import typing as t
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import numpy.typing as npt
from scipy import sparse
from scipy.sparse import linalg as splinalg
from scipy.spatial import cKDTree

from ..errors import ConfigError, NumericalError
from ..graph import FloatArray, Graph
from ..record import Record
from ..utils import Stream, rng_stream

NETWORK_KINDS = ("rgg", "erdos_renyi")
OUTCOME_KINDS = ("linear_in_means", "complex_contagion", "linear")

# Regressors available to the linear outcome model; `A` is the row-normalized adjacency.
LINEAR_TERMS: dict[str, t.Callable[[sparse.csr_matrix, FloatArray, FloatArray], FloatArray]] = {
    "const": lambda a, d, x: np.ones_like(x),
    "D": lambda a, d, x: d,
    "AD": lambda a, d, x: a @ d,
    "x": lambda a, d, x: x,
    "Ax": lambda a, d, x: a @ x,
    "D_exp_x": lambda a, d, x: d * np.exp(x),
    "D_exp_x2": lambda a, d, x: d * np.exp(x**2),
}


class NetworkModel(Record):
    kind: str = "rgg"
    n: int = 800
    kappa: float = 5.0
    expected_degree: float = 5.0

    def __post_init__(self) -> None:
        if self.kind not in NETWORK_KINDS:
            raise ValueError(f"Unknown network kind {self.kind!r}")
        if self.n < 2:
            raise ValueError("Network needs at least two units")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.expected_degree < 0:
            raise ValueError("Expected degree must be nonnegative")


class OutcomeModel(Record):
    """Outcome model parameters.

    `linear_in_means` and `complex_contagion` use `(alpha, beta, delta, xi, gamma)`;
    `linear` sums `coefficients[term] * term` over LINEAR_TERMS.
    """

    kind: str = "linear_in_means"
    alpha: float = -1.0
    beta: float = 0.8
    delta: float = 1.0
    xi: float = 1.0
    gamma: float = 3.0
    coefficients: t.Dict[str, float] = field(default_factory=dict)
    noise_sd: float = 1.0
    homophily: bool = True
    max_iter: t.Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in OUTCOME_KINDS:
            raise ValueError(f"Unknown outcome kind {self.kind!r}")
        if self.kind == "linear_in_means" and abs(self.beta) >= 1:
            raise ValueError(f"Linear-in-means needs |beta| < 1, got {self.beta}")
        unknown = set(self.coefficients) - set(LINEAR_TERMS)
        if unknown:
            raise ValueError(f"Unknown outcome term(s) {', '.join(sorted(unknown))}")
        if self.noise_sd < 0:
            raise ValueError("Noise standard deviation must be nonnegative")


def gen_network(
    model: NetworkModel, seed: int | np.random.Generator
) -> tuple[Graph, FloatArray | None]:
    rng = seed if isinstance(seed, np.random.Generator) else rng_stream(seed, Stream.POPULATION)
    n = model.n
    if model.kind == "rgg":
        positions = rng.uniform(size=(n, 2))
        radius = math.sqrt(model.kappa / (math.pi * n))
        pairs = cKDTree(positions).query_pairs(radius, output_type="ndarray")
        return Graph.from_edges(n, pairs[:, 0], pairs[:, 1]), positions

    p = min(model.expected_degree / n, 1.0)
    src: list[npt.NDArray[np.int64]] = []
    dst: list[npt.NDArray[np.int64]] = []
    for i in range(n - 1):
        js = i + 1 + np.flatnonzero(rng.random(n - i - 1) < p)
        src.append(np.full(len(js), i))
        dst.append(js)
    if not src:
        return Graph.empty(n), None
    return Graph.from_edges(n, np.concatenate(src), np.concatenate(dst)), None


def row_normalize(g: Graph) -> sparse.csr_matrix:
    """Divide each row of the adjacency matrix by its degree; isolated units get zero rows."""
    degree = g.degrees("out")
    return (sparse.diags(1 / np.maximum(degree, 1)) @ g.adjacency).tocsr()


def homophily_errors(
    positions: FloatArray | None,
    seed: int | np.random.Generator,
    noise_sd: float = 1.0,
) -> FloatArray:
    """Gaussian noise plus the centered first coordinate of each unit's position."""
    if positions is None:
        raise ConfigError("Homophily errors need unit positions (random geometric graphs only)")
    rng = seed if isinstance(seed, np.random.Generator) else rng_stream(seed, Stream.POPULATION)
    nu = noise_sd * rng.standard_normal(len(positions))
    return nu + (positions[:, 0] - 0.5)


def _systematic(a_norm: sparse.csr_matrix, d: FloatArray, x: FloatArray, params: OutcomeModel) -> FloatArray:
    return params.alpha + params.delta * (a_norm @ d) + params.xi * d + params.gamma * x


def linear_in_means(
    a_norm: sparse.csr_matrix,
    d: npt.ArrayLike,
    x: npt.ArrayLike,
    eps: npt.ArrayLike,
    params: OutcomeModel,
    solver: splinalg.SuperLU | None = None,
) -> FloatArray:
    """Reduced form of the linear-in-means model, solved without forming an inverse."""
    d_arr = np.asarray(d, dtype=np.float64)
    rhs = _systematic(a_norm, d_arr, np.asarray(x, dtype=np.float64), params) + eps
    if params.beta == 0:
        return rhs
    if solver is None:
        solver = _factorize(a_norm, params.beta)
    y = solver.solve(rhs)
    if not np.isfinite(y).all():
        raise NumericalError("Linear-in-means solve produced non-finite outcomes")
    return y


def _factorize(a_norm: sparse.csr_matrix, beta: float) -> splinalg.SuperLU:
    n = a_norm.shape[0]
    system = (sparse.identity(n, format="csc") - beta * a_norm).tocsc()
    try:
        return splinalg.splu(system)
    except RuntimeError as e:
        raise NumericalError(f"Linear-in-means system is singular: {e}") from e


def complex_contagion(
    a_norm: sparse.csr_matrix,
    d: npt.ArrayLike,
    x: npt.ArrayLike,
    eps: npt.ArrayLike,
    params: OutcomeModel,
) -> FloatArray:
    """Threshold dynamics iterated from period 0 until outcomes stop changing."""
    d_arr = np.asarray(d, dtype=np.float64)
    base = _systematic(a_norm, d_arr, np.asarray(x, dtype=np.float64), params) + eps
    n = len(base)
    cap = params.max_iter if params.max_iter is not None else n + 2
    y = (base > 0).astype(np.float64)
    for _ in range(cap):
        nxt = (base + params.beta * (a_norm @ y) > 0).astype(np.float64)
        if np.array_equal(nxt, y):
            return y
        y = nxt
    raise NumericalError(f"Complex contagion did not reach a fixed point within {cap} iterations")


def linear_outcome(
    a_norm: sparse.csr_matrix,
    d: npt.ArrayLike,
    x: npt.ArrayLike,
    eps: npt.ArrayLike,
    params: OutcomeModel,
) -> FloatArray:
    d_arr = np.asarray(d, dtype=np.float64)
    x_arr = np.asarray(x, dtype=np.float64)
    y = np.asarray(eps, dtype=np.float64).copy()
    for term, coef in params.coefficients.items():
        y += coef * LINEAR_TERMS[term](a_norm, d_arr, x_arr)
    return y


@dataclass(frozen=True, eq=False)
class Population:
    """Fixed network, covariates and errors; only the treatment vector varies."""

    graph: Graph
    positions: FloatArray | None
    x: FloatArray
    eps: FloatArray
    outcome: OutcomeModel
    a_norm: sparse.csr_matrix = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "a_norm", row_normalize(self.graph))

    @property
    def n(self) -> int:
        return self.graph.n

    @cached_property
    def solver(self) -> splinalg.SuperLU | None:
        if self.outcome.kind != "linear_in_means" or self.outcome.beta == 0:
            return None
        return _factorize(self.a_norm, self.outcome.beta)

    def respond(self, d: npt.ArrayLike) -> FloatArray:
        """Outcomes under the binary treatment indicator `d`."""
        kind = self.outcome.kind
        if kind == "linear_in_means":
            return linear_in_means(self.a_norm, d, self.x, self.eps, self.outcome, self.solver)
        if kind == "complex_contagion":
            return complex_contagion(self.a_norm, d, self.x, self.eps, self.outcome)
        return linear_outcome(self.a_norm, d, self.x, self.eps, self.outcome)


def make_population(
    network: NetworkModel, outcome: OutcomeModel, seed: int
) -> tuple[Population, np.random.Generator]:
    """Draw the fixed part of a simulation; returns the population stream for further draws."""
    rng = rng_stream(seed, Stream.POPULATION)
    graph, positions = gen_network(network, rng)
    x = rng.standard_normal(graph.n)
    if outcome.homophily:
        eps = homophily_errors(positions, rng, outcome.noise_sd)
    else:
        eps = outcome.noise_sd * rng.standard_normal(graph.n)
    population = Population(graph, positions, x, eps, outcome)
    _ = population.solver
    return population, rng
