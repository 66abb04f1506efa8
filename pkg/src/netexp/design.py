from __future__ import annotations

import itertools
import logging
import math
import typing as t
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from scipy import stats
from typing_extensions import Protocol, Self

from . import exposure as ex
from .errors import ConfigError, DataError, SizeGuardError, UnsupportedPropensityError
from .graph import FloatArray, Graph, IntArray
from .utils import Stream, parallel_map, rng_stream, round_half

LOG = logging.getLogger(__name__)

BoolArray = npt.NDArray[np.bool_]

DEFAULT_MC_DRAWS = 100_000
MAX_ENUMERATION = 2**20
ROW_SUM_TOL = 1e-9
MC_CHUNK = 1_000


class Design(Protocol):
    """Randomization mechanism over `n` units; ineligible units are always control (arm 0)."""

    @property
    def n(self) -> int:
        ...

    @property
    def eligible(self) -> BoolArray:
        ...

    def draw(self, rng: np.random.Generator) -> IntArray:
        ...

    def marginal(self, arm_filter: frozenset[int]) -> FloatArray | None:
        """Per-unit probability that the unit's arm is in `arm_filter`, if units are
        assigned independently or exchangeably; None otherwise."""
        ...

    def assignment_space_size(self) -> int | None:
        ...

    def enumerate(self) -> t.Iterator[tuple[IntArray, float]]:
        ...


def _mask(eligible: npt.ArrayLike | None, n: int) -> BoolArray:
    if eligible is None:
        return np.ones(n, dtype=bool)
    mask = np.asarray(eligible, dtype=bool)
    if mask.shape != (n,):
        raise ValueError(f"Eligibility mask has shape {mask.shape}, expected ({n},)")
    return mask


@dataclass(frozen=True, eq=False)
class IidBernoulli:
    p: FloatArray
    eligible: BoolArray = field(default=None)  # type: ignore

    def __post_init__(self) -> None:
        p = np.array(self.p, dtype=np.float64)
        if p.ndim != 1:
            raise ValueError("Treatment probabilities must be a vector")
        if ((p < 0) | (p > 1) | np.isnan(p)).any():
            raise ValueError("Treatment probabilities must lie in [0, 1]")
        mask = _mask(self.eligible, len(p))
        p[~mask] = 0.0
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "eligible", mask)

    @classmethod
    def constant(cls, n: int, p: float, eligible: npt.ArrayLike | None = None) -> Self:
        return cls(np.full(n, p), _mask(eligible, n))

    @property
    def n(self) -> int:
        return len(self.p)

    def draw(self, rng: np.random.Generator) -> IntArray:
        return (rng.random(self.n) < self.p).astype(np.int64)

    def marginal(self, arm_filter: frozenset[int]) -> FloatArray:
        q = np.zeros(self.n)
        if 1 in arm_filter:
            q += self.p
        if 0 in arm_filter:
            q += 1 - self.p
        return q

    def _random_units(self) -> IntArray:
        return np.flatnonzero((self.p > 0) & (self.p < 1))

    def assignment_space_size(self) -> int:
        return 2 ** len(self._random_units())

    def enumerate(self) -> t.Iterator[tuple[IntArray, float]]:
        units = self._random_units()
        base = (self.p >= 1).astype(np.int64)
        p = self.p[units]
        for bits in itertools.product((0, 1), repeat=len(units)):
            arr = np.array(bits, dtype=np.int64)
            d = base.copy()
            d[units] = arr
            yield d, float(np.prod(np.where(arr == 1, p, 1 - p)))


@dataclass(frozen=True, eq=False)
class BlockComplete:
    """Complete randomization within blocks of eligible units.

    `arm_counts[b][a]` is the number of units of block `b` receiving arm `a`;
    the remaining units of the block are control (arm 0).
    """

    block: IntArray
    arm_counts: t.Mapping[int, t.Mapping[int, int]]
    eligible: BoolArray = field(default=None)  # type: ignore

    def __post_init__(self) -> None:
        block = np.asarray(self.block, dtype=np.int64)
        mask = _mask(self.eligible, len(block))
        object.__setattr__(self, "block", block)
        object.__setattr__(self, "eligible", mask)

        counts: dict[int, dict[int, int]] = {}
        for b in self.blocks:
            if b not in self.arm_counts:
                raise ValueError(f"No treatment counts given for block {b}")
            arms = {int(a): int(c) for a, c in self.arm_counts[b].items() if int(a) != 0}
            if any(c < 0 for c in arms.values()):
                raise ValueError(f"Negative treatment count in block {b}")
            size = int((block[mask] == b).sum())
            if sum(arms.values()) > size:
                raise ValueError(
                    f"Block {b} has {size} eligible units but {sum(arms.values())} are treated"
                )
            counts[b] = arms
        object.__setattr__(self, "arm_counts", counts)

    @classmethod
    def from_fraction(
        cls,
        block: npt.ArrayLike,
        treat_frac: float,
        eligible: npt.ArrayLike | None = None,
    ) -> Self:
        if not 0 <= treat_frac <= 1:
            raise ValueError("Treated fraction must lie in [0, 1]")
        arr = np.asarray(block, dtype=np.int64)
        mask = _mask(eligible, len(arr))
        labels, sizes = np.unique(arr[mask], return_counts=True)
        counts = {
            int(b): {1: round_half(treat_frac * size)} for b, size in zip(labels, sizes)
        }
        return cls(arr, counts, mask)

    @classmethod
    def from_observed(
        cls,
        block: npt.ArrayLike,
        d: npt.ArrayLike,
        eligible: npt.ArrayLike | None = None,
    ) -> Self:
        """Counts per block and arm taken from an observed assignment."""
        arr = np.asarray(block, dtype=np.int64)
        d_arr = np.asarray(d, dtype=np.int64)
        mask = _mask(eligible, len(arr))
        counts: dict[int, dict[int, int]] = {}
        for b in np.unique(arr[mask]):
            arms, sizes = np.unique(d_arr[mask & (arr == b)], return_counts=True)
            counts[int(b)] = {int(a): int(c) for a, c in zip(arms, sizes) if a != 0}
        return cls(arr, counts, mask)

    @property
    def n(self) -> int:
        return len(self.block)

    @property
    def blocks(self) -> list[int]:
        return sorted(int(b) for b in np.unique(self.block[self.eligible]))

    def members(self, b: int) -> IntArray:
        return np.flatnonzero(self.eligible & (self.block == b))

    def selected_count(self, b: int, arm_filter: frozenset[int]) -> int:
        """Number of block-`b` units whose arm falls in `arm_filter`."""
        arms = self.arm_counts[b]
        count = sum(c for a, c in arms.items() if a in arm_filter)
        if 0 in arm_filter:
            count += len(self.members(b)) - sum(arms.values())
        return count

    def draw(self, rng: np.random.Generator) -> IntArray:
        d = np.zeros(self.n, dtype=np.int64)
        for b in self.blocks:
            order = rng.permutation(self.members(b))
            pos = 0
            for arm in sorted(self.arm_counts[b]):
                count = self.arm_counts[b][arm]
                d[order[pos : pos + count]] = arm
                pos += count
        return d

    def marginal(self, arm_filter: frozenset[int]) -> FloatArray:
        q = np.zeros(self.n)
        if 0 in arm_filter:
            q[~self.eligible] = 1.0
        for b in self.blocks:
            units = self.members(b)
            q[units] = self.selected_count(b, arm_filter) / len(units)
        return q

    def assignment_space_size(self) -> int:
        size = 1
        for b in self.blocks:
            remaining = len(self.members(b))
            for count in self.arm_counts[b].values():
                size *= math.comb(remaining, count)
                remaining -= count
        return size

    def enumerate(self) -> t.Iterator[tuple[IntArray, float]]:
        prob = 1.0 / self.assignment_space_size()
        per_block = [list(self._block_assignments(b)) for b in self.blocks]
        for combo in itertools.product(*per_block):
            d = np.zeros(self.n, dtype=np.int64)
            for treated in combo:
                for arm, units in treated:
                    d[list(units)] = arm
            yield d, prob

    def _block_assignments(
        self, b: int
    ) -> t.Iterator[tuple[tuple[int, tuple[int, ...]], ...]]:
        def assign(
            pool: tuple[int, ...], arms: list[tuple[int, int]]
        ) -> t.Iterator[tuple[tuple[int, tuple[int, ...]], ...]]:
            if not arms:
                yield ()
                return
            (arm, count), rest = arms[0], arms[1:]
            for chosen in itertools.combinations(pool, count):
                left = tuple(u for u in pool if u not in chosen)
                for tail in assign(left, rest):
                    yield ((arm, chosen),) + tail

        pool = tuple(int(u) for u in self.members(b))
        yield from assign(pool, sorted(self.arm_counts[b].items()))


@dataclass(frozen=True, eq=False)
class SequentialNeighbor:
    """Units are visited in turn; a unit whose already-visited neighbor is treated
    gets its base probability multiplied by `factor`."""

    base_p: FloatArray
    graph: Graph
    factor: float
    eligible: BoolArray = field(default=None)  # type: ignore
    order: str = "random"

    ORDERS: t.ClassVar[tuple[str, ...]] = ("random", "index")

    def __post_init__(self) -> None:
        p = np.array(self.base_p, dtype=np.float64)
        if p.shape != (self.graph.n,):
            raise ValueError("Base probabilities must have one entry per unit")
        mask = _mask(self.eligible, len(p))
        p[~mask] = 0.0
        if self.order not in self.ORDERS:
            raise ValueError(f"Unknown order rule {self.order!r}")
        if self.factor < 0:
            raise ValueError("Modifier factor must be nonnegative")
        modified = p * self.factor
        if ((p < 0) | (p > 1) | (modified > 1)).any():
            raise ValueError("Modified treatment probabilities must lie in [0, 1]")
        object.__setattr__(self, "base_p", p)
        object.__setattr__(self, "eligible", mask)

    @property
    def n(self) -> int:
        return len(self.base_p)

    def draw(self, rng: np.random.Generator) -> IntArray:
        order = rng.permutation(self.n) if self.order == "random" else np.arange(self.n)
        coins = rng.random(self.n)
        sym = self.graph.symmetric_adjacency
        indptr, indices = sym.indptr, sym.indices
        treated = np.zeros(self.n, dtype=np.int64)
        base = self.base_p
        for step, i in enumerate(order):
            p = base[i]
            if p == 0:
                continue
            if treated[indices[indptr[i] : indptr[i + 1]]].any():
                p *= self.factor
            treated[i] = coins[step] < p
        return treated

    def marginal(self, arm_filter: frozenset[int]) -> None:
        return None

    def assignment_space_size(self) -> None:
        return None

    def enumerate(self) -> t.Iterator[tuple[IntArray, float]]:
        raise UnsupportedPropensityError(
            "Sequential designs cannot be enumerated; use mc_propensity"
        )


@dataclass(frozen=True, eq=False)
class PropensityTable:
    """Generalized propensity scores, one row per unit and one column per exposure value."""

    pi: FloatArray
    support: tuple[ex.Label, ...]
    method: str = "exact"
    draws: int | None = None
    seed: int | None = None
    mc_std_err: FloatArray | None = None

    def __post_init__(self) -> None:
        pi = np.asarray(self.pi, dtype=np.float64)
        if pi.ndim != 2 or pi.shape[1] != len(self.support):
            raise ValueError(
                f"Propensity table has shape {pi.shape}, expected {len(self.support)} columns"
            )
        if ((pi < -ROW_SUM_TOL) | (pi > 1 + ROW_SUM_TOL)).any():
            raise ValueError("Propensities must lie in [0, 1]")
        rows = np.abs(pi.sum(axis=1) - 1) > ROW_SUM_TOL
        if rows.any():
            raise ValueError(f"Propensities of unit {int(np.flatnonzero(rows)[0])} do not sum to 1")
        object.__setattr__(self, "pi", np.clip(pi, 0.0, 1.0))

    @property
    def n(self) -> int:
        return self.pi.shape[0]

    def restrict(self, units: npt.ArrayLike) -> Self:
        idx = np.asarray(units)
        std_err = None if self.mc_std_err is None else self.mc_std_err[idx]
        return type(self)(
            self.pi[idx], self.support, self.method, self.draws, self.seed, std_err
        )

    def realized(self, exposures: ex.ExposureVector) -> FloatArray:
        """`pi_i(T_i)` for each unit."""
        return self.pi[np.arange(self.n), exposures.index]


def draw_assignment(
    d: Design, seed: int | np.random.Generator, index: int = 0
) -> IntArray:
    rng = seed if isinstance(seed, np.random.Generator) else rng_stream(seed, Stream.ASSIGNMENT, index)
    return d.draw(rng)


def _zero_probability(
    c: ex._Component, d: Design, g: Graph
) -> FloatArray:
    """Probability that component `c` evaluates to 0, in closed form."""
    q = d.marginal(c.arm_filter)
    if q is None:
        raise UnsupportedPropensityError(
            f"No closed-form propensity for {c.KIND} under {type(d).__name__}; use mc_propensity"
        )
    if isinstance(c, ex.Direct):
        return 1 - q

    h = g.adjacency if isinstance(c, ex.AnyTreatedNeighbor) else g.common_friends.adjacency
    if isinstance(d, IidBernoulli):
        certain = (h @ (q >= 1).astype(np.float64)) > 0
        with np.errstate(divide="ignore"):
            logs = np.log1p(-np.where(q < 1, q, 0.0))
        p0 = np.exp(h @ logs)
        p0[certain] = 0.0
        return p0

    if isinstance(d, BlockComplete):
        p0 = np.ones(d.n)
        if 0 in c.arm_filter:
            p0[(h @ (~d.eligible).astype(np.float64)) > 0] = 0.0
        for b in d.blocks:
            in_block = np.zeros(d.n)
            in_block[d.members(b)] = 1.0
            k = np.rint(h @ in_block).astype(np.int64)
            size = len(d.members(b))
            p0 *= stats.hypergeom.pmf(0, size, d.selected_count(b, c.arm_filter), k)
        return p0

    raise UnsupportedPropensityError(
        f"No closed-form propensity for {c.KIND} under {type(d).__name__}; use mc_propensity"
    )


def exact_propensity(m: ex.ExposureMapping, d: Design, g: Graph) -> PropensityTable:
    """Closed-form propensities for the supported (mapping, design) pairs."""
    if d.n != g.n:
        raise DataError(f"Design covers {d.n} units but the graph has {g.n}")
    support = m.support()
    if isinstance(m, ex.Factorial):
        components = m.components
        kinds = [type(c) for c in components]
        if len(components) > 1 and (
            not isinstance(d, IidBernoulli) or len(set(kinds)) != len(kinds)
        ):
            raise UnsupportedPropensityError(
                "Closed-form factorial propensities need independent components under "
                "an IID Bernoulli design; use mc_propensity"
            )
    else:
        components = (m,)

    zeros = [_zero_probability(c, d, g) for c in components]
    pi = np.empty((g.n, len(support)))
    for col, label in enumerate(support):
        bits = label if isinstance(label, tuple) else (label,)
        prob = np.ones(g.n)
        for bit, p0 in zip(bits, zeros):
            prob *= p0 if bit == 0 else 1 - p0
        pi[:, col] = prob
    return PropensityTable(pi, support, "exact")


def mc_propensity(
    m: ex.ExposureMapping,
    d: Design,
    g: Graph,
    R: int = DEFAULT_MC_DRAWS,
    seed: int = 0,
    threads: int = 1,
) -> PropensityTable:
    """Monte Carlo propensities over `R` assignment draws.

    Draw `r` uses its own stream derived from `(seed, r)`, so the table does not
    depend on the thread count.
    """
    if R < 1:
        raise ValueError("Number of draws must be positive")
    support = m.support()
    rows = np.arange(g.n)

    def run(draws: range) -> IntArray:
        counts = np.zeros((g.n, len(support)), dtype=np.int64)
        for r in draws:
            t_idx = m.evaluate(d.draw(rng_stream(seed, Stream.PROPENSITY, r)), g)
            counts[rows, t_idx] += 1
        return counts

    chunks = [range(s, min(s + MC_CHUNK, R)) for s in range(0, R, MC_CHUNK)]
    counts = sum(parallel_map(run, chunks, threads), np.zeros((g.n, len(support)), dtype=np.int64))
    pi = counts / R
    std_err = np.sqrt(pi * (1 - pi) / R)
    return PropensityTable(pi, support, "monte_carlo", R, seed, std_err)


def enumerate_assignments(
    d: Design, cap: int = MAX_ENUMERATION
) -> t.Iterator[tuple[IntArray, float]]:
    """Every assignment of the design with its probability."""
    size = d.assignment_space_size()
    if size is None:
        raise UnsupportedPropensityError(f"{type(d).__name__} cannot be enumerated")
    if size > cap:
        raise SizeGuardError(size, cap)
    return d.enumerate()


def enumerated_propensity(m: ex.ExposureMapping, d: Design, g: Graph) -> PropensityTable:
    support = m.support()
    pi = np.zeros((g.n, len(support)))
    rows = np.arange(g.n)
    for assignment, prob in enumerate_assignments(d):
        pi[rows, m.evaluate(assignment, g)] += prob
    return PropensityTable(pi, support, "enumeration")


def propensity(
    m: ex.ExposureMapping,
    d: Design,
    g: Graph,
    mc_draws: int = DEFAULT_MC_DRAWS,
    seed: int = 0,
    threads: int = 1,
) -> PropensityTable:
    """Exact propensities when a closed form exists, Monte Carlo otherwise."""
    try:
        return exact_propensity(m, d, g)
    except UnsupportedPropensityError as e:
        LOG.info("%s; estimating with %d draws", e, mc_draws)
        return mc_propensity(m, d, g, mc_draws, seed, threads)


@dataclass(frozen=True, eq=False)
class DesignContext:
    """Unit-level data a design spec may refer to."""

    n: int
    eligible: BoolArray | None = None
    columns: t.Mapping[str, np.ndarray] = field(default_factory=dict)
    graph: Graph | None = None
    rng: np.random.Generator | None = None
    observed: IntArray | None = None


def _probabilities(spec: t.Mapping[str, t.Any], ctx: DesignContext, key: str = "p") -> FloatArray:
    if "p_uniform" in spec:
        low, high = spec["p_uniform"]
        if ctx.rng is None:
            raise ConfigError("Random per-unit probabilities need a seeded generator")
        return ctx.rng.uniform(low, high, ctx.n)
    value = spec.get(key, "column")
    if isinstance(value, str):
        column = key if value == "column" else value
        if column not in ctx.columns:
            raise ConfigError(f"Design needs a per-unit probability column {column!r}")
        return np.asarray(ctx.columns[column], dtype=np.float64)
    return np.full(ctx.n, float(value))


def from_spec(spec: t.Mapping[str, t.Any], ctx: DesignContext) -> Design:
    """Build a design from its JSON description."""
    if not isinstance(spec, t.Mapping):
        raise ConfigError("Design spec must be an object")
    kind = spec.get("kind")
    try:
        if kind == "iid_bernoulli":
            return IidBernoulli(_probabilities(spec, ctx), ctx.eligible)

        if kind == "block_complete":
            col = spec.get("block_col", "block")
            if col in ctx.columns:
                block = np.asarray(ctx.columns[col], dtype=np.int64)
            elif "block_col" in spec:
                raise ConfigError(f"Block column {col!r} not found")
            else:
                block = np.zeros(ctx.n, dtype=np.int64)
            if spec.get("arm_counts") == "observed":
                if ctx.observed is None:
                    raise ConfigError("Observed arm counts need an observed assignment")
                return BlockComplete.from_observed(block, ctx.observed, ctx.eligible)
            if "arm_counts" in spec:
                counts = {
                    int(b): {int(a): int(c) for a, c in arms.items()}
                    for b, arms in spec["arm_counts"].items()
                }
                return BlockComplete(block, counts, ctx.eligible)
            return BlockComplete.from_fraction(block, float(spec["treat_frac"]), ctx.eligible)

        if kind == "sequential_neighbor":
            if ctx.graph is None:
                raise ConfigError("Sequential design needs the network")
            return SequentialNeighbor(
                _probabilities(spec, ctx),
                ctx.graph,
                float(spec["factor"]),
                ctx.eligible,
                spec.get("order", "random"),
            )
    except KeyError as e:
        raise ConfigError(f"Design {kind!r} is missing field {e}") from e
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid {kind} design: {e}") from e

    raise ConfigError(f"Unknown design kind {kind!r}")
