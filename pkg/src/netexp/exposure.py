from __future__ import annotations

import itertools
import typing as t
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from typing_extensions import Protocol, Self

from .errors import ConfigError, DataError
from .graph import Graph, IntArray

if t.TYPE_CHECKING:
    from .design import PropensityTable

Label = t.Union[int, t.Tuple[int, ...]]

DEFAULT_ARMS = frozenset({0, 1})
DEFAULT_FILTER = frozenset({1})
MAX_COMPONENTS = 3


def format_label(label: Label) -> str:
    if isinstance(label, tuple):
        return "(" + ",".join(str(v) for v in label) + ")"
    return str(label)


class ExposureMapping(Protocol):
    @property
    def locality(self) -> int:
        ...

    def support(self) -> tuple[Label, ...]:
        ...

    def evaluate(self, d: npt.ArrayLike, g: Graph) -> IntArray:
        """Per-unit index into `support()`."""
        ...

    def to_spec(self) -> dict[str, t.Any]:
        ...


@dataclass(frozen=True)
class _Component:
    """Binary exposure component; `arm_filter` lists the arms counting as treated."""

    arm_filter: frozenset[int] = DEFAULT_FILTER
    arms: frozenset[int] = DEFAULT_ARMS

    KIND: t.ClassVar[str]
    LOCALITY: t.ClassVar[int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "arm_filter", frozenset(self.arm_filter))
        object.__setattr__(self, "arms", frozenset(self.arms))
        if not self.arm_filter:
            raise ValueError("Arm filter must not be empty")
        if not self.arm_filter <= self.arms:
            raise ValueError(
                f"Arm filter {sorted(self.arm_filter)} is not a subset of arms {sorted(self.arms)}"
            )

    @property
    def locality(self) -> int:
        return self.LOCALITY

    def support(self) -> tuple[Label, ...]:
        return (0, 1)

    def treated(self, d: npt.ArrayLike) -> npt.NDArray[np.float64]:
        arr = np.asarray(d)
        outside = ~np.isin(arr, list(self.arms))
        if outside.any():
            unit = int(np.flatnonzero(outside)[0])
            raise DataError(
                f"Unit {unit} has arm {arr[unit]} outside the declared arms {sorted(self.arms)}"
            )
        return np.isin(arr, list(self.arm_filter)).astype(np.float64)

    def indicator(self, d: npt.ArrayLike, g: Graph) -> IntArray:
        raise NotImplementedError

    def evaluate(self, d: npt.ArrayLike, g: Graph) -> IntArray:
        return self.indicator(d, g)

    def to_spec(self) -> dict[str, t.Any]:
        spec: dict[str, t.Any] = {"kind": self.KIND}
        if self.arm_filter != DEFAULT_FILTER:
            spec["arm_filter"] = sorted(self.arm_filter)
        if self.arms != DEFAULT_ARMS:
            spec["arms"] = sorted(self.arms)
        return spec


@dataclass(frozen=True)
class Direct(_Component):
    KIND = "direct"
    LOCALITY = 0

    def indicator(self, d: npt.ArrayLike, g: Graph) -> IntArray:
        return self.treated(d).astype(np.int64)


@dataclass(frozen=True)
class AnyTreatedNeighbor(_Component):
    KIND = "any_treated_neighbor"
    LOCALITY = 1

    def indicator(self, d: npt.ArrayLike, g: Graph) -> IntArray:
        return (g.adjacency @ self.treated(d) > 0).astype(np.int64)


@dataclass(frozen=True)
class AnyTreatedFriendOfFriend(_Component):
    KIND = "any_treated_friend_of_friend"
    LOCALITY = 2

    def indicator(self, d: npt.ArrayLike, g: Graph) -> IntArray:
        return (g.common_friends.adjacency @ self.treated(d) > 0).astype(np.int64)


ALL_COMPONENTS: tuple[type[_Component], ...] = (
    Direct,
    AnyTreatedNeighbor,
    AnyTreatedFriendOfFriend,
)


@dataclass(frozen=True)
class Factorial:
    """Cross product of binary components; support is lexicographic over components."""

    components: tuple[_Component, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(self.components))
        if not 1 <= len(self.components) <= MAX_COMPONENTS:
            raise ValueError(
                f"Factorial mapping needs 1 to {MAX_COMPONENTS} components, got {len(self.components)}"
            )
        if not all(isinstance(c, _Component) for c in self.components):
            raise ValueError("Factorial components must be direct or neighbor mappings")

    @property
    def locality(self) -> int:
        return max(c.locality for c in self.components)

    def support(self) -> tuple[Label, ...]:
        return tuple(itertools.product((0, 1), repeat=len(self.components)))

    def evaluate(self, d: npt.ArrayLike, g: Graph) -> IntArray:
        index = np.zeros(g.n, dtype=np.int64)
        for component in self.components:
            index = 2 * index + component.indicator(d, g)
        return index

    def project(self, exposures: ExposureVector, k: int) -> ExposureVector:
        """Marginal exposure of component `k`."""
        shift = len(self.components) - 1 - k
        return ExposureVector((exposures.index >> shift) & 1, (0, 1))

    def to_spec(self) -> dict[str, t.Any]:
        return {
            "kind": "factorial",
            "components": [c.to_spec() for c in self.components],
        }


@dataclass(frozen=True, eq=False)
class ExposureVector:
    index: IntArray
    support: tuple[Label, ...]

    @property
    def labels(self) -> list[Label]:
        return [self.support[i] for i in self.index]

    def counts(self) -> IntArray:
        return np.bincount(self.index, minlength=len(self.support))

    def restrict(self, units: npt.ArrayLike) -> Self:
        return type(self)(self.index[np.asarray(units)], self.support)


@dataclass(frozen=True, eq=False)
class EffectiveSample:
    units: IntArray
    counts: IntArray | None = None


def compute_exposures(m: ExposureMapping, d: npt.ArrayLike, g: Graph) -> ExposureVector:
    arr = np.asarray(d)
    if arr.shape != (g.n,):
        raise DataError(f"Treatment vector has shape {arr.shape}, expected ({g.n},)")
    return ExposureVector(m.evaluate(arr, g), m.support())


def exposure_support(m: ExposureMapping) -> tuple[tuple[Label, ...], int]:
    return m.support(), m.locality


def effective_sample(
    m: ExposureMapping,
    pi: PropensityTable,
    exposures: ExposureVector | None = None,
) -> EffectiveSample:
    """Units whose propensity lies strictly inside (0, 1) for every exposure value."""
    probs = pi.pi
    if probs.ndim != 2 or probs.shape[1] != len(m.support()):
        raise DataError(
            f"Propensity table has shape {probs.shape}, expected one column per exposure value ({len(m.support())})"
        )
    keep = ((probs > 0) & (probs < 1)).all(axis=1)
    units = np.flatnonzero(keep)
    if len(units) == 0:
        raise DataError("Effective sample is empty: no unit has interior propensities")
    counts = None
    if exposures is not None:
        counts = exposures.restrict(units).counts()
    return EffectiveSample(units, counts)


def _component_from_spec(spec: t.Mapping[str, t.Any]) -> _Component:
    kind = spec.get("kind")
    aliases = {"friend_of_friend": AnyTreatedFriendOfFriend.KIND}
    kind = aliases.get(kind, kind)
    for cls in ALL_COMPONENTS:
        if cls.KIND == kind:
            break
    else:
        raise ConfigError(f"Unknown exposure kind {spec.get('kind')!r}")

    unknown = set(spec) - {"kind", "arm_filter", "arms"}
    if unknown:
        raise ConfigError(f"Unknown exposure field(s) {', '.join(sorted(unknown))}")

    arm_filter = spec.get("arm_filter", DEFAULT_FILTER)
    if isinstance(arm_filter, t.Mapping):
        arm_filter = arm_filter.get("treated", DEFAULT_FILTER)
    arms = spec.get("arms")
    try:
        arm_filter = frozenset(int(a) for a in arm_filter)
        arms = DEFAULT_ARMS | arm_filter if arms is None else frozenset(int(a) for a in arms)
        return cls(arm_filter=arm_filter, arms=arms)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid {kind} exposure: {e}") from e


def from_spec(spec: t.Mapping[str, t.Any]) -> ExposureMapping:
    """Build a mapping from its JSON description."""
    if not isinstance(spec, t.Mapping):
        raise ConfigError("Exposure spec must be an object")
    if spec.get("kind") != "factorial":
        return _component_from_spec(spec)
    components = spec.get("components")
    if not isinstance(components, list):
        raise ConfigError("Factorial exposure needs a list of components")
    try:
        return Factorial(tuple(_component_from_spec(c) for c in components))
    except ValueError as e:
        raise ConfigError(str(e)) from e
