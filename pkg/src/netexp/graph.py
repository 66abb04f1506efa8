from __future__ import annotations

import typing as t
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import numpy.typing as npt
from scipy import sparse
from scipy.sparse import csgraph
from typing_extensions import Self

from .errors import NetexpWarning, SizeGuardError

IntArray = npt.NDArray[np.int64]
FloatArray = npt.NDArray[np.float64]

# Unreachable (or beyond the BFS cap) pairs are reported at this distance.
UNREACHABLE = np.inf

DENSE_CAP = 20_000
H_COUNT_CAP = 500
BLOCK_ROWS = 512

VIEWS = ("out", "symmetric")


def dedupe_edges(
    n: int, src: t.Sequence[int], dst: t.Sequence[int], directed: bool
) -> tuple[IntArray, IntArray, int, int]:
    """Validate an edge list and drop self-loops and repeated edges.

    Returns the cleaned `(src, dst)` arrays along with the number of duplicate
    edges and self-loops removed. For undirected graphs `(i, j)` and `(j, i)`
    count as the same edge.
    """
    src_arr = np.asarray(src, dtype=np.int64)
    dst_arr = np.asarray(dst, dtype=np.int64)
    if src_arr.shape != dst_arr.shape or src_arr.ndim != 1:
        raise ValueError("Edge endpoints must be two sequences of equal length")
    if n < 0:
        raise ValueError("Unit count must be nonnegative")

    bad = (src_arr < 0) | (src_arr >= n) | (dst_arr < 0) | (dst_arr >= n)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise ValueError(
            f"Edge {k} ({src_arr[k]}, {dst_arr[k]}) has a unit id outside [0, {n})"
        )

    loops = src_arr == dst_arr
    src_arr, dst_arr = src_arr[~loops], dst_arr[~loops]
    if not directed:
        src_arr, dst_arr = np.minimum(src_arr, dst_arr), np.maximum(src_arr, dst_arr)
    keys = np.unique(src_arr * max(n, 1) + dst_arr)
    duplicates = len(src_arr) - len(keys)
    return keys // max(n, 1), keys % max(n, 1), duplicates, int(loops.sum())


@dataclass(frozen=True, eq=False)
class Graph:
    """Unweighted network on units `0..n-1`.

    `adjacency` holds out-edges as a 0/1 CSR matrix with sorted indices.
    Undirected graphs store both directions of every edge.
    """

    adjacency: sparse.csr_matrix
    directed: bool = False

    def __post_init__(self) -> None:
        a = self.adjacency
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("Adjacency matrix must be square")
        if a.diagonal().any():
            raise ValueError("Self-links are not allowed")
        if not self.directed and (a != a.T).nnz:
            raise ValueError("Undirected graph requires a symmetric adjacency matrix")

    @classmethod
    def from_edges(
        cls,
        n: int,
        src: t.Sequence[int],
        dst: t.Sequence[int],
        directed: bool = False,
    ) -> Self:
        src_arr, dst_arr, duplicates, loops = dedupe_edges(n, src, dst, directed)
        if duplicates or loops:
            warnings.warn(
                f"Dropped {duplicates} duplicate edge(s) and {loops} self-loop(s)",
                NetexpWarning,
                stacklevel=2,
            )
        if not directed:
            src_arr, dst_arr = (
                np.concatenate([src_arr, dst_arr]),
                np.concatenate([dst_arr, src_arr]),
            )
        return cls(_binary_csr(src_arr, dst_arr, n), directed)

    @classmethod
    def empty(cls, n: int) -> Self:
        return cls(sparse.csr_matrix((n, n), dtype=np.float64))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def out_neighbors(self, i: int) -> IntArray:
        _check_unit(self, i)
        a = self.adjacency
        return a.indices[a.indptr[i] : a.indptr[i + 1]].astype(np.int64)

    @cached_property
    def symmetric_adjacency(self) -> sparse.csr_matrix:
        if not self.directed:
            return self.adjacency
        sym = (self.adjacency + self.adjacency.T).tocsr()
        sym.data[:] = 1.0
        sym.sort_indices()
        return sym

    def undirected(self) -> Graph:
        """Symmetric view: an edge `i-j` exists if either direction exists."""
        if not self.directed:
            return self
        return Graph(self.symmetric_adjacency, directed=False)

    @cached_property
    def common_friends(self) -> Graph:
        """Common-friend graph of the symmetric view."""
        return common_friend_graph(self.undirected())

    def degrees(self, view: str = "out") -> IntArray:
        if view not in VIEWS:
            raise ValueError(f"Unknown view {view!r}")
        a = self.adjacency if view == "out" else self.symmetric_adjacency
        return np.diff(a.indptr).astype(np.int64)


@dataclass(frozen=True)
class DistanceProfile:
    source: int
    dist: FloatArray
    cap: int | None = None


def _binary_csr(src: IntArray, dst: IntArray, n: int) -> sparse.csr_matrix:
    data = np.ones(len(src), dtype=np.float64)
    a = sparse.coo_matrix((data, (src, dst)), shape=(n, n)).tocsr()
    a.data[:] = 1.0
    a.sort_indices()
    return a


def _check_unit(g: Graph, i: int) -> None:
    if not 0 <= i < g.n:
        raise ValueError(f"Unit {i} out of range [0, {g.n})")


def _distances(
    g: Graph, sources: IntArray, cap: float | None = None
) -> FloatArray:
    if len(sources) == 0:
        return np.empty((0, g.n))
    limit = np.inf if cap is None else float(cap)
    dist = csgraph.dijkstra(
        g.symmetric_adjacency,
        directed=False,
        indices=sources,
        unweighted=True,
        limit=limit,
    )
    return np.atleast_2d(dist)


def iter_distance_blocks(
    g: Graph,
    cap: float | None = None,
    sources: npt.ArrayLike | None = None,
    block: int = BLOCK_ROWS,
) -> t.Iterator[tuple[IntArray, FloatArray]]:
    """Yield `(rows, distances)` for consecutive blocks of BFS sources."""
    src = np.arange(g.n) if sources is None else np.asarray(sources, dtype=np.int64)
    for start in range(0, len(src), block):
        rows = src[start : start + block]
        yield rows, _distances(g, rows, cap)


def all_pairs_distances(g: Graph, size_cap: int = DENSE_CAP) -> FloatArray:
    if g.n > size_cap:
        raise SizeGuardError(g.n, size_cap)
    return _distances(g, np.arange(g.n))


def bfs_distances(g: Graph, source: int, cap: int | None = None) -> DistanceProfile:
    _check_unit(g, source)
    if cap is not None and cap < 0:
        raise ValueError("BFS cap must be nonnegative")
    dist = _distances(g, np.array([source]), cap)[0]
    return DistanceProfile(source, dist, cap)


def k_neighborhood(g: Graph, i: int, K: int) -> IntArray:
    if K < 0:
        raise ValueError("Neighborhood depth must be nonnegative")
    return np.flatnonzero(bfs_distances(g, i, K).dist <= K)


def neighborhood_sizes(g: Graph, m: int) -> IntArray:
    if m < 0:
        raise ValueError("Neighborhood depth must be nonnegative")
    sizes = [(dist <= m).sum(axis=1) for _, dist in iter_distance_blocks(g, m)]
    if not sizes:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(sizes).astype(np.int64)


def neighborhood_moment(g: Graph, m: int, k: int) -> float:
    """Mean of the `k`-th power of the `m`-neighborhood sizes."""
    if k < 1:
        raise ValueError("Moment power must be at least 1")
    sizes = neighborhood_sizes(g, m).astype(np.float64)
    return float(np.mean(sizes**k))


def boundary_sizes(g: Graph, s: int) -> float:
    """Mean number of units at distance exactly `s`."""
    if s < 0:
        raise ValueError("Distance must be nonnegative")
    total = sum(int((dist == s).sum()) for _, dist in iter_distance_blocks(g, s))
    return total / g.n


def j_count(g: Graph, s: int, kernel_row_sums: npt.ArrayLike) -> float:
    """Sum of `r_i * r_j` over ordered pairs at distance exactly `s`."""
    r = np.asarray(kernel_row_sums, dtype=np.float64)
    if r.shape != (g.n,):
        raise ValueError(f"Expected {g.n} row sums, got shape {r.shape}")
    if (r < 0).any():
        raise ValueError("Row sums must be nonnegative")
    if s < 0:
        return 0.0
    total = 0.0
    for rows, dist in iter_distance_blocks(g, s):
        total += float(r[rows] @ ((dist == s) @ r))
    return total


def h_count(g: Graph, s: int, m: int, size_cap: int = H_COUNT_CAP) -> int:
    """Brute-force count of quadruples `(i, j, k, l)` with `k` within `m` of `i`,
    `l` within `m` of `j`, and the couples `{i, k}`, `{j, l}` exactly `s` apart.
    """
    if g.n > size_cap:
        raise SizeGuardError(g.n, size_cap)
    dist = all_pairs_distances(g)
    first, second = np.nonzero(dist <= m)
    total = 0
    for i, k in zip(first, second):
        gap = np.minimum.reduce(
            [dist[i, first], dist[i, second], dist[k, first], dist[k, second]]
        )
        total += int((gap == s).sum())
    return total


def average_path_length(g: Graph) -> float:
    """Mean distance over ordered pairs in the largest connected component."""
    if g.n == 0:
        raise ValueError("Graph has no units")
    _, labels = csgraph.connected_components(g.symmetric_adjacency, directed=False)
    members = np.flatnonzero(labels == np.argmax(np.bincount(labels)))
    size = len(members)
    if size == 1:
        warnings.warn(
            "Largest component is a single unit; average path length set to 0",
            NetexpWarning,
            stacklevel=2,
        )
        return 0.0

    component = Graph(g.symmetric_adjacency[members][:, members].tocsr())
    total = sum(float(dist.sum()) for _, dist in iter_distance_blocks(component))
    return total / (size * (size - 1))


def average_degree(g: Graph, view: str | None = None) -> float:
    """Mean degree; directed graphs default to out-degree."""
    if g.n == 0:
        return 0.0
    return float(g.degrees(view or "out").mean())


def common_friend_graph(g: Graph) -> Graph:
    """Link units sharing at least one friend but not directly connected."""
    a = g.adjacency
    two_step = (a @ a).tocsr()
    two_step.data[:] = 1.0
    b = (two_step - two_step.multiply(a)).tocsr()
    b = (b - sparse.diags(b.diagonal())).tocsr()
    b.eliminate_zeros()
    b.data[:] = 1.0
    b.sort_indices()
    return Graph(b, directed=g.directed)
