"""Single-parameter Bernoulli percolation analytics on a weight field.

Opening every edge with weight <= p yields the percolation subgraph; this
module computes its clusters, the chemical distance from a source (graph
distance through open edges), and Monte Carlo tail statistics for the radius
of finite clusters and for holes around the origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import partial
from typing import Sequence

import numpy as np

from percolab._parallel import run_chunks
from percolab.lattice import BoxDomain, DomainError, EdgeWeightField, derive_seed

__all__ = [
    "UNREACHABLE",
    "ClusterLabeling",
    "DistanceField",
    "TailTable",
    "chemical_distance_field",
    "clusters",
    "tail_statistics",
]

UNREACHABLE = -1


def _open_frontier_step(
    field: EdgeWeightField,
    p: float,
    frontier: np.ndarray,
    blocked: np.ndarray,
) -> np.ndarray:
    """One synchronous expansion: unique new sites across p-open edges.

    `blocked` is a boolean mask of sites that must not be emitted (already
    visited, colored, ...). Unvisited neighbors are filtered before hashing
    so each open edge is effectively examined once per traversal.
    """
    domain = field.domain
    L = domain.half_width
    parts = []
    for axis in range(domain.dim):
        stride = int(domain.strides[axis])
        ctab = domain.axis_coord_table(axis)
        grid = field.weights_grid(axis)
        c = ctab[frontier]
        for sign in (1, -1):
            m = (c < L) if sign == 1 else (c > -L)
            cand = frontier[m] + sign * stride
            cand = cand[~blocked[cand]]
            lower = cand - stride if sign == 1 else cand
            cand = cand[grid[lower] <= p]
            if cand.size:
                parts.append(cand)
    if not parts:
        return frontier[:0]
    return np.unique(np.concatenate(parts))


def reached_set(field: EdgeWeightField, p: float, source_indices: np.ndarray) -> np.ndarray:
    """Boolean mask of all sites joined to the sources by p-open paths."""
    visited = np.zeros(field.domain.n_sites, dtype=bool)
    frontier = np.unique(np.asarray(source_indices, dtype=np.int64))
    visited[frontier] = True
    while frontier.size:
        frontier = _open_frontier_step(field, p, frontier, visited)
        visited[frontier] = True
    return visited


@dataclass
class DistanceField:
    """Chemical distances from one source at parameter p over a box.

    `distances[i]` is the open-graph distance from the source to site i,
    or UNREACHABLE (-1) when no p-open path exists.
    """

    domain: BoxDomain
    source: tuple[int, ...]
    p: float
    distances: np.ndarray

    def distance(self, site: Sequence[int]) -> int:
        return int(self.distances[self.domain.site_index(site)])

    @property
    def reachable_mask(self) -> np.ndarray:
        return self.distances >= 0

    def ball_mask(self, t: int) -> np.ndarray:
        """Sites within chemical distance t of the source."""
        return (self.distances >= 0) & (self.distances <= t)


def chemical_distance_field(
    field: EdgeWeightField, p: float, source: Sequence[int]
) -> DistanceField:
    """Breadth-first chemical distances from `source` through p-open edges."""
    domain = field.domain
    src = domain.site_index(source)  # raises DomainError outside the box
    dist = np.full(domain.n_sites, UNREACHABLE, dtype=np.int32)
    dist[src] = 0
    visited = np.zeros(domain.n_sites, dtype=bool)
    visited[src] = True
    frontier = np.array([src], dtype=np.int64)
    level = 0
    while frontier.size:
        level += 1
        frontier = _open_frontier_step(field, p, frontier, visited)
        visited[frontier] = True
        dist[frontier] = level
    return DistanceField(domain=domain, source=tuple(int(c) for c in source), p=p, distances=dist)


@dataclass
class ClusterLabeling:
    """Partition of the box into p-open clusters.

    Labels are consecutive from 0; `touches_boundary[k]` flags clusters
    meeting the box surface, the finite-box stand-in for the unbounded
    cluster.
    """

    domain: BoxDomain
    p: float
    labels: np.ndarray
    sizes: np.ndarray
    touches_boundary: np.ndarray

    @property
    def n_clusters(self) -> int:
        return int(self.sizes.shape[0])

    def label_of(self, site: Sequence[int]) -> int:
        return int(self.labels[self.domain.site_index(site)])

    def same_cluster(self, a: Sequence[int], b: Sequence[int]) -> bool:
        return self.label_of(a) == self.label_of(b)

    @property
    def quasi_infinite_site_mask(self) -> np.ndarray:
        """Per-site flag: belongs to a boundary-touching cluster."""
        return self.touches_boundary[self.labels]


def clusters(field: EdgeWeightField, p: float) -> ClusterLabeling:
    """Union-find cluster labeling over the p-open edges of the box."""
    domain = field.domain
    n = domain.n_sites
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for axis in range(domain.dim):
        stride = int(domain.strides[axis])
        lows = domain.edge_lower_indices(axis)
        ws = field.weights_grid(axis)[lows]
        for i in lows[ws <= p]:
            ra, rb = find(int(i)), find(int(i) + stride)
            if ra != rb:
                parent[rb] = ra

    roots = np.fromiter((find(i) for i in range(n)), dtype=np.int64, count=n)
    uniq, labels = np.unique(roots, return_inverse=True)
    sizes = np.bincount(labels, minlength=uniq.size)
    touches = np.zeros(uniq.size, dtype=bool)
    touches[np.unique(labels[domain.boundary_mask()])] = True
    return ClusterLabeling(
        domain=domain,
        p=p,
        labels=labels.astype(np.int32),
        sizes=sizes,
        touches_boundary=touches,
    )


@dataclass
class TailTable:
    """Replica-averaged tail estimates per queried radius."""

    p: float
    dim: int
    half_width: int
    replicas: int
    radii: list[int]
    radius_tail: list[float]
    radius_ci: list[float]
    hole_tail: list[float]
    hole_ci: list[float]
    radius_counts: list[int] = dc_field(default_factory=list)
    hole_counts: list[int] = dc_field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("r,radius_tail,radius_ci,hole_tail,hole_ci,replicas\n")
            for i, r in enumerate(self.radii):
                fh.write(
                    f"{r},{self.radius_tail[i]:.10g},{self.radius_ci[i]:.10g},"
                    f"{self.hole_tail[i]:.10g},{self.hole_ci[i]:.10g},{self.replicas}\n"
                )


def _tail_chunk(start, stop, p, radii, dim, half_width, seed):
    domain = BoxDomain(dim=dim, half_width=half_width)
    boundary_idx = np.flatnonzero(domain.boundary_mask())
    l1 = domain.l1_norms()
    origin = domain.site_index((0,) * dim)
    radii_arr = np.asarray(radii)
    radius_counts = np.zeros(len(radii), dtype=np.int64)
    hole_counts = np.zeros(len(radii), dtype=np.int64)
    for rep in range(start, stop):
        f = EdgeWeightField(seed=derive_seed(seed, rep), domain=domain)
        from_boundary = reached_set(f, p, boundary_idx)
        if from_boundary.any():
            min_q = l1[from_boundary].min()
            hole_counts += min_q > radii_arr
        else:
            hole_counts += 1
        if not from_boundary[origin]:
            # the origin cluster is finite here by construction, and small
            # in practice, so exploring it is cheap
            own = reached_set(f, p, np.array([origin]))
            radius_counts += l1[own].max() >= radii_arr
    return radius_counts, hole_counts


def tail_statistics(
    p: float,
    radii: Sequence[int],
    replicas: int,
    seed: int,
    dim: int = 2,
    half_width: int | None = None,
    workers: int = 1,
) -> TailTable:
    """Monte Carlo tails: radius of the finite origin cluster, and holes.

    Per replica, `radius` counts the event that the origin cluster avoids
    the box surface yet reaches l1 distance r, and `hole` the event that no
    surface-touching cluster enters the l1 ball of radius r. Replica
    streams derive from (seed, replica) so any worker split merges to the
    same counts.
    """
    radii = [int(r) for r in radii]
    if replicas < 1:
        raise ValueError("replicas must be positive")
    if not radii or any(r <= 0 for r in radii) or any(
        b <= a for a, b in zip(radii, radii[1:])
    ):
        raise ValueError("radii must be strictly increasing positive integers")
    if half_width is None:
        half_width = 3 * max(radii)
    if half_width <= max(radii) + 1:
        raise ValueError("box half-width must exceed the largest radius plus margin")

    fn = partial(
        _tail_chunk, p=p, radii=radii, dim=dim, half_width=half_width, seed=seed
    )
    partials = run_chunks(fn, replicas, workers)
    radius_counts = sum(pc[0] for pc in partials)
    hole_counts = sum(pc[1] for pc in partials)

    def _rate_ci(counts):
        rate = counts / replicas
        ci = 1.96 * np.sqrt(rate * (1.0 - rate) / replicas)
        return list(rate), list(ci)

    radius_tail, radius_ci = _rate_ci(radius_counts)
    hole_tail, hole_ci = _rate_ci(hole_counts)
    return TailTable(
        p=p,
        dim=dim,
        half_width=half_width,
        replicas=replicas,
        radii=radii,
        radius_tail=radius_tail,
        radius_ci=radius_ci,
        hole_tail=hole_tail,
        hole_ci=hole_ci,
        radius_counts=[int(c) for c in radius_counts],
        hole_counts=[int(c) for c in hole_counts],
    )
