"""Finite-box lattice geometry and deterministic uniform edge weights.

Sites are the integer points x with ||x||_inf <= half_width; edges join
nearest neighbors, with edges leaving the box simply absent.  Edge weights
are uniform on [0, 1), derived lazily from a 64-bit seed and the geometric
identity of the edge, so the same edge gets the same weight in any box and
one weight field couples every percolation parameter p at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "BoxDomain",
    "DomainError",
    "EdgeId",
    "EdgeWeightField",
    "derive_seed",
    "mix64",
    "p_boundary",
]

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MULT_A = 0xBF58476D1CE4E5B9
_MULT_B = 0x94D049BB133111EB

_U_MULT_A = np.uint64(_MULT_A)
_U_MULT_B = np.uint64(_MULT_B)
_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U11 = np.uint64(11)
_INV_2_53 = 2.0 ** -53


class DomainError(ValueError):
    """A site or edge lies outside the box domain."""


def mix64(z: int) -> int:
    """SplitMix64 finalizer: a 64-bit avalanche mixer."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MULT_A) & _MASK64
    z = ((z ^ (z >> 27)) * _MULT_B) & _MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U30)) * _U_MULT_A
    z = (z ^ (z >> _U27)) * _U_MULT_B
    return z ^ (z >> _U31)


def derive_seed(*parts: int) -> int:
    """Fold integers into a child seed; used for replica and cell streams."""
    h = _GOLDEN
    for part in parts:
        h = mix64(h ^ (int(part) & _MASK64))
    return h


@dataclass(frozen=True)
class BoxDomain:
    """The box of sites x with ||x||_inf <= half_width in Z^dim.

    Sites and in-box edges carry dense row-major indices (first coordinate
    slowest).  Index round-trips are exact.
    """

    dim: int
    half_width: int

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if self.half_width < 1:
            raise ValueError("half_width must be a positive integer")
        side = 2 * self.half_width + 1
        strides = np.array(
            [side ** (self.dim - 1 - j) for j in range(self.dim)], dtype=np.int64
        )
        object.__setattr__(self, "_strides", strides)
        object.__setattr__(self, "_cache", {})

    @property
    def side(self) -> int:
        return 2 * self.half_width + 1

    @property
    def n_sites(self) -> int:
        return self.side ** self.dim

    @property
    def strides(self) -> np.ndarray:
        return self._strides

    def contains(self, site: Sequence[int]) -> bool:
        return len(site) == self.dim and all(abs(int(c)) <= self.half_width for c in site)

    def site_index(self, site: Sequence[int]) -> int:
        if not self.contains(site):
            raise DomainError(f"site {tuple(site)} outside box of half-width {self.half_width}")
        idx = 0
        for c, s in zip(site, self._strides):
            idx += (int(c) + self.half_width) * int(s)
        return idx

    def site_coords(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.n_sites:
            raise DomainError(f"site index {index} out of range")
        out = []
        for s in self._strides:
            q, index = divmod(index, int(s))
            out.append(q - self.half_width)
        return tuple(out)

    def coords_of(self, indices: np.ndarray) -> np.ndarray:
        """Vectorized index -> coordinates, shape (k, dim)."""
        rem = np.asarray(indices, dtype=np.int64)
        cols = np.empty((rem.shape[0], self.dim), dtype=np.int64)
        for j, s in enumerate(self._strides):
            cols[:, j] = rem // s - self.half_width
            rem = rem % s
        return cols

    def indices_of(self, coords: np.ndarray) -> np.ndarray:
        """Vectorized coordinates (k, dim) -> indices."""
        coords = np.asarray(coords, dtype=np.int64)
        return (coords + self.half_width) @ self._strides

    def axis_coord(self, indices: np.ndarray, axis: int) -> np.ndarray:
        s = int(self._strides[axis])
        return (np.asarray(indices, dtype=np.int64) // s) % self.side - self.half_width

    def axis_coord_table(self, axis: int) -> np.ndarray:
        """Cached per-site coordinate along `axis` (int16), for hot neighbor loops."""
        key = ("ctab", axis)
        cached = self._cache.get(key)
        if cached is None:
            idx = np.arange(self.n_sites, dtype=np.int64)
            cached = self.axis_coord(idx, axis).astype(np.int16)
            self._cache[key] = cached
        return cached

    def boundary_mask(self) -> np.ndarray:
        """Boolean mask of sites on the box surface (some |coord| == half_width)."""
        cached = self._cache.get("boundary")
        if cached is None:
            idx = np.arange(self.n_sites, dtype=np.int64)
            cached = np.zeros(self.n_sites, dtype=bool)
            for axis in range(self.dim):
                c = self.axis_coord(idx, axis)
                cached |= np.abs(c) == self.half_width
            self._cache["boundary"] = cached
        return cached

    def l1_norms(self) -> np.ndarray:
        """Per-site ||x||_1, indexed densely."""
        cached = self._cache.get("l1")
        if cached is None:
            idx = np.arange(self.n_sites, dtype=np.int64)
            cached = np.zeros(self.n_sites, dtype=np.int64)
            for axis in range(self.dim):
                cached += np.abs(self.axis_coord(idx, axis))
            self._cache["l1"] = cached
        return cached

    def edge_lower_indices(self, axis: int) -> np.ndarray:
        """Indices of the lower endpoints of every in-box edge along `axis`."""
        idx = np.arange(self.n_sites, dtype=np.int64)
        return idx[self.axis_coord(idx, axis) < self.half_width]

    @property
    def n_edges(self) -> int:
        return self.dim * (self.side - 1) * self.side ** (self.dim - 1)


@dataclass(frozen=True, order=True)
class EdgeId:
    """Canonical identity of a lattice edge: lexicographically lower endpoint plus axis.

    Both orientations of an edge map to the same EdgeId.
    """

    lower: tuple[int, ...]
    axis: int

    @classmethod
    def from_endpoints(cls, a: Sequence[int], b: Sequence[int]) -> "EdgeId":
        a = tuple(int(c) for c in a)
        b = tuple(int(c) for c in b)
        if len(a) != len(b):
            raise ValueError("endpoints have different dimensions")
        diffs = [j for j in range(len(a)) if a[j] != b[j]]
        if len(diffs) != 1 or abs(a[diffs[0]] - b[diffs[0]]) != 1:
            raise ValueError(f"{a} and {b} are not nearest neighbors")
        axis = diffs[0]
        lower = a if a[axis] < b[axis] else b
        return cls(lower=lower, axis=axis)

    @property
    def upper(self) -> tuple[int, ...]:
        u = list(self.lower)
        u[self.axis] += 1
        return tuple(u)


@dataclass(frozen=True)
class EdgeWeightField:
    """Immutable uniform-[0,1) weights on the edges of a box, hashed from a seed.

    The weight of an edge is a pure function of (seed, EdgeId): nothing is
    stored, any sub-box re-derives identical values, and the field is safe
    to read from any number of workers.
    """

    seed: int
    domain: BoxDomain

    def __post_init__(self) -> None:
        object.__setattr__(self, "_grid_cache", {})

    def _axis_key(self, axis: int) -> int:
        return mix64(mix64((self.seed & _MASK64) ^ _GOLDEN) ^ axis)

    def weight(self, edge: EdgeId) -> float:
        if not (self.domain.contains(edge.lower) and self.domain.contains(edge.upper)):
            raise DomainError(f"edge {edge} outside domain")
        h = self._axis_key(edge.axis)
        for c in edge.lower:
            h = mix64(h ^ (c & _MASK64))
        return (h >> 11) * _INV_2_53

    def is_open(self, edge: EdgeId, p: float) -> bool:
        return self.weight(edge) <= p

    def _weights_cols(self, cols: list[np.ndarray], axis: int) -> np.ndarray:
        """Weights for edges given per-coordinate arrays of the lower endpoint."""
        h = np.full(cols[0].shape, self._axis_key(axis), dtype=np.uint64)
        for c in cols:
            h = _mix64_array(h ^ c.astype(np.uint64))
        return (h >> _U11).astype(np.float64) * _INV_2_53

    def weights_lower(self, lower_indices: np.ndarray, axis: int) -> np.ndarray:
        """Vectorized weights for the edges with these dense lower-endpoint indices."""
        coords = self.domain.coords_of(lower_indices)
        return self._weights_cols([coords[:, j] for j in range(self.domain.dim)], axis)

    def weights_grid(self, axis: int) -> np.ndarray:
        """Weights of every edge along `axis`, indexed by the lower endpoint's site index.

        Entries whose lower endpoint sits on the far face (no in-box edge along
        `axis`) are still populated but meaningless; callers never read them.
        Cached per axis: the coordinate folds broadcast one grid dimension at a
        time, so the table costs little more than one pass over the box.
        """
        cached = self._grid_cache.get(axis)
        if cached is None:
            dom = self.domain
            lane = np.arange(-dom.half_width, dom.half_width + 1, dtype=np.int64).astype(
                np.uint64
            )
            acc = np.uint64(self._axis_key(axis))
            for _ in range(dom.dim):
                acc = _mix64_array(acc[..., None] ^ lane) if np.ndim(acc) else _mix64_array(
                    acc ^ lane
                )
            cached = (acc >> _U11).astype(np.float64).ravel() * _INV_2_53
            self._grid_cache[axis] = cached
        return cached


def open_neighbors(field: EdgeWeightField, p: float, indices: np.ndarray) -> np.ndarray:
    """Sorted unique indices reachable from `indices` across one p-open in-box edge.

    The result may intersect `indices`; callers subtract what they need.
    """
    domain = field.domain
    if indices.size == 0:
        return indices[:0]
    coords = domain.coords_of(indices)
    L = domain.half_width
    parts = []
    for axis in range(domain.dim):
        stride = int(domain.strides[axis])
        c = coords[:, axis]
        # step +axis: this site is the lower endpoint
        m = c < L
        if m.any():
            cols = [coords[m, j] for j in range(domain.dim)]
            w = field._weights_cols(cols, axis)
            parts.append(indices[m][w <= p] + stride)
        # step -axis: the neighbor is the lower endpoint
        m = c > -L
        if m.any():
            cols = [coords[m, j] - (1 if j == axis else 0) for j in range(domain.dim)]
            w = field._weights_cols(cols, axis)
            parts.append(indices[m][w <= p] - stride)
    if not parts:
        return indices[:0]
    return np.unique(np.concatenate(parts))


def p_boundary(field: EdgeWeightField, p: float, sites: Iterable[Sequence[int]]) -> set[tuple[int, ...]]:
    """Sites outside A joined to A by a p-open in-box edge.

    Realizes the random boundary operator on the shared weight field: the
    same call with larger p can only grow the result.
    """
    domain = field.domain
    site_list = [tuple(int(c) for c in s) for s in sites]
    for s in site_list:
        if not domain.contains(s):
            raise DomainError(f"site {s} outside domain")
    if not site_list:
        return set()
    idx = np.fromiter(
        (domain.site_index(s) for s in site_list), dtype=np.int64, count=len(site_list)
    )
    out = open_neighbors(field, p, np.unique(idx))
    inside = np.isin(out, idx, assume_unique=True)
    return {domain.site_coords(int(i)) for i in out[~inside]}
