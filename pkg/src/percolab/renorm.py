"""Renormalization grid, main crossings of paths, and box coloring.

Space is partitioned into cubes of side N; each cube sits inside a large
cube of side 3N and is surrounded there by 2d rectangular boxes. A
self-avoiding path induces a sequence of edge-disjoint main box crossings,
at least ||endpoint||_inf / N of them. A box is black when no p-open path
crosses it from inner to outer boundary at exactly l1-geodesic length;
the probability that a cube fails this (is white) decays with N below the
oriented critical point and is estimated by Monte Carlo.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import partial
from itertools import product
from typing import Sequence

import numpy as np

from percolab._parallel import run_chunks
from percolab.lattice import BoxDomain, EdgeWeightField, derive_seed

__all__ = [
    "RenormGrid",
    "NBox",
    "Crossing",
    "CrossingSequence",
    "PnTable",
    "main_crossings",
    "box_is_black",
    "box_is_black_monotone_oracle",
    "estimate_pN",
]


@dataclass(frozen=True)
class NBox:
    """One of the 2d rectangular boxes surrounding cube k inside its large cube.

    Along `axis` the box spans the N sites between the cube face (sign
    +1/-1) and the far face of the large cube; in the other axes it spans
    the full large cube.
    """

    n: int
    dim: int
    cube: tuple[int, ...]
    axis: int
    sign: int

    def _ranges(self) -> list[tuple[int, int]]:
        n, k = self.n, self.cube
        out = []
        for j in range(self.dim):
            base = k[j] * n
            if j == self.axis:
                out.append((base + n, base + 2 * n - 1) if self.sign == 1 else (base - n, base - 1))
            else:
                out.append((base - n, base + 2 * n - 1))
        return out

    def contains(self, site: Sequence[int]) -> bool:
        return all(lo <= c <= hi for c, (lo, hi) in zip(site, self._ranges()))

    def _face_sites(self, axis_value: int) -> np.ndarray:
        spans = [
            [axis_value] if j == self.axis else list(range(lo, hi + 1))
            for j, (lo, hi) in enumerate(self._ranges())
        ]
        return np.array(list(product(*spans)), dtype=np.int64)

    def inner_boundary(self) -> np.ndarray:
        """Sites of the box face adjacent to the rest of the large cube."""
        lo, hi = self._ranges()[self.axis]
        return self._face_sites(lo if self.sign == 1 else hi)

    def outer_boundary(self) -> np.ndarray:
        """Sites just outside the box across its far face (part of the large-cube boundary)."""
        lo, hi = self._ranges()[self.axis]
        return self._face_sites(hi + 1 if self.sign == 1 else lo - 1)


@dataclass(frozen=True)
class RenormGrid:
    """Cube partition of side n and the derived large-cube/box geometry."""

    n: int
    dim: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("cube side must be positive")
        if self.dim < 1:
            raise ValueError("dim must be positive")

    def cube_of(self, site: Sequence[int]) -> tuple[int, ...]:
        """Coordinates of the cube containing `site` (an exact partition)."""
        return tuple(int(c) // self.n for c in site)

    def cubes_of(self, sites: np.ndarray) -> np.ndarray:
        return np.floor_divide(np.asarray(sites, dtype=np.int64), self.n)

    def in_large_cube(self, site: Sequence[int], cube: Sequence[int]) -> bool:
        return all(
            k * self.n - self.n <= int(c) <= k * self.n + 2 * self.n - 1
            for c, k in zip(site, cube)
        )

    def large_cube_exit_box(self, site, cube) -> tuple[int, int] | None:
        """The (axis, sign) of the box whose outer boundary contains `site`.

        None when the site is not on the large-cube boundary: the boundary
        is exactly the disjoint union of the 2d outer box faces.
        """
        n = self.n
        off_axis = None
        for j, (c, k) in enumerate(zip(site, cube)):
            lo, hi = k * n - n, k * n + 2 * n - 1
            if lo <= int(c) <= hi:
                continue
            if int(c) == hi + 1:
                found = (j, 1)
            elif int(c) == lo - 1:
                found = (j, -1)
            else:
                return None
            if off_axis is not None:
                return None
            off_axis = found
        return off_axis

    def boxes(self, cube: Sequence[int]) -> list[NBox]:
        cube = tuple(int(k) for k in cube)
        return [
            NBox(n=self.n, dim=self.dim, cube=cube, axis=axis, sign=sign)
            for axis in range(self.dim)
            for sign in (1, -1)
        ]


@dataclass
class Crossing:
    """A main crossing: the sub-path entering its box and reaching the outer face."""

    cube: tuple[int, ...]
    box: NBox
    start: int
    stop: int
    sites: np.ndarray

    def edges(self) -> set[frozenset]:
        return {
            frozenset((tuple(a), tuple(b))) for a, b in zip(self.sites[:-1], self.sites[1:])
        }


@dataclass
class CrossingSequence:
    """Cube-visit and main-cube sequences of a path, with its main crossings."""

    grid: RenormGrid
    sigma0: np.ndarray
    sigma1: np.ndarray
    main_indices: list[int]
    crossings: list[Crossing] = dc_field(default_factory=list)

    @property
    def main_cubes(self) -> np.ndarray:
        return self.sigma1[self.main_indices]

    @property
    def tau(self) -> int:
        return len(self.main_indices)

    def debug_dump(self) -> str:
        lines = []
        for c in self.crossings:
            k = " ".join(str(v) for v in c.cube)
            lines.append(f"{k},{c.box.axis}{'+' if c.box.sign == 1 else '-'},{len(c.sites) - 1}")
        return "\n".join(lines)


def _cube_visit_sequence(grid: RenormGrid, path: np.ndarray) -> np.ndarray:
    cubes = grid.cubes_of(path)
    keep = np.ones(len(cubes), dtype=bool)
    keep[1:] = (cubes[1:] != cubes[:-1]).any(axis=1)
    return cubes[keep]


def _loop_erase(sigma0: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Classical loop removal: revisiting a cube excises the loop since its first visit.

    Worked example (N-cube coordinates): (0,0) (1,0) (1,1) (0,1) (0,0) (0,-1)
    revisits (0,0), so the whole loop collapses and the result is
    (0,0) (0,-1). Returns the erased sequence and its indices into sigma0.
    """
    seq: list[tuple[int, ...]] = []
    positions: list[int] = []
    where: dict[tuple[int, ...], int] = {}
    for i, cube in enumerate(map(tuple, sigma0)):
        if cube in where:
            j = where[cube]
            for dropped in seq[j + 1 :]:
                del where[dropped]
            del seq[j + 1 :]
            del positions[j + 1 :]
        else:
            where[cube] = len(seq)
            seq.append(cube)
            positions.append(i)
    return np.array(seq, dtype=np.int64), positions


def main_crossings(path, grid: RenormGrid) -> CrossingSequence:
    """Extract the main cubes and their edge-disjoint box crossings from a path.

    The path must be a self-avoiding nearest-neighbor walk starting at the
    origin. Main cubes are picked from the loop-erased cube-visit sequence
    by skipping ahead while staying within sup-distance 1; each main cube
    whose large cube the path leaves contributes one box crossing.
    """
    path = np.asarray(path, dtype=np.int64)
    if path.ndim != 2 or path.shape[1] != grid.dim:
        raise ValueError("path must be a (length, dim) array of sites")
    if (path[0] != 0).any():
        raise ValueError("path must start at the origin")
    if len({tuple(s) for s in path}) != len(path):
        raise ValueError("path has a double point")
    if len(path) > 1 and (np.abs(np.diff(path, axis=0)).sum(axis=1) != 1).any():
        raise ValueError("path is not a nearest-neighbor walk")

    sigma0 = _cube_visit_sequence(grid, path)
    sigma1, _ = _loop_erase(sigma0)

    # skip ahead while within sup-distance 1 of the current main cube; the
    # entry just before the jump past 1 is the next main cube
    main: list[int] = [0]
    while True:
        cur = sigma1[main[-1]]
        jump = None
        for j in range(main[-1] + 1, len(sigma1)):
            if np.abs(sigma1[j] - cur).max() > 1:
                jump = j
                break
        if jump is None:
            break
        main.append(jump - 1)
    # always keep the terminal cube: the no-jump termination leaves it at
    # sup-distance exactly 1 from the last pick, so the consecutive-step
    # property survives and tau*N strictly exceeds the endpoint sup-norm
    if main[-1] != len(sigma1) - 1:
        main.append(len(sigma1) - 1)

    seq = CrossingSequence(grid=grid, sigma0=sigma0, sigma1=sigma1, main_indices=main)

    # crossings are carved out sequentially: each cube's entry is sought at
    # or after the previous crossing's exit, so the index intervals are
    # disjoint, and on a self-avoiding path interval-disjoint means
    # edge-disjoint
    path_tuples = [tuple(s) for s in path]
    cubes_per_site = grid.cubes_of(path)
    cursor = 0
    for mi in main:
        cube = tuple(sigma1[mi])
        entries = np.flatnonzero((cubes_per_site[cursor:] == cube).all(axis=1))
        if entries.size == 0:
            continue
        z_idx = cursor + int(entries[0])
        exit_box = None
        j_f = None
        for j in range(z_idx + 1, len(path)):
            hit = grid.large_cube_exit_box(path_tuples[j], cube)
            if hit is not None:
                exit_box = hit
                j_f = j
                break
        if exit_box is None:
            continue  # path never leaves this large cube
        box = NBox(n=grid.n, dim=grid.dim, cube=cube, axis=exit_box[0], sign=exit_box[1])
        j_0 = None
        for j in range(j_f - 1, z_idx - 1, -1):
            if not box.contains(path_tuples[j]):
                j_0 = j
                break
        seq.crossings.append(
            Crossing(
                cube=cube,
                box=box,
                start=j_0 + 1,
                stop=j_f,
                sites=path[j_0 + 1 : j_f + 1].copy(),
            )
        )
        cursor = j_f
    return seq


def _all_box_sites(box: NBox) -> np.ndarray:
    spans = [list(range(lo, hi + 1)) for lo, hi in box._ranges()]
    return np.array(list(product(*spans)), dtype=np.int64)


def _open_edges_of_region(field: EdgeWeightField, p: float, region: set) -> set:
    """Keys (lower_site, axis) of the p-open edges with both ends in the region."""
    domain = field.domain
    sites_arr = np.array(sorted(region), dtype=np.int64)
    idx = domain.indices_of(sites_arr)
    open_keys = set()
    for axis in range(domain.dim):
        w = field.weights_grid(axis)[idx]
        for s, wv in zip(map(tuple, sites_arr), w):
            if wv > p:
                continue
            upper = list(s)
            upper[axis] += 1
            if tuple(upper) in region:
                open_keys.add((s, axis))
    return open_keys


def _neighbors(site: tuple, dim: int):
    for axis in range(dim):
        for sign in (1, -1):
            nbr = list(site)
            nbr[axis] += sign
            lower = site if sign == 1 else tuple(nbr)
            yield tuple(nbr), (tuple(lower), axis)


def box_is_black(field: EdgeWeightField, p: float, box: NBox) -> bool:
    """True when no p-open inner-to-outer crossing of exact l1-geodesic length exists.

    Checked by breadth-first search from each inner-boundary site through
    the open edges of the box, comparing the restricted distance with the
    l1 distance. Expansion is limited to sites reached at exactly their l1
    distance from the source: every prefix of a geodesic witness is itself
    geodesic, so the restriction is exact. Early exit on the first witness.
    """
    dim = field.domain.dim
    box_sites = {tuple(s) for s in _all_box_sites(box)}
    outer = {tuple(s) for s in box.outer_boundary()}
    region = box_sites | outer
    open_keys = _open_edges_of_region(field, p, region)

    for y in map(tuple, box.inner_boundary()):
        visited = {y}
        frontier = [y]
        level = 0
        while frontier:
            level += 1
            nxt = []
            for x in frontier:
                for nbr, key in _neighbors(x, dim):
                    if nbr in visited or key not in open_keys:
                        continue
                    if sum(abs(a - b) for a, b in zip(nbr, y)) != level:
                        continue
                    if nbr in outer:
                        return False
                    if nbr in box_sites:
                        visited.add(nbr)
                        nxt.append(nbr)
            frontier = nxt
    return True


def box_is_black_monotone_oracle(field: EdgeWeightField, p: float, box: NBox) -> bool:
    """Independent cross-check: dynamic programming over coordinate-monotone paths.

    A crossing of exact l1-geodesic length moves monotonically: always
    toward the outer face along the box axis, and with one fixed sign in
    every other axis. Sweeping each sign pattern marks the monotone-open
    reachable set; the box is white exactly when some sweep reaches the
    outer face.
    """
    dim = field.domain.dim
    box_sites = {tuple(s) for s in _all_box_sites(box)}
    outer = {tuple(s) for s in box.outer_boundary()}
    region = box_sites | outer
    open_keys = _open_edges_of_region(field, p, region)
    inner = {tuple(s) for s in box.inner_boundary()}

    other_axes = [j for j in range(dim) if j != box.axis]
    for signs in product((1, -1), repeat=len(other_axes)):
        step_dirs = [(box.axis, box.sign)] + [
            (axis, sign) for axis, sign in zip(other_axes, signs)
        ]
        order = sorted(
            region,
            key=lambda s: sum(sgn * s[axis] for axis, sgn in step_dirs),
        )
        reached = set()
        for site in order:
            if site in inner:
                reached.add(site)
                continue
            for axis, sgn in step_dirs:
                prev = list(site)
                prev[axis] -= sgn
                prev = tuple(prev)
                if prev not in reached:
                    continue
                lower = prev if sgn == 1 else site
                if (lower, axis) in open_keys:
                    reached.add(site)
                    break
        if reached & outer:
            return False
    return True


@dataclass
class PnTable:
    """Estimated probability that the origin cube is white, per cube side N."""

    p: float
    dim: int
    replicas: int
    n_values: list[int]
    p_white: list[float]
    ci: list[float]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("N,p_white,ci,replicas\n")
            for n, pw, ci in zip(self.n_values, self.p_white, self.ci):
                fh.write(f"{n},{pw:.10g},{ci:.10g},{self.replicas}\n")


def _pn_chunk(start, stop, p, n, dim, seed):
    domain = BoxDomain(dim=dim, half_width=2 * n + 1)
    grid = RenormGrid(n=n, dim=dim)
    boxes = grid.boxes((0,) * dim)
    white = 0
    for rep in range(start, stop):
        f = EdgeWeightField(seed=derive_seed(seed, n, rep), domain=domain)
        if any(not box_is_black(f, p, box) for box in boxes):
            white += 1
    return white


def estimate_pN(
    p: float,
    n_values: Sequence[int],
    replicas: int,
    seed: int,
    dim: int = 2,
    workers: int = 1,
) -> PnTable:
    """Monte Carlo estimate of the white-cube probability for each cube side.

    The origin cube is white when any of its 2d surrounding boxes is white.
    Replica streams derive from (seed, N, replica).
    """
    if replicas < 1:
        raise ValueError("replicas must be positive")
    n_values = [int(n) for n in n_values]
    p_white = []
    ci = []
    for n in n_values:
        fn = partial(_pn_chunk, p=p, n=n, dim=dim, seed=seed)
        white = sum(run_chunks(fn, replicas, workers))
        rate = white / replicas
        p_white.append(rate)
        ci.append(1.96 * float(np.sqrt(rate * (1.0 - rate) / replicas)))
    return PnTable(
        p=p, dim=dim, replicas=replicas, n_values=n_values, p_white=p_white, ci=ci
    )
