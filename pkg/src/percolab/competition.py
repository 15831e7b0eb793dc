"""Two-type synchronous competition growth on a box.

Yellow spreads from its active sites with parameter p, blue with q >= p,
through the shared uniform edge-weight field: an edge transmits yellow when
its weight is <= p and blue when <= q, so a green (doubly infected) site
needs no extra randomness. Active sites turn passive after one step and
colored sites never change color.

Two constructions of the same Markov chain live here: `step_field` evolves
the four frontier/colored site sets directly from a weight field, while
`step_sampled` draws every site's next state from the local transition
distributions. They agree in law; the sampled form exists for that
equivalence check and for small-instance work.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

from percolab.lattice import BoxDomain, DomainError, EdgeWeightField

__all__ = [
    "SiteState",
    "CompetitionParams",
    "Configuration",
    "CompetitionState",
    "RunSummary",
    "local_transition_distribution",
    "step_sampled",
    "step_field",
    "run_competition",
    "snapshot_grid",
]


class SiteState(IntEnum):
    EMPTY = 0
    Y_ACTIVE = 1
    B_ACTIVE = 2
    G_ACTIVE = 3
    Y_PASSIVE = 4
    B_PASSIVE = 5
    G_PASSIVE = 6


_PASSIVE_SHIFT = 3  # active code + 3 = passive code


@dataclass(frozen=True)
class CompetitionParams:
    """Infection parameters and sources; p drives yellow (weaker), q blue."""

    p: float
    q: float
    s1: tuple[int, ...]
    s2: tuple[int, ...]

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= self.q <= 1.0:
            raise ValueError("require 0 <= p <= q <= 1")
        s1 = tuple(int(c) for c in self.s1)
        s2 = tuple(int(c) for c in self.s2)
        if s1 == s2:
            raise ValueError("sources must be distinct")
        object.__setattr__(self, "s1", s1)
        object.__setattr__(self, "s2", s2)


@dataclass
class Configuration:
    """Explicit per-site states over a box, plus the step counter."""

    domain: BoxDomain
    states: np.ndarray
    time: int = 0

    @classmethod
    def empty(cls, domain: BoxDomain) -> "Configuration":
        return cls(domain=domain, states=np.zeros(domain.n_sites, dtype=np.int8), time=0)

    @classmethod
    def two_sources(cls, domain: BoxDomain, s1, s2) -> "Configuration":
        cfg = cls.empty(domain)
        cfg.states[domain.site_index(s1)] = SiteState.Y_ACTIVE
        cfg.states[domain.site_index(s2)] = SiteState.B_ACTIVE
        return cfg

    def site_state(self, site: Sequence[int]) -> SiteState:
        return SiteState(int(self.states[self.domain.site_index(site)]))

    def copy(self) -> "Configuration":
        return Configuration(domain=self.domain, states=self.states.copy(), time=self.time)


def _active_neighbor_counts(config: Configuration) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-site counts of active yellow / blue / green neighbors."""
    domain = config.domain
    shape = (domain.side,) * domain.dim
    grid = config.states.reshape(shape)
    counts = []
    for code in (SiteState.Y_ACTIVE, SiteState.B_ACTIVE, SiteState.G_ACTIVE):
        mask = (grid == int(code)).astype(np.int8)
        out = np.zeros(shape, dtype=np.int8)
        for axis in range(domain.dim):
            lo = tuple(slice(None, -1) if a == axis else slice(None) for a in range(domain.dim))
            hi = tuple(slice(1, None) if a == axis else slice(None) for a in range(domain.dim))
            out[lo] += mask[hi]
            out[hi] += mask[lo]
        counts.append(out.ravel())
    return counts[0], counts[1], counts[2]


def _empty_site_probs(n_y, n_b, n_g, p: float, q: float):
    """Next-state law of an empty site given its active neighbor counts."""
    stay = (1.0 - q) ** (n_b + n_g) * (1.0 - p) ** n_y
    to_y = (1.0 - q) ** (n_b + n_g) * (1.0 - (1.0 - p) ** n_y)
    to_b = (1.0 - (1.0 - q) ** n_b) * (1.0 - p) ** (n_y + n_g) + (1.0 - q) ** n_b * (
        1.0 - p
    ) ** n_y * (1.0 - (1.0 - q + p) ** n_g)
    to_g = 1.0 - stay - to_y - to_b
    return stay, to_y, to_b, to_g


def local_transition_distribution(
    config: Configuration, site: Sequence[int], params: CompetitionParams
) -> dict[SiteState, float]:
    """Exact one-site transition law at `site` in the given configuration."""
    state = config.site_state(site)
    if state in (SiteState.Y_ACTIVE, SiteState.B_ACTIVE, SiteState.G_ACTIVE):
        return {SiteState(int(state) + _PASSIVE_SHIFT): 1.0}
    if state != SiteState.EMPTY:
        return {state: 1.0}
    domain = config.domain
    n = {SiteState.Y_ACTIVE: 0, SiteState.B_ACTIVE: 0, SiteState.G_ACTIVE: 0}
    site = tuple(int(c) for c in site)
    for axis in range(domain.dim):
        for sign in (1, -1):
            nbr = list(site)
            nbr[axis] += sign
            if domain.contains(nbr):
                s = config.site_state(nbr)
                if s in n:
                    n[s] += 1
    stay, to_y, to_b, to_g = _empty_site_probs(
        n[SiteState.Y_ACTIVE], n[SiteState.B_ACTIVE], n[SiteState.G_ACTIVE], params.p, params.q
    )
    return {
        SiteState.EMPTY: stay,
        SiteState.Y_ACTIVE: to_y,
        SiteState.B_ACTIVE: to_b,
        SiteState.G_ACTIVE: to_g,
    }


def step_sampled(
    config: Configuration, params: CompetitionParams, rng: np.random.Generator
) -> Configuration:
    """One synchronous step, every site drawn from its local transition law."""
    n_y, n_b, n_g = _active_neighbor_counts(config)
    stay, to_y, to_b, _ = _empty_site_probs(
        n_y.astype(np.float64), n_b.astype(np.float64), n_g.astype(np.float64), params.p, params.q
    )
    u = rng.random(config.domain.n_sites)
    drawn = np.full(config.domain.n_sites, int(SiteState.G_ACTIVE), dtype=np.int8)
    drawn[u < stay + to_y + to_b] = int(SiteState.B_ACTIVE)
    drawn[u < stay + to_y] = int(SiteState.Y_ACTIVE)
    drawn[u < stay] = int(SiteState.EMPTY)

    states = config.states
    out = states.copy()
    out[states == SiteState.EMPTY] = drawn[states == SiteState.EMPTY]
    was_active = (states >= SiteState.Y_ACTIVE) & (states <= SiteState.G_ACTIVE)
    out[was_active] = states[was_active] + _PASSIVE_SHIFT
    return Configuration(domain=config.domain, states=out, time=config.time + 1)


@dataclass
class CompetitionState:
    """Evolving sets of the field construction: frontiers, colors, entry times.

    color codes: 0 empty, 1 yellow, 2 blue, 3 green. Active frontiers are
    index arrays; green actives appear in both. Entry times are -1 until a
    site is colored.
    """

    domain: BoxDomain
    color: np.ndarray
    active_y: np.ndarray
    active_b: np.ndarray
    t_y: np.ndarray
    t_b: np.ndarray
    time: int = 0

    @classmethod
    def initial(cls, domain: BoxDomain, params: CompetitionParams) -> "CompetitionState":
        i1 = domain.site_index(params.s1)
        i2 = domain.site_index(params.s2)
        color = np.zeros(domain.n_sites, dtype=np.int8)
        color[i1] = 1
        color[i2] = 2
        t_y = np.full(domain.n_sites, -1, dtype=np.int32)
        t_b = np.full(domain.n_sites, -1, dtype=np.int32)
        t_y[i1] = 0
        t_b[i2] = 0
        return cls(
            domain=domain,
            color=color,
            active_y=np.array([i1], dtype=np.int64),
            active_b=np.array([i2], dtype=np.int64),
            t_y=t_y,
            t_b=t_b,
            time=0,
        )

    @property
    def yellow_mask(self) -> np.ndarray:
        """All yellow-or-green sites (the weaker infection's colored set)."""
        return (self.color == 1) | (self.color == 3)

    @property
    def blue_mask(self) -> np.ndarray:
        return (self.color == 2) | (self.color == 3)

    @property
    def green_mask(self) -> np.ndarray:
        return self.color == 3

    def _as_sites(self, indices: Iterable[int]) -> frozenset:
        return frozenset(self.domain.site_coords(int(i)) for i in indices)

    def active_sites(self, color: str) -> frozenset:
        idx = self.active_y if color == "yellow" else self.active_b
        return self._as_sites(idx)

    def colored_sites(self, color: str) -> frozenset:
        mask = self.yellow_mask if color == "yellow" else self.blue_mask
        return self._as_sites(np.flatnonzero(mask))

    def copy(self) -> "CompetitionState":
        return CompetitionState(
            domain=self.domain,
            color=self.color.copy(),
            active_y=self.active_y.copy(),
            active_b=self.active_b.copy(),
            t_y=self.t_y.copy(),
            t_b=self.t_b.copy(),
            time=self.time,
        )

    def to_configuration(self) -> Configuration:
        states = np.zeros(self.domain.n_sites, dtype=np.int8)
        states[self.color == 1] = SiteState.Y_PASSIVE
        states[self.color == 2] = SiteState.B_PASSIVE
        states[self.color == 3] = SiteState.G_PASSIVE
        green_active = np.intersect1d(self.active_y, self.active_b, assume_unique=True)
        states[self.active_y] = SiteState.Y_ACTIVE
        states[self.active_b] = SiteState.B_ACTIVE
        states[green_active] = SiteState.G_ACTIVE
        return Configuration(domain=self.domain, states=states, time=self.time)


def _spread_candidates(
    field: EdgeWeightField,
    p: float,
    frontier: np.ndarray,
    colored: np.ndarray,
    examined: list | None,
) -> np.ndarray:
    """Uncolored sites gaining this infection: open edges out of the frontier.

    When `examined` is a list, the keys of every probed (frontier, empty)
    edge are appended before the open test, for the examined-once audit.
    """
    domain = field.domain
    L = domain.half_width
    dim = domain.dim
    parts = []
    for axis in range(dim):
        stride = int(domain.strides[axis])
        c = domain.axis_coord_table(axis)[frontier]
        grid = field.weights_grid(axis)
        for sign in (1, -1):
            m = (c < L) if sign == 1 else (c > -L)
            cand = frontier[m] + sign * stride
            cand = cand[~colored[cand]]
            lower = cand - stride if sign == 1 else cand
            if examined is not None and cand.size:
                examined.append(lower * dim + axis)
            cand = cand[grid[lower] <= p]
            if cand.size:
                parts.append(cand)
    if not parts:
        return frontier[:0]
    return np.unique(np.concatenate(parts))


def _step_inplace(
    state: CompetitionState,
    field: EdgeWeightField,
    params: CompetitionParams,
    examined: list | None = None,
) -> None:
    colored = state.color > 0
    cand_y = _spread_candidates(field, params.p, state.active_y, colored, examined)
    cand_b = _spread_candidates(field, params.q, state.active_b, colored, examined)
    green = np.intersect1d(cand_y, cand_b, assume_unique=True)
    t = state.time + 1
    state.color[cand_y] = 1
    state.color[cand_b] = 2
    state.color[green] = 3
    state.t_y[cand_y] = t
    state.t_b[cand_b] = t
    state.active_y = cand_y
    state.active_b = cand_b
    state.time = t


def step_field(
    state: CompetitionState, field: EdgeWeightField, params: CompetitionParams
) -> CompetitionState:
    """One synchronous step of the field construction; the input is not modified.

    New yellow actives are the p-open boundary of the yellow frontier minus
    all colored sites; blue likewise at q; sites receiving both colors at
    once turn green.
    """
    out = state.copy()
    _step_inplace(out, field, params)
    return out


@dataclass
class RunSummary:
    """Outcome of a finite-horizon competition run."""

    params: CompetitionParams
    horizon: int
    seed: int
    censored: bool
    state: CompetitionState
    survived_yellow: bool
    survived_blue: bool
    examined_edges: int | None = None

    @property
    def t_yellow(self) -> np.ndarray:
        return self.state.t_y

    @property
    def t_blue(self) -> np.ndarray:
        return self.state.t_b

    def infection_time(self, site, color: str = "blue") -> int:
        arr = self.state.t_b if color == "blue" else self.state.t_y
        return int(arr[self.state.domain.site_index(site)])

    @property
    def colored_yellow(self) -> int:
        return int(self.state.yellow_mask.sum())

    @property
    def colored_blue(self) -> int:
        return int(self.state.blue_mask.sum())

    @property
    def green_count(self) -> int:
        return int(self.state.green_mask.sum())

    @property
    def coexistence(self) -> bool:
        return self.survived_yellow and self.survived_blue

    def to_json_dict(self) -> dict:
        return {
            "p": self.params.p,
            "q": self.params.q,
            "s1": list(self.params.s1),
            "s2": list(self.params.s2),
            "T": self.horizon,
            "seed": self.seed,
            "survived_y": self.survived_yellow,
            "survived_b": self.survived_blue,
            "colored_y": self.colored_yellow,
            "colored_b": self.colored_blue,
            "green_count": self.green_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


def run_competition(
    params: CompetitionParams,
    field: EdgeWeightField,
    horizon: int,
    censored: bool = False,
    debug: bool = False,
) -> RunSummary:
    """Iterate the field construction `horizon` steps from the two sources.

    The horizon must satisfy T <= half_width - max source sup-norm, so the
    run is distributed exactly as on the infinite lattice; pass
    censored=True to override and record the truncation.
    """
    domain = field.domain
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    for s in (params.s1, params.s2):
        if not domain.contains(s):
            raise DomainError(f"source {s} outside domain")
    reach = max(max(abs(c) for c in params.s1), max(abs(c) for c in params.s2))
    if horizon > domain.half_width - reach and not censored:
        raise ValueError(
            f"horizon {horizon} exceeds exactness bound {domain.half_width - reach}; "
            "pass censored=True to run anyway"
        )

    state = CompetitionState.initial(domain, params)
    examined: list | None = [] if debug else None
    for _ in range(horizon):
        if state.active_y.size == 0 and state.active_b.size == 0:
            break
        step_examined: list | None = [] if debug else None
        _step_inplace(state, field, params, step_examined)
        if debug and step_examined:
            examined.append(np.unique(np.concatenate(step_examined)))
    state.time = horizon

    examined_edges = None
    if debug:
        if examined:
            all_keys = np.concatenate(examined)
            if np.unique(all_keys).size != all_keys.size:
                raise AssertionError("an edge was examined more than once across the run")
            examined_edges = int(all_keys.size)
        else:
            examined_edges = 0

    return RunSummary(
        params=params,
        horizon=horizon,
        seed=field.seed,
        censored=censored and horizon > domain.half_width - reach,
        state=state,
        survived_yellow=state.active_y.size > 0,
        survived_blue=state.active_b.size > 0,
        examined_edges=examined_edges,
    )


def snapshot_grid(state: CompetitionState) -> np.ndarray:
    """Palette-indexed byte matrix of a 2d state (rows top-down in x2)."""
    if state.domain.dim != 2:
        raise ValueError("snapshots are only defined for dim 2")
    cfg = state.to_configuration()
    side = state.domain.side
    grid = cfg.states.reshape((side, side))
    return np.ascontiguousarray(grid.T[::-1]).astype(np.uint8)
