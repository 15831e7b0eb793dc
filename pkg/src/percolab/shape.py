"""Monte Carlo estimation of the chemical-distance growth norm.

For supercritical p the chemical ball grows linearly with a deterministic
limiting norm; its value in a lattice direction x is estimated by averaging
D_p(0, nx)/n over replicas on the event that 0 and nx are connected. The
coupled ratio of two parameters' norms, the reach functionals of a site
set, and the conditional speed-ratio experiment for the competition process
build on those directional estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import partial
from typing import Callable, Sequence

import numpy as np

from percolab._parallel import run_chunks
from percolab.competition import CompetitionParams, run_competition
from percolab.lattice import BoxDomain, EdgeWeightField, derive_seed
from percolab.percolation import ClusterLabeling, chemical_distance_field

__all__ = [
    "NormEstimate",
    "NormEvaluator",
    "ReachValues",
    "CpqTable",
    "SpeedRatioResult",
    "norm_estimate",
    "cpq_estimate",
    "fit_norm_evaluator",
    "reach_metrics",
    "speed_ratio_experiment",
    "l1_evaluator",
]


def _norm_box(direction: Sequence[int], n_max: int, margin: int | None) -> tuple[int, int]:
    reach = n_max * max(abs(int(c)) for c in direction)
    if margin is None:
        margin = max(10, reach // 4)
    return reach + margin, margin


@dataclass
class NormEstimateRow:
    n: int
    connected: int
    estimate: float
    ci: float
    disconnected_frac: float
    available: bool
    samples: np.ndarray | None = None


@dataclass
class NormEstimate:
    """Directional norm estimates, one row per scaling n.

    Every retained sample is D_p(0, n*direction)/n conditioned on the two
    endpoints being connected, so estimates never fall below the l1 norm of
    the direction. The largest-n row is the headline value.
    """

    p: float
    direction: tuple[int, ...]
    dim: int
    replicas: int
    seed: int
    rows: list[NormEstimateRow] = dc_field(default_factory=list)

    @property
    def headline(self) -> NormEstimateRow:
        for row in reversed(self.rows):
            if row.available:
                return row
        raise ValueError("no scaling had any connected replica")

    @property
    def value(self) -> float:
        return self.headline.estimate

    def to_csv(self, path) -> None:
        tag = " ".join(str(c) for c in self.direction)
        with open(path, "w", newline="") as fh:
            fh.write("direction,n,estimate,ci,disconnected_frac\n")
            for row in self.rows:
                est = f"{row.estimate:.10g}" if row.available else ""
                ci = f"{row.ci:.10g}" if row.available else ""
                fh.write(f"{tag},{row.n},{est},{ci},{row.disconnected_frac:.10g}\n")


def _norm_chunk(start, stop, p, direction, n_values, dim, half_width, seed):
    domain = BoxDomain(dim=dim, half_width=half_width)
    direction = np.asarray(direction, dtype=np.int64)
    targets = [domain.site_index(tuple(int(n) * direction)) for n in n_values]
    dist_rows = np.zeros((stop - start, len(n_values)), dtype=np.int32)
    for k, rep in enumerate(range(start, stop)):
        f = EdgeWeightField(seed=derive_seed(seed, rep), domain=domain)
        df = chemical_distance_field(f, p, (0,) * dim)
        dist_rows[k] = df.distances[targets]
    return start, dist_rows


def norm_estimate(
    p: float,
    direction: Sequence[int],
    n_values: Sequence[int],
    replicas: int,
    seed: int,
    dim: int = 2,
    margin: int | None = None,
    keep_samples: bool = False,
    workers: int = 1,
) -> NormEstimate:
    """Estimate the directional growth norm from replica chemical distances."""
    direction = tuple(int(c) for c in direction)
    if all(c == 0 for c in direction):
        raise ValueError("direction must be nonzero")
    n_values = [int(n) for n in n_values]
    if not n_values or any(b <= a for a, b in zip(n_values, n_values[1:])) or n_values[0] < 1:
        raise ValueError("n_values must be strictly increasing positive integers")
    if p <= 0.0:
        raise ValueError("p must be positive")
    if replicas < 1:
        raise ValueError("replicas must be positive")
    half_width, _ = _norm_box(direction, n_values[-1], margin)

    fn = partial(
        _norm_chunk,
        p=p,
        direction=direction,
        n_values=n_values,
        dim=dim,
        half_width=half_width,
        seed=seed,
    )
    dists = np.zeros((replicas, len(n_values)), dtype=np.int32)
    for start, rows in run_chunks(fn, replicas, workers):
        dists[start : start + rows.shape[0]] = rows

    est = NormEstimate(
        p=p, direction=direction, dim=dim, replicas=replicas, seed=seed
    )
    for j, n in enumerate(n_values):
        col = dists[:, j]
        good = col >= 0
        count = int(good.sum())
        if count == 0:
            est.rows.append(
                NormEstimateRow(
                    n=n,
                    connected=0,
                    estimate=float("nan"),
                    ci=float("nan"),
                    disconnected_frac=1.0,
                    available=False,
                    samples=col.copy() if keep_samples else None,
                )
            )
            continue
        samples = col[good].astype(np.float64) / n
        mean = float(samples.mean())
        sd = float(samples.std(ddof=1)) if count > 1 else 0.0
        est.rows.append(
            NormEstimateRow(
                n=n,
                connected=count,
                estimate=mean,
                ci=1.96 * sd / np.sqrt(count),
                disconnected_frac=1.0 - count / replicas,
                available=True,
                samples=col.copy() if keep_samples else None,
            )
        )
    return est


@dataclass
class CpqRow:
    direction: tuple[int, ...]
    ratio: float
    ci: float
    connected: int


@dataclass
class CpqTable:
    """Coupled per-direction ratios of the q-norm to the p-norm, and their sup."""

    p: float
    q: float
    n: int
    replicas: int
    rows: list[CpqRow]

    @property
    def sup_ratio(self) -> float:
        return max(row.ratio for row in self.rows)

    @property
    def sup_upper_bound(self) -> float:
        """Upper 95% confidence bound on the sup of the directional ratios."""
        return max(row.ratio + row.ci for row in self.rows)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("direction,ratio,ci\n")
            for row in self.rows:
                tag = " ".join(str(c) for c in row.direction)
                fh.write(f"{tag},{row.ratio:.10g},{row.ci:.10g}\n")
            fh.write(f"sup,{self.sup_ratio:.10g},\n")


def _cpq_chunk(start, stop, p, q, directions, n, dim, half_width, seed):
    domain = BoxDomain(dim=dim, half_width=half_width)
    targets = [domain.site_index(tuple(n * np.asarray(d, dtype=np.int64))) for d in directions]
    dp = np.zeros((stop - start, len(directions)), dtype=np.int32)
    dq = np.zeros((stop - start, len(directions)), dtype=np.int32)
    origin = (0,) * dim
    for k, rep in enumerate(range(start, stop)):
        f = EdgeWeightField(seed=derive_seed(seed, rep), domain=domain)
        dfp = chemical_distance_field(f, p, origin)
        dfq = dfp if q == p else chemical_distance_field(f, q, origin)
        dp[k] = dfp.distances[targets]
        dq[k] = dfq.distances[targets]
    return start, dp, dq


def cpq_estimate(
    p: float,
    q: float,
    directions: Sequence[Sequence[int]],
    n: int,
    replicas: int,
    seed: int,
    dim: int = 2,
    margin: int | None = None,
    workers: int = 1,
) -> CpqTable:
    """Coupled estimate of sup_x ||x||_q / ||x||_p over the given directions.

    Each replica shares one weight field between both parameters, so the
    per-replica ratio D_q/D_p is computed on the event that the p-graph
    connects the endpoints (which the q-graph then also does).
    """
    if not 0.0 < p <= q <= 1.0:
        raise ValueError("require 0 < p <= q <= 1")
    directions = [tuple(int(c) for c in d) for d in directions]
    if not directions:
        raise ValueError("need at least one direction")
    reach = max(max(abs(c) for c in d) for d in directions)
    half_width, _ = _norm_box((reach,), n, margin)

    fn = partial(
        _cpq_chunk,
        p=p,
        q=q,
        directions=directions,
        n=n,
        dim=dim,
        half_width=half_width,
        seed=seed,
    )
    dp = np.zeros((replicas, len(directions)), dtype=np.int32)
    dq = np.zeros((replicas, len(directions)), dtype=np.int32)
    for start, ap, aq in run_chunks(fn, replicas, workers):
        dp[start : start + ap.shape[0]] = ap
        dq[start : start + aq.shape[0]] = aq

    rows = []
    for j, d in enumerate(directions):
        good = dp[:, j] >= 0
        count = int(good.sum())
        if count == 0:
            raise ValueError(f"no replica connected 0 to {n}*{d} at p={p}")
        ratios = dq[good, j].astype(np.float64) / dp[good, j].astype(np.float64)
        mean = float(ratios.mean())
        sd = float(ratios.std(ddof=1)) if count > 1 else 0.0
        rows.append(CpqRow(direction=d, ratio=mean, ci=1.96 * sd / np.sqrt(count), connected=count))
    return CpqTable(p=p, q=q, n=n, replicas=replicas, rows=rows)


@dataclass
class NormEvaluator:
    """Positive-homogeneous interpolation of directional norm estimates (dim 2).

    The box symmetries reduce evaluation to the cone a >= b >= 0; inside it
    a point is written as a nonnegative combination of the two neighboring
    fan directions and inherits the combination of their estimates.
    """

    fan: list[tuple[tuple[int, int], float]]
    p: float | None = None

    def __post_init__(self) -> None:
        fan = []
        for direction, value in self.fan:
            a, b = (abs(int(c)) for c in direction)
            if a < b:
                a, b = b, a
            if a == 0:
                raise ValueError("fan directions must be nonzero")
            fan.append(((a, b), float(value)))
        fan.sort(key=lambda item: item[0][1] / item[0][0])
        if fan[0][0][1] != 0:
            raise ValueError("fan must include an axis direction")
        if fan[-1][0][0] != fan[-1][0][1]:
            raise ValueError("fan must include the diagonal direction")
        slopes = [u[1] / u[0] for u, _ in fan]
        if any(t2 <= t1 for t1, t2 in zip(slopes, slopes[1:])):
            raise ValueError("fan directions must have distinct slopes")
        self.fan = fan

    def __call__(self, x) -> np.ndarray | float:
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        pts = np.atleast_2d(arr)
        if pts.shape[1] != 2:
            raise ValueError("evaluator is defined for dim 2")
        a = np.abs(pts).max(axis=1)
        b = np.abs(pts).min(axis=1)
        out = np.zeros(pts.shape[0], dtype=np.float64)
        nz = a > 0
        slope = np.zeros_like(a)
        slope[nz] = b[nz] / a[nz]
        slopes = [u[1] / u[0] for u, _ in self.fan]
        for i in range(len(self.fan) - 1):
            (ua, ub), va = self.fan[i]
            (wa, wb), vb = self.fan[i + 1]
            m = nz & (slope >= slopes[i]) & (slope <= slopes[i + 1])
            if not m.any():
                continue
            det = ua * wb - ub * wa
            alpha = (a[m] * wb - b[m] * wa) / det
            beta = (ua * b[m] - ub * a[m]) / det
            out[m] = alpha * va + beta * vb
        return float(out[0]) if single else out


def l1_evaluator(x) -> np.ndarray | float:
    """Exact norm for p = 1: the chemical distance equals the l1 distance."""
    arr = np.asarray(x, dtype=np.float64)
    out = np.abs(np.atleast_2d(arr)).sum(axis=1)
    return float(out[0]) if arr.ndim == 1 else out


def fit_norm_evaluator(
    p: float,
    n: int,
    replicas: int,
    seed: int,
    fan_directions: Sequence[Sequence[int]] = ((1, 0), (2, 1), (1, 1)),
    margin: int | None = None,
    workers: int = 1,
) -> NormEvaluator:
    """Estimate the norm on a direction fan and build the interpolating evaluator."""
    fan = []
    for k, d in enumerate(fan_directions):
        est = norm_estimate(
            p,
            d,
            [max(1, n // 2), n],
            replicas,
            derive_seed(seed, k),
            dim=2,
            margin=margin,
            workers=workers,
        )
        fan.append((tuple(int(c) for c in d), est.value))
    return NormEvaluator(fan=fan, p=p)


@dataclass
class ReachValues:
    """Sup of the norm over a set, and inf over quasi-infinite sites outside it."""

    sup_reach: float
    inf_reach: float | None
    inf_reach_defined: bool


def reach_metrics(
    sites: Sequence[Sequence[int]],
    norm: Callable,
    labeling: ClusterLabeling,
) -> ReachValues:
    """Evaluate the reach functionals of a finite site set.

    `norm` is any evaluator (fan-interpolated or exact l1). The inf-reach
    scans sites of boundary-touching clusters not in the set; when no such
    site exists the value is undefined and flagged.
    """
    domain = labeling.domain
    site_list = [tuple(int(c) for c in s) for s in sites]
    if site_list:
        sup = float(np.max(norm(np.asarray(site_list, dtype=np.int64))))
    else:
        sup = 0.0
    quasi = labeling.quasi_infinite_site_mask.copy()
    if site_list:
        idx = np.fromiter((domain.site_index(s) for s in site_list), dtype=np.int64)
        quasi[idx] = False
    if not quasi.any():
        return ReachValues(sup_reach=sup, inf_reach=None, inf_reach_defined=False)
    coords = domain.coords_of(np.flatnonzero(quasi))
    inf = float(np.min(norm(coords)))
    return ReachValues(sup_reach=sup, inf_reach=inf, inf_reach_defined=True)


@dataclass
class SpeedRatioRow:
    replica: int
    coexisted: bool
    ratio: float | None


@dataclass
class SpeedRatioResult:
    """Conditional speed ratios |blue(T)|_p / T on coexistence replicas."""

    params: CompetitionParams
    horizon: int
    replicas: int
    rows: list[SpeedRatioRow]

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.rows if r.coexisted], dtype=np.float64)

    @property
    def n_coexist(self) -> int:
        return sum(1 for r in self.rows if r.coexisted)

    @property
    def diagnostic(self) -> str:
        return (
            f"{self.n_coexist}/{self.replicas} replicas met the coexistence proxy "
            f"at horizon {self.horizon}"
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("replica,ratio,coexisted\n")
            for row in self.rows:
                ratio = f"{row.ratio:.10g}" if row.ratio is not None else ""
                fh.write(f"{row.replica},{ratio},{int(row.coexisted)}\n")


def _speed_chunk(start, stop, p, q, s1, s2, horizon, dim, half_width, seed, fan):
    evaluator = NormEvaluator(fan=list(fan))
    params = CompetitionParams(p=p, q=q, s1=s1, s2=s2)
    domain = BoxDomain(dim=dim, half_width=half_width)
    out = []
    for rep in range(start, stop):
        f = EdgeWeightField(seed=derive_seed(seed, rep), domain=domain)
        summary = run_competition(params, f, horizon)
        if summary.coexistence:
            coords = domain.coords_of(np.flatnonzero(summary.state.blue_mask))
            ratio = float(np.max(evaluator(coords))) / horizon
            out.append((rep, True, ratio))
        else:
            out.append((rep, False, None))
    return out


def speed_ratio_experiment(
    params: CompetitionParams,
    horizon: int,
    replicas: int,
    seed: int,
    norm_eval: NormEvaluator,
    dim: int = 2,
    half_width: int | None = None,
    workers: int = 1,
) -> SpeedRatioResult:
    """Per-replica |blue(T)|_{p-norm} / T, reported only when both infections survive.

    `norm_eval` must be fitted first at the weaker parameter p. Replicas
    failing the coexistence proxy are counted and excluded.
    """
    if horizon < 1:
        raise ValueError("horizon must be positive")
    reach = max(max(abs(c) for c in params.s1), max(abs(c) for c in params.s2))
    if half_width is None:
        half_width = horizon + reach
    fn = partial(
        _speed_chunk,
        p=params.p,
        q=params.q,
        s1=params.s1,
        s2=params.s2,
        horizon=horizon,
        dim=dim,
        half_width=half_width,
        seed=seed,
        fan=tuple(norm_eval.fan),
    )
    rows: list[SpeedRatioRow | None] = [None] * replicas
    for chunk in run_chunks(fn, replicas, workers):
        for rep, coex, ratio in chunk:
            rows[rep] = SpeedRatioRow(replica=rep, coexisted=coex, ratio=ratio)
    return SpeedRatioResult(params=params, horizon=horizon, replicas=replicas, rows=rows)
