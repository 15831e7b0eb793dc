"""Experiment orchestration: JSON-configured subcommands, CSV/PPM/JSON artifacts.

Every experiment is driven by a JSON config plus a mandatory seed; replica
streams derive from hash(seed, cell, replica), so re-running a config, or
splitting it across workers, reproduces byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from functools import partial
from itertools import product
from pathlib import Path

import numpy as np

from percolab._parallel import run_chunks
from percolab.competition import (
    CompetitionParams,
    run_competition,
    snapshot_grid,
)
from percolab.lattice import BoxDomain, EdgeWeightField, derive_seed
from percolab.percolation import tail_statistics
from percolab.renorm import estimate_pN
from percolab.shape import (
    cpq_estimate,
    fit_norm_evaluator,
    norm_estimate,
    speed_ratio_experiment,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "SweepResult",
    "PALETTE",
    "run_sweep",
    "render_ppm",
    "main",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

# order follows the SiteState codes
PALETTE = np.array(
    [
        (255, 255, 255),  # empty
        (255, 220, 0),  # yellow active
        (0, 120, 255),  # blue active
        (0, 200, 0),  # green active
        (200, 170, 0),  # yellow passive
        (0, 80, 180),  # blue passive
        (0, 140, 0),  # green passive
    ],
    dtype=np.uint8,
)


class ConfigError(Exception):
    """Malformed or invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    """One subcommand's parameter block, after overrides and validation."""

    command: str
    params: dict
    seed: int
    out: Path
    workers: int


def render_ppm(grid: np.ndarray, path) -> None:
    """Write a palette-indexed byte matrix as binary P6, one pixel per site."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError("grid must be a 2d byte matrix")
    if grid.size and int(grid.max()) >= PALETTE.shape[0]:
        raise ValueError("grid contains indices outside the palette")
    h, w = grid.shape
    rgb = PALETTE[grid.astype(np.int64)]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


@dataclass
class SweepRow:
    p: float
    q: float
    replicas: int
    coexist_count: int
    y_only: int
    b_only: int
    both_dead: int
    mean_colored_y: float | None
    mean_colored_b: float | None
    skipped: bool = False


@dataclass
class SweepResult:
    rows: list[SweepRow]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(
                "p,q,replicas,coexist_count,y_only,b_only,both_dead,"
                "mean_colored_y,mean_colored_b\n"
            )
            for r in self.rows:
                my = f"{r.mean_colored_y:.10g}" if r.mean_colored_y is not None else ""
                mb = f"{r.mean_colored_b:.10g}" if r.mean_colored_b is not None else ""
                fh.write(
                    f"{r.p:.10g},{r.q:.10g},{r.replicas},{r.coexist_count},"
                    f"{r.y_only},{r.b_only},{r.both_dead},{my},{mb}\n"
                )


def _sweep_cell_chunk(start, stop, p, q, s1, s2, horizon, dim, half_width, seed, cell_index):
    domain = BoxDomain(dim=dim, half_width=half_width)
    params = CompetitionParams(p=p, q=q, s1=s1, s2=s2)
    counts = np.zeros(4, dtype=np.int64)  # coexist, y_only, b_only, both_dead
    colored = np.zeros(2, dtype=np.int64)
    for rep in range(start, stop):
        f = EdgeWeightField(seed=derive_seed(seed, cell_index, rep), domain=domain)
        summary = run_competition(params, f, horizon)
        k = (
            0
            if summary.coexistence
            else 1
            if summary.survived_yellow
            else 2
            if summary.survived_blue
            else 3
        )
        counts[k] += 1
        colored[0] += summary.colored_yellow
        colored[1] += summary.colored_blue
    return counts, colored


def run_sweep(
    p_values,
    q_values,
    sources,
    horizon: int,
    half_width: int,
    replicas: int,
    seed: int,
    dim: int = 2,
    workers: int = 1,
) -> SweepResult:
    """Coexistence outcomes over a (p, q) grid; cells with p > q are skipped.

    The replica stream of grid cell c is hash(seed, c, replica) with c the
    row-major cell index over the full grid, so a sweep split across
    machines by cell or by replica range merges into the monolithic result.
    """
    s1, s2 = (tuple(int(c) for c in s) for s in sources)
    rows = []
    for cell_index, (p, q) in enumerate(product(p_values, q_values)):
        if p > q:
            print(f"warning: skipping cell p={p} q={q} (p > q)", file=sys.stderr)
            rows.append(
                SweepRow(
                    p=p,
                    q=q,
                    replicas=0,
                    coexist_count=0,
                    y_only=0,
                    b_only=0,
                    both_dead=0,
                    mean_colored_y=None,
                    mean_colored_b=None,
                    skipped=True,
                )
            )
            continue
        fn = partial(
            _sweep_cell_chunk,
            p=p,
            q=q,
            s1=s1,
            s2=s2,
            horizon=horizon,
            dim=dim,
            half_width=half_width,
            seed=seed,
            cell_index=cell_index,
        )
        counts = np.zeros(4, dtype=np.int64)
        colored = np.zeros(2, dtype=np.int64)
        for pc, pcol in run_chunks(fn, replicas, workers):
            counts += pc
            colored += pcol
        rows.append(
            SweepRow(
                p=p,
                q=q,
                replicas=replicas,
                coexist_count=int(counts[0]),
                y_only=int(counts[1]),
                b_only=int(counts[2]),
                both_dead=int(counts[3]),
                mean_colored_y=float(colored[0]) / replicas,
                mean_colored_b=float(colored[1]) / replicas,
            )
        )
    return SweepResult(rows=rows)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config parse error at line {e.lineno}, column {e.colno}: {e.msg}") from e


_REQUIRED = object()


def _get(cfg: dict, key: str, kind, default=_REQUIRED):
    if key not in cfg:
        if default is _REQUIRED:
            raise ConfigError(f"missing config field '{key}'")
        return default
    value = cfg[key]
    try:
        if kind is int:
            if isinstance(value, bool) or int(value) != value:
                raise ValueError
            return int(value)
        if kind is float:
            value = float(value)
            return value
        if kind is bool:
            if not isinstance(value, bool):
                raise ValueError
            return value
        if kind == "site":
            site = tuple(int(c) for c in value)
            if not site:
                raise ValueError
            return site
        if kind == "int_list":
            out = [int(v) for v in value]
            if not out:
                raise ValueError
            return out
        if kind == "float_list":
            out = [float(v) for v in value]
            if not out:
                raise ValueError
            return out
        if kind == "site_list":
            out = [tuple(int(c) for c in s) for s in value]
            if not out:
                raise ValueError
            return out
        if kind is str:
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for config field '{key}': {value!r}") from None
    raise ConfigError(f"unhandled config field kind for '{key}'")


def _prob(cfg, key, default=_REQUIRED) -> float:
    v = _get(cfg, key, float, default)
    if not 0.0 <= v <= 1.0:
        raise ConfigError(f"config field '{key}' must be a probability in [0, 1]")
    return v


def _cmd_percolate(cfg: ExperimentConfig) -> None:
    c = cfg.params
    table = tail_statistics(
        p=_prob(c, "p"),
        radii=_get(c, "radii", "int_list"),
        replicas=_get(c, "replicas", int),
        seed=cfg.seed,
        dim=_get(c, "dim", int, 2),
        half_width=_get(c, "half_width", int, None),
        workers=cfg.workers,
    )
    table.to_csv(cfg.out / "tail.csv")


def _cmd_compete(cfg: ExperimentConfig) -> None:
    c = cfg.params
    dim = _get(c, "dim", int, 2)
    half_width = _get(c, "half_width", int)
    params = CompetitionParams(
        p=_prob(c, "p"),
        q=_prob(c, "q"),
        s1=_get(c, "s1", "site"),
        s2=_get(c, "s2", "site"),
    )
    domain = BoxDomain(dim=dim, half_width=half_width)
    field = EdgeWeightField(seed=cfg.seed, domain=domain)
    summary = run_competition(
        params,
        field,
        horizon=_get(c, "horizon", int),
        censored=_get(c, "censored", bool, False),
    )
    (cfg.out / "summary.json").write_text(json.dumps(summary.to_json_dict(), indent=2) + "\n")
    if _get(c, "snapshot", bool, False):
        grid = snapshot_grid(summary.state)
        np.save(cfg.out / "snapshot.npy", grid)
        render_ppm(grid, cfg.out / "snapshot.ppm")


def _cmd_shape(cfg: ExperimentConfig) -> None:
    c = cfg.params
    est = norm_estimate(
        p=_prob(c, "p"),
        direction=_get(c, "direction", "site"),
        n_values=_get(c, "n_values", "int_list"),
        replicas=_get(c, "replicas", int),
        seed=cfg.seed,
        dim=_get(c, "dim", int, 2),
        margin=_get(c, "margin", int, None),
        workers=cfg.workers,
    )
    est.to_csv(cfg.out / "norm.csv")


def _cmd_cpq(cfg: ExperimentConfig) -> None:
    c = cfg.params
    table = cpq_estimate(
        p=_prob(c, "p"),
        q=_prob(c, "q"),
        directions=_get(c, "directions", "site_list"),
        n=_get(c, "n", int),
        replicas=_get(c, "replicas", int),
        seed=cfg.seed,
        dim=_get(c, "dim", int, 2),
        margin=_get(c, "margin", int, None),
        workers=cfg.workers,
    )
    table.to_csv(cfg.out / "cpq.csv")


def _cmd_speed(cfg: ExperimentConfig) -> None:
    c = cfg.params
    p = _prob(c, "p")
    evaluator = fit_norm_evaluator(
        p=p,
        n=_get(c, "fan_n", int, 150),
        replicas=_get(c, "fan_replicas", int, 50),
        seed=derive_seed(cfg.seed, 1),
        fan_directions=_get(c, "fan_directions", "site_list", [(1, 0), (2, 1), (1, 1)]),
        workers=cfg.workers,
    )
    params = CompetitionParams(
        p=p, q=_prob(c, "q"), s1=_get(c, "s1", "site"), s2=_get(c, "s2", "site")
    )
    result = speed_ratio_experiment(
        params,
        horizon=_get(c, "horizon", int),
        replicas=_get(c, "replicas", int),
        seed=cfg.seed,
        norm_eval=evaluator,
        dim=_get(c, "dim", int, 2),
        half_width=_get(c, "half_width", int, None),
        workers=cfg.workers,
    )
    result.to_csv(cfg.out / "speed.csv")
    if result.n_coexist == 0:
        print(f"warning: {result.diagnostic}", file=sys.stderr)


def _cmd_renorm(cfg: ExperimentConfig) -> None:
    c = cfg.params
    table = estimate_pN(
        p=_prob(c, "p"),
        n_values=_get(c, "N_values", "int_list"),
        replicas=_get(c, "replicas", int),
        seed=cfg.seed,
        dim=_get(c, "dim", int, 2),
        workers=cfg.workers,
    )
    table.to_csv(cfg.out / "pn.csv")


def _cmd_sweep(cfg: ExperimentConfig) -> None:
    c = cfg.params
    p_values = _get(c, "p_values", "float_list", [])
    q_values = _get(c, "q_values", "float_list", [])
    for v in p_values + q_values:
        if not 0.0 <= v <= 1.0:
            raise ConfigError("sweep grid values must be probabilities in [0, 1]")
    result = run_sweep(
        p_values=p_values,
        q_values=q_values,
        sources=(
            _get(c, "s1", "site", (0, 0)),
            _get(c, "s2", "site", (1, 0)),
        ),
        horizon=_get(c, "horizon", int),
        half_width=_get(c, "half_width", int),
        replicas=_get(c, "replicas", int),
        seed=cfg.seed,
        dim=_get(c, "dim", int, 2),
        workers=cfg.workers,
    )
    result.to_csv(cfg.out / "sweep.csv")


def _cmd_render(cfg: ExperimentConfig) -> None:
    c = cfg.params
    src = Path(_get(c, "input", str))
    try:
        grid = np.load(src)
    except OSError as e:
        raise ConfigError(f"cannot read snapshot matrix '{src}': {e}") from e
    render_ppm(grid, cfg.out / _get(c, "output", str, "render.ppm"))


_COMMANDS = {
    "percolate": _cmd_percolate,
    "compete": _cmd_compete,
    "shape": _cmd_shape,
    "cpq": _cmd_cpq,
    "speed": _cmd_speed,
    "renorm": _cmd_renorm,
    "sweep": _cmd_sweep,
    "render": _cmd_render,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="percolab",
        description="Competition growth and Bernoulli percolation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--replicas", type=int, help="replica count (overrides config)")
        sp.add_argument("--workers", type=int, help="worker processes (overrides config)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        params = _load_config(args.config)
        if not isinstance(params, dict):
            raise ConfigError("config must be a JSON object")
        for key in ("seed", "replicas", "workers"):
            value = getattr(args, key)
            if value is not None:
                params[key] = value
        if args.out is not None:
            params["out"] = args.out
        if "seed" not in params:
            raise ConfigError("a seed is required (config field 'seed' or --seed)")
        cfg = ExperimentConfig(
            command=args.command,
            params=params,
            seed=_get(params, "seed", int),
            out=Path(_get(params, "out", str, ".")),
            workers=_get(params, "workers", int, 1),
        )
        cfg.out.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
