from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import typing as t
from dataclasses import field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import sparse

from . import design as dz
from . import exposure as ex
from .covariance import (
    build_kernel,
    ci95,
    contrast_se,
    ehw_cov,
    ht_contrast_terms,
    leung_ht_variance,
    network_hac,
    psd_split,
    suggest_bandwidth,
)
from .diagnostics import DEFAULT_GRID, diagnose
from .errors import (
    ConfigError,
    DataError,
    NetexpError,
    NumericalError,
    UnsupportedPropensityError,
)
from .estimate import Contrast, Dataset, FitSpec, fit, horvitz_thompson
from .graph import Graph
from .io import NodeTable, load_graph, load_nodes
from .record import Record
from .simulate import PRESETS, SimConfig, run_monte_carlo
from .utils import ROUNDING_MODES, Stream, jsonable, rng_stream, write_csv, write_json

LOG = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class RunConfig(Record):
    """Inputs and options of the analyze, propensity and diagnose commands."""

    edges: t.Optional[str] = None
    nodes: t.Optional[str] = None
    directed: bool = False
    exposure: t.Dict[str, t.Any] = field(default_factory=lambda: {"kind": "direct"})
    design: t.Dict[str, t.Any] = field(
        default_factory=lambda: {"kind": "iid_bernoulli", "p": "column"}
    )
    contrast: t.Optional[t.Dict[str, t.Any]] = None
    specs: t.Tuple[str, ...] = ("unadjusted", "additive", "fully_interacted")
    include_ht: bool = True
    # "auto" reports bandwidths 0 .. suggested + 1
    bandwidth: t.Union[str, t.List[int]] = "auto"
    grid: t.Tuple[int, ...] = DEFAULT_GRID
    mc_draws: int = dz.DEFAULT_MC_DRAWS
    seed: t.Optional[int] = None
    threads: int = 1
    rounding: str = "half_away"
    out: str = "netexp-out"

    def __post_init__(self) -> None:
        object.__setattr__(self, "specs", tuple(self.specs))
        object.__setattr__(self, "grid", tuple(self.grid))
        for spec in self.specs:
            if FitSpec.parse(spec) == FitSpec.HT_TRANSFORMED:
                raise ValueError(
                    "List weighted regressions in specs; HT is controlled by include_ht"
                )
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "auto":
                raise ValueError(f"Bandwidth must be 'auto' or a list, got {self.bandwidth!r}")
        elif not self.bandwidth or min(self.bandwidth) < 0:
            raise ValueError("Bandwidth list must be nonempty and nonnegative")
        if self.rounding not in ROUNDING_MODES:
            raise ValueError(f"Unknown rounding mode {self.rounding!r}")
        if self.mc_draws < 1 or self.threads < 1:
            raise ValueError("Draw and thread counts must be positive")


def _require(value: str | None, name: str) -> str:
    if value is None:
        raise ConfigError(f"Option {name} is required for this command")
    if not Path(value).exists():
        raise DataError(f"{value}: file not found")
    return value


def _load(cfg: RunConfig) -> tuple[Graph, NodeTable, dict[str, t.Any]]:
    nodes = load_nodes(_require(cfg.nodes, "nodes"))
    graph, report = load_graph(_require(cfg.edges, "edges"), nodes.n, cfg.directed)
    return graph, nodes, dataclasses.asdict(report)


def _design(cfg: RunConfig, nodes: NodeTable, graph: Graph) -> dz.Design:
    rng = None if cfg.seed is None else rng_stream(cfg.seed, Stream.ASSIGNMENT)
    ctx = dz.DesignContext(nodes.n, nodes.eligible, nodes.columns(), graph, rng, nodes.d)
    return dz.from_spec(cfg.design, ctx)


def _propensities(
    cfg: RunConfig, mapping: ex.ExposureMapping, design: dz.Design, graph: Graph
) -> dz.PropensityTable:
    try:
        return dz.exact_propensity(mapping, design, graph)
    except UnsupportedPropensityError as e:
        if cfg.seed is None:
            raise ConfigError(f"{e}; Monte Carlo propensities need a seed") from e
        LOG.info("%s; estimating with %d draws", e, cfg.mc_draws)
        return dz.mc_propensity(mapping, design, graph, cfg.mc_draws, cfg.seed, cfg.threads)


def _bandwidths(cfg: RunConfig, graph: Graph, K: int) -> tuple[int | None, list[int]]:
    if cfg.bandwidth == "auto":
        suggested = suggest_bandwidth(graph, K, cfg.rounding)
        return suggested, list(range(suggested + 2))
    return None, sorted(set(cfg.bandwidth))


def _ht_se(ds: Dataset, G: Contrast, K: t.Any) -> np.ndarray:
    variances = []
    for row in G.matrix:
        delta, tau = ht_contrast_terms(ds, row)
        variances.append(leung_ht_variance(delta, tau, K) / ds.n)
    v = np.array(variances)
    return np.where(v < 0, np.nan, np.sqrt(np.abs(v)))


def run_analysis(cfg: RunConfig) -> tuple[dict[str, t.Any], pd.DataFrame]:
    """Estimates and standard errors for observed data, over a bandwidth grid.

    Returns the JSON summary and a table with one `Estimate` row, an `EHW SE`
    row and a `b_n=k` row per bandwidth, followed by a `WLS+ SE` row where
    the kernel at that bandwidth is not positive semidefinite.
    """
    graph, nodes, load_report = _load(cfg)
    d = nodes.require_d()
    y = nodes.require_y()
    mapping = ex.from_spec(cfg.exposure)
    support, K = ex.exposure_support(mapping)
    design = _design(cfg, nodes, graph)
    propensities = _propensities(cfg, mapping, design, graph)
    exposures = ex.compute_exposures(mapping, d, graph)
    sample = ex.effective_sample(mapping, propensities, exposures)
    ds = Dataset.build(y, exposures, propensities, sample.units, nodes.x, nodes.x_names)
    if cfg.contrast is None:
        G = Contrast.default(support)
    else:
        G = Contrast.from_spec(cfg.contrast, support)
    if G.matrix.shape[1] != len(support):
        raise ConfigError(f"Contrast needs {len(support)} columns")
    LOG.info("Effective sample: %d of %d units", ds.n, graph.n)

    fits = {FitSpec.parse(s).short: fit(ds, FitSpec.parse(s)) for s in cfg.specs}
    estimates = {name: G.matrix @ result.beta for name, result in fits.items()}
    ehw = {name: contrast_se(ehw_cov(result), G).se for name, result in fits.items()}
    if cfg.include_ht:
        mu = np.array([horvitz_thompson(ds, k) for k in range(ds.n_levels)])
        estimates["HT"] = G.matrix @ mu
        ehw["HT"] = _ht_se(ds, G, sparse.identity(ds.n, format="csr"))
    columns = list(estimates)

    suggested, grid = _bandwidths(cfg, graph, K)
    per_bandwidth = []
    for b in grid:
        kernel = build_kernel(graph, sample.units, b)
        split = psd_split(kernel)
        raw, plus, negative, intervals = {}, {}, {}, {}
        for name, result in fits.items():
            hac = network_hac(result, kernel, split, G)
            raw[name], plus[name] = hac.raw.se, hac.plus.se
            negative[name] = hac.raw.negative
            intervals[name] = np.column_stack(ci95(estimates[name], hac.plus.se))
        if cfg.include_ht:
            raw["HT"] = _ht_se(ds, G, kernel)
            plus["HT"] = _ht_se(ds, G, split.k_plus)
            negative["HT"] = np.isnan(raw["HT"])
            intervals["HT"] = np.column_stack(ci95(estimates["HT"], plus["HT"]))
        per_bandwidth.append(
            {
                "bandwidth": b,
                "kernel_psd": split.is_psd,
                "min_eigenvalue": split.min_eigenvalue,
                "se": raw,
                "se_plus": plus,
                "negative_variance": negative,
                "ci95_plus": intervals,
            }
        )

    rows: list[dict[str, t.Any]] = []
    for j, label in enumerate(G.labels):
        layout = [("Estimate", None, estimates), ("EHW SE", None, ehw)]
        for entry in per_bandwidth:
            b = entry["bandwidth"]
            layout.append((f"b_n={b}", b, entry["se"]))
            if not entry["kernel_psd"]:
                layout.append(("WLS+ SE", b, entry["se_plus"]))
        for name, b, values in layout:
            row = {"contrast": label, "row": name, "bandwidth": b}
            row.update({c: float(values[c][j]) for c in columns})
            rows.append(row)
    table = pd.DataFrame(rows, columns=["contrast", "row", "bandwidth", *columns])
    table["bandwidth"] = table["bandwidth"].astype("Int64")

    summary = {
        "config": cfg.to_dict(),
        "load": load_report,
        "n": graph.n,
        "n_effective": ds.n,
        "locality": K,
        "counts": {ex.format_label(s): int(c) for s, c in zip(support, ds.counts())},
        "propensity_method": propensities.method,
        "suggested_bandwidth": suggested,
        "contrasts": list(G.labels),
        "covariates": list(ds.x_names),
        "estimates": estimates,
        "ehw_se": ehw,
        "bandwidths": per_bandwidth,
    }
    return jsonable(summary), table


def analyze(cfg: RunConfig) -> None:
    summary, table = run_analysis(cfg)
    out = _out_dir(cfg.out)
    write_json(out / "results.json", summary)
    write_csv(out / "table.csv", table)


def propensity(cfg: RunConfig) -> None:
    graph, nodes, load_report = _load(cfg)
    mapping = ex.from_spec(cfg.exposure)
    design = _design(cfg, nodes, graph)
    table = _propensities(cfg, mapping, design, graph)
    sample = ex.effective_sample(mapping, table)
    labels = [ex.format_label(s) for s in table.support]

    frame = pd.DataFrame({"id": np.arange(graph.n)})
    for k, label in enumerate(labels):
        frame[f"pi_{label}"] = table.pi[:, k]
    if table.mc_std_err is not None:
        for k, label in enumerate(labels):
            frame[f"se_{label}"] = table.mc_std_err[:, k]
    effective = np.zeros(graph.n, dtype=bool)
    effective[sample.units] = True
    frame["effective"] = effective.astype(int)

    out = _out_dir(cfg.out)
    write_csv(out / "propensity.csv", frame)
    write_json(
        out / "propensity.json",
        {
            "config": cfg.to_dict(),
            "load": load_report,
            "method": table.method,
            "draws": table.draws,
            "seed": table.seed,
            "support": labels,
            "n_effective": len(sample.units),
        },
    )


def run_diagnose(cfg: RunConfig) -> None:
    if cfg.nodes is not None:
        n: int | None = load_nodes(_require(cfg.nodes, "nodes")).n
    else:
        n = None
    graph, load_report = load_graph(_require(cfg.edges, "edges"), n, cfg.directed)
    report = diagnose(graph, cfg.grid, threads=cfg.threads)
    out = _out_dir(cfg.out)
    write_csv(out / "diagnostics.csv", report.to_table())
    write_json(
        out / "diagnostics.json",
        {"load": dataclasses.asdict(load_report), **report.to_dict()},
    )


def simulate(cfg: SimConfig, out_dir: str) -> None:
    result = run_monte_carlo(cfg)
    out = _out_dir(out_dir)
    write_json(out / "simulation.json", {"config": cfg.to_dict(), "result": result.to_dict()})
    write_csv(out / "simulation.csv", result.to_table())
    write_csv(out / "simulation_table.csv", result.to_wide())


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"Cannot create output directory {path}: {e.strerror}") from e
    return out


def parse_grid(text: str) -> tuple[int, ...]:
    """`lo:hi` (inclusive) or a comma-separated list of bandwidths."""
    try:
        if ":" in text:
            lo, hi = (int(v) for v in text.split(":"))
            return tuple(range(lo, hi + 1))
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid bandwidth grid {text!r}") from None


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config value; dotted keys reach nested objects",
    )
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    inputs = argparse.ArgumentParser(add_help=False)
    inputs.add_argument("--edges", help="edge list CSV")
    inputs.add_argument("--nodes", help="node table CSV")
    inputs.add_argument("--directed", action="store_true", default=None)

    parser = argparse.ArgumentParser(
        prog="netexp", description="Design-based inference for network experiments."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    analyze_p = sub.add_parser("analyze", parents=[common, inputs], help="estimate effects")
    analyze_p.add_argument("--mc-draws", type=int)
    propensity_p = sub.add_parser(
        "propensity", parents=[common, inputs], help="compute propensity scores"
    )
    propensity_p.add_argument("--mc-draws", type=int)
    diagnose_p = sub.add_parser("diagnose", parents=[common, inputs], help="kernel diagnostics")
    diagnose_p.add_argument("--grid", type=parse_grid)
    simulate_p = sub.add_parser("simulate", parents=[common], help="Monte Carlo simulation")
    simulate_p.add_argument("--preset", choices=sorted(PRESETS))
    return parser


def _options(args: argparse.Namespace, names: t.Iterable[str]) -> list[str]:
    """Command-line options as `key=value` overrides, applied after `--set`."""
    overrides = []
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            overrides.append(f"{name}={json.dumps(value)}")
    return overrides


def _run(args: argparse.Namespace) -> None:
    if args.command == "simulate":
        if args.config is not None:
            base = SimConfig.load(args.config)
        elif args.preset is not None:
            base = PRESETS[args.preset]
        else:
            base = SimConfig()
        sim_cfg = base.with_overrides(args.set + _options(args, ("seed", "threads")))
        simulate(sim_cfg, args.out or "netexp-out")
        return

    base_cfg = RunConfig.load(args.config) if args.config is not None else RunConfig()
    names = ("edges", "nodes", "directed", "seed", "threads", "out", "mc_draws", "grid")
    cfg = base_cfg.with_overrides(args.set + _options(args, names))
    if args.command == "analyze":
        analyze(cfg)
    elif args.command == "propensity":
        propensity(cfg)
    else:
        run_diagnose(cfg)


def main(argv: t.Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        _run(args)
    except (ConfigError, ValueError) as e:
        print(f"netexp: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"netexp: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"netexp: numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NetexpError as e:
        print(f"netexp: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
