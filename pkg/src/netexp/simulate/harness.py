from __future__ import annotations

import dataclasses
import logging
import typing as t
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .. import design as dz
from .. import exposure as ex
from ..covariance import (
    Z95,
    KernelMatrix,
    KernelSplit,
    build_kernel,
    contrast_se,
    ehw_cov,
    hac_cov,
    hac_cov_plus,
    ht_contrast_terms,
    leung_ht_variance,
    psd_split,
    suggest_bandwidth,
)
from ..errors import ConfigError, NetexpError, SimulationError
from ..estimate import Contrast, Dataset, FitSpec, fit, horvitz_thompson
from ..graph import FloatArray, IntArray
from ..record import Record, nested
from ..utils import Stream, parallel_map, rng_stream
from .models import NetworkModel, OutcomeModel, Population, make_population

LOG = logging.getLogger(__name__)

# Assignment spaces up to this size replace the Monte Carlo estimand by exact enumeration.
EXACT_ESTIMAND_CAP = 2**14

WLS_FLAVORS = ("raw", "plus", "ehw")
HT_FLAVORS = ("leung", "leung_plus")

# HT flavors share rows with their weighted-regression counterparts in wide tables.
FLAVOR_LABELS = {
    "oracle": "Oracle",
    "raw": "WLS",
    "leung": "WLS",
    "plus": "WLS+",
    "leung_plus": "WLS+",
    "ehw": "EHW",
}


class SimConfig(Record):
    network: NetworkModel = nested(NetworkModel, default=NetworkModel())
    outcome: OutcomeModel = nested(OutcomeModel, default=OutcomeModel())
    design: t.Dict[str, t.Any] = field(
        default_factory=lambda: {"kind": "iid_bernoulli", "p": 0.5}
    )
    exposure: t.Dict[str, t.Any] = field(
        default_factory=lambda: {"kind": "any_treated_neighbor"}
    )
    contrast: t.Optional[t.Dict[str, t.Any]] = None
    specs: t.Tuple[str, ...] = ("unadjusted", "additive", "fully_interacted")
    include_ht: bool = True
    eligible_share: float = 1.0
    oracle_draws: int = 10_000
    estimate_draws: int = 10_000
    propensity_draws: int = 100_000
    bandwidth: t.Optional[int] = None
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "specs", tuple(self.specs))
        for spec in self.specs:
            if FitSpec.parse(spec) == FitSpec.HT_TRANSFORMED:
                raise ValueError(
                    "List weighted regressions in specs; HT is controlled by include_ht"
                )
        if not 0 < self.eligible_share <= 1:
            raise ValueError("Eligible share must lie in (0, 1]")
        if min(self.oracle_draws, self.estimate_draws, self.propensity_draws) < 2:
            raise ValueError("Every phase needs at least two draws")
        if self.bandwidth is not None and self.bandwidth < 0:
            raise ValueError("Bandwidth must be nonnegative")
        if self.threads < 1:
            raise ValueError("Thread count must be positive")


class SimRow(Record):
    spec: str
    flavor: str
    contrast: str
    estimand: float
    estimate: float
    oracle_se: float
    mean_se: float
    coverage: float
    invalid_share: float = 0.0


class SimResult(Record):
    seed: int
    n: int
    n_effective: int
    bandwidth: int
    locality: int
    kernel_psd: bool
    propensity_method: str
    estimand_method: str
    oracle_draws: int
    estimate_draws: int
    contrast_labels: t.Tuple[str, ...]
    estimand: t.Tuple[float, ...]
    rows: t.Tuple[SimRow, ...] = nested(SimRow, default=())

    def to_table(self) -> pd.DataFrame:
        columns = [f.name for f in dataclasses.fields(SimRow)]
        return pd.DataFrame([row.to_dict() for row in self.rows], columns=columns)

    def to_wide(self) -> pd.DataFrame:
        """One column per specification, rows grouped by contrast as in a results table."""
        records: dict[tuple[str, str], dict[str, float]] = {}
        for row in self.rows:
            label = FLAVOR_LABELS[row.flavor]
            cells = [
                ("Estimand", row.estimand),
                ("Estimate", row.estimate),
                (f"{label} SE", row.oracle_se if row.flavor == "oracle" else row.mean_se),
                (f"{label} coverage", row.coverage),
            ]
            for quantity, value in cells:
                records.setdefault((row.contrast, quantity), {})[row.spec] = value
        specs = list(dict.fromkeys(row.spec for row in self.rows))
        index = pd.MultiIndex.from_tuples(list(records), names=["contrast", "quantity"])
        return pd.DataFrame(list(records.values()), index=index, columns=specs).reset_index()


@dataclass(frozen=True, eq=False)
class _Setup:
    population: Population
    design: dz.Design
    mapping: ex.ExposureMapping
    propensities: dz.PropensityTable
    units: IntArray
    contrast: Contrast
    specs: tuple[FitSpec, ...]
    kernel: KernelMatrix
    split: KernelSplit


@dataclass(frozen=True, eq=False)
class _Draw:
    """Per-draw results; rows of `estimates` follow the spec order with HT last."""

    estimates: FloatArray
    ses: dict[str, FloatArray] = field(default_factory=dict)


def prepare(cfg: SimConfig) -> _Setup:
    """Draw the population and everything fixed across treatment draws."""
    population, rng = make_population(cfg.network, cfg.outcome, cfg.seed)
    g = population.graph
    eligible = rng.random(g.n) < cfg.eligible_share
    design = dz.from_spec(cfg.design, dz.DesignContext(g.n, eligible, graph=g, rng=rng))
    mapping = ex.from_spec(cfg.exposure)
    support, locality = ex.exposure_support(mapping)
    contrast = (
        Contrast.default(support)
        if cfg.contrast is None
        else Contrast.from_spec(cfg.contrast, support)
    )
    if contrast.matrix.shape[1] != len(support):
        raise ConfigError(f"Contrast needs {len(support)} columns")

    propensities = dz.propensity(
        mapping, design, g, cfg.propensity_draws, cfg.seed, cfg.threads
    )
    units = ex.effective_sample(mapping, propensities).units
    bandwidth = cfg.bandwidth if cfg.bandwidth is not None else suggest_bandwidth(g, locality)
    kernel = build_kernel(g, units, bandwidth)
    split = psd_split(kernel)
    LOG.info(
        "Population: n=%d, effective=%d, bandwidth=%d, kernel PSD=%s",
        g.n,
        len(units),
        bandwidth,
        split.is_psd,
    )
    specs = tuple(FitSpec.parse(s) for s in cfg.specs)
    return _Setup(
        population, design, mapping, propensities, units, contrast, specs, kernel, split
    )


def _dataset(setup: _Setup, d: np.ndarray) -> Dataset:
    population = setup.population
    y = population.respond(d)
    exposures = ex.compute_exposures(setup.mapping, d, population.graph)
    return Dataset.build(
        y, exposures, setup.propensities, setup.units, population.x[:, None], ("x",)
    )


def _ht_estimate(setup: _Setup, ds: Dataset) -> FloatArray:
    mu = np.array([horvitz_thompson(ds, t) for t in range(ds.n_levels)])
    return setup.contrast.matrix @ mu


def _evaluate(setup: _Setup, d: np.ndarray, with_se: bool) -> _Draw:
    ds = _dataset(setup, d)
    g_matrix = setup.contrast.matrix
    estimates = []
    ses: dict[str, list[FloatArray]] = {f: [] for f in WLS_FLAVORS + HT_FLAVORS}
    nan_row = np.full(len(g_matrix), np.nan)
    for spec in setup.specs:
        result = fit(ds, spec)
        estimates.append(g_matrix @ result.beta)
        if with_se:
            ses["raw"].append(contrast_se(hac_cov(result, setup.kernel), setup.contrast).se)
            ses["plus"].append(contrast_se(hac_cov_plus(result, setup.split), setup.contrast).se)
            ses["ehw"].append(contrast_se(ehw_cov(result), setup.contrast).se)
            for flavor in HT_FLAVORS:
                ses[flavor].append(nan_row)

    estimates.append(_ht_estimate(setup, ds))
    if with_se:
        for flavor in WLS_FLAVORS:
            ses[flavor].append(nan_row)
        leung, leung_plus = [], []
        for row in g_matrix:
            delta, tau = ht_contrast_terms(ds, row)
            leung.append(leung_ht_variance(delta, tau, setup.kernel) / ds.n)
            leung_plus.append(leung_ht_variance(delta, tau, setup.split.k_plus) / ds.n)
        for flavor, variances in (("leung", leung), ("leung_plus", leung_plus)):
            v = np.array(variances)
            ses[flavor].append(np.where(v < 0, np.nan, np.sqrt(np.abs(v))))

    return _Draw(np.array(estimates), {k: np.array(v) for k, v in ses.items() if with_se})


def _run_phase(
    setup: _Setup, cfg: SimConfig, stream: Stream, draws: int, with_se: bool
) -> list[_Draw]:
    def one(r: int) -> _Draw:
        d = setup.design.draw(rng_stream(cfg.seed, stream, r))
        try:
            return _evaluate(setup, d, with_se)
        except NetexpError as e:
            raise SimulationError(str(e), r, cfg.seed) from e

    return parallel_map(one, range(draws), cfg.threads)


def exact_estimand(setup: _Setup) -> FloatArray | None:
    """Expected HT contrast over every assignment, when the design is small enough."""
    size = setup.design.assignment_space_size()
    if size is None or size > EXACT_ESTIMAND_CAP:
        return None
    total = np.zeros(setup.contrast.n_rows)
    for d, prob in dz.enumerate_assignments(setup.design, EXACT_ESTIMAND_CAP):
        total += prob * _ht_estimate(setup, _dataset(setup, d))
    return total


def run_monte_carlo(cfg: SimConfig) -> SimResult:
    """Two-phase finite-population simulation.

    The first phase fixes the estimand and the oracle standard errors; the
    second, with independent draws, records estimates, standard errors and
    coverage of 95% normal intervals.
    """
    setup = prepare(cfg)
    specs = [s.short for s in setup.specs] + ["HT"]
    wls = len(setup.specs)

    LOG.info("Phase 1: %d draws", cfg.oracle_draws)
    phase1 = _run_phase(setup, cfg, Stream.ORACLE, cfg.oracle_draws, False)
    first = np.stack([d.estimates for d in phase1])
    oracle_se = first.std(axis=0, ddof=1)

    estimand = exact_estimand(setup)
    estimand_method = "enumeration"
    if estimand is None:
        estimand = first[:, -1, :].mean(axis=0)
        estimand_method = "monte_carlo"

    LOG.info("Phase 2: %d draws", cfg.estimate_draws)
    phase2 = _run_phase(setup, cfg, Stream.ESTIMATE, cfg.estimate_draws, True)
    estimates = np.stack([d.estimates for d in phase2])
    mean_estimate = estimates.mean(axis=0)

    rows: list[SimRow] = []
    for k, spec in enumerate(specs):
        if spec == "HT" and not cfg.include_ht:
            continue
        flavors = ("oracle",) + (WLS_FLAVORS if k < wls else HT_FLAVORS)
        for flavor in flavors:
            if flavor == "oracle":
                se = np.broadcast_to(oracle_se[k], estimates[:, k, :].shape)
            else:
                se = np.stack([d.ses[flavor][k] for d in phase2])
            covered = np.abs(estimates[:, k, :] - estimand) <= Z95 * se
            invalid = ~np.isfinite(se)
            for j, label in enumerate(setup.contrast.labels):
                finite = se[:, j][~invalid[:, j]]
                rows.append(
                    SimRow(
                        spec=spec,
                        flavor=flavor,
                        contrast=label,
                        estimand=float(estimand[j]),
                        estimate=float(mean_estimate[k, j]),
                        oracle_se=float(oracle_se[k, j]),
                        mean_se=float(finite.mean()) if len(finite) else float("nan"),
                        coverage=float(covered[:, j].mean()),
                        invalid_share=float(invalid[:, j].mean()),
                    )
                )

    return SimResult(
        seed=cfg.seed,
        n=setup.population.n,
        n_effective=len(setup.units),
        bandwidth=setup.kernel.bandwidth,
        locality=setup.mapping.locality,
        kernel_psd=setup.split.is_psd,
        propensity_method=setup.propensities.method,
        estimand_method=estimand_method,
        oracle_draws=cfg.oracle_draws,
        estimate_draws=cfg.estimate_draws,
        contrast_labels=setup.contrast.labels,
        estimand=tuple(float(v) for v in estimand),
        rows=tuple(rows),
    )
