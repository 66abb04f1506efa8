import math

import numpy as np
import pandas as pd
import pytest

from netexp.errors import ConfigError, SimulationError
from netexp.graph import Graph
from netexp.simulate import PRESETS, SimConfig, models, run_monte_carlo
from netexp.simulate.models import NetworkModel, OutcomeModel

SMALL = SimConfig(
    network=NetworkModel(kind="rgg", n=200, kappa=5.0),
    specs=("unadjusted", "additive"),
    oracle_draws=30,
    estimate_draws=30,
    bandwidth=1,
    seed=3,
)

# complete randomization of 6 out of 12 units can be enumerated
ENUMERABLE = SimConfig(
    network=NetworkModel(kind="rgg", n=12, kappa=5.0),
    outcome=OutcomeModel(kind="linear", coefficients={"const": 1.0, "D": 2.0}, homophily=False),
    design={"kind": "block_complete", "treat_frac": 0.5},
    exposure={"kind": "direct"},
    specs=("unadjusted",),
    oracle_draws=20,
    estimate_draws=20,
    bandwidth=1,
)


def test_rgg_links_units_within_radius():
    model = NetworkModel(kind="rgg", n=200, kappa=5.0)
    g, positions = models.gen_network(model, 5)
    radius = math.sqrt(5.0 / (math.pi * 200))
    dist = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=-1)
    expected = (dist <= radius) & ~np.eye(200, dtype=bool)
    np.testing.assert_array_equal(g.adjacency.toarray() > 0, expected)


def test_rgg_mean_degree():
    degrees = [
        models.gen_network(NetworkModel(n=1000, kappa=5.0), seed)[0].adjacency.nnz / 1000
        for seed in range(10)
    ]
    assert 4 <= np.mean(degrees) <= 6


def test_erdos_renyi_mean_degree():
    g, positions = models.gen_network(NetworkModel(kind="erdos_renyi", n=2000, expected_degree=5.0), 1)
    assert positions is None
    assert g.adjacency.nnz / 2000 == pytest.approx(5.0, abs=0.5)


def population(outcome: OutcomeModel, n: int = 50, seed: int = 0):
    return models.make_population(NetworkModel(n=n), outcome, seed)[0]


def test_linear_in_means_matches_neumann_series():
    pop = population(OutcomeModel())
    d = (np.arange(pop.n) % 3 == 0).astype(float)
    params = pop.outcome
    rhs = params.alpha + params.delta * (pop.a_norm @ d) + params.xi * d + params.gamma * pop.x + pop.eps
    expected = np.zeros(pop.n)
    term = rhs.copy()
    for _ in range(200):
        expected += term
        term = params.beta * (pop.a_norm @ term)
    np.testing.assert_allclose(pop.respond(d), expected, atol=1e-8)


def test_linear_in_means_without_peer_effect():
    pop = population(OutcomeModel(beta=0.0))
    d = np.ones(pop.n)
    assert pop.solver is None
    np.testing.assert_allclose(pop.respond(d), -1 + pop.a_norm @ d + 1 + 3 * pop.x + pop.eps)


def test_complex_contagion_reaches_fixed_point():
    params = OutcomeModel(kind="complex_contagion", beta=1.5)
    pop = population(params, n=200)
    d = (np.arange(pop.n) % 2).astype(float)
    y = pop.respond(d)
    base = params.alpha + params.delta * (pop.a_norm @ d) + params.xi * d + params.gamma * pop.x + pop.eps
    np.testing.assert_array_equal(y, (base + params.beta * (pop.a_norm @ y) > 0).astype(float))

    # reference iteration from period 0
    current = (base > 0).astype(float)
    while True:
        nxt = (base + params.beta * (pop.a_norm @ current) > 0).astype(float)
        if (nxt == current).all():
            break
        current = nxt
    np.testing.assert_array_equal(y, current)


def test_linear_outcome_terms():
    params = OutcomeModel(kind="linear", coefficients={"const": 1.0, "D": 2.0, "AD": -1.0}, homophily=False)
    pop = population(params)
    d = (np.arange(pop.n) < 10).astype(float)
    np.testing.assert_allclose(pop.respond(d), 1 + 2 * d - pop.a_norm @ d + pop.eps)


def test_row_normalize_isolated_units():
    g = models.gen_network(NetworkModel(kind="erdos_renyi", n=5, expected_degree=0.0), 0)[0]
    assert models.row_normalize(g).nnz == 0
    a = models.row_normalize(Graph.from_edges(3, [0, 1], [1, 2]))
    np.testing.assert_allclose(np.asarray(a.sum(axis=1)).ravel(), [1.0, 1.0, 1.0])


def test_homophily_needs_positions():
    with pytest.raises(ConfigError, match="positions"):
        models.homophily_errors(None, 0)
    with pytest.raises(ConfigError, match="positions"):
        models.make_population(NetworkModel(kind="erdos_renyi", n=20), OutcomeModel(), 0)


def test_population_is_reproducible():
    a, _ = models.make_population(NetworkModel(n=100), OutcomeModel(), 9)
    b, _ = models.make_population(NetworkModel(n=100), OutcomeModel(), 9)
    assert (a.graph.adjacency != b.graph.adjacency).nnz == 0
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.eps, b.eps)


VECTORS_INVALID_CONFIG = (
    ({"outcome": {"beta": 1.2}}, "beta"),
    ({"outcome": {"kind": "logit"}}, "Unknown outcome kind"),
    ({"outcome": {"kind": "linear", "coefficients": {"D2": 1.0}}}, "Unknown outcome term"),
    ({"network": {"kind": "lattice"}}, "Unknown network kind"),
    ({"specs": ["ht"]}, "include_ht"),
    ({"eligible_share": 0.0}, "Eligible share"),
    ({"oracle_draws": 1}, "two draws"),
    ({"threads": 0}, "Thread count"),
    ({"draws": 100}, "unknown field"),
)


@pytest.mark.parametrize("data, match", VECTORS_INVALID_CONFIG)
def test_invalid_config(data, match):
    with pytest.raises(ConfigError, match=match):
        SimConfig.from_dict(data)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_round_trip(name):
    cfg = PRESETS[name]
    assert SimConfig.from_dict(cfg.to_dict()) == cfg


def test_config_overrides():
    cfg = SMALL.with_overrides(["outcome.beta=0.5", "seed=11", 'design={"kind": "iid_bernoulli", "p": 0.3}'])
    assert cfg.outcome.beta == 0.5
    assert cfg.outcome.gamma == SMALL.outcome.gamma
    assert cfg.seed == 11
    assert cfg.design == {"kind": "iid_bernoulli", "p": 0.3}


def test_small_run():
    result = run_monte_carlo(SMALL)
    table = result.to_table()
    # two regressions with oracle/raw/plus/ehw rows, HT with oracle/leung/leung_plus
    assert len(table) == 11
    assert list(table["spec"].unique()) == ["Unadj", "Add", "HT"]
    assert table["coverage"].between(0, 1).all()
    assert (table["oracle_se"] >= 0).all()
    assert result.estimand_method == "monte_carlo"
    assert result.propensity_method == "exact"
    assert result.bandwidth == 1
    assert result.locality == 1
    assert result.contrast_labels == ("1-0",)

    wide = result.to_wide()
    assert list(wide.columns) == ["contrast", "quantity", "Unadj", "Add", "HT"]
    assert "WLS+ coverage" in set(wide["quantity"])


def test_run_is_independent_of_threads():
    serial = run_monte_carlo(SMALL)
    threaded = run_monte_carlo(SMALL.replace(threads=4))
    pd.testing.assert_frame_equal(serial.to_table(), threaded.to_table())
    assert serial.estimand == threaded.estimand


def test_run_depends_on_seed():
    a = run_monte_carlo(SMALL).to_table()
    b = run_monte_carlo(SMALL.replace(seed=4)).to_table()
    assert not a["estimate"].equals(b["estimate"])


def test_without_ht():
    result = run_monte_carlo(SMALL.replace(include_ht=False))
    assert "HT" not in set(result.to_table()["spec"])


def test_enumerated_estimand():
    result = run_monte_carlo(ENUMERABLE)
    assert result.estimand_method == "enumeration"
    assert result.estimand[0] == pytest.approx(2.0, abs=1e-9)
    assert result.n_effective == 12


def test_failed_draw_reports_index_and_seed():
    # a single treated unit cannot identify a covariate slope in its cell
    cfg = ENUMERABLE.replace(design={"kind": "block_complete", "treat_frac": 0.1}, specs=("fully_interacted",), seed=5)
    with pytest.raises(SimulationError, match="Draw 0 \\(seed 5\\) failed"):
        run_monte_carlo(cfg)


def oracle_se(result, spec):
    table = result.to_table()
    row = table[(table["spec"] == spec) & (table["flavor"] == "oracle")]
    return float(row["oracle_se"].iloc[0])


@pytest.mark.slow
def test_desk_preset_coverage():
    result = run_monte_carlo(PRESETS["table1-desk"])
    table = result.to_table()
    oracle = table[(table["spec"] == "Unadj") & (table["flavor"] == "oracle")]
    assert 0.935 <= float(oracle["coverage"].iloc[0]) <= 0.965
    for spec in ("Unadj", "Add", "Sat"):
        rows = table[table["spec"] == spec].set_index("flavor")
        assert rows.loc["plus", "coverage"] >= rows.loc["raw", "coverage"]
    assert oracle_se(result, "Add") <= 0.85 * oracle_se(result, "Unadj")


def count_seeds(name, holds, seeds=range(5)):
    cfg = PRESETS[name].replace(estimate_draws=2, propensity_draws=20_000)
    return sum(holds(run_monte_carlo(cfg.replace(seed=seed))) for seed in seeds)


@pytest.mark.slow
def test_design1_full_interaction_loses_efficiency():
    assert count_seeds("design1", lambda r: oracle_se(r, "Sat") > oracle_se(r, "Unadj")) >= 4


@pytest.mark.slow
@pytest.mark.parametrize("name", ["design2", "design3"])
def test_full_interaction_loses_efficiency_under_interference(name):
    def holds(r):
        return oracle_se(r, "Sat") > min(oracle_se(r, "Unadj"), oracle_se(r, "Add"))

    assert count_seeds(name, holds) >= 4


@pytest.mark.slow
def test_horvitz_thompson_beats_hajek():
    assert count_seeds("ht-vs-hajek", lambda r: oracle_se(r, "HT") < oracle_se(r, "Unadj")) >= 4
