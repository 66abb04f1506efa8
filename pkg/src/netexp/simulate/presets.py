from __future__ import annotations

from .harness import SimConfig
from .models import NetworkModel, OutcomeModel

DESK_DRAWS = 2_000

TABLE1_DESK = SimConfig(
    network=NetworkModel(kind="rgg", n=800, kappa=5.0),
    outcome=OutcomeModel(
        kind="linear_in_means", alpha=-1.0, beta=0.8, delta=1.0, xi=1.0, gamma=3.0
    ),
    design={"kind": "iid_bernoulli", "p": 0.5},
    exposure={"kind": "any_treated_neighbor"},
    oracle_draws=DESK_DRAWS,
    estimate_draws=DESK_DRAWS,
)

TABLE1_CONTAGION_DESK = TABLE1_DESK.replace(
    outcome=OutcomeModel(
        kind="complex_contagion", alpha=-1.0, beta=1.5, delta=1.0, xi=1.0, gamma=3.0
    ),
)

# No interference: direct effect with unit-specific Bernoulli probabilities.
DESIGN1 = SimConfig(
    network=NetworkModel(kind="rgg", n=500, kappa=5.0),
    outcome=OutcomeModel(
        kind="linear",
        coefficients={"const": 1.0, "D": 4.0, "x": 2.0, "D_exp_x2": 0.1},
        noise_sd=1.0,
        homophily=False,
    ),
    design={"kind": "iid_bernoulli", "p_uniform": [0.1, 0.9]},
    exposure={"kind": "direct"},
    include_ht=False,
    bandwidth=0,
    oracle_draws=DESK_DRAWS,
    estimate_draws=DESK_DRAWS,
)

_SPILLOVER_OUTCOME = OutcomeModel(
    kind="linear",
    coefficients={"const": 1.0, "AD": -0.9, "D": 6.0, "x": -1.0, "D_exp_x": 0.2, "Ax": -3.0},
    noise_sd=4.0,
    homophily=False,
)

# A tenth of the units treated by complete randomization.
DESIGN2 = SimConfig(
    network=NetworkModel(kind="rgg", n=500, kappa=8.0),
    outcome=_SPILLOVER_OUTCOME,
    design={"kind": "block_complete", "treat_frac": 0.1},
    exposure={"kind": "direct"},
    include_ht=False,
    bandwidth=2,
    oracle_draws=DESK_DRAWS,
    estimate_draws=DESK_DRAWS,
)

# Probabilities cut to a quarter once an earlier neighbor is treated.
DESIGN3 = SimConfig(
    network=NetworkModel(kind="rgg", n=500, kappa=5.0),
    outcome=_SPILLOVER_OUTCOME,
    design={
        "kind": "sequential_neighbor",
        "p_uniform": [0.4, 0.8],
        "factor": 0.25,
        "order": "random",
    },
    exposure={"kind": "direct"},
    include_ht=False,
    bandwidth=2,
    oracle_draws=DESK_DRAWS,
    estimate_draws=DESK_DRAWS,
)

# Probabilities doubled once an earlier neighbor is treated; no covariates in the outcome.
HT_VS_HAJEK = SimConfig(
    network=NetworkModel(kind="rgg", n=500, kappa=5.0),
    outcome=OutcomeModel(
        kind="linear",
        coefficients={"const": 1.0, "AD": -1.0, "D": -1.0},
        noise_sd=4.0,
        homophily=False,
    ),
    design={
        "kind": "sequential_neighbor",
        "p_uniform": [0.2, 0.4],
        "factor": 2.0,
        "order": "random",
    },
    exposure={"kind": "direct"},
    specs=("unadjusted",),
    bandwidth=2,
    oracle_draws=DESK_DRAWS,
    estimate_draws=DESK_DRAWS,
)

PRESETS: dict[str, SimConfig] = {
    "table1-desk": TABLE1_DESK,
    "table1-contagion-desk": TABLE1_CONTAGION_DESK,
    "design1": DESIGN1,
    "design2": DESIGN2,
    "design3": DESIGN3,
    "ht-vs-hajek": HT_VS_HAJEK,
}
