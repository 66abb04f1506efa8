# re-import names that should be visible to the user
from .harness import SimConfig, SimResult, SimRow, run_monte_carlo  # noqa: F401
from .models import NetworkModel, OutcomeModel, Population  # noqa: F401
from .models import gen_network, make_population  # noqa: F401
from .presets import PRESETS  # noqa: F401
