"""Multilevel regression and poststratification for panel polls, with a
synthetic-electorate simulator for partisan non-response."""

from .bootstrap import BootstrapConfig, BootstrapResult, attach_bands, cluster_bootstrap
from .diagnostics import INFINITE, SwingStats, TransitionMatrix, swing_reduction, swing_stats, transition_matrix
from .errors import (
    ComputationError,
    ConfigError,
    MRPError,
    NonConvergence,
    UnknownLevel,
    ValidationError,
)
from .estimate import (
    DEM_SHARE,
    DEMO,
    DEMO_PARTY,
    EstimateSeries,
    daily_series,
    partisan_share_series,
    poststratify,
)
from .lattice import (
    PARTIES,
    CellLattice,
    FactorSpec,
    PartyShares,
    WeightTable,
    build_lattice,
    default_lattice,
    extend_with_party,
    load_weights,
)
from .model import FittedModel, ModelSpec, Observations, fit_map, gradient, neg_log_posterior, predict_cell
from .panel import (
    INTENTS,
    Panel,
    ResponseSet,
    filter_first_before,
    fix_partisanship,
    panel_stats,
    parse_panel,
    two_party_subset,
    window_select,
)
from .simulate import SimConfig, config_from_dict, simulate_panel, swing_scenario, true_series

__all__ = [name for name in dir() if not name.startswith("_")]
