"""Balanced allocations with double hashing: simulation, fluid limits and coupling."""

__version__ = "0.1.0"

from .core import (ConfigError, ConsistencyError, HashPair, OrderedView, RngStream, SimConfig,
                   Streams, TableState, dominates, is_prime, next_prime_at_least, ordered_view)
from .placement import (double_hash_choices, ordered_distribution, place_double,
                        place_least_loaded, place_modified, place_random_d, run_process)
from .eta import eta_exact, eta_expectation_audit, lemma4_failure_scan
from .coupling import (CouplingConfig, correction_distribution, domination_step_property,
                       extra_ball_tally, run_coupling)
from .fluid import fluid_fraction_at, solve_fluid
from .experiments import beta_bound, compare_strategies, max_load_study, run_trials
