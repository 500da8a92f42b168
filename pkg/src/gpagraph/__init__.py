"""Simulation of on-line nearest-neighbour graphs and geometric preferential
attachment graphs, with degree-tail estimation and fitting tools."""
from .errors import CoincidentPointError, ConfigError, EmptyIndexError, FitError, GpaError
from .geometry import AttractivenessSpec, DensitySpec, DomainSpec, RngStream, distance, log_attractiveness
from .growth import (GraphState, ModelSpec, attachment_log_weights, grow_step, init_graph, run_growth,
                     sample_attachment, write_graph_csv)
from .spatial_index import NeighborResult, OnlineIndex
from .stats import (DegreeTail, MismatchStats, RateFit, TailEstimate, aggregate_tail, degree_tail,
                    fit_exponential_rate, fit_power_law_tail, fit_stretched_exponential,
                    max_degree_growth, mismatch_fraction)
from .experiments import ExperimentConfig, RunResult, SweepSpec, run_experiment, run_sweep

__version__ = "0.1.0"
