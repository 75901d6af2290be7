"""Signalized-corridor emergency-vehicle preemption laboratory.

Thin Python surface over the C++ core: network construction, scenario
simulation under the six preemption strategies, preemption-timing searches,
soft-label utilities, model persistence and the real-time benchmark.
"""

from evplab._core import (
    FEATURE_COUNT,
    ConfigError,
    CorridorPolicy,
    DataError,
    NetworkSpec,
    SimError,
    __version__,
    bench_realtime,
    build_labels,
    constant_policy,
    curve_forms,
    curve_value,
    default_testbed,
    ideal_call_search,
    load_network,
    model_score,
    optimal_call_search,
    run_scenario,
)

__all__ = [
    "FEATURE_COUNT",
    "ConfigError",
    "CorridorPolicy",
    "DataError",
    "NetworkSpec",
    "SimError",
    "__version__",
    "bench_realtime",
    "build_labels",
    "constant_policy",
    "curve_forms",
    "curve_value",
    "default_testbed",
    "ideal_call_search",
    "load_network",
    "model_score",
    "optimal_call_search",
    "run_scenario",
]
