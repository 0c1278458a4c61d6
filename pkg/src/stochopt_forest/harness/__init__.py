from .benchmark import BenchmarkReport, bench_timing, run_benchmark
from .metrics import EvaluationSet, prescriptiveness, relative_risk
from .scenarios import SCENARIOS, Scenario, get_scenario, simulate

__all__ = [
    "BenchmarkReport",
    "EvaluationSet",
    "SCENARIOS",
    "Scenario",
    "bench_timing",
    "get_scenario",
    "prescriptiveness",
    "relative_risk",
    "run_benchmark",
    "simulate",
]
