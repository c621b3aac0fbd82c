from .metrics import pseudo_regret, regret_decomposition_report, table1_summary
from .runner import prepare, run_experiment
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario

__all__ = ["Scenario", "ScenarioError", "load_scenario", "parse_scenario", "prepare",
           "pseudo_regret", "regret_decomposition_report", "run_experiment", "table1_summary"]
