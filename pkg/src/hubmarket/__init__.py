"""Regional electricity market with an energy hub.

Nodal agents and a regional system operator clear line trades by ADMM while
an energy hub (CHP unit plus battery) sets its buy and sell prices each
round through a binary-expansion MIQP.  A single-QP centralized clearing
serves as the benchmark.
"""

from .agents import AgentDecision, AgentView, solve_agent
from .coordinator import (AdmmConfig, HubPrices, MarketOutcome, NotConverged, WelfareReport, build_welfare_report,
                          run_admm, solve_centralized)
from .hub import HubDecision, solve_hub
from .miqp import enumerate_miqp_oracle, solve_miqp
from .model import Scenario, ScenarioError, load_scenario, validate_scenario
from .qp import QpInfeasible, QpProblem, make_qp, solve_qp

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig", "AgentDecision", "AgentView", "HubDecision", "HubPrices", "MarketOutcome", "NotConverged",
    "QpInfeasible", "QpProblem", "Scenario", "ScenarioError", "WelfareReport", "build_welfare_report",
    "enumerate_miqp_oracle", "load_scenario", "make_qp", "run_admm", "solve_agent", "solve_centralized",
    "solve_hub", "solve_miqp", "solve_qp", "validate_scenario",
]
