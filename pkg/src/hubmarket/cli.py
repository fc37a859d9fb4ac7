"""Command-line front end.

    hubmarket run --scenario scenarios/case5.yaml --mode both --out out

Exit status is 0 on success, 2 when the distributed run hits ``--max-iter``
before converging (outputs are still written) and 1 on input errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import report
from .agents import build_agent_subproblem
from .coordinator import (AdmmConfig, MarketOutcome, build_centralized_problem, build_rso_subproblem,
                          build_welfare_report, run_admm, solve_centralized)
from .hub import build_hub_subproblem
from .model import ScenarioError, load_scenario, validate_scenario
from .qp import QpError, dump_qp

MODES = ("distributed", "centralized", "both")


@dataclass(frozen=True)
class RunConfig:
    scenario: Path
    mode: str = "distributed"
    admm: AdmmConfig = AdmmConfig()
    out: Path = Path("out")
    seed: int = 0  # only for randomized test scaffolding; the solvers are deterministic
    dump_qps: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {', '.join(MODES)}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hubmarket", description="Regional electricity market with an energy hub.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="clear a scenario and write result tables")
    r.add_argument("--scenario", required=True, type=Path, help="scenario file (YAML)")
    r.add_argument("--mode", choices=MODES, default="distributed")
    r.add_argument("--rho", type=float, default=1.0, help="ADMM penalty (default 1)")
    r.add_argument("--gamma", type=int, default=4, help="price bits per hub price (default 4)")
    r.add_argument("--eps-p", type=float, default=1e-2, help="line-trade residual threshold (default 1e-2)")
    r.add_argument("--eps-theta", type=float, default=1e-3, help="angle residual threshold (default 1e-3)")
    r.add_argument("--max-iter", type=int, default=200)
    r.add_argument("--out", type=Path, default=Path("out"), help="output directory (default ./out)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--dump-qps", action="store_true", help="also write the first-round QPs as text")
    r.add_argument("-v", "--verbose", action="store_true")
    return ap


def _config(ns) -> RunConfig:
    admm = AdmmConfig(rho=ns.rho, eps_p=ns.eps_p, eps_theta=ns.eps_theta, max_iter=ns.max_iter, gamma=ns.gamma)
    return RunConfig(ns.scenario, ns.mode, admm, ns.out, ns.seed, ns.dump_qps)


def _dump_first_round(scenario, qdir: Path):
    """Hook writing every QP of the first iteration (agents, RSO, hub relaxation)."""
    qdir.mkdir(parents=True, exist_ok=True)

    def hook(state):
        if state.k != 1:
            return
        for n in scenario.network.nodes:
            dump_qp(build_agent_subproblem(scenario.agent(n), state.agent_view(n)), qdir / f"agent_{n}.qp")
        dump_qp(build_rso_subproblem(scenario, state), qdir / "rso.qp")
        if state.hub is not None:
            p = build_hub_subproblem(scenario.hub, state.hub_requests(), scenario.signals.gas_price,
                                     state.rho, state.config.gamma, state.hub_duals)
            dump_qp(p.relaxation, qdir / "hub_relaxation.qp")
    return hook


def _summary(rc: RunConfig, scenario, outcomes: dict[str, MarketOutcome]) -> str:
    c = rc.admm
    lines = [f"hubmarket  scenario={scenario.name}  T={scenario.horizon}  mode={rc.mode}",
             f"rho={c.rho:g}  gamma={c.gamma}  eps_p={c.eps_p:g}  eps_theta={c.eps_theta:g}  max_iter={c.max_iter}"]
    for mode, o in outcomes.items():
        w = build_welfare_report(o, scenario)
        head = f"{mode:<12} objective={o.objective:.6g}"
        if mode == "distributed":
            r = o.residuals[-1] if o.residuals else (0.0, 0.0)
            state = "converged" if o.converged else "NOT converged"
            head += f"  {state} after {o.iterations} iterations  r_P={r[0]:.3g}  r_theta={r[1]:.3g}"
        lines.append(head)
        lines.append(f"{'':<12} SC region={w.regional.sc:.6g}  SC EH={w.player('EH').sc:.6g}  ({o.seconds:.2f} s)")
    return "\n".join(lines)


def execute(rc: RunConfig, on_iteration=None) -> tuple[dict[str, MarketOutcome], list[Path]]:
    """Run the requested mode(s) and write all files; returns outcomes and paths."""
    scenario = load_scenario(rc.scenario)
    problems = validate_scenario(scenario)
    if problems:
        raise ScenarioError("; ".join(problems))
    rc.out.mkdir(parents=True, exist_ok=True)
    if rc.dump_qps:
        on_iteration = _dump_first_round(scenario, rc.out / "qps")
    outcomes: dict[str, MarketOutcome] = {}
    files: list[Path] = []
    if rc.mode in ("distributed", "both"):
        outcomes["distributed"] = run_admm(scenario, rc.admm, on_iteration)
    if rc.mode in ("centralized", "both"):
        d = outcomes.get("distributed")
        if d is not None:
            prices, caps = d.hub_prices, d.hub_caps
        else:
            h = scenario.hub
            T = scenario.horizon
            prices, caps = (np.full(T, h.sell_price_max), np.full(T, h.buy_price_min)), None
        outcomes["centralized"] = solve_centralized(scenario, prices, caps, tol=rc.admm.qp_tol)
        if rc.dump_qps:
            dump_qp(build_centralized_problem(scenario, prices, caps)[0], rc.out / "qps" / "centralized.qp")
    main = outcomes.get("distributed", outcomes.get("centralized"))
    files += report.write_outcome_csv(main, rc.out, scenario)
    if rc.mode == "both":
        files.append(report.write_welfare_csv(outcomes["centralized"], rc.out / "welfare_centralized.csv", scenario))
    report.emit_plot_data(main, rc.out / "plots", scenario)
    return outcomes, files


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        rc = _config(ns)
        if not rc.scenario.exists():
            raise FileNotFoundError(f"scenario file not found: {rc.scenario}")
        outcomes, _ = execute(rc)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ScenarioError, ValueError) as e:
        print(f"error: invalid input in {ns.scenario}: {e}", file=sys.stderr)
        return 1
    except QpError as e:
        print(f"error: the scenario could not be cleared: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: cannot write to {ns.out}: {e}", file=sys.stderr)
        return 1
    scenario = load_scenario(rc.scenario)
    print(_summary(rc, scenario, outcomes))
    d = outcomes.get("distributed")
    if d is not None and not d.converged:
        print(f"error: not converged within {rc.admm.max_iter} iterations; raise --max-iter or --rho",
              file=sys.stderr)
        return 2
    return 0


def run_cli(argv=None) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
