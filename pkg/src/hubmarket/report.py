"""CSV tables and plot-ready series for a cleared market.

All numbers are written with six significant digits (``%.6g``).  The CSV
readers return plain arrays so that tests can compare them against the
outcome that produced them.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .coordinator import MarketOutcome, WelfareReport, build_welfare_report
from .model import Scenario

HEADERS = {
    "trades.csv": ["period", "from", "to", "MW", "$/MWh"],
    "upstream.csv": ["period", "node", "buy MW", "sell MW"],
    "hub.csv": ["period", "gas MW", "SOC MWh", "buy MW", "sell MW", "buy price", "sell price"],
    "residuals.csv": ["iteration", "r_P", "r_theta"],
    "welfare.csv": ["player", "v_or_c", "revenue", "SC"],
}
OUTCOME_FILES = tuple(HEADERS)


def fmt(v) -> str:
    s = "%.6g" % float(v)
    return "0" if s == "-0" else s


def _write(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([c if isinstance(c, str) else fmt(c) if isinstance(c, float) else c for c in r])
    return path


def _hub_series(outcome: MarketOutcome, T: int) -> dict:
    h = outcome.hub
    z = np.zeros(T)
    if h is None:
        return {"gas": z, "soc": z, "buy": outcome.hub_sell.sum(axis=1), "sell": outcome.hub_buy.sum(axis=1)}
    return {"gas": h.gas, "soc": h.soc_end, "buy": h.buy_qty, "sell": h.sell_qty}


def welfare_rows(report: WelfareReport, scenario: Scenario) -> list[list]:
    """Rows in the comparison-table layout: one per node plus ``EH``.

    The regional SC is printed once, on the first node row; the other node
    rows leave SC blank.  The EH row carries its own SC.
    """
    rows = []
    labels = [scenario.agent(n).label or str(n) for n in scenario.network.nodes]
    region = report.regional
    for k, lab in enumerate(labels):
        p = report.player(lab)
        rows.append([lab, float(p.v_or_c), float(p.revenue), float(region.sc) if k == 0 else ""])
    eh = report.player("EH")
    rows.append(["EH", float(eh.v_or_c), float(eh.revenue), float(eh.sc)])
    return rows


def write_welfare_csv(outcome: MarketOutcome, path, scenario: Scenario) -> Path:
    report = build_welfare_report(outcome, scenario)
    return _write(Path(path), HEADERS["welfare.csv"], welfare_rows(report, scenario))


def write_outcome_csv(outcome: MarketOutcome, out_dir, scenario: Scenario) -> list[Path]:
    """Write trades, upstream, hub, residual and welfare tables into ``out_dir``.

    Raises
    ------
    OSError
        The directory cannot be created or written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net, T = scenario.network, outcome.horizon
    lp = outcome.line_price(scenario)
    trades = [[t, ln.from_node, ln.to_node, float(outcome.flow[t, k]), float(lp[t, k])]
              for t in range(T) for k, ln in enumerate(net.lines)]
    upstream = [[t, n, float(outcome.up_buy[t, i]), float(outcome.up_sell[t, i])]
                for t in range(T) for i, n in enumerate(net.nodes)]
    hs = _hub_series(outcome, T)
    hub = [[t, float(hs["gas"][t]), float(hs["soc"][t]), float(hs["buy"][t]), float(hs["sell"][t]),
            float(outcome.hub_prices.buy[t]), float(outcome.hub_prices.sell[t])] for t in range(T)]
    resid = [[k + 1, float(r[0]), float(r[1])] for k, r in enumerate(outcome.residuals)]
    return [
        _write(out / "trades.csv", HEADERS["trades.csv"], trades),
        _write(out / "upstream.csv", HEADERS["upstream.csv"], upstream),
        _write(out / "hub.csv", HEADERS["hub.csv"], hub),
        _write(out / "residuals.csv", HEADERS["residuals.csv"], resid),
        write_welfare_csv(outcome, out / "welfare.csv", scenario),
    ]


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


def read_table(path) -> np.ndarray:
    """Numeric table (blank cells become NaN), shape (rows, columns)."""
    header, rows = read_csv(path)
    arr = np.array([[float(c) if c != "" else np.nan for c in r] for r in rows], float)
    return arr.reshape(len(rows), len(header))


def read_outcome_csv(out_dir, scenario: Scenario) -> dict:
    """Arrays rebuilt from the tables written by :func:`write_outcome_csv`.

    Keys: ``flow`` and ``line_price`` (T, L), ``up_buy`` and ``up_sell``
    (T, N), ``gas``, ``soc``, ``hub_buy_qty``, ``hub_sell_qty``,
    ``hub_buy_price``, ``hub_sell_price`` (T,), ``residuals`` (k, 2).
    """
    out = Path(out_dir)
    net = scenario.network
    L, N = len(net.lines), len(net.nodes)
    tr = read_table(out / "trades.csv")
    T = len(tr) // L if L else len(read_table(out / "hub.csv"))
    up = read_table(out / "upstream.csv")
    hub = read_table(out / "hub.csv")
    res = read_table(out / "residuals.csv")
    return {
        "flow": tr[:, 3].reshape(T, L),
        "line_price": tr[:, 4].reshape(T, L),
        "up_buy": up[:, 2].reshape(T, N),
        "up_sell": up[:, 3].reshape(T, N),
        "gas": hub[:, 1],
        "soc": hub[:, 2],
        "hub_buy_qty": hub[:, 3],
        "hub_sell_qty": hub[:, 4],
        "hub_buy_price": hub[:, 5],
        "hub_sell_price": hub[:, 6],
        "residuals": res[:, 1:3],
    }


# ---------------------------------------------------------------------------
# plot data


def _write_dat(path: Path, header: list[str], cols: list[np.ndarray]) -> Path:
    lines = ["# " + " ".join(header)]
    if cols:
        for row in np.column_stack(cols):
            lines.append(" ".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def emit_plot_data(outcome: MarketOutcome, out_dir, scenario: Scenario) -> list[Path]:
    """Whitespace-separated series, one file per figure.

    fig4: line flows; fig5: nodal and hub prices; fig6: gas and state of
    charge; fig7: line trade prices; fig8: residual trace (r_P, r_theta).
    Lines starting with ``#`` are column labels.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net, T = scenario.network, outcome.horizon
    t = np.arange(T, dtype=float)
    pair = [f"{ln.from_node}-{ln.to_node}" for ln in net.lines]
    hs = _hub_series(outcome, T)
    res = np.asarray(outcome.residuals, float).reshape(-1, 3) if outcome.residuals else np.zeros((0, 3))
    lp = outcome.line_price(scenario)
    return [
        _write_dat(out / "fig4_transmission.dat", ["period"] + [f"flow_{p}" for p in pair],
                   [t] + [outcome.flow[:, k] for k in range(len(pair))]),
        _write_dat(out / "fig5_prices.dat",
                   ["period"] + [f"price_{n}" for n in net.nodes] + ["hub_sell_price", "hub_buy_price"],
                   [t] + [outcome.node_prices[:, i] for i in range(len(net.nodes))]
                   + [outcome.hub_prices.sell, outcome.hub_prices.buy]),
        _write_dat(out / "fig6_hub.dat", ["period", "gas_MW", "soc_MWh"], [t, hs["gas"], hs["soc"]]),
        _write_dat(out / "fig7_trade_prices.dat", ["period"] + [f"price_{p}" for p in pair],
                   [t] + [lp[:, k] for k in range(len(pair))]),
        _write_dat(out / "fig8_convergence.dat", ["r_P", "r_theta"], [res[:, 0], res[:, 1]] if len(res) else []),
    ]
