"""Command line interface.

Subcommands: ``check`` (evaluate certificates), ``simulate`` (Monte Carlo +
CSV + bound fit), ``rank-set`` (print the full-rank pattern set),
``mu-table`` (print the window rank-failure grid), and ``repro-paper``
(self-contained golden suite over the bundled scenarios).

Exit codes: 0 success/certified, 2 not certified / golden failure, 1 error.
The ``NETKF_LOG`` environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from netkf.errors import NetkfError
from netkf.linalg import RankTolerance, numerical_rank, spectral_norm
from netkf.montecarlo import fit_bound, run_monte_carlo
from netkf.network import MarkovNetworkChain, SemiMarkovNetworkChain, phi_table
from netkf.scenario import Scenario, load_bundled, load_scenario
from netkf.stability import (
    check_markov_certificate,
    check_semi_markov_certificate,
    check_single_sensor_certificate,
    rank_success_set,
    window_rank_failure_rates,
)

log = logging.getLogger("netkf.cli")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CERTIFIED = 2


def _configure_logging():
    level_name = os.environ.get("NETKF_LOG", "WARNING").upper()
    level = getattr(logging, level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load(args) -> Scenario:
    scenario = load_scenario(args.scenario)
    if getattr(args, "tolerance", None) is not None:
        scenario.certificates.rank_tolerance = float(args.tolerance)
    return scenario


def _evaluate_certificates(scenario: Scenario):
    tol = RankTolerance(scenario.certificates.rank_tolerance)
    phi = phi_table(scenario.links, scenario.chain.n_states)
    reports = []
    for check in scenario.certificates.checks:
        if check == "markov":
            assert isinstance(scenario.chain, MarkovNetworkChain)
            reports.append(
                check_markov_certificate(
                    scenario.plant, scenario.topology, scenario.chain, phi, tol
                )
            )
        elif check == "single_sensor":
            assert isinstance(scenario.chain, MarkovNetworkChain)
            reports.append(
                check_single_sensor_certificate(scenario.plant, scenario.chain, phi, tol)
            )
        elif check == "semi_markov":
            assert isinstance(scenario.chain, SemiMarkovNetworkChain)
            reports.append(
                check_semi_markov_certificate(
                    scenario.plant,
                    scenario.topology,
                    scenario.chain,
                    phi,
                    tol,
                    mc_samples=scenario.certificates.mc_samples,
                )
            )
    return reports


def cmd_check(args) -> int:
    scenario = _load(args)
    reports = _evaluate_certificates(scenario)
    if not reports:
        print("no certificates requested by the scenario", file=sys.stderr)
        return EXIT_ERROR
    for report in reports:
        print(report.to_text())
        print()
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for report in reports:
            (out_dir / f"{scenario.name}_{report.kind}_report.txt").write_text(
                report.to_text() + "\n"
            )
            rows = report.table_rows()
            if rows:
                with (out_dir / f"{scenario.name}_{report.kind}_rates.csv").open(
                    "w", newline=""
                ) as fh:
                    writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
                    writer.writeheader()
                    writer.writerows(rows)
    return EXIT_OK if all(r.certified for r in reports) else EXIT_NOT_CERTIFIED


def cmd_simulate(args) -> int:
    scenario = _load(args)
    result = run_monte_carlo(
        scenario,
        trials=args.trials,
        horizon=args.horizon,
        seed=args.seed,
        workers=args.workers,
    )
    out_dir = Path(args.out) if args.out else Path.cwd()
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{scenario.name}_series.csv"
    result.to_csv(csv_path)
    print(f"series: {csv_path}")
    print(f"trials: {result.n_trials}  failed: {result.n_failed}")
    fit = fit_bound(result.mean)
    print(
        f"bound fit: alpha={fit.alpha!r} rho={fit.rho!r} beta={fit.beta!r} "
        f"residual={fit.residual!r}"
    )
    print(
        "exponential bound found"
        if fit.ok
        else "no exponential bound found (valid experimental outcome)"
    )
    return EXIT_OK


def cmd_rank_set(args) -> int:
    scenario = _load(args)
    tol = RankTolerance(scenario.certificates.rank_tolerance)
    rss = rank_success_set(scenario.plant, scenario.topology, tol)
    print(f"sensors: {rss.n_sensors}  state_dim: {rss.state_dim}")
    print(f"full-rank patterns: {len(rss.patterns)}")
    for pat in rss.patterns:
        print("".join(str(b) for b in pat))
    phi = phi_table(scenario.links, scenario.chain.n_states)
    for j, row in enumerate(phi):
        print(f"state {j}: full-rank probability {float(rss.success_probability(row))!r}")
    return EXIT_OK


def cmd_mu_table(args) -> int:
    scenario = _load(args)
    if not isinstance(scenario.chain, SemiMarkovNetworkChain):
        print("mu-table requires a semi_markov chain", file=sys.stderr)
        return EXIT_ERROR
    tol = RankTolerance(scenario.certificates.rank_tolerance)
    phi = phi_table(scenario.links, scenario.chain.n_states)
    sigma = scenario.chain.sigma
    period = scenario.plant.a_table.shape[0]
    writer = csv.writer(sys.stdout)
    writer.writerow(["state", "period_offset", "holding_time", "window_failure_rate", "method", "stderr"])
    for k0 in range(period):
        for delta in range(1, sigma + 1):
            wf = window_rank_failure_rates(
                scenario.plant,
                scenario.topology,
                scenario.chain,
                phi,
                k0,
                delta,
                tol=tol,
                mc_samples=scenario.certificates.mc_samples,
                rng=np.random.default_rng(
                    np.random.SeedSequence(entropy=scenario.experiment.seed, spawn_key=(k0, delta))
                ),
            )
            for i, rate in enumerate(wf.rates):
                se = "" if wf.stderr is None else repr(float(wf.stderr[i]))
                writer.writerow([i, k0, delta, repr(float(rate)), wf.method, se])
    return EXIT_OK


# ---------------------------------------------------------------------------
# Golden suite over the bundled scenarios

FIVE_SENSOR_EXPECTED_PATTERNS = (
    (0, 1, 0, 1, 1),
    (0, 1, 1, 1, 1),
    (1, 1, 0, 0, 1),
    (1, 1, 0, 1, 0),
    (1, 1, 0, 1, 1),
    (1, 1, 1, 0, 0),
    (1, 1, 1, 0, 1),
    (1, 1, 1, 1, 0),
    (1, 1, 1, 1, 1),
)


def _two_reception_failure(embedded: np.ndarray, phi_col: np.ndarray, delta: int) -> np.ndarray:
    """Closed form for one sensor needing two deliveries in a window:
    per previous state, probability of at most one delivery in delta slots."""
    miss = 1.0 - phi_col
    per_state = miss**delta + delta * miss ** (delta - 1) * phi_col
    return embedded @ per_state


def cmd_repro_paper(args) -> int:
    checks: list[tuple[str, bool, str]] = []

    def record(name: str, ok: bool, detail: str = ""):
        checks.append((name, ok, detail))
        print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))

    # --- five-sensor tree: rank-success set and per-state probabilities
    scen = load_bundled("five_sensor_tree")
    rss = rank_success_set(scen.plant, scen.topology)
    record(
        "five_sensor_tree rank-success set",
        rss.patterns == FIVE_SENSOR_EXPECTED_PATTERNS,
        f"{len(rss.patterns)} patterns",
    )
    phi = phi_table(scen.links, scen.chain.n_states)
    brute = 0.0
    for pat in FIVE_SENSOR_EXPECTED_PATTERNS:
        p = 1.0
        for m, g in enumerate(pat):
            p *= phi[0, m] if g else 1.0 - phi[0, m]
        brute += p
    record(
        "five_sensor_tree full-rank probability",
        abs(rss.success_probability(phi[0]) - brute) < 1e-12,
        f"{float(rss.success_probability(phi[0]))!r}",
    )

    # --- single-sensor semi-Markov scenario
    scen = load_bundled("single_sensor_semi_markov")
    a = scen.plant.a_table[0]
    c1 = scen.plant.sensors[0].c
    stacks_ok = all(
        numerical_rank(np.vstack([c1, c1 @ np.linalg.matrix_power(a, r)])) == 2
        for r in range(1, 7)
    )
    record("single_sensor two-slot observability, lags 1..6", stacks_ok)

    chain = scen.chain
    assert isinstance(chain, SemiMarkovNetworkChain)
    phi = phi_table(scen.links, chain.n_states)
    wf1 = window_rank_failure_rates(scen.plant, scen.topology, chain, phi, 0, 1)
    record(
        "single_sensor one-slot failure rate is 1",
        bool(np.all(wf1.rates == 1.0)),
        f"{wf1.rates.tolist()}",
    )
    closed_ok = True
    worst = 0.0
    for delta in range(2, chain.sigma + 1):
        wf = window_rank_failure_rates(scen.plant, scen.topology, chain, phi, 0, delta)
        ref = _two_reception_failure(chain.embedded, phi[:, 0], delta)
        worst = max(worst, float(np.max(np.abs(wf.rates - ref))))
        closed_ok = closed_ok and np.allclose(wf.rates, ref, rtol=0.0, atol=1e-12)
    record("single_sensor window failure closed form, holding 2..sigma", closed_ok, f"max diff {worst:.2e}")

    report = check_semi_markov_certificate(scen.plant, scen.topology, chain, phi)
    record(
        "single_sensor certificate evaluates",
        np.isfinite(report.lhs),
        f"lhs={report.lhs:.6f} verdict={report.verdict()}",
    )

    record("spectral norm of bundled dynamics", abs(spectral_norm(a) ** 2 - 3.177495) < 1e-5)

    ok = all(c[1] for c in checks)
    print(f"{sum(1 for c in checks if c[1])}/{len(checks)} golden checks passed")
    return EXIT_OK if ok else EXIT_NOT_CERTIFIED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netkf",
        description="Networked Kalman filter simulation and stability certificates",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, scenario_required=True):
        p.add_argument("--scenario", required=scenario_required, help="scenario file path")
        p.add_argument("--tolerance", type=float, default=None, help="rank tolerance override")
        p.add_argument("--out", default=None, help="output directory")

    p_check = sub.add_parser("check", help="evaluate stability certificates")
    add_common(p_check)
    p_check.set_defaults(fn=cmd_check)

    p_sim = sub.add_parser("simulate", help="Monte Carlo run with CSV output and bound fit")
    add_common(p_sim)
    p_sim.add_argument("--trials", type=int, default=None)
    p_sim.add_argument("--horizon", type=int, default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--workers", type=int, default=1)
    p_sim.set_defaults(fn=cmd_simulate)

    p_rank = sub.add_parser("rank-set", help="print the full-rank dropout pattern set")
    add_common(p_rank)
    p_rank.set_defaults(fn=cmd_rank_set)

    p_mu = sub.add_parser("mu-table", help="print the window rank-failure grid")
    add_common(p_mu)
    p_mu.set_defaults(fn=cmd_mu_table)

    p_repro = sub.add_parser("repro-paper", help="run the bundled golden suite")
    p_repro.add_argument("--out", default=None)
    p_repro.set_defaults(fn=cmd_repro_paper)

    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except (NetkfError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # pragma: no cover - unexpected failure path
        log.exception("unexpected failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
