"""Command-line front end.

Exit codes: 0 success, 2 invalid input (config, grid, flags), 3 degenerate
steady-state kernel.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import collision, model, thermo
from .liouvillian import assemble, steady_state
from .model import Config, RunSettings, ScenarioError

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DEGENERATE = 3

SWEEP_COLUMNS = (
    "scenario", "omega_ratio", "w_loc", "w_nonloc", "q_h_loc", "q_h_nonloc", "q_c_loc",
    "q_c_nonloc", "c_loc", "c_nonloc", "c_nonloc_factored", "regime", "figure_of_merit",
    "first_law_residual", "entropy_production", "errors",
)
PLOT_QUANTITIES = ("w", "q_h", "q_c", "c_loc", "c_nonloc")


def fmt(x) -> str:
    """17 significant digits, so values round-trip exactly."""
    return "%.17g" % x


def _load_config(path: str | None) -> Config:
    if path is None:
        return Config(model.two_pair_scenario())
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read config: {exc.strerror or exc}") from None
    return model.parse_config(text)


def _scenarios(config: Config, tags: str | None, default_all: bool) -> list[model.Scenario]:
    if tags is None:
        if not default_all:
            return [config.scenario]
        chosen = config.run.scenarios
    else:
        chosen = tuple(t.strip() for t in tags.split(",") if t.strip())
        if not chosen:
            raise ScenarioError("--scenarios needs at least one tag")
    return [model.scenario_for_tag(config.scenario, t) for t in chosen]


def _taus(spec: str | None, run: RunSettings) -> tuple[float, ...]:
    if spec is None:
        return run.taus
    try:
        taus = tuple(float(t) for t in spec.split(",") if t.strip())
    except ValueError:
        raise ScenarioError(f"--tau must be a comma-separated list of numbers, got {spec!r}") from None
    if any(not t > 0 for t in taus):
        raise ScenarioError("tau values must be positive")
    return taus


# ------------------------------------------------------------------ steady


def cmd_steady(args) -> int:
    config = _load_config(args.config)
    status = EXIT_OK
    for s in _scenarios(config, args.scenarios, default_all=False):
        ss = steady_state(assemble(s))
        print(f"scenario {s.tag}  omega_h/omega_c = {fmt(s.hot.omega / s.cold.omega)}")
        print(f"  residual      {ss.residual:.3e}")
        print(f"  spectral gap  {ss.spectral_gap:.3e}  (sigma_max {ss.sigma_max:.3e})")
        print(f"  purity        {np.trace(ss.rho @ ss.rho).real:.12f}")
        if ss.degenerate:
            print("  degenerate kernel: steady state is not unique", file=sys.stderr)
            status = EXIT_DEGENERATE
            continue
        cur = thermo.closed_form_currents(ss.rho, s)
        for name in ("w_loc", "w_nonloc", "q_h_loc", "q_h_nonloc", "q_c_loc", "q_c_nonloc"):
            print(f"  {name:<12s}  {fmt(getattr(cur, name))}")
        print(f"  {'w':<12s}  {fmt(cur.w)}")
        print(f"  {'q_h':<12s}  {fmt(cur.q_h)}")
        print(f"  {'q_c':<12s}  {fmt(cur.q_c)}")
        print(f"  first-law residual  {cur.first_law_residual:.3e}")
        print(f"  entropy production  {fmt(cur.entropy_production(s))}")
        if s.n_sites == 2:
            coh = thermo.coherence_metrics(ss.rho, s)
            print(f"  coherence {coh.variant}: c_loc {fmt(coh.c_loc)}  c_nonloc {fmt(coh.c_nonloc)}"
                  f"  c_nonloc_factored {fmt(coh.c_nonloc_factored)}")
        rep = thermo.classify_regime(cur, s)
        print(f"  regime {rep.regime.value}  figure of merit {fmt(rep.figure_of_merit)}"
              f"  carnot bound {fmt(rep.carnot_bound)}")
    return status


# ------------------------------------------------------------------- sweep


def sweep_row(p: thermo.SweepPoint) -> list[str]:
    nan = float("nan")
    c = p.currents
    values = [nan] * 6 if c is None else [c.w_loc, c.w_nonloc, c.q_h_loc, c.q_h_nonloc,
                                          c.q_c_loc, c.q_c_nonloc]
    coh = [nan] * 3 if p.coherence is None else [p.coherence.c_loc, p.coherence.c_nonloc,
                                                 p.coherence.c_nonloc_factored]
    regime = "" if p.regime is None else p.regime.regime.value
    merit = nan if p.regime is None else p.regime.figure_of_merit
    residual = nan if c is None else c.first_law_residual
    return ([p.scenario, fmt(p.omega_ratio)] + [fmt(v) for v in values + coh]
            + [regime, fmt(merit), fmt(residual), fmt(p.entropy_production), p.error])


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _plot_value(p: thermo.SweepPoint, q: str) -> float:
    if q in ("w", "q_h", "q_c"):
        return getattr(p.currents, q) if p.currents is not None else math.nan
    return getattr(p.coherence, q) if p.coherence is not None else math.nan


def write_sweep(result: thermo.SweepResult, out: Path) -> None:
    tag = result.scenario
    _write_csv(out / f"sweep_{tag}.csv", SWEEP_COLUMNS, [sweep_row(p) for p in result.points])
    _write_csv(out / f"engine_curve_{tag}.csv", ("omega_ratio", "eta", "w"),
               [[fmt(x) for x in row] for row in thermo.parametric_curve(result.points)])
    plot_dir = out / "plot"
    plot_dir.mkdir(exist_ok=True)
    for q in PLOT_QUANTITIES:
        with (plot_dir / f"{tag}_{q}.dat").open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# omega_ratio {q}\n")
            for p in result.points:
                fh.write(f"{fmt(p.omega_ratio)} {fmt(_plot_value(p, q))}\n")


def cmd_sweep(args) -> int:
    config = _load_config(args.config)
    grid = model.parse_grid(args.grid) if args.grid else config.run.grid
    if args.threads < 1:
        raise ScenarioError("--threads must be at least 1")
    scenarios = _scenarios(config, args.scenarios, default_all=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for s in scenarios:
        result = thermo.sweep_and_optimize(s, grid, threads=args.threads)
        write_sweep(result, out)
        bad = sum(1 for p in result.points if p.error)
        if result.max_power is None:
            summary.append([s.tag] + ["nan"] * 5 + ["; ".join(result.notes)])
            print(f"{s.tag}: {len(result.points)} points, {bad} annotated, {result.notes[0]}")
            continue
        m = result.max_power
        summary.append([s.tag, fmt(m.omega_ratio), fmt(m.eta), fmt(m.w),
                        fmt(m.grid_omega_ratio), fmt(m.grid_step), ""])
        print(f"{s.tag}: {len(result.points)} points, {bad} annotated, "
              f"eta_max {m.eta:.4f} at omega_h/omega_c {m.omega_ratio:.4f}")
    _write_csv(out / "eta_max.csv",
               ("scenario", "omega_ratio", "eta_max", "w_at_max", "grid_omega_ratio", "grid_step", "notes"),
               summary)
    return EXIT_OK


# --------------------------------------------------------- collision check


def cmd_collision_check(args) -> int:
    config = _load_config(args.config)
    taus = _taus(args.tau, config.run)
    if len(set(taus)) < 3:
        raise ScenarioError("collision-check needs at least three distinct tau values")
    norm = config.run.time_normalization
    rows, fits = [], []
    for s in _scenarios(config, args.scenarios, default_all=False):
        ss = steady_state(assemble(s))
        qme = thermo.closed_form_currents(ss.rho, s)
        reference = {"w": qme.w, "q_h": qme.q_h, "q_c": qme.q_c}
        print(f"scenario {s.tag}  omega_h/omega_c = {fmt(s.hot.omega / s.cold.omega)}"
              f"  time normalization {norm}")
        print(f"  {'tau':>8s} {'w':>14s} {'q_h':>14s} {'q_c':>14s} {'steps':>8s}  converged")
        runs = []
        for tau in taus:
            r = collision.run_to_steady(s, tau, time_normalization=norm)
            runs.append(r)
            flag = "yes" if r.converged else f"NO (change {r.change:.2e})"
            print(f"  {tau:8.4f} {r.w:14.6e} {r.q_h:14.6e} {r.q_c:14.6e} {r.steps:8d}  {flag}")
            rows.append([s.tag, fmt(tau), fmt(r.w), fmt(r.q_h), fmt(r.q_c), str(r.steps),
                         "true" if r.converged else "false"])
        print(f"  {'current':>8s} {'tau->0':>14s} {'QME':>14s} {'rel. dev':>10s} {'order':>7s} {'fit res':>10s}")
        for key in ("w", "q_h", "q_c"):
            values = [r.currents[key] for r in runs]
            ex = collision.linear_extrapolation(taus, values)
            ref = reference[key]
            rel = abs(ex.intercept - ref) / abs(ref) if ref != 0 else math.nan
            try:
                order = collision.convergence_order(taus, values, ref)
            except ValueError:
                order = math.nan
            print(f"  {key:>8s} {ex.intercept:14.6e} {ref:14.6e} {rel:10.2e} {order:7.3f} {ex.fit_residual:10.2e}")
            fits.append([s.tag, key, fmt(ex.intercept), fmt(ref), fmt(rel), fmt(order),
                         fmt(ex.fit_residual)])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "collision_runs.csv",
                   ("scenario", "tau", "w", "q_h", "q_c", "steps", "converged"), rows)
        _write_csv(out / "collision_extrapolation.csv",
                   ("scenario", "current", "tau_to_zero", "qme", "relative_deviation",
                    "order", "fit_residual"), fits)
    return EXIT_OK


# ---------------------------------------------------------------- validate


def cmd_validate(args) -> int:
    if args.config is None:
        raise ScenarioError("validate needs --config")
    config = _load_config(args.config)
    print(model.render_config(config), end="")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nessqtm",
                                     description="Steady-state thermodynamics of two-ensemble quantum machines.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenarios=True):
        p.add_argument("--config", help="scenario file (TOML); defaults to the built-in two-pair example")
        if scenarios:
            p.add_argument("--scenarios", help="comma list of tags: com1,com2,cas1,cas2,ind1,ind2")

    p = sub.add_parser("steady", help="solve one steady state and report currents")
    common(p)
    p.set_defaults(func=cmd_steady)

    p = sub.add_parser("sweep", help="sweep omega_h/omega_c and write CSV files")
    common(p)
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--grid", help="lo:hi:step over omega_h/omega_c")
    p.add_argument("--threads", type=int, default=1, help="worker threads over grid points")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("collision-check", help="compare finite-tau collision currents with the master equation")
    common(p)
    p.add_argument("--tau", help="comma list of collision times")
    p.add_argument("--out", help="optional output directory for a CSV table")
    p.set_defaults(func=cmd_collision_check)

    p = sub.add_parser("validate", help="parse a scenario file and print its canonical form")
    common(p, scenarios=False)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ScenarioError as exc:
        where = f"{args.config}:{exc.line}: " if exc.line and getattr(args, "config", None) else ""
        print(f"error: {where}{exc.message}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
