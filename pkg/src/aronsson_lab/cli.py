"""Scenario driver: ``run <config> [--out DIR] [--suite ...]`` and ``check <config>``.

Exit codes: 0 when every asserted check passes, 2 when nothing failed but
some checks were not asserted because their hypotheses do not hold, 1 on any
failure or error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .estimates import (
    BarrierSpec,
    EstimateReport,
    barrier_supersolution_check,
    boundary_holder_check,
    check_max_principle,
    flatness_check,
    interior_gradient_bound,
)
from .grid import Grid2D, field_to_csv
from .intrinsic import (
    STENCILS,
    blowup_trace,
    choose_stencil,
    edge_costs,
    intrinsic_distance,
    lip_at,
    normalization_ratios,
    slope,
    slope_tolerance,
)
from .scenario import SUITES, ConfigError, Scenario, parse_config
from .solver import ConvergenceError, continuation, default_subdomain

EXIT_OK, EXIT_FAIL, EXIT_HYPOTHESIS = 0, 1, 2


def probe_nodes(grid: Grid2D, count: int, seed: int) -> list[tuple[int, int]]:
    """The centre node plus seeded random nodes from the central half of the box."""
    c = ((grid.nx - 1) // 2, (grid.ny - 1) // 2)
    rng = np.random.default_rng(seed)
    qi, qj = (grid.nx - 1) // 4, (grid.ny - 1) // 4
    cand = [(i, j) for i in range(qi, grid.nx - qi) for j in range(qj, grid.ny - qj) if (i, j) != c]
    pick = rng.choice(len(cand), size=min(count - 1, len(cand)), replace=False)
    return [c] + [cand[k] for k in sorted(pick)]


def _margin(grid: Grid2D, node) -> float:
    i, j = node
    return grid.h * min(i, j, grid.nx - 1 - i, grid.ny - 1 - j)


def _flagged(report: EstimateReport) -> EstimateReport:
    if not all(report.hypothesis_flags.values()):
        report.passed = None
    return report


class Run:
    """Pipeline state for one scenario; ``checks`` collects (report, diagnostic)."""

    def __init__(self, sc: Scenario, out: Path | None, suites):
        self.sc = sc
        self.out = out
        self.suites = tuple(suites)
        self.checks: list[tuple[EstimateReport, bool]] = []
        self.timings: dict[str, float] = {}

    def _timed(self, key, fn, *args):
        t0 = time.perf_counter()
        try:
            return fn(*args)
        finally:
            self.timings[key] = time.perf_counter() - t0

    def _write(self, name: str, text: str):
        if self.out is not None:
            path = self.out / name
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)

    def add(self, report: EstimateReport, diagnostic: bool = False):
        self.checks.append((report, diagnostic))
        self._write(f"checks/{report.name}.json", report.to_json() + "\n")

    def execute(self):
        sc = self.sc
        grid = sc.grid()
        self.grid = grid
        self.cf = sc.coefficient_field(grid)
        self.g = sc.boundary_data(grid)
        self.sols = self._timed("solve", self._solve)
        for suite in self.suites:
            self._timed(suite, getattr(self, f"suite_{suite}"))

    def _solve(self):
        rep = continuation(self.g, self.cf, self.sc.solve_config())
        for k, sol in enumerate(rep.solutions):
            self._write(f"u_eps_{k:02d}.csv", field_to_csv(sol.u_eps))
            self._write(f"solve_{k:02d}.json", json.dumps(sol.report(), sort_keys=True) + "\n")
            self.add(EstimateReport(f"solve[{k}]", {}, sol.grad_norm, self.sc.grad_tol,
                                    sol.grad_norm <= self.sc.grad_tol))
        self.sup_differences = rep.sup_differences
        return rep.solutions

    # -- suites --------------------------------------------------------------------------

    def suite_max_principle(self):
        for k, sol in enumerate(self.sols):
            r = check_max_principle(sol, self.g)
            r.name = f"max_principle[{k}]"
            self.add(r)

    def suite_gradient_bound(self):
        V = default_subdomain(self.grid) & self.grid.interior_mask
        V[:2] = V[-2:] = False
        V[:, :2] = V[:, -2:] = False
        self.add(interior_gradient_bound(self.sols, V), diagnostic=True)

    def _barrier_spec(self) -> BarrierSpec:
        bc = self.sc.barrier
        grid = self.grid
        if bc.y0 is None:
            y0 = (float(grid.x[(grid.nx - 1) // 2]), float(grid.y[0]))
        else:
            y0 = bc.y0
        return BarrierSpec.for_field(self.cf, y0, bc.amplitude, bc.gamma)

    def suite_barrier(self):
        spec = self._barrier_spec()
        eps = self.sols[-1].eps
        if spec.gamma_tilde <= 0:
            flags = {**self.cf.hypothesis_flags(), "gamma_tilde_positive": False}
            self.add(EstimateReport("barrier_supersolution", flags, math.nan, math.nan, None,
                                    details={"gamma_tilde": spec.gamma_tilde}))
            return
        self.add(_flagged(barrier_supersolution_check(spec, self.cf, eps)))

    def suite_holder(self):
        spec = self._barrier_spec()
        r = boundary_holder_check(self.sols, self.g, spec)
        r.hypothesis_flags = {**self.cf.hypothesis_flags(), "gamma_tilde_positive": spec.gamma_tilde > 0}
        if spec.gamma_tilde > 0:
            r.hypothesis_flags["lipA_below_delta0"] = self.cf.lipA <= spec.delta0
        self.add(_flagged(r))

    def suite_flatness(self):
        b = self.sc.boundary
        if b.preset != "flat":
            self.add(EstimateReport("flatness", {"flat_boundary_data": False}, math.nan, math.inf, None))
            return
        rep = flatness_check(self.sols[-1], b.lam, self.cf)
        est = rep.to_estimate()
        est.details["sup"] = rep.sup
        self.add(est)

    def suite_intrinsic(self):
        grid, cf = self.grid, self.cf
        u = self.sols[-1].u_eps
        nodes = probe_nodes(grid, self.sc.probe_points, self.sc.seed)
        n_sten, _ = choose_stencil(cf)
        costs = edge_costs(cf, STENCILS[n_sten])
        h = grid.h
        sqrtL = math.sqrt(cf.L)
        mono_ok, coherent_ok = True, True
        worst_gap, details = -math.inf, []
        for p, node in enumerate(nodes):
            dist = intrinsic_distance(cf, node, stencil=n_sten, costs=costs)
            R = min(32 * h, 0.9 * _margin(grid, node) / sqrtL)
            radii = [R / 8, R / 4, R / 2, R]
            lip = lip_at(u, dist)
            S = [slope(u, r, dist) for r in radii]
            floor = 1e-12 * max(1.0, float(np.abs(u.values).max()))
            for r1, r2, s1, s2 in zip(radii, radii[1:], S, S[1:]):
                gap = s1 - s2 - slope_tolerance(lip.value, r1, dist) - floor / r1
                worst_gap = max(worst_gap, gap)
                mono_ok &= gap <= 0
            ladder = [R, R / 2, R / 4]
            bt = blowup_trace(u, node, ladder)
            self._write(f"blowup_{p}.csv", bt.to_csv())
            cons = bt.consecutive
            scale = max(1.0, float(np.abs(bt.slopes).max()))
            coherent_ok &= bool(np.all(np.diff(cons) <= 1e-12 * scale))
            details.append({"node": list(node), "slopes_S": S, "lip": lip.value, "lip_shell": lip.shell,
                            "consecutive": cons.tolist(),
                            **normalization_ratios(cf, bt.slopes[-1], lip.value, node)})
        self.add(EstimateReport("slope_monotonicity", {}, worst_gap, 0.0, bool(mono_ok),
                                details={"probes": details}))
        self.add(EstimateReport("blowup_coherence", {}, 0.0, 0.0, bool(coherent_ok),
                                details={"probes": details}), diagnostic=True)
        self._write("intrinsic_probes.json", json.dumps(details, sort_keys=True, default=float) + "\n")

    # -- summary ----------------------------------------------------------------------------

    def summary(self) -> dict:
        return {
            "scenario_hash": self.sc.hash(),
            "checks": [{"name": r.name, "pass": r.passed, "diagnostic": diag} for r, diag in self.checks],
            "timings": self.timings,
        }

    def exit_code(self) -> int:
        asserted = [r.passed for r, diag in self.checks if not diag]
        if any(p is False for p in asserted):
            return EXIT_FAIL
        if any(p is None for p in asserted):
            return EXIT_HYPOTHESIS
        return EXIT_OK


def run(sc: Scenario, out: str | Path | None = None, suites=None) -> tuple[int, dict]:
    """Run one scenario; returns (exit code, summary dict) and writes artifacts to ``out``."""
    out = Path(out) if out is not None else (Path(sc.output) if sc.output else None)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    r = Run(sc, out, suites if suites is not None else sc.active_suites())
    r.execute()
    summary = r.summary()
    r._write("summary.json", json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return r.exit_code(), summary


def _error(exc: Exception, out: Path | None) -> int:
    err = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        err["where"] = exc.where
    if isinstance(exc, ConvergenceError):
        err["schedule_position"] = exc.schedule_position
        err["grad_norm"] = exc.grad_norm
    text = json.dumps(err, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return EXIT_FAIL


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="aronsson_lab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    p_run = sub.add_parser("run", help="solve a scenario and run its estimate suites")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--suite", action="append", default=None,
                       help="suite name(s); repeat or separate with commas")
    p_chk = sub.add_parser("check", help="parse and validate a config only")
    p_chk.add_argument("config")
    args = ap.parse_args(argv)

    out = Path(args.out) if getattr(args, "out", None) else None
    try:
        sc = parse_config(Path(args.config).read_text())
    except (OSError, ConfigError) as exc:
        return _error(exc, out)
    if args.cmd == "check":
        print(json.dumps({"scenario_hash": sc.hash(), "scenario": sc.canonical()}, sort_keys=True, default=list))
        return EXIT_OK
    suites = None
    if args.suite:
        suites = [s for item in args.suite for s in item.split(",") if s]
        bad = [s for s in suites if s not in SUITES]
        if bad:
            return _error(ConfigError("--suite", f"unknown suite {bad[0]!r}; known: {list(SUITES)}"), out)
    if out is None and sc.output:
        out = Path(sc.output)
    try:
        code, summary = run(sc, out, suites)
    except Exception as exc:  # noqa: BLE001 - every failure becomes exit 1 with an error record
        return _error(exc, out)
    print(json.dumps({"exit": code, **{k: summary[k] for k in ("scenario_hash", "checks")}}, sort_keys=True))
    return code
