"""Command-line front end.

Usage::

    pekarlab polaron [--validate]
    pekarlab bipolaron --u 0.5 [--validate]
    pekarlab sweep [--u-range 0:1:0.25] [--jobs N]
    pekarlab bisect [--u-range LO:HI:TOL]
    pekarlab hessian --u 0.1 [--validate]
    pekarlab ccurve [--u-range 0:0.2:0.05]
    pekarlab rearrange-check [--seed 7]
    pekarlab validate-all

All commands take ``--config PATH`` (JSON, see :class:`RunConfig`) and
``--out DIR``; the environment variable ``PEKARLAB_OUT`` overrides both.
Exit codes: 0 ok, 1 configuration, 2 convergence, 3 validation.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bipolaron as bp
from . import hessian as hs
from . import polaron as pl
from .config import BisectConfig, ConfigError, RunConfig, parse_u_range
from .coulomb import newton_values
from .errors import ConvergenceError, ValidationError
from .grid import build_radial_grid, build_t_quadrature, legendre_analyze, legendre_synthesize
from .output import CsvWriter, format_number, write_json_atomic, write_text_atomic

__all__ = ["main", "build_parser", "Check", "EXIT_OK", "EXIT_CONFIG", "EXIT_CONVERGENCE", "EXIT_VALIDATION"]

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_VALIDATION = 0, 1, 2, 3

RANDOM_STATES = 50
ZHISLIN_U = 0.5
ZHISLIN_SHELLS = (1.0, 2.0, 4.0, 8.0)
# shells large enough for the trial to beat e; exponential grid
ZHISLIN_WIDE_SHELLS = (64.0, 128.0, 256.0, 512.0)


class Check:
    """One named pass/fail line."""

    def __init__(self, name: str, passed: bool, detail: str):
        self.name, self.passed, self.detail = name, bool(passed), detail

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


class _Run:
    """Resolved configuration, output directory and shared solutions."""

    def __init__(self, cfg: RunConfig, out: Path, seed: int, jobs: int):
        self.cfg, self.out, self.seed, self.jobs = cfg, out, seed, jobs
        g = cfg.grid
        self.grid = build_radial_grid(g.n, g.r_max, g.mapping, g.sigma)
        self.tquad = build_t_quadrature(cfg.tquad.m)
        self._polaron = None

    def polaron(self) -> pl.PolaronSolution:
        if self._polaron is None:
            s = self.cfg.solver
            self._polaron = pl.solve_single_polaron(self.grid, tol=s.tol, max_iter=max(s.max_iter, 500),
                                                    damping=s.damping)
        return self._polaron

    def bipolaron(self, U: float, u0=None) -> bp.BipolaronSolution:
        s = self.cfg.solver
        return bp.minimize_rst(U, self.grid, self.tquad, tol=s.tol, max_iter=s.max_iter,
                               u0=u0, polaron=self.polaron())


def _tag(U: float) -> str:
    return format(float(U), "g")


def _report(checks) -> bool:
    for c in checks:
        print(c.line())
    return all(c.passed for c in checks)


# ---------------------------------------------------------------------------
# check suites
# ---------------------------------------------------------------------------


def polaron_checks(sol: pl.PolaronSolution) -> list[Check]:
    """Identities of the single polaron and the spectrum of its Hessian."""
    ctx = pl.operator_context(sol)
    R = pl.build_R(ctx)
    rf = pl.inner(R, sol.f)
    l1r = pl.apply_L1(ctx, R, 0).values - sol.mu * sol.f.values
    res = math.sqrt(abs(pl.inner(l1r, l1r, sol.grid)))
    mu_gap = abs(sol.mu - (sol.e0 - 4.0 * sol.Dff))
    s0 = pl.spectrum_L1(ctx, 0, 3)
    s1 = pl.spectrum_L1(ctx, 1, 2)
    s2 = pl.spectrum_L1(ctx, 2, 2)
    return [
        Check("(R,f)", abs(rf - 0.5) <= 1e-6, f"(R,f)={rf:.10f} (0.5 +- 1e-6)"),
        Check("L1 R = mu f", res <= 1e-6, f"||L1 R - mu f|| = {res:.3e} (<= 1e-6)"),
        Check("mu = e0 - 4D", mu_gap <= 1e-9, f"|mu - (e0 - 4D)| = {mu_gap:.3e} (<= 1e-9)"),
        Check("one negative eigenvalue", int(np.sum(s0 < 0)) == 1 and s1[0] > -1e-6 and s2[0] > 0,
              f"l=0 spectrum {s0[0]:.6f}, {s0[1]:.6f}; l=2 min {s2[0]:.6f}"),
        Check("l=1 zero mode", abs(s1[0]) <= 1e-6, f"|lambda_1| = {abs(s1[0]):.3e} (<= 1e-6), gap {s1[1]:.6f}"),
    ]


def state_checks(sol: bp.BipolaronSolution, tol: float) -> list[Check]:
    """Fixed-point, monotonicity and a priori bounds at a minimizer."""
    u, U = sol.u, sol.U
    e = sol.energy
    checks = [Check(f"residual U={_tag(U)}", sol.residual <= tol, f"{sol.residual:.3e} (<= {tol:.0e})")]
    for name, fn in (("rearrange_t", bp.rearrange_t), ("symmetrize", bp.symmetrize)):
        v = fn(u)
        de = bp.energy_rst(v, U)[0] - e
        dist = (v.values - np.abs(u.values))
        rel = float(np.max(np.abs(dist)) / np.max(np.abs(u.values)))
        checks.append(Check(f"{name} fixed point U={_tag(U)}", rel <= 1e-6 and de <= 1e-9,
                            f"max change {rel:.2e} (<= 1e-6), energy change {de:.2e} (<= 1e-9)"))
    newton = bp.newton_bound_excess(u)
    checks.append(Check(f"0 <= Phi <= 2/r U={_tag(U)}", newton <= 1e-8, f"max violation {newton:.2e}"))
    ho = bp.sqrt_density_kinetic(u) - sol.parts.T
    checks.append(Check(f"|grad sqrt rho|^2 <= T U={_tag(U)}", ho <= 1e-8, f"excess {ho:.2e}"))
    return checks


def random_state_checks(grid, tquad, seed: int, U_values=(0.0, 0.5, 1.0), count: int = RANDOM_STATES):
    """Energy never increases under ``rearrange_t`` and ``symmetrize``."""
    rng = np.random.default_rng(seed)
    worst, good = -math.inf, 0
    for _ in range(count):
        u = bp.random_rst(grid, tquad, rng, symmetric=False)
        ok = True
        for U in U_values:
            e0 = bp.energy_rst(u, U)[0]
            for fn in (bp.rearrange_t, bp.symmetrize):
                inc = bp.energy_rst(fn(u), U)[0] - e0
                worst = max(worst, inc)
                ok &= inc <= 1e-9
        good += ok
    return good, count, worst


def hessian_checks(reports, threshold: float) -> list[Check]:
    out = []
    for rep in reports:
        bound = threshold * rep.norm_estimate
        worst = max(abs(v) for v in rep.zero_mode_forms.values())
        out.append(Check(f"zero modes U={_tag(rep.U)} L={rep.sector}", rep.zero_modes_pass(threshold),
                         f"max |form| {worst:.2e} (<= {bound:.2e})"))
        out.append(Check(f"c > 0 U={_tag(rep.U)} L={rep.sector}", rep.c_estimate > 0,
                         f"c = {rep.c_estimate:.6f}"))
    return out


def legendre_check(tquad, k_max: int, seed: int) -> Check:
    rng = np.random.default_rng(seed)
    coeff = rng.standard_normal(k_max + 1)
    vals = np.polynomial.legendre.legval(tquad.nodes, coeff)
    back = legendre_synthesize(legendre_analyze(vals, tquad, k_max), tquad)
    err = float(np.max(np.abs(back - vals)))
    return Check("Legendre round trip", err <= 1e-10, f"degree {k_max}: {err:.2e} (<= 1e-10)")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _solve_polaron_checked(run: _Run) -> pl.PolaronSolution:
    """Polaron plus a resolution test on a grid with 1.5 times the nodes."""
    sol = run.polaron()
    g = run.cfg.grid
    fine = build_radial_grid(g.n + g.n // 2, g.r_max, g.mapping, g.sigma)
    ref = pl.solve_single_polaron(fine, tol=run.cfg.solver.tol, max_iter=max(run.cfg.solver.max_iter, 500))
    drift = abs(sol.e - ref.e) / abs(ref.e)
    if drift > 1e-6:
        raise ConvergenceError(f"polaron energy not resolved on n={g.n}: relative change {drift:.2e} "
                               f"on n={fine.n}", sol.residual)
    return sol


def cmd_polaron(run: _Run, validate: bool) -> int:
    sol = _solve_polaron_checked(run)
    write_json_atomic(run.out / "polaron.json", sol.to_json_dict())
    print(f"e = {format_number(sol.e)}")
    print(f"e0 = {format_number(sol.e0)}")
    print(f"mu = {format_number(sol.mu)}")
    print(f"residual = {sol.residual:.3e}")
    if validate and not _report(polaron_checks(sol)):
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_bipolaron(run: _Run, U: float, validate: bool) -> int:
    U = bp._check_U(U)
    pol = run.polaron()
    sol = run.bipolaron(U)
    write_json_atomic(run.out / f"bipolaron_U{_tag(U)}.json", sol.to_json_dict())
    print(f"U = {format_number(U)}")
    print(f"energy = {format_number(sol.energy)}")
    print(f"mu_n = {format_number(sol.mu_n)}")
    print(f"energy/e_single = {sol.energy / pol.e:.6f}")
    print(f"gap_to_e = {format_number(sol.energy - pol.e)}")
    print(f"gap_to_2e = {format_number(sol.energy - 2 * pol.e)}")
    if validate and not _report(state_checks(sol, run.cfg.solver.tol)):
        return EXIT_VALIDATION
    return EXIT_OK


def _sweep_point(args):
    cfg, U = args
    run = _Run(cfg, Path("."), 0, 1)
    s = cfg.solver
    return bp.sweep_U([U], run.grid, run.tquad, tol=s.tol, max_iter=s.max_iter, polaron=run.polaron())[0]


def _sweep_rows(run: _Run, U_list, on_row):
    if run.jobs <= 1 or len(U_list) <= 1:
        s = run.cfg.solver
        return bp.sweep_U(U_list, run.grid, run.tquad, tol=s.tol, max_iter=s.max_iter,
                          polaron=run.polaron(), on_row=on_row)
    # independent cold starts; order of rows follows U_list
    rows = []
    with ProcessPoolExecutor(max_workers=run.jobs) as pool:
        for row in pool.map(_sweep_point, [(run.cfg, U) for U in U_list]):
            rows.append(row)
            on_row(row)
    return rows


def cmd_sweep(run: _Run, U_list) -> int:
    fields = bp.SweepRow.FIELDS
    progress = CsvWriter(run.out / "sweep.csv", fields + ("status",))
    try:
        rows = _sweep_rows(run, U_list, lambda r: progress.write([getattr(r, f) for f in fields] + [r.status]))
    finally:
        progress.abort()
    failed = any(r.status != "ok" for r in rows)
    cols = fields + (("status",) if failed else ())
    with CsvWriter(run.out / "sweep.csv", cols) as out:
        for r in rows:
            out.write([getattr(r, c) for c in cols])
    for r in rows:
        print(f"U={_tag(r.U)} energy={format_number(r.energy)} gap_to_e={r.gap_to_e:.6e} status={r.status}")
    return EXIT_CONVERGENCE if failed else EXIT_OK


def cmd_bisect(run: _Run, lo: float, hi: float, tol_U: float) -> int:
    s = run.cfg.solver
    uc = bp.bisect_Uc_symm(lo, hi, tol_U, run.grid, run.tquad, polaron=run.polaron(),
                           tol=max(s.tol, 1e-7), max_iter=max(s.max_iter, 400))
    write_json_atomic(run.out / "bisect.json", {"lo": lo, "hi": hi, "tol_U": tol_U, "U_c_symm": uc,
                                               "e_single": run.polaron().e})
    print(f"U_c_symm = {format_number(uc)} (+- {tol_U / 2:g})")
    return EXIT_OK


def _hessian_reports(run: _Run, sol) -> list:
    h = run.cfg.hessian
    return [hs.min_eig_deflated(sol, sol.U, L, n_eigs=h.n_eigs, l_max=h.l_max, seed=run.seed)
            for L in hs.SUPPORTED_SECTORS]


def cmd_hessian(run: _Run, U: float, validate: bool) -> int:
    U = bp._check_U(U)
    sol = run.bipolaron(U)
    reports = _hessian_reports(run, sol)
    for rep in reports:
        write_json_atomic(run.out / f"hessian_U{_tag(U)}_L{rep.sector}.json", rep.to_json_dict())
        print(f"L={rep.sector} c_estimate={format_number(rep.c_estimate)} "
              f"eigenvalues={', '.join(f'{v:.8f}' for v in rep.eigenvalues)} iterations={rep.iterations}")
    if validate and not _report(hessian_checks(reports, run.cfg.hessian.zero_threshold)):
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_ccurve(run: _Run, U_list) -> int:
    h = run.cfg.hessian
    fields = hs.CCurveRow.FIELDS
    with CsvWriter(run.out / "c_curve.csv", fields) as out:
        rows = hs.c_curve(U_list, run.grid, run.tquad, l_max=h.l_max, n_eigs=h.n_eigs,
                          tol=run.cfg.solver.tol, seed=run.seed, polaron=run.polaron(),
                          on_row=lambda r: out.write([getattr(r, f) for f in fields]))
    for r in rows:
        print(f"U={_tag(r.U)} c_L0={r.c_L0:.8f} c_L1={r.c_L1_deflated:.8f} c_L2={r.c_L2:.8f} "
              f"flag={r.flag_crossing or '-'}")
    return EXIT_OK


def cmd_rearrange_check(run: _Run, U: float | None) -> int:
    U_values = (0.0, 0.5, 1.0) if U is None else (bp._check_U(U),)
    good, count, worst = random_state_checks(run.grid, run.tquad, run.seed, U_values)
    write_json_atomic(run.out / "rearrange_check.json", {"seed": run.seed, "U_values": list(U_values),
                                                        "passed": good, "total": count,
                                                        "max_energy_increase": worst})
    print(f"{good}/{count} non-increasing (max energy increase {worst:.3e})")
    return EXIT_OK if good == count else EXIT_VALIDATION


def _zhislin_csv(run: _Run, pol) -> list[Check]:
    cols = ("set",) + bp.ZhislinRow.FIELDS + ("below_e",)
    main = bp.zhislin_sweep(pol, ZHISLIN_U, ZHISLIN_SHELLS)
    wide = bp.zhislin_sweep(pol, ZHISLIN_U, ZHISLIN_WIDE_SHELLS, n=400, mapping="exponential", sigma=9.0)
    with CsvWriter(run.out / "zhislin.csv", cols) as out:
        for label, rows in (("primary", main), ("wide", wide)):
            for r in rows:
                out.write([label] + [getattr(r, f) for f in bp.ZhislinRow.FIELDS] + [str(r.below_e).lower()])
    below = [r.R_shell for r in main if r.below_e]
    wide_below = [r.R_shell for r in wide if r.below_e]
    return [Check("Zhislin trial below e, R in {1,2,4,8}", len(below) == len(main),
                  f"below e at R={below or 'none'}; largest excess*11R "
                  f"{max(r.excess_times_11R for r in main):.3g}; wide shells below e at R={wide_below or 'none'}")]


def cmd_validate_all(run: _Run) -> int:
    checks = [legendre_check(run.tquad, run.cfg.legendre.k_max, run.seed)]
    pol = _solve_polaron_checked(run)
    checks += polaron_checks(pol)
    tol = run.cfg.solver.tol
    sol0 = run.bipolaron(0.0)
    ratio = sol0.energy / pol.e
    checks.append(Check("e0 = 8e", abs(ratio - 8.0) <= 8e-3, f"energy/e = {ratio:.8f} (8 +- 8e-3)"))
    checks += state_checks(sol0, tol)
    sol_half = run.bipolaron(0.5, u0=sol0.u)
    gap = sol_half.energy - pol.e
    checks.append(Check("e_U^symm < e at U=0.5", gap < 0, f"gap_to_e = {gap:.6e}"))
    checks += state_checks(sol_half, tol)
    rng = np.random.default_rng(run.seed)
    worst = 0.0
    for _ in range(20):
        u = bp.random_rst(run.grid, run.tquad, rng)
        phi = rng.uniform(0.0, 1.0) * newton_values(run.grid, bp._full_density(u))
        worst = min(worst, bp.two_field_energy(u, phi, 0.5) - bp.energy_rst(u, 0.5)[0])
    checks.append(Check("two-field inequality", worst >= -1e-10, f"min excess {worst:.2e} (>= 0)"))
    good, count, inc = random_state_checks(run.grid, run.tquad, run.seed)
    checks.append(Check("rearrangement on random states", good == count,
                        f"{good}/{count} non-increasing, max increase {inc:.2e}"))
    h = run.cfg.hessian
    reports = _hessian_reports(run, run.bipolaron(0.1, u0=sol0.u))
    checks += hessian_checks(reports, h.zero_threshold)
    checks += _zhislin_csv(run, pol)
    ok = _report(checks)
    write_json_atomic(run.out / "validate_all.json", {"checks": [c.to_dict() for c in checks],
                                                     "passed": ok, "config": run.cfg.to_dict()})
    print(f"{sum(c.passed for c in checks)}/{len(checks)} checks passed")
    return EXIT_OK if ok else EXIT_VALIDATION


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, help="output directory (PEKARLAB_OUT overrides)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--validate", action="store_true", help="run the post-solve checks")
    common.add_argument("--u", type=float, help="repulsion coupling U")
    common.add_argument("--u-range", help="LO:HI:STEP (for bisect: LO:HI:TOL)")
    common.add_argument("--jobs", type=int, default=1)
    parser = argparse.ArgumentParser(prog="pekarlab", description="Pekar-Tomasevich bipolaron toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("polaron", "bipolaron", "sweep", "bisect", "hessian", "ccurve", "rearrange-check",
                 "validate-all"):
        sub.add_parser(name, parents=[common])
    return parser


def _resolve(args) -> _Run:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    out = os.environ.get("PEKARLAB_OUT") or (str(args.out) if args.out else cfg.output.directory)
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    if args.u_range and args.command in ("sweep", "ccurve"):
        values = parse_u_range(args.u_range)
        if args.command == "sweep":
            cfg = replace(cfg, sweep=replace(cfg.sweep, U_values=values, range=None, step=None))
        else:
            cfg = replace(cfg, hessian=replace(cfg.hessian, U_values=values))
    cfg = RunConfig.from_dict(cfg.to_dict())
    return _Run(cfg, Path(out), args.seed, args.jobs)


def _dispatch(args, run: _Run) -> int:
    cmd = args.command
    if cmd == "polaron":
        return cmd_polaron(run, args.validate)
    if cmd in ("bipolaron", "hessian"):
        if args.u is None:
            raise ConfigError(f"{cmd} needs --u")
        fn = cmd_bipolaron if cmd == "bipolaron" else cmd_hessian
        return fn(run, args.u, args.validate)
    if cmd == "sweep":
        return cmd_sweep(run, run.cfg.sweep.values())
    if cmd == "bisect":
        b = run.cfg.bisect
        if args.u_range:
            try:
                lo, hi, tol_U = (float(x) for x in args.u_range.split(":"))
            except ValueError:
                raise ConfigError(f"--u-range for bisect expects LO:HI:TOL, got {args.u_range!r}") from None
            b = BisectConfig(lo, hi, tol_U)
        return cmd_bisect(run, b.lo, b.hi, b.tol_U)
    if cmd == "ccurve":
        return cmd_ccurve(run, run.cfg.hessian.U_values)
    if cmd == "rearrange-check":
        return cmd_rearrange_check(run, args.u)
    return cmd_validate_all(run)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = _resolve(args)
        write_text_atomic(run.out / "config.json", run.cfg.to_json())
        return _dispatch(args, run)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"convergence failure: {exc} (residual {exc.residual:.3e})", file=sys.stderr)
        return EXIT_CONVERGENCE
    except ValidationError as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
