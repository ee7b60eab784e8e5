"""Command line entry point: ``fkfpe {run, validate, convergence, kernel-table}``.

Exit codes: 0 all enabled checks passed, 2 a check failed, 3 the run was
aborted, 64 usage or configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

EXIT_OK, EXIT_CHECK, EXIT_ABORT, EXIT_USAGE = 0, 2, 3, 64

DEFAULT_CHECKS = ("mass", "nonnegative", "sum_wh2_exact", "m2_exact", "coupling", "lp_growth")
ALL_CHECKS = DEFAULT_CHECKS + ("lp_decay",)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunManifest:
    config_path: str
    config_text: str
    out_dir: str
    checks: list
    version: str
    seed: int
    threads: int = 1
    extra: dict = field(default_factory=dict)

    def write(self, path):
        from .io import header_lines

        lines = header_lines(self.extra.get("config_hash", ""), self.seed)
        lines += [
            f"config_path = {self.config_path}",
            f"out_dir = {self.out_dir}",
            f"checks = {','.join(self.checks)}",
            f"version = {self.version}",
            f"seed = {self.seed}",
            f"threads = {self.threads}",
            "# resolved configuration",
        ]
        lines += [ln for ln in self.config_text.splitlines()]
        Path(path).write_text("\n".join(lines) + "\n")


def _cap_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _out_dir(arg):
    """``FKFPE_OUT`` overrides ``--out``; the default is ``./fkfpe_out``."""
    p = Path(os.environ.get("FKFPE_OUT") or arg or "fkfpe_out").resolve()
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load(args):
    from .io import ConfigError, read_config

    if not args.config:
        raise UsageError("--config is required")
    try:
        cfg, opts = read_config(args.config)
    except FileNotFoundError:
        raise UsageError(f"cannot read config {args.config}") from None
    except ConfigError as exc:
        raise UsageError(f"config error in {args.config}: {exc}") from None
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    checks = opts.get("checks")
    checks = list(DEFAULT_CHECKS) if checks is None else [c.strip() for c in checks.split(",") if c.strip()]
    bad = [c for c in checks if c not in ALL_CHECKS]
    if bad:
        raise UsageError(f"config error in {args.config}: unknown check(s) {', '.join(bad)}")
    return cfg, opts, checks


def cmd_run(args) -> int:
    from . import __version__
    from .io import config_hash, config_to_text, header_lines, write_csv, write_dat, write_grid
    from .splitting import SchemeAbort, apriori_report, run_scheme

    cfg, _, checks = _load(args)
    out = _out_dir(args.out)
    chash = config_hash(cfg)
    RunManifest(str(Path(args.config).resolve()), config_to_text(cfg), str(out), checks,
                __version__, cfg.seed, args.threads, {"config_hash": chash}).write(out / "manifest.txt")
    hdr = header_lines(chash, cfg.seed)
    try:
        traj = run_scheme(cfg)
    except SchemeAbort as exc:
        print(f"abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    cols = ["n", "t", "mass", "lp_p", "m2v", "epot", "wh2", "el_res"]
    r0 = traj.records[0]
    init = "# initial " + " ".join(f"{c}={getattr(r0, c)!r}" for c in cols[2:6])
    write_csv(out / "diagnostics.csv", cols, [[getattr(r, c) for c in cols] for r in traj.records[1:]],
              hdr + [init])
    f = traj.f[-1]
    write_grid(out / "final.fkfp", f)
    write_dat(out / "marginal_v.dat", [f.v, f.v_marginal()], hdr)
    write_dat(out / "marginal_x.dat", [f.x, f.x_marginal()], hdr)
    rep = apriori_report(traj)
    failed = [c for c in checks if not rep.flags[c]]
    for c in checks:
        print(f"{c:16s} {'PASS' if rep.flags[c] else 'FAIL'}")
    print(f"steps {traj.N}, sum W_h^2 = {rep.sum_wh2:.6e}, output in {out}")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_validate(args) -> int:
    from .validation import SUITES, run_suite

    if args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}")
    rows = run_suite(args.suite)
    width = max(len(r.name) for r in rows)
    for r in rows:
        print(f"{r.name:{width}s}  {'PASS' if r.passed else 'FAIL'}  {r.detail}")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_CHECK


def cmd_convergence(args) -> int:
    from .io import config_hash, header_lines, write_csv
    from .reference import characteristics_density, gaussian_initial, reference_pde_solve
    from .splitting import SchemeAbort, convergence_study

    if args.levels < 3:
        raise UsageError("convergence needs --levels >= 3")
    cfg, _, _ = _load(args)
    out = _out_dir(args.out)
    configs = [cfg.with_(h=cfg.h / 2**k) for k in range(args.levels)]
    if cfg.mode == "transport":
        ref = characteristics_density(cfg, gaussian_initial(cfg))
    else:
        ref = reference_pde_solve(cfg)
    try:
        tab = convergence_study(configs, None, None, ref)
    except SchemeAbort as exc:
        print(f"abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    print(f"{'h':>12s} {'L1 error':>14s}")
    for h, e in tab.rows():
        print(f"{h:12.6g} {e:14.6e}")
    print(f"fitted order {tab.order:.3f}; monotone {tab.monotone}")
    write_csv(out / "convergence.csv", ["h", "l1_error"], tab.rows(),
              header_lines(config_hash(cfg), cfg.seed) + [f"# fitted_order {tab.order!r}"])
    return EXIT_OK if tab.monotone else EXIT_CHECK


def cmd_kernel_table(args) -> int:
    from .core import cell_centers
    from .frac_kernel import build_kernel, truncate_renormalize
    from .io import header_lines, write_csv

    if not (0 < args.s <= 1) or args.t <= 0:
        raise UsageError("need 0 < s <= 1 and t > 0")
    K = build_kernel(args.s, args.t, cell_centers(args.Nv, args.Lv))
    if args.R is not None:
        K = truncate_renormalize(K, args.R)
    hdr = header_lines(seed=None) + [f"# s {args.s!r} t {args.t!r} Nv {args.Nv} Lv {args.Lv!r} "
                                     f"R {K.R!r} mode {K.mode}"]
    rows = list(zip(K.lags, K.samples, K.weights))
    if args.out:
        out = _out_dir(args.out)
        write_csv(out / "kernel.csv", ["v", "phi", "weight"], rows, hdr)
        print(out / "kernel.csv")
    else:
        print("\n".join(hdr))
        print("v,phi,weight")
        for r in rows:
            print(",".join(repr(float(c)) for c in r))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="fkfpe", description="Splitting solver for the fractional kinetic Fokker-Planck equation")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--out")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--seed", type=int)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.add_parser("run", parents=[common], help="run the scheme on a config")
    v = sub.add_parser("validate", parents=[common], help="run a validation suite")
    v.add_argument("suite")
    c = sub.add_parser("convergence", parents=[common], help="h-halving study against a reference")
    c.add_argument("--levels", type=int, default=3)
    k = sub.add_parser("kernel-table", parents=[common], help="dump a kernel table as CSV")
    k.add_argument("--s", type=float, required=True)
    k.add_argument("--t", type=float, required=True)
    k.add_argument("--Nv", type=int, default=64)
    k.add_argument("--Lv", type=float, default=6.0)
    k.add_argument("--R", type=float)
    return p


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "convergence": cmd_convergence,
            "kernel-table": cmd_kernel_table}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("missing subcommand (run, validate, convergence, kernel-table)")
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        _cap_threads(args.threads)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"fkfpe: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
