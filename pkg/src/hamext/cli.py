"""Command-line front end: catalog, extension, integrals, scans and checks.

Usage examples::

    hamext list
    hamext show E1
    hamext extend E3 -m 2 --params a3=1 --json ext.json
    hamext integral E1 -m 4 --params a1=0,a2=0,a3=1 --closed-form
    hamext scan --family S2 -m 2 --json rows.json
    hamext verify calogero3 -m 3 --seed 7
    hamext simulate E3 -m 2 --params a3=1 -T 10 --csv traj.csv

A system id is either a catalog id or ``chain:m1,m2,...`` for the iterated
extension of the one-dimensional oscillator ``1/2 p^2 + omega x1^2``.

Exit codes: 0 success, 2 constraint violation or failed verification,
3 unknown id or unsupported request, 4 input/output or catalog errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from typing import Sequence

import numpy as np
import yaml

from . import catalog as cat_mod
from . import kernels
from .catalog import (
    CatalogError, CatalogParseError, ConstraintViolation, SelfValidationError, SingularValue, UnboundParameter,
    UnknownEntry,
)
from .expr import core
from .expr import normal as nf
from .expr.parse import ParseError, parse_expr
from .extension import ExtendedSystem, ExtensionError, UnsupportedChart, iterate_extend
from .verify import (
    CertifyConfig, IntegrationFailure, VerificationError, certify, default_initial, trajectory,
)

EXIT_OK = 0
EXIT_FAIL = 2
EXIT_UNSUPPORTED = 3
EXIT_IO = 4

PASSING = ("superintegrable-certified", "extension-verified", "trivial")


class UsageError(ValueError):
    """A flag value could not be interpreted."""


# ------------------------------------------------------------------ parsing


def parse_params(text: str | None) -> dict:
    """``"a1=0,a3=1/2"`` to ``{"a1": Expr(0), "a3": Expr(1/2)}``."""
    out: dict = {}
    if not text:
        return out
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise UsageError(f"parameter {item!r} is not of the form name=value")
        k, v = (s.strip() for s in item.split("=", 1))
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", k):
            raise UsageError(f"bad parameter name {k!r}")
        try:
            e = nf.simplify(parse_expr(v, {}))
        except ParseError as err:
            raise UsageError(f"parameter {k}: {err}") from err
        if e.free_symbols:
            raise UsageError(f"parameter {k} must be a number, got {v!r}")
        out[k] = e
    return out


def parse_number(text: str | None):
    """An exact constant from a flag value, or ``None``."""
    if text is None:
        return None
    try:
        e = nf.simplify(parse_expr(text, {}))
    except ParseError as err:
        raise UsageError(str(err)) from err
    if e.free_symbols:
        raise UsageError(f"{text!r} is not a number")
    return e


def parse_initial(text: str, n: int) -> np.ndarray:
    """``"q=0.5,0.7,0.9,p=0.1,0,0"`` to the phase point ``(q, p)`` of length ``2n``.

    Separators inside each block may be commas, semicolons, colons or
    spaces; brackets are ignored.
    """
    m = re.fullmatch(r"\s*q\s*=(?P<q>.*?)[,;\s]*p\s*=(?P<p>.*)", text)
    if not m:
        raise UsageError("initial point must look like 'q=..,p=..'")

    def nums(block: str) -> list:
        parts = [s for s in re.split(r"[,;:\s\[\]]+", block) if s]
        try:
            return [float(s) for s in parts]
        except ValueError as err:
            raise UsageError(f"bad number in initial point: {err}") from err

    q, p = nums(m.group("q")), nums(m.group("p"))
    if len(q) != n or len(p) != n:
        raise UsageError(f"initial point needs {n} positions and {n} momenta, got {len(q)} and {len(p)}")
    return np.array(q + p, dtype=np.float64)


# ---------------------------------------------------------------- systems


def _chain(spec: str) -> list:
    try:
        chain = [int(s) for s in spec.split(",") if s.strip()]
    except ValueError as err:
        raise UsageError(f"bad chain {spec!r}") from err
    if not chain or any(m < 1 for m in chain):
        raise UsageError(f"bad chain {spec!r}")
    return chain


def build_system(target: str, m: int | None, params: dict, L0=None, kappa=None, closed_form: bool = True,
                 seed: int = 0, catalog=None):
    """``(ExtendedSystem, CertifyConfig factory)`` for a catalog id or chain."""
    if target.startswith("chain:"):
        chain = _chain(target[len("chain:"):])
        omega = params.get("omega")
        if omega is None:
            rng = np.random.default_rng([seed, 7])
            omega = cat_mod._rng_value(rng, cat_mod.PARAM_BOX, False)
        unknown = set(params) - {"omega"}
        if unknown:
            raise UsageError(f"chain systems only take omega, not {sorted(unknown)}")
        ext = iterate_extend(chain, omega=omega)[-1].system
        ext.metadata["id"] = target

        def config(**kw):
            return CertifyConfig(seed=seed, box={}, **kw)

        return ext, config
    if m is None:
        raise UsageError("-m is required")
    cat = catalog or cat_mod.default_catalog()
    entry = cat[target]
    unknown = set(params) - set(entry.all_params)
    if unknown:
        raise UsageError(f"{target} has no parameters {sorted(unknown)}; it takes {list(entry.all_params)}")
    values, L0v = cat_mod.resolve_values(entry, params, m, L0, seed=seed)
    inst = cat_mod.instantiate(entry, values, cat)
    ext = cat_mod.build_extension(inst, m, L0=L0v, kappa=kappa, closed_form=closed_form)

    def config(**kw):
        return cat_mod.certify_config(inst, ext, seed=seed, **kw)

    return ext, config


def _write(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _u_integral(ext: ExtendedSystem) -> tuple:
    """The integral added by the last extension step."""
    found = [(n, P) for n, P in ext.integrals if n.startswith("U^") or re.fullmatch(r"U\d+", n)]
    return found[-1]


# ---------------------------------------------------------------- commands


def cmd_list(args, out) -> int:
    cat = cat_mod.default_catalog()
    width = max(len(e.id) for e in cat)
    for e in cat:
        print(f"{e.id:<{width}}  [{e.chart.id}]  {e.description}", file=out)
    return EXIT_OK


def cmd_show(args, out) -> int:
    e = cat_mod.default_catalog()[args.id]
    ch = e.chart
    print(f"id:          {e.id}", file=out)
    print(f"chart:       {ch.id} ({', '.join(ch.coord_names)})", file=out)
    for i, row in enumerate(ch.metric_inv):
        print(f"  g^{{{ch.coord_names[i]},*}} = [{', '.join(nf.simplify(x).key for x in row)}]", file=out)
    print(f"potential:   {e.V_text}", file=out)
    print(f"parameters:  {', '.join(e.all_params) or '(none)'}", file=out)
    print(f"real domain: {e.real_domain}", file=out)
    if e.harmonic is not None:
        print(f"harmonic:    {e.harmonic}", file=out)
    if e.constraints:
        print("constraints:", file=out)
        for c in e.constraints:
            rel = "; ".join(c.relation_text) or "(any values)"
            print(f"  {c.name}: {rel}  ->  G = {c.expected_text}", file=out)
    else:
        print("constraints: (none: not extensible)", file=out)
    if e.integrals:
        print("integrals:", file=out)
        for k, v in e.integral_texts.items():
            print(f"  {k} = {v}", file=out)
    if e.description:
        print(f"description: {e.description}", file=out)
    return EXIT_OK


def cmd_extend(args, out) -> int:
    ext, _ = build_system(args.id, args.m, parse_params(args.params), parse_number(args.L0),
                          parse_number(args.kappa), seed=args.seed)
    s = ext.spec
    print(f"system: {args.id}", file=out)
    print(f"m = {s.m}, c = {nf.simplify(core.as_expr(s.c)).key}, L0 = {nf.simplify(core.as_expr(s.L0)).key}, "
          f"kappa = {nf.simplify(core.as_expr(s.kappa)).key}", file=out)
    if ext.trivial:
        print("note: L0 = 0 on a flat chart, the extension is trivial", file=out)
    print(f"G = {nf.simplify(ext.G).key}", file=out)
    print(f"H = {ext.H}", file=out)
    if args.json:
        _write(args.json, json.dumps(ext.to_json(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_integral(args, out) -> int:
    ext, _ = build_system(args.id, args.m, parse_params(args.params), parse_number(args.L0),
                          parse_number(args.kappa), closed_form=not args.iterative, seed=args.seed)
    name, P = _u_integral(ext)
    print(f"{name} = {P}", file=out)
    if args.json:
        _write(args.json, json.dumps({"name": name, "integral": P.to_json(),
                                      "form": "iterative" if args.iterative else "closed"}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_scan(args, out) -> int:
    rows = cat_mod.scan_tables(args.family, args.m, samples=args.samples, seed=args.seed, draws=args.draws)
    head = f"{'entry':<10} {'constraint':<22} {'kind':<8} {'dim':>3} {'exp':>3}  {'verdict':<15} {'ok':<4} G"
    print(head, file=out)
    for r in rows:
        print(f"{r.entry:<10} {r.constraint:<22} {r.kind:<8} {r.dim:>3} {r.expected_dim:>3}  {r.verdict:<15} "
              f"{'yes' if r.passed else 'NO':<4} {r.G}", file=out)
    ok = all(r.passed for r in rows)
    print(f"{sum(r.passed for r in rows)}/{len(rows)} rows match", file=out)
    if args.json:
        _write(args.json, json.dumps([r.to_json() for r in rows], indent=2, sort_keys=True))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_verify(args, out) -> int:
    ext, config = build_system(args.id, args.m, parse_params(args.params), parse_number(args.L0),
                               parse_number(args.kappa), seed=args.seed)
    kw = {"trajectories": args.trajectories, "samples": args.samples}
    if args.tol is not None:
        kw["tol"] = args.tol
    report = certify(ext, config(**kw), target=args.id)
    text = report.dumps()
    if args.json:
        _write(args.json, text)
    else:
        print(text, file=out)
    print(f"verdict: {report.verdict} (rank {report.rank}/{report.expected_rank})", file=out)
    return EXIT_OK if report.verdict in PASSING else EXIT_FAIL


def cmd_simulate(args, out) -> int:
    ext, config = build_system(args.id, args.m, parse_params(args.params), parse_number(args.L0),
                               parse_number(args.kappa), seed=args.seed)
    cfg = config()
    if not cfg.real_domain:
        raise UnsupportedChart(f"{args.id} is complex-valued at these parameters; only real flows are simulated")
    n = ext.space.n
    y0 = parse_initial(args.initial, n) if args.initial else default_initial(ext, cfg, 0)
    ts, ys = trajectory(ext.H, y0, args.T, args.tol if args.tol is not None else 1e-10, params=cfg.params)
    names = list(ext.space.phase_names)
    cols = []
    for name, P in ext.integrals:
        pn = sorted(P.free_parameters())
        prog = P.program(names + pn)
        X = ys.astype(np.complex128)
        if pn:
            X = np.concatenate([X, np.tile([cfg.params[p] for p in pn], (len(X), 1))], axis=1)
        cols.append((name, kernels.evaluate_program(prog, X)[:, 0].real))
    fh = sys.stdout if args.csv == "-" else open(args.csv, "w", newline="", encoding="utf-8")
    try:
        w = csv.writer(fh)
        w.writerow(["t"] + names + [c[0] for c in cols])
        for k in range(len(ts)):
            w.writerow([repr(float(ts[k]))] + [repr(float(v)) for v in ys[k]] + [repr(float(c[1][k])) for c in cols])
    finally:
        if fh is not sys.stdout:
            fh.close()
    drift = {c[0]: float(np.max(np.abs(c[1] - c[1][0])) / (1 + abs(c[1][0]))) for c in cols}
    worst = max(drift.values()) if drift else 0.0
    print(f"{len(ts) - 1} steps to t = {ts[-1]:.6g}; worst relative drift {worst:.3e}", file=sys.stderr)
    return EXIT_OK


# ------------------------------------------------------------------- main


def _common(p: argparse.ArgumentParser, need_m: bool = True) -> None:
    p.add_argument("id", help="catalog id or chain:m1,m2,...")
    p.add_argument("-m", type=int, required=False, default=None, help="multiplicity m >= 1")
    p.add_argument("--params", default=None, help="parameter values, e.g. a1=0,a3=1/2")
    p.add_argument("--L0", default=None, help="constant L0 (solved from the constraints when omitted)")
    p.add_argument("--kappa", default=None, help="constant kappa (default m^2)")
    p.add_argument("--seed", type=int, default=0, help="seed for every random draw")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hamext", description="Superintegrable extensions of natural Hamiltonians.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="catalog ids and descriptions")
    p = sub.add_parser("show", help="chart, potential, parameters and constraints of an entry")
    p.add_argument("id")
    p = sub.add_parser("extend", help="build the extended Hamiltonian")
    _common(p)
    p.add_argument("--json", default=None, help="write the extended system as JSON ('-' for stdout)")
    p = sub.add_parser("integral", help="print U^m G")
    _common(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--closed-form", action="store_true", help="closed form P_m G + D_m X_L G (default)")
    g.add_argument("--iterative", action="store_true", help="apply U m times")
    p.add_argument("--json", default=None)
    p = sub.add_parser("scan", help="reproduce an extensibility table")
    p.add_argument("--family", required=True, choices=["E2", "S2", "TTW"], type=str.upper)
    p.add_argument("-m", type=int, required=True)
    p.add_argument("--samples", type=int, default=None, help="sample points per nullspace")
    p.add_argument("--draws", type=int, default=None, help="generic parameter draws per entry")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", default=None, help="write rows as JSON ('-' for stdout)")
    p = sub.add_parser("verify", help="certify an extension")
    _common(p)
    p.add_argument("--trajectories", type=int, default=1)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--tol", type=float, default=None, help="integrator tolerance")
    p.add_argument("--json", default=None, help="write the report to a file instead of stdout")
    p = sub.add_parser("simulate", help="integrate the extended flow and record the invariants")
    _common(p)
    p.add_argument("--initial", default=None, help="'q=..,p=..' in the order of the extended coordinates")
    p.add_argument("-T", type=float, default=10.0)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--csv", default="-", help="output CSV path ('-' for stdout)")
    return ap


COMMANDS = {"list": cmd_list, "show": cmd_show, "extend": cmd_extend, "integral": cmd_integral, "scan": cmd_scan,
            "verify": cmd_verify, "simulate": cmd_simulate}


def _check_flags(args) -> None:
    m = getattr(args, "m", None)
    if m is not None and m < 1:
        raise UsageError("-m must be a positive integer")
    for flag in ("samples", "trajectories", "draws"):
        v = getattr(args, flag, None)
        if v is not None and v < 0:
            raise UsageError(f"--{flag} must be non-negative")
    tol = getattr(args, "tol", None)
    if tol is not None and not tol > 0:
        raise UsageError("--tol must be positive")
    T = getattr(args, "T", None)
    if T is not None and not T > 0:
        raise UsageError("-T must be positive")
    if args.command in ("extend", "integral", "verify", "simulate") and m is None \
            and not args.id.startswith("chain:"):
        raise UsageError("-m is required")


def main(argv: Sequence[str] | None = None) -> int:
    """Run one command; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code) if isinstance(err.code, int) else EXIT_FAIL
    out = sys.stdout
    try:
        _check_flags(args)
    except UsageError as err:
        print(f"hamext: error: {err}", file=sys.stderr)
        return EXIT_FAIL
    if not str(getattr(args, "id", "")).startswith("chain:"):
        try:
            cat_mod.default_catalog()
        except (OSError, yaml.YAMLError, CatalogError) as err:
            print(f"hamext: cannot load catalog: {err}", file=sys.stderr)
            return EXIT_IO
    try:
        return COMMANDS[args.command](args, out)
    except UsageError as err:
        print(f"hamext: error: {err}", file=sys.stderr)
        return EXIT_FAIL
    except UnknownEntry as err:
        print(f"hamext: {err}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except (ConstraintViolation, UnboundParameter, SingularValue) as err:
        print(f"hamext: {err}", file=sys.stderr)
        return EXIT_FAIL
    except (UnsupportedChart, IntegrationFailure) as err:
        print(f"hamext: {err}", file=sys.stderr)
        return EXIT_UNSUPPORTED if isinstance(err, UnsupportedChart) else EXIT_FAIL
    except (CatalogParseError, SelfValidationError, OSError) as err:
        print(f"hamext: {err}", file=sys.stderr)
        return EXIT_IO
    except (CatalogError, ExtensionError, VerificationError) as err:
        print(f"hamext: {err}", file=sys.stderr)
        return EXIT_UNSUPPORTED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
