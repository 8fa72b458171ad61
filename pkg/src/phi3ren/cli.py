"""Command-line front end.

Exit codes: 0 success, 1 a Monte-Carlo comparison failed, 2 invalid
arguments or configuration, 3 domain refusal (not subcritical), 4 numerical
non-convergence.

Config files are flat ``key = value`` text; ``#`` starts a comment. Keys:

* lattice: ``nt nx dx dt eps T_window samples seed batch lam``
* kernels: ``a gh_nodes panels epsrel``
* scaling: ``lambda_min lambda_max lambda_count``
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from fractions import Fraction

import numpy as np

from . import contraction as C
from . import graphs as G
from . import kernels as K
from . import mc
from .scaling import NonConvergence, estimate_sd
from .terms import expand_solution, series_to_json
from .terms import to_text as term_text

EXIT_OK, EXIT_FAIL, EXIT_ARGS, EXIT_DOMAIN, EXIT_NUMERIC = 0, 1, 2, 3, 4

CONFIG_KEYS = {
    "nt": int, "nx": int, "dx": float, "dt": float, "eps": float, "T_window": float,
    "samples": int, "seed": int, "batch": int, "lam": float,
    "a": float, "gh_nodes": int, "panels": int, "epsrel": float,
    "lambda_min": float, "lambda_max": float, "lambda_count": int,
}


class UsageError(ValueError):
    pass


def load_config(path: str | None) -> dict:
    """Parse a flat ``key = value`` file, validating keys and types."""
    if not path:
        return {}
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (x.strip() for x in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                out[key] = CONFIG_KEYS[key](value)
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return out


def _emit(args, text: str) -> None:
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, default=_json_default)


def _json_default(x):
    if isinstance(x, Fraction):
        return {"num": str(x.numerator), "den": str(x.denominator)}
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"not serialisable: {type(x).__name__}")


def _require_format(args, allowed):
    if args.format not in allowed:
        raise UsageError(f"--format must be one of {', '.join(allowed)} for {args.command}")


def _nonneg(name, value):
    if value is None or value < 0:
        raise UsageError(f"--{name} must be a non-negative integer")


# ---------------------------------------------------------------------------
# commands


def cmd_expand(args, cfg) -> int:
    _nonneg("order", args.order)
    _require_format(args, ("json", "text"))
    series = expand_solution(args.order)
    if args.format == "json":
        _emit(args, _json(series_to_json(series)))
    else:
        lines = [f"F{j}: {c} {term_text(t)}" for j in series.orders() for c, t in series.items(j)]
        _emit(args, "\n".join(lines))
    return EXIT_OK


def cmd_diagrams(args, cfg) -> int:
    _require_format(args, ("csv", "json", "dot"))
    if args.d is None or args.d < 1:
        raise UsageError("--d must be a positive integer")
    if args.nmax is None:
        threshold, reports = G.finiteness_certificate(args.d)
        header = {"d": args.d, "threshold": threshold}
    else:
        if args.nmax < 2:
            raise UsageError("--nmax must be >= 2")
        graphs = G.enumerate_admissible(args.nmax, d=args.d, rho_min=0) if args.divergent_only \
            else G.enumerate_admissible(args.nmax)
        reports = [G.degree_of_divergence(g, args.d) for g in graphs]
        header = {"d": args.d, "nmax": args.nmax}
    if args.format == "csv":
        _emit(args, G.reports_to_csv(reports))
    elif args.format == "dot":
        _emit(args, "\n".join(G.graph_to_dot(r.graph, f"G{i}") for i, r in enumerate(reports)))
    else:
        rows = [{"N": r.graph.N, "L": r.graph.L, "edges": [list(e) for e in r.graph.edges],
                 "valency": r.graph.valency_histogram(), "rho": r.rho,
                 "ambiguity_dim": r.ambiguity_dim, "key": G.key_digest(r.graph),
                 "provenance": str(G.provenance_term(r.graph))} for r in reports]
        _emit(args, _json({**header, "graphs": rows}))
    return EXIT_OK


def _diagram_block(terms, fmt):
    if fmt == "json":
        return [C.diagram_to_json(t) for t in terms]
    return [C.to_text(t) for t in terms]


def cmd_correlate(args, cfg) -> int:
    _nonneg("order", args.order)
    _require_format(args, ("json", "text"))
    w = C.two_point_correlation(args.order, d=args.d)
    out = {}
    for k in w.orders():
        terms = C.evaluate_at_zero(w[k]) if args.at_zero else w[k]
        out[str(k)] = _diagram_block(terms, args.format)
    if args.format == "json":
        _emit(args, _json({"d": args.d, "at_zero": args.at_zero, "orders": out}))
    else:
        _emit(args, "\n".join(f"order {k}: {line}" for k, lines in out.items() for line in lines))
    return EXIT_OK


def cmd_renorm_eq(args, cfg) -> int:
    if args.order is None or args.order < 1:
        raise UsageError("--order must be >= 1")
    _require_format(args, ("json", "text"))
    M = C.renormalized_equation(args.order, d=args.d)
    if args.format == "json":
        _emit(args, _json({"d": args.d, "M": {str(n): _diagram_block(v, "json")
                                              for n, v in M.items()}}))
    else:
        _emit(args, "\n".join(f"M{n}: {C.to_text(t)}" for n, v in M.items() for t in v))
    return EXIT_OK


def cmd_sd(args, cfg) -> int:
    _require_format(args, ("csv", "json"))
    if args.d is None or args.d < 1:
        raise UsageError("--d must be a positive integer")
    lams = np.geomspace(cfg.get("lambda_min", 0.05), cfg.get("lambda_max", 0.4),
                        cfg.get("lambda_count", 6))
    rows = []
    for k in args.power:
        if k < 1:
            raise UsageError("--power entries must be >= 1")
        est = estimate_sd(K.power_sd_sampler(k, args.d), None, lams)
        rows.append({"kernel": f"p^{k}", "d": args.d, "estimate": est, "analytic": k * args.d,
                     "error": est - k * args.d})
    _emit(args, _csv(rows) if args.format == "csv" else _json(rows))
    return EXIT_OK


def cmd_kernel(args, cfg) -> int:
    _require_format(args, ("csv", "json"))
    if args.d is None or args.d < 1 or args.n is None or args.n < 1:
        raise UsageError("--d and --n must be positive integers")
    quad = K.KernelQuad(**{k: cfg[k] for k in ("gh_nodes", "panels", "epsrel") if k in cfg})
    spec = K.KernelSpec(args.d, args.n, a=cfg.get("a", args.a))
    rows = []
    if args.mode == "kl":
        rng = np.random.default_rng(args.seed)
        for _ in range(args.points):
            t = float(rng.uniform(0.05, 2.0))
            x = rng.normal(size=args.d) * math.sqrt(t)
            kl = K.kl_representation(spec, t, x, quad)
            direct = float(K.power_kernel(spec, t, x))
            rows.append({"t": t, "x": " ".join(f"{v:.6g}" for v in x), "kl": kl,
                         "direct": direct, "rel_err": abs(kl / direct - 1)})
        summary = {"max_rel_err": max(r["rel_err"] for r in rows)}
    elif args.mode == "pairing":
        f = K.bump_test_function(args.d, 0.2, 1.0)
        ext = K.extended_power_pairing(spec, f, quad)
        plain = K.plain_power_pairing(spec, f, quad)
        rows.append({"d": args.d, "n": args.n, "a": spec.a, "ell": spec.ell, "extended": ext,
                     "plain": plain, "rel_err": abs(ext / plain - 1)})
        summary = {"max_rel_err": rows[0]["rel_err"]}
    else:
        for t in (0.01, 0.05, 0.2):
            x = np.full(args.d, 0.3)
            val, tail = K.torus_kernel(t, x, terms=4, return_tail=True)
            rows.append({"t": t, "x": 0.3, "torus": val, "free": K.heat_kernel(t, x),
                         "tail_bound": tail})
        summary = {}
    if args.format == "csv":
        _emit(args, _csv(rows))
    else:
        _emit(args, _json({"mode": args.mode, "rows": rows, **summary}))
    return EXIT_OK


def cmd_mc(args, cfg) -> int:
    _require_format(args, ("csv", "json"))
    params = {k: cfg[k] for k in ("nt", "nx", "dx", "dt", "eps", "T_window", "batch") if k in cfg}
    if args.samples is not None:
        params["samples"] = args.samples
    elif "samples" in cfg:
        params["samples"] = cfg["samples"]
    params["seed"] = args.seed if args.seed is not None else cfg.get("seed", 0)
    lat = mc.LatticeConfig(**params)
    lam = cfg.get("lam", args.lam)
    ops = mc.lattice_operators(lat)
    f1, f2, phi = mc.default_tests(lat)
    which = args.validate
    reports = []
    if which in ("covariance", "all"):
        reports.append(mc.validate_covariance(lat, f1, f2, ops))
    if which in ("first-order", "all"):
        reports += mc.validate_first_order(lat, None, lam, f1, ops)
        reports += mc.validate_first_order(lat, phi, lam, f1, ops)
    if which in ("two-point", "all"):
        reports += mc.validate_two_point(lat, None, lam, f1, f2, ops)
        reports += mc.validate_two_point(lat, phi, lam, f1, f2, ops)
    rows = [dict(r.as_row(), passed=r.passed(3.0)) for r in reports]
    _emit(args, _csv(rows) if args.format == "csv" else _json(rows))
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_FAIL


COMMANDS = {
    "expand": cmd_expand, "diagrams": cmd_diagrams, "correlate": cmd_correlate,
    "renorm-eq": cmd_renorm_eq, "sd": cmd_sd, "kernel": cmd_kernel, "mc": cmd_mc,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phi3ren", description=__doc__.split("\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file")
    common.add_argument("--out", help="write output here instead of stdout")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("expand", parents=[common], help="perturbative coefficients F_0..F_J")
    s.add_argument("--order", type=int, required=True)
    s.add_argument("--format", default="json")

    s = sub.add_parser("diagrams", parents=[common], help="admissible graphs and power counting")
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--nmax", type=int)
    s.add_argument("--divergent-only", action="store_true")
    s.add_argument("--format", default="csv")

    s = sub.add_parser("correlate", parents=[common], help="two-point correlation diagrams")
    s.add_argument("--order", type=int, required=True)
    s.add_argument("--d", type=int, default=3)
    s.add_argument("--at-zero", action="store_true")
    s.add_argument("--format", default="json")

    s = sub.add_parser("renorm-eq", parents=[common], help="counterterm operators M_n")
    s.add_argument("--order", type=int, required=True)
    s.add_argument("--d", type=int, default=3)
    s.add_argument("--format", default="json")

    s = sub.add_parser("sd", parents=[common], help="scaling degree estimates of heat-kernel powers")
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--power", type=int, nargs="+", default=[1, 2, 3])
    s.add_argument("--format", default="csv")

    s = sub.add_parser("kernel", parents=[common], help="heat-kernel numerics")
    mode = s.add_mutually_exclusive_group()
    mode.add_argument("--kl", dest="mode", action="store_const", const="kl")
    mode.add_argument("--pairing", dest="mode", action="store_const", const="pairing")
    mode.add_argument("--torus", dest="mode", action="store_const", const="torus")
    s.set_defaults(mode="kl")
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--a", type=float, default=1.0)
    s.add_argument("--points", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", default="csv")

    s = sub.add_parser("mc", parents=[common], help="Monte-Carlo validation on a d=1 lattice")
    s.add_argument("--validate", choices=["covariance", "first-order", "two-point", "all"],
                   default="all")
    s.add_argument("--seed", type=int)
    s.add_argument("--samples", type=int)
    s.add_argument("--lam", type=float, default=0.5)
    s.add_argument("--format", default="csv")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ARGS if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except G.NotSubcritical as exc:
        sys.stderr.write(f"NotSubcritical: {exc}\n")
        return EXIT_DOMAIN
    except NonConvergence as exc:
        sys.stderr.write(f"non-convergence: {exc}\n")
        return EXIT_NUMERIC
    except (UsageError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_ARGS


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
