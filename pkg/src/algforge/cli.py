"""Command-line front-end: validate scenarios, compute tables, run checks.

Exit status: 0 all requested checks pass, 1 any check fails, 2 the
scenario (or the request) is malformed.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .algebroid import check_anchor_morphism, check_jacobi
from .connections import (
    basic_connection_E,
    basic_connection_TN,
    basic_curvature,
    curvature_Econn,
    curvature_linear,
    torsion,
)
from .exprcore import eval_batch, sample_points, to_string
from .gauge import delta_functional, gauge_A, gauge_higgs, minimal_coupling, pre_bracket
from .result import VerificationReport, environment_fingerprint
from .scenario import Scenario, ScenarioError, load_scenario
from .verify import CHECK_DESCRIPTIONS, UnknownCheckError, run_suite
from . import __version__

COMPUTE_KINDS = (
    "basic-conn",
    "basic-curv",
    "torsion",
    "curvatures",
    "minimal-coupling",
    "gauge-phi",
    "gauge-A",
    "pre-bracket",
)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="algforge", description=__doc__)
    p.add_argument("--version", action="version", version=f"algforge {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario JSON file")
        sp.add_argument("--json", action="store_true", help="machine-readable output")
        sp.add_argument("--seed", type=int, default=None, help="sampling seed override")
        sp.add_argument("--points", type=int, default=None, help="sample count override")
        sp.add_argument("--tol", type=float, default=None, help="tolerance override for every check")
        sp.add_argument("--box", type=float, default=None, help="half-width of the sample box")

    v = sub.add_parser("validate", help="run the algebroid axiom checks")
    common(v)

    c = sub.add_parser("compute", help="print a derived table, symbolically or at a point")
    common(c)
    c.add_argument("what", choices=COMPUTE_KINDS)
    c.add_argument("--at", default=None, help="comma-separated point to evaluate at")

    r = sub.add_parser("verify", help="run named theorem checks")
    common(r)
    r.add_argument(
        "--checks",
        default=None,
        help="comma-separated check ids (default: all; V8, V10, V11 presuppose "
        "vanishing basic curvature)",
    )
    return p


def _apply_overrides(scn: Scenario, args) -> Scenario:
    if args.seed is not None:
        scn.seed = args.seed
    if args.points is not None:
        scn.count = args.points
    if args.box is not None:
        scn.box = (-abs(args.box), abs(args.box))
    return scn


def _emit_report(report: VerificationReport, as_json: bool):
    if as_json:
        print(report.to_json())
        return
    for r in report.results:
        status = "pass" if r.passed else "FAIL"
        extra = f"  [{r.note}]" if r.note else ""
        print(
            f"{r.check_id:<4} {status}  max_residual={r.max_residual:.3e}  "
            f"tol={r.tolerance:.0e}  points={r.points}  {r.ms:7.1f} ms  "
            f"{CHECK_DESCRIPTIONS.get(r.check_id, '')}{extra}"
        )


def cmd_validate(args) -> int:
    scn = _apply_overrides(load_scenario(args.scenario), args)
    pts = sample_points(scn.algebroid.base_dim, scn.count, seed=scn.seed, box=scn.box)
    tol = args.tol if args.tol is not None else 1e-9
    results = [
        check_anchor_morphism(scn.algebroid, pts, tol, seed=scn.seed),
        check_jacobi(scn.algebroid, pts, tol, seed=scn.seed),
    ]
    report = VerificationReport(
        results=results, version=__version__, fingerprint=environment_fingerprint(__version__)
    )
    if args.json:
        print(report.to_json())
    else:
        for r in results:
            status = "pass" if r.passed else "FAIL"
            print(f"{r.check_id:<16} {status}  max_residual={r.max_residual:.3e}  tol={r.tolerance:.0e}")
    return 0 if report.all_passed else 1


def _table_entries(scn: Scenario, what: str) -> dict:
    L, nabla = scn.algebroid, scn.connection
    r, n = L.rank, L.base_dim
    out: dict = {}
    if what == "basic-conn":
        B = basic_connection_E(L, nabla).B
        G = basic_connection_TN(L, nabla).G
        for a in range(r):
            for b in range(r):
                for c in range(r):
                    out[f"B[{a + 1},{b + 1},{c + 1}]"] = B[a, b, c]
        for al in range(n):
            for a in range(r):
                for be in range(n):
                    out[f"G[{al + 1},{a + 1},{be + 1}]"] = G[al, a, be]
    elif what == "basic-curv":
        S = basic_curvature(L, nabla).S
        for a in range(r):
            for b in range(r):
                for c in range(b + 1, r):
                    for be in range(n):
                        out[f"S[{a + 1},{b + 1},{c + 1},{be + 1}]"] = S[a, b, c, be]
    elif what == "torsion":
        t = torsion(L, basic_connection_E(L, nabla))
        for a in range(r):
            for b in range(r):
                for c in range(b + 1, r):
                    out[f"t[{a + 1},{b + 1},{c + 1}]"] = t[a, b, c]
    elif what == "curvatures":
        lin = curvature_linear(L, nabla)
        for (al, be), m in lin.comps.items():
            for a in range(r):
                for b in range(r):
                    out[f"R_lin[{al + 1},{be + 1}]({a + 1},{b + 1})"] = m[a, b]
        RE = curvature_Econn(L, basic_connection_E(L, nabla), "E")
        for (a, b), m in RE.comps.items():
            for i in range(r):
                for j in range(r):
                    out[f"R_bas_E[{a + 1},{b + 1}]({i + 1},{j + 1})"] = m[i, j]
        RT = curvature_Econn(L, basic_connection_TN(L, nabla), "TN")
        for (a, b), m in RT.comps.items():
            for i in range(n):
                for j in range(n):
                    out[f"R_bas_TN[{a + 1},{b + 1}]({i + 1},{j + 1})"] = m[i, j]
    elif what == "minimal-coupling":
        config = scn.require_config("compute minimal-coupling")
        F = minimal_coupling(L, config)
        for (mu,), col in sorted(F.coeffs.items()):
            for al in range(n):
                out[f"D[{al + 1},mu={mu + 1}]"] = col[al]
    elif what == "gauge-phi":
        config = scn.require_config("compute gauge-phi")
        eps = scn.require_param("compute gauge-phi", "epsilon")
        dphi = gauge_higgs(L, config, eps)
        for al in range(n):
            out[f"dPhi[{al + 1}]"] = dphi[al]
    elif what == "gauge-A":
        config = scn.require_config("compute gauge-A")
        eps = scn.require_param("compute gauge-A", "epsilon")
        dA = gauge_A(L, nabla, config, eps)
        for a in range(r):
            for mu in range(config.d):
                out[f"dA[{a + 1},mu={mu + 1}]"] = dA[a, mu]
    elif what == "pre-bracket":
        eps = scn.require_param("compute pre-bracket", "epsilon")
        theta = scn.require_param("compute pre-bracket", "theta")
        br = pre_bracket(L, nabla, theta, eps)
        for a in range(r):
            out[f"bracket[{a + 1}]"] = br.components[a]
    return out


def cmd_compute(args) -> int:
    scn = _apply_overrides(load_scenario(args.scenario), args)
    entries = _table_entries(scn, args.what)
    if args.at is not None:
        point = np.array([float(x) for x in args.at.split(",")])
        values = {}
        for k, e in entries.items():
            dim = e.space.dim if e.space is not None else len(point)
            if len(point) != dim:
                raise ScenarioError(
                    f"--at point has {len(point)} coordinates, the table needs {dim}"
                )
            values[k] = float(eval_batch(e, point.reshape(-1, 1))[0])
        if args.json:
            print(json.dumps({"what": args.what, "at": list(point), "values": values}, indent=2))
        else:
            for k, v in values.items():
                print(f"{k} = {v:.12g}")
    else:
        if args.json:
            print(
                json.dumps(
                    {"what": args.what, "entries": {k: to_string(e) for k, e in entries.items()}},
                    indent=2,
                )
            )
        else:
            for k, e in entries.items():
                print(f"{k} = {to_string(e)}")
    return 0


def cmd_verify(args) -> int:
    scn = _apply_overrides(load_scenario(args.scenario), args)
    checks = [c.strip() for c in args.checks.split(",")] if args.checks else None
    overrides = None
    if args.tol is not None:
        from .verify import REGISTRY

        overrides = {cid: args.tol for cid in REGISTRY}
    report = run_suite(scn, checks=checks, seed=args.seed, tol_overrides=overrides,
                       points=args.points)
    _emit_report(report, args.json)
    return 0 if report.all_passed else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "compute":
            return cmd_compute(args)
        return cmd_verify(args)
    except (ScenarioError, UnknownCheckError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
