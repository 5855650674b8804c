"""Command line front end: ``radonlab <command> --config problem.ini``.

Every command produces a report (JSON, ``--format report``) or its tables
(CSV, ``--format tables``).  Reports carry the schema version, a hash of the
config text, the full effective config (defaults included), the seed and
the truncation orders.  ``verify`` re-checks the certificates stored in a
report without trusting any of the code that produced them beyond the
parsers and exact polynomial arithmetic.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .config import ConfigError, ProblemConfig, floats, int_rows
from .core import JetSeries, PreconditionError, deg
from .dsl import DSLError, parse_field, parse_poly, print_surface
from .lie import WeightedField, field_to_str, lie_closure, span_at_degree
from .report import SCHEMA_VERSION, config_hash, dump_report, rows_to_csv

COMMANDS = ("analyze", "prep", "divide", "lie", "control", "kernel", "norm", "ccball", "maximal", "verify")


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {type(exc).__name__}: {exc}")


# ---------------------------------------------------------------------------
# helpers


def _field_rows(fields: dict) -> list[dict]:
    return [{"alpha": list(a), "degree": list(w.d), "field": field_to_str(w.X)}
            for a, w in sorted(fields.items(), key=lambda kv: (sum(kv[0]), kv[0]))]


def _fields_from_cfg(text_fields: str, text_degs: str, n: int, aliases) -> list[WeightedField]:
    fs = [f for f in text_fields.split(";") if f.strip()]
    ds = int_rows(text_degs)
    if len(fs) != len(ds):
        raise ConfigError("need one degree per field")
    return [WeightedField(parse_field(f, n, aliases), d, f"Y{k + 1}") for k, (f, d) in enumerate(zip(fs, ds))]


# ---------------------------------------------------------------------------
# stages


def stage_analyze(cfg: ProblemConfig, out: dict) -> None:
    from .surface import check_condition, extract_exp_fields, gamma_to_w, partition_pure

    gamma = cfg.surface()
    e = gamma.dilations
    W = gamma_to_w(gamma)
    if W.W.saturated:
        out["warnings"].append("W computed from a saturated series")
    tw = W.taylor
    ex = extract_exp_fields(gamma)
    part = partition_pure(tw, e, gamma.nx)
    xpart = partition_pure(ex, e, gamma.nx)
    res = out["results"]
    res["surface"] = print_surface(gamma)
    res["W"] = W.W
    res["X_alpha"] = _field_rows(tw)
    res["exp_fields"] = _field_rows(ex)
    res["partition_W"] = {"P": [list(a) for a in part.alphas_P], "N": [list(a) for a in part.alphas_N
                                                                       if a in tw]}
    res["partition_exp"] = {"P": [list(a) for a in xpart.alphas_P], "N": [list(a) for a in xpart.alphas_N
                                                                           if a in ex]}
    cut = cfg.get("analysis", "cutoff")
    cutoff = int(cut) if cut else None
    numeric = cfg.getb("analysis", "numeric")
    verdicts = {}
    rows = []
    for c in [c.strip() for c in cfg.get("analysis", "conditions").split(",") if c.strip()]:
        v = check_condition(gamma, c, cutoff=cutoff, numeric=numeric)
        verdicts[c] = v.to_dict()
        rows.append({"condition": c, "status": v.status, **v.cutoffs})
        if v.status == "Unknown":
            out["warnings"].append(f"condition {c} is Unknown at the configured truncation")
    res["verdicts"] = verdicts
    out["tables"]["X_alpha"] = [{"source": "W", **r} for r in res["X_alpha"]] + \
                               [{"source": "exp", **r} for r in res["exp_fields"]]
    out["tables"]["verdicts"] = rows


def stage_prep(cfg: ProblemConfig, out: dict) -> None:
    from .prep import check_normalization, taylor_prepare
    from .surface import gamma_to_w

    gamma = cfg.surface()
    W = gamma_to_w(gamma)
    prep = taylor_prepare(W.W, seed=cfg.seed)
    if prep.saturated:
        out["warnings"].append("preparation of a saturated series")
    rec = prep.reconstruct()
    nm = [f"t{i + 1}" for i in range(W.W.nt)] + [f"x{i + 1}" for i in range(W.W.nx)]
    rows = [{"alpha": list(a), "degree": list(deg(a, gamma.dilations)), "field": field_to_str(X),
             "coefficient": c.comps[0].to_str(nm)}
            for a, X, c in zip(prep.alphas, prep.fields, prep.coeffs)]
    out["results"].update({
        "W": W.W,
        "preparation": rows,
        "kronecker_identity": check_normalization(prep),
        "reconstruction_exact": rec.comps == W.W.comps,
        "order_weights": [str(w) for w in prep.order.lam],
    })
    out["tables"]["preparation"] = rows
    if not out["results"]["reconstruction_exact"]:
        out["errors"].append("preparation does not reconstruct W at truncation")


def _parse_vec(text: str, N: int, n: int, aliases) -> tuple:
    return tuple(parse_poly(c, N, n, aliases) for c in text.split("|"))


def stage_divide(cfg: ProblemConfig, out: dict) -> None:
    from .prep import draw_order_weights, galligo_divide, _admitted_monomials

    N, n = cfg.dims()
    al = cfg.aliases
    ftext = cfg.get("divide", "f")
    if not ftext:
        raise ConfigError("[divide] needs f")
    pol = cfg.policy
    f = JetSeries.from_polys(N, n, pol, _parse_vec(ftext, N, n, al))
    gens = [JetSeries.from_polys(N, n, pol, _parse_vec(g, N, n, al))
            for g in cfg.get("divide", "generators").split(";") if g.strip()]
    order = draw_order_weights(_admitted_monomials(N + n, f.trunc.keep), seed=cfg.seed, nvars=N + n)
    res = galligo_divide(f, gens, order=order)
    nm = [f"t{i + 1}" for i in range(N)] + [f"x{i + 1}" for i in range(n)]
    back = res.reconstruct([g.comps for g in gens], f.trunc.keep)
    out["results"].update({
        "remainder": [p.to_str(nm) for p in res.remainder],
        "quotients": [c.to_str(nm) for c in res.coefficients],
        "E_L_size": len(res.E_L),
        "remainder_support_disjoint": all((m, i) not in res.E_L
                                          for i, p in enumerate(res.remainder) for m in p.terms),
        "reconstruction_exact": tuple(back) == f.comps,
        "order_weights": [str(w) for w in res.order.lam],
    })
    out["tables"]["remainder"] = [{"component": i + 1, "monomial": list(m), "coefficient": str(c)}
                                  for i, p in enumerate(res.remainder) for m, c in sorted(p.terms.items())]


def stage_lie(cfg: ProblemConfig, out: dict) -> None:
    from .surface import extract_exp_fields, gamma_to_w, partition_pure

    gamma = cfg.surface()
    budget = cfg.policy.budget
    cut = cfg.get("analysis", "cutoff")
    cutoff = min(int(cut) if cut else 4, budget)
    S = [w.truncated(budget) for w in extract_exp_fields(gamma).values()]
    S = [w for w in S if not w.is_zero()]
    if not S:
        out["results"]["closure"] = []
        out["warnings"].append("surface has no nonzero exponent fields")
        return
    cutoff = max(cutoff, max(w.size for w in S))
    C = lie_closure(S, cutoff, "L", budget)
    C0 = lie_closure(S, cutoff, "L0", budget)
    rows = [{"flavor": fl, "degree": list(w.d), "field": field_to_str(w.X), "tag": w.tag}
            for fl, cl in (("L", C), ("L0", C0)) for w in cl]
    spans = []
    for d0 in sorted(set(C.degrees()) | set(C0.degrees()), key=lambda d: (sum(d), d)):
        spans.append({"degree": list(d0), "rank_L": span_at_degree(C, d0).rank,
                      "rank_L0": span_at_degree(C0, d0).rank})
    part = partition_pure(gamma_to_w(gamma).taylor, gamma.dilations, gamma.nx)
    out["results"].update({"cutoff": cutoff, "complete_L": C.complete, "complete_L0": C0.complete,
                           "closure": rows, "span_ranks": spans,
                           "pure_fields": [field_to_str(w.X) for w in part.P]})
    if not C.complete:
        out["warnings"].append("closure cutoff discarded nonzero brackets")
    out["tables"]["closure"] = rows
    out["tables"]["span_ranks"] = spans


def stage_control(cfg: ProblemConfig, out: dict) -> None:
    from .geometry import control_check
    from .surface import extract_exp_fields, partition_pure

    gamma = cfg.surface()
    n, budget = gamma.nx, cfg.policy.budget
    al = cfg.aliases
    numeric = cfg.getb("analysis", "numeric")
    tt = cfg.get("control", "target")
    certs = []
    if tt:
        d0 = int_rows(cfg.get("control", "degree"))
        if len(d0) != 1:
            raise ConfigError("[control] degree needs one row")
        target = WeightedField(parse_field(tt, n, al), d0[0], "target")
        S = _fields_from_cfg(cfg.get("control", "fields"), cfg.get("control", "degrees"), n, al)
        certs.append(control_check(target, S, budget=budget, numeric=numeric))
    else:
        # non-pure exponent fields against the closure of the pure ones
        part = partition_pure(extract_exp_fields(gamma), gamma.dilations, n)
        P = [w.truncated(budget) for w in part.P]
        need = max([w.size for w in part.N + P] + [2])
        C = lie_closure(P, min(need, budget), "L", budget) if P else []
        for tgt in part.N:
            certs.append(control_check(tgt.truncated(budget), C, budget=budget, numeric=numeric))
    for c in certs:
        if c.status == "Unknown":
            out["warnings"].append(f"control of {field_to_str(c.target.X)} is Unknown")
    out["results"]["certificates"] = certs
    out["tables"]["control"] = [{"target": field_to_str(c.target.X), "degree": list(c.target.d),
                                 "status": c.status, "route": c.route} for c in certs]


def stage_kernel(cfg: ProblemConfig, out: dict) -> None:
    from .kernels import BumpParams, drift, make_bump_family, synth_kernel, validate_product_bounds

    e = cfg.dilations
    params = BumpParams(a=cfg.getf("kernel", "a"), k=cfg.geti("kernel", "k"), kind=cfg.get("kernel", "kind"),
                        seed=cfg.seed, fixed=cfg.getb("kernel", "fixed"))
    J = cfg.geti("kernel", "J")
    fam = make_bump_family(params, J, e)
    canc = fam.cancellation_errors()
    rows = []
    for j in range(cfg.geti("kernel", "J_min"), J + 1):
        K = synth_kernel(fam, j, cfg.geti("kernel", "resolution"))
        pb = validate_product_bounds(K)
        rows.append({"J": j, **{f"C{list(a)}": v for a, v in pb.constants.items()},
                     "integral": K.integral()})
    c0 = [r[f"C{[0] * e.N}"] for r in rows]
    out["results"].update({"family_bound": fam.bound, "norm_orders": list(fam.norms_checked),
                           "max_cancellation_error": max(canc.values(), default=0.0),
                           "constants": rows, "alpha0_drift": drift(c0)})
    out["tables"]["kernel_constants"] = rows


def _operator_cfg(cfg: ProblemConfig, sec: str):
    from .operators import Cutoff, OperatorConfig

    r2 = cfg.sections[sec].get("psi2_radius", "")
    return OperatorConfig(
        psi1=Cutoff(cfg.getf(sec, "psi1_radius"), cfg.getf(sec, "psi1_plateau")),
        psi2=Cutoff(float(r2), cfg.getf(sec, "psi2_plateau")) if r2 else None,
        a=cfg.getf(sec, "a"), t_nodes=cfg.geti(sec, "t_nodes"),
        p=float(cfg.sections[sec].get("p", "2")))


def stage_norm(cfg: ProblemConfig, out: dict) -> None:
    from .kernels import BumpParams, make_bump_family, truncated_kernel
    from .operators import XGrid, build_T, estimate_opnorm

    gamma = cfg.surface()
    ocfg = _operator_cfg(cfg, "operator")
    params = BumpParams(a=ocfg.a, k=cfg.geti("kernel", "k"), kind=cfg.get("kernel", "kind"),
                        seed=cfg.seed, fixed=cfg.getb("kernel", "fixed"))
    J0, J1 = cfg.geti("operator", "J_min"), cfg.geti("operator", "J_max")
    fam = make_bump_family(params, J1, gamma.dilations)
    grid = XGrid.cube(gamma.nx, cfg.getf("operator", "x_lo"), cfg.getf("operator", "x_hi"),
                      cfg.geti("operator", "x_points"))
    rows = []
    for J in range(J0, J1 + 1):
        T = build_T(gamma, truncated_kernel(fam, J), ocfg, grid)
        est = estimate_opnorm(T, p=ocfg.p, trials=cfg.geti("operator", "trials"), seed=cfg.seed)
        if not est.converged:
            out["warnings"].append(f"norm estimate at J={J} did not converge")
        rows.append(est.row(J=J, path=T.path))
    out["results"]["norms"] = rows
    out["tables"]["norms"] = rows


def stage_ccball(cfg: ProblemConfig, out: dict) -> None:
    from .geometry import cc_ball_sample, loglog_slope

    X0 = floats(cfg.get("ccball", "x0"))
    X = _fields_from_cfg(cfg.get("ccball", "fields"), cfg.get("ccball", "degrees"), len(X0), cfg.aliases)
    nu = len(X[0].d)
    deltas = floats(cfg.get("ccball", "deltas"))
    rows = []
    for d in deltas:
        s = cc_ball_sample(X, X0, [d] * nu, paths=cfg.geti("ccball", "paths"),
                           segments=cfg.geti("ccball", "segments"), seed=cfg.seed)
        if s.escaped:
            out["warnings"].append(f"{s.escaped} paths left the domain at delta={d}")
        rows.append({"delta": d, **{f"extent_{i + 1}": float(v) for i, v in enumerate(s.extents)}})
    slopes = [loglog_slope(deltas, [r[f"extent_{i + 1}"] for r in rows]) for i in range(len(X0))] \
        if len(deltas) > 1 else []
    out["results"].update({"extents": rows, "loglog_slopes": slopes})
    out["tables"]["ccball"] = rows


def _j_samples(nu: int, limit: int = 81) -> list[tuple]:
    from itertools import product

    vals = (0, 1, 2, math.inf)
    out = list(product(vals, repeat=nu))
    if len(out) > limit:
        rng = np.random.default_rng(0)
        out = [out[i] for i in sorted(rng.choice(len(out), limit, replace=False))]
    return out


def stage_maximal(cfg: ProblemConfig, out: dict) -> None:
    from .operators import (XGrid, compare_reduction, family_condition_violations, reduce_maximal_pipeline,
                            wj_taylor_identity)

    gamma = cfg.surface()
    spec = reduce_maximal_pipeline(gamma, seed=cfg.seed)
    nm = ([f"t{i + 1}" for i in range(spec.N)] + [f"s{i + 1}" for i in range(spec.N)]
          + [f"x{i + 1}" for i in range(spec.nx)])
    fam_rows = [{"l": k + 1, "field": field_to_str(w.X), "degree": list(w.d), "coefficient": c.to_str(nm)}
                for k, (w, c) in enumerate(zip(spec.fields, spec.coeffs))]
    ident = {str(j): wj_taylor_identity(spec, j) for j in _j_samples(spec.nu)} if spec.r else {}
    pts = cfg.get("maximal", "x_points")
    npts = int(pts) if pts else (257 if gamma.nx == 1 else 33)
    grid = XGrid.cube(gamma.nx, cfg.getf("maximal", "x_lo"), cfg.getf("maximal", "x_hi"), npts)
    ocfg = _operator_cfg(cfg, "maximal")
    rng = np.random.default_rng(cfg.seed)
    f = rng.random(grid.shape)
    cmp = compare_reduction(gamma, ocfg, f, grid, J=cfg.geti("maximal", "J"),
                            extra=cfg.geti("maximal", "extra_scales"), seed=cfg.seed)
    viol = family_condition_violations(spec) if spec.r else []
    out["results"].update({
        "nu": spec.nu, "r": spec.r, "alphas": [list(a) for a in spec.alphas],
        "family": fam_rows, "condition_violations": viol, "Wj_identity": ident,
        "M0_le_M1_max_violation": cmp.max_violation(),
        "scales_M0": [list(s) for s in cmp.scales0], "scales_M1": [list(s) for s in cmp.scales1],
    })
    out["tables"]["family"] = fam_rows
    out["tables"]["comparison"] = [{"x_index": i, "M0": float(a), "M1": float(b)}
                                   for i, (a, b) in enumerate(zip(cmp.M0.ravel(), cmp.M1.ravel()))]
    if viol:
        out["errors"].extend(viol)
    if not all(ident.values()):
        out["errors"].append("W_j Taylor identity fails")
    if cmp.max_violation() > 1e-12:
        out["errors"].append(f"M0 exceeds M1 by {cmp.max_violation():.3g}")


STAGES = {"analyze": stage_analyze, "prep": stage_prep, "divide": stage_divide, "lie": stage_lie,
          "control": stage_control, "kernel": stage_kernel, "norm": stage_norm, "ccball": stage_ccball,
          "maximal": stage_maximal}


def run_pipeline(cfg: ProblemConfig, command: str) -> dict:
    """Run one stage and return the report (a plain dict, deterministic in ``(config, seed)``)."""
    if command not in STAGES:
        raise ValueError(f"unknown command {command!r}")
    pol = cfg.policy
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "provenance": {"config_hash": config_hash(cfg.source_text), "seed": cfg.seed,
                       "truncation": {"L_t": pol.L_t, "L_x": pol.L_x, "budget": pol.budget}},
        "config": cfg.to_dict(),
        "results": {},
        "tables": {},
        "warnings": [],
        "errors": [],
    }
    try:
        STAGES[command](cfg, report)
    except (ConfigError, DSLError, PreconditionError, ValueError, RuntimeError, ArithmeticError) as exc:
        raise StageError(command, exc) from exc
    return report


# ---------------------------------------------------------------------------
# certificate verification


def _wf(d: dict, n: int) -> WeightedField:
    return WeightedField(parse_field(d["field"], n), tuple(d["degree"]), d.get("tag", ""))


def _is_control_cert(d) -> bool:
    return isinstance(d, dict) and {"status", "target", "candidates", "coefficients", "cap"} <= d.keys()


def _walk(obj):
    if isinstance(obj, dict):
        yield obj
        for v in obj.values():
            yield from _walk(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from _walk(v)


def _field_dim(d: dict) -> int:
    """Dimension from the highest ``d<i>`` / ``x<i>`` index appearing in stored fields."""
    import re

    texts = [d["target"]["field"]] + [c["field"] for c in d["candidates"]] + list(d["coefficients"].values())
    idx = [int(m) for t in texts for m in re.findall(r"[dx](\d+)", t)]
    return max(idx, default=1)


def verify_certificate(d: dict, n: int | None = None) -> tuple[bool, str]:
    """Replay one serialized control certificate from its text alone."""
    from .core import Poly
    from .lie import field_truncate
    from .linalg import rank_of

    n = n or _field_dim(d)
    status = d["status"]
    if status == "Proved":
        tgt = _wf(d["target"], n)
        cands = [_wf(c, n) for c in d["candidates"]]
        out = [Poly.zero(n) for _ in range(n)]
        for j, ctext in d["coefficients"].items():
            w = cands[int(j)]
            if not all(a <= b for a, b in zip(w.d, tgt.d)):
                return False, f"candidate {j} has degree {list(w.d)} above {list(tgt.d)}"
            c = parse_poly(ctext, 0, n)
            for i, p in enumerate(w.X):
                out[i] = out[i] + c.mul(p)
        cap = d["cap"]
        ok = field_truncate(out, cap) == field_truncate(tgt.X, cap)
        return ok, "" if ok else "coefficients do not reproduce the target"
    if status == "Refuted":
        wit = d.get("witness") or {}
        if "target_value" not in wit:
            return True, "refutation carried by nested parts"
        tv = [Fraction(v) for v in wit["target_value"]]
        sv = [[Fraction(v) for v in row] for row in wit["survivor_values"]]
        tgt = _wf(d["target"], n)
        from .lie import field_eval_exact
        if list(field_eval_exact(tgt.X, tuple(Fraction(v) for v in wit["x"]))) != tv:
            return False, "stored target value differs from the target at x"
        Z = wit["zero_components"]
        if any(tgt.d[mu] for mu in Z):
            return False, "target degree is nonzero on the zero pattern"
        rows = [dict(enumerate(r)) for r in sv]
        r0 = rank_of([{k: v for k, v in r.items() if v} for r in rows])
        r1 = rank_of([{k: v for k, v in r.items() if v} for r in rows + [dict(enumerate(tv))]])
        ok = r1 > r0
        return ok, "" if ok else "target value lies in the survivors' span"
    return True, "nothing to replay"


def verify_report(report: dict) -> dict:
    checked, failures = 0, []
    for d in _walk(report):
        if _is_control_cert(d) and d["status"] in ("Proved", "Refuted"):
            ok, why = verify_certificate(d)
            checked += 1
            if not ok:
                failures.append({"target": d["target"]["field"], "status": d["status"], "reason": why})
    return {"checked": checked, "failed": len(failures), "failures": failures}


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="radonlab", description="Surfaces, W fields, conditions, kernels and "
                                                               "discretized Radon transforms.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("report", nargs="?", help="report to check (verify only)")
    ap.add_argument("--config", type=Path, help="INI problem file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--lt", type=int, help="t-order of truncation")
    ap.add_argument("--lx", type=int, help="x-order of truncation")
    ap.add_argument("--out", type=Path, help="output file (report) or directory (tables)")
    ap.add_argument("--format", choices=("report", "tables"), default="report")
    return ap


def _emit(report: dict, fmt: str, out: Path | None) -> None:
    if fmt == "report":
        text = dump_report(report)
        if out is None:
            sys.stdout.write(text)
        else:
            out.write_text(text)
        return
    tables = report.get("tables", {})
    if out is None:
        for name, rows in tables.items():
            sys.stdout.write(f"# {name}\n{rows_to_csv(rows)}\n")
        return
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in tables.items():
        (out / f"{name}.csv").write_text(rows_to_csv(rows))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "verify":
        if not args.report:
            print("verify needs a report path", file=sys.stderr)
            return 2
        rep = json.loads(Path(args.report).read_text())
        res = verify_report(rep)
        out = {"schema_version": SCHEMA_VERSION, "command": "verify", "source": str(args.report),
               "results": res, "tables": {"failures": res["failures"]}, "warnings": [], "errors": []}
        _emit(out, args.format, args.out)
        return 1 if res["failed"] else 0
    try:
        cfg = ProblemConfig.from_file(args.config) if args.config else ProblemConfig.from_text("")
        if args.seed is not None:
            cfg.set("problem", "seed", args.seed)
        if args.lt is not None:
            cfg.set("truncation", "L_t", args.lt)
        if args.lx is not None:
            cfg.set("truncation", "L_x", args.lx)
        cfg.validate()
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        report = run_pipeline(cfg, args.command)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    _emit(report, args.format, args.out)
    for w in report["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    for e in report["errors"]:
        print(f"error: {e}", file=sys.stderr)
    return 1 if report["errors"] else 0


if __name__ == "__main__":
    sys.exit(main())
