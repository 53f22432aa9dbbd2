"""``hecop`` command line.

Clock conventions: simulations run on the TILDE clock, ``dX = k^{-1/2} dB +
F(X) dt``. The additive limit is read off at time ``tau / N``; the exp2 and
absolute-value limits at ``tau / (2N)``. With ``--clock HO`` the process
``dX = dB + k F(X) dt`` is run to ``t / k`` instead, which has the same law.

Exit codes: 0 success, 1 verification failed, 2 invalid input, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, density, freeprob, matmodel, stats
from .errors import InvalidArgumentError, NumericFailureError
from .rootsys import Family, RootCase
from .sde import Clock, Method, SchemeConfig, run_ensemble

SCHEMA_VERSION = 1
EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3

VERIFY_HELP = {
    "thm1": "additive limit U_tau (+) sc(2 sqrt tau) of type A at time tau/N, for every k",
    "thm3_1": "exp2 moments of type A at time tau/(2N) against delta_1 [x] mu_tau, for every k",
    "thm3_2": "exp2 image of U_t (+) sc(2 sqrt t) equals mu_2t (quadrature vs moment recursion)",
    "thm4_2": "type B at time tau/(2N) against |U_tau (+) sc(2 sqrt tau)| (even moments)",
    "cor2_6": "type A, k = 1: SDE terminal law equals the drifted Hermitian matrix model",
    "densities": "Monte Carlo normalisation of the closed-form chamber densities",
}


def code_version() -> str:
    """SHA-256 over the package sources, so outputs name the exact code that made them."""
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:16]}"


def parse_k(text: str) -> float:
    if str(text).strip().lower() in ("inf", "infinity", "oo"):
        return math.inf
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid k {text!r}") from None


def parse_k_list(text: str) -> list[float]:
    return [parse_k(p) for p in str(text).split(",") if p.strip()]


def parse_float_list(text: str) -> list[float]:
    return [float(p) for p in str(text).split(",") if p.strip()]


def read_config(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment; keys use flag spelling."""
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


# --------------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; command-line flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("hecop-out"), help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")


def _scheme_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=[m.value for m in Method], default=None,
                   help="euler (explicit, rejection) or implicit (drift-implicit, geometric grid)")
    p.add_argument("--dt-base", type=float, default=None)
    p.add_argument("--geometric-ratio", type=float, default=None)
    p.add_argument("--collision-margin", type=float, default=None)
    p.add_argument("--warm-start-delta", type=float, default=None)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="hecop", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"hecop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("simulate", help="run an ensemble and write terminal states plus moments",
                       description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(p)
    _scheme_flags(p)
    p.add_argument("--case", default="A", choices=[f.value for f in Family])
    p.add_argument("--N", type=int, default=10)
    p.add_argument("--k", type=parse_k, default=1.0, help="multiplicity, or 'inf' for the ODE")
    p.add_argument("--tau", type=float, default=0.5, help="free time")
    p.add_argument("--t-end", type=float, default=None, help="TILDE-clock horizon (overrides tau)")
    p.add_argument("--recipe", choices=[r.value for r in stats.Recipe], default=None)
    p.add_argument("--clock", choices=[c.value for c in Clock], default="TILDE")
    p.add_argument("--replicas", type=int, default=10)
    p.add_argument("--L", type=int, default=4)
    subs["simulate"] = p

    targets = "\n".join(f"  {k:10s}{v}" for k, v in VERIFY_HELP.items())
    p = sub.add_parser("verify", help="run a verification recipe and write a verdict",
                       description=f"Targets:\n{targets}\n\n{__doc__}",
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("target", choices=list(VERIFY_HELP))
    _common(p)
    _scheme_flags(p)
    p.add_argument("--case", default=None, choices=[f.value for f in Family])
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--tau", type=str, default=None, help="free time (comma list for thm3_2)")
    p.add_argument("--k-list", type=parse_k_list, default=None)
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--draws", type=int, default=None, help="MC / matrix draws")
    p.add_argument("--L", type=int, default=4)
    subs["verify"] = p

    p = sub.add_parser("free-limit", help="tabulate the density and moments of U_tau (+) sc(2 sqrt tau)")
    _common(p)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--points", type=int, default=4001)
    p.add_argument("--L", type=int, default=8)
    subs["free-limit"] = p

    p = sub.add_parser("density-selftest", help="MC normalisation and matrix-model KS of the densities")
    _common(p)
    p.add_argument("--draws", type=int, default=100_000)
    p.add_argument("--ks-draws", type=int, default=1000, help="matrix draws per KS check (0 skips)")
    subs["density-selftest"] = p
    return parser, subs


# ----------------------------------------------------------------- output


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, Path):
        return str(v)
    if hasattr(v, "value") and not isinstance(v, (int, str)):
        return v.value
    return v


def _resolved(args) -> dict:
    return _jsonable({k: v for k, v in vars(args).items() if k not in ("config",)})


def write_json(path: Path, payload: dict, args) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "code_version": code_version(),
           "config": _resolved(args), **_jsonable(payload),
           "meta": {"generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat()}}
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{x:.17g}" if isinstance(x, (float, np.floating)) else x for x in row])
    path.write_text(buf.getvalue(), newline="")


def _scheme(args, N: int, t_sim: float) -> SchemeConfig:
    base = stats.default_scheme(N, t_sim)
    over = {}
    if args.method is not None:
        over["method"] = Method(args.method)
        if over["method"] is Method.IMPLICIT and args.geometric_ratio is None:
            over["geometric_ratio"] = 0.2
            over["dt_base"] = t_sim / 2000.0
    for name in ("dt_base", "geometric_ratio", "collision_margin", "warm_start_delta"):
        if getattr(args, name) is not None:
            over[name] = getattr(args, name)
    fields = {f: getattr(base, f) for f in base.__dataclass_fields__}
    fields.update(over)
    if fields["dt_min"] > fields["dt_base"]:
        fields["dt_min"] = fields["dt_base"]
    return SchemeConfig(**fields)


def _report_out(args, reports, verdict: dict | None = None, stem: str = "report") -> None:
    out = args.out
    if args.format == "csv":
        stats.reports_to_csv(reports, out / f"{stem}.csv")
    payload = {"reports": [r.to_dict() for r in reports]}
    if verdict is not None:
        payload["verdict"] = verdict
    write_json(out / f"{stem}.json", payload, args)


# --------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    case = RootCase.parse(args.case, args.N)
    recipe = stats.default_recipe(case) if args.recipe is None else stats.Recipe(args.recipe)
    t_sim = args.t_end if args.t_end is not None else stats.horizon(recipe, args.tau, args.N)
    if not t_sim > 0 or args.replicas < 1:
        raise InvalidArgumentError("need a positive horizon and at least one replica")
    clock = Clock(args.clock)
    cfg = _scheme(args, args.N, t_sim)
    t_run = t_sim / args.k if clock is Clock.HO else t_sim
    if clock is Clock.HO and math.isinf(args.k):
        raise InvalidArgumentError("k = inf needs the TILDE clock")
    ens = run_ensemble(case, args.k, t_run, cfg, args.replicas, args.seed, clock, workers=args.threads)
    args.out.mkdir(parents=True, exist_ok=True)
    coords = ens.coords()
    header = ["replica"] + [f"x{i + 1}" for i in range(args.N)]
    if args.format == "csv":
        write_csv(args.out / "terminal.csv", header,
                  [[r, *map(float, row)] for r, row in enumerate(coords)])
    est = stats.empirical_moments(ens.terminal_states, stats._TRANSFORM[recipe], args.L)
    payload = {"case": str(case), "k": args.k, "clock": clock.value, "t_sim": t_sim, "t_run": t_run,
               "recipe": recipe.value, "moments": est.values, "stderr": est.stderr,
               "attempts": ens.attempts}
    if args.format == "json":
        payload["terminal_states"] = coords
    write_json(args.out / "simulate.json", payload, args)
    return EXIT_OK


def _verify_sweep(args, recipe, family, ls, k_default):
    N = args.N or 150
    tau = float(args.tau) if args.tau is not None else 0.5
    k_list = args.k_list or k_default
    reps = args.replicas or 100
    reports = stats.convergence_sweep(family, k_list, [N], tau, args.L, reps, args.seed, recipe,
                                      cfg_for=lambda n, t: _scheme(args, n, t), workers=args.threads)
    per_k = {stats._fmt(float(r.k)): r.within(ls) for r in reports}
    ok = all(per_k.values())
    verdict = {"moments_checked": list(ls), "per_k": per_k}
    if len(reports) > 1:
        consistent, worst = stats.mutual_consistency(reports, ls)
        verdict.update(mutually_consistent=consistent, worst_pairwise_sigma=worst)
        ok = ok and consistent
    verdict["passed"] = ok
    _report_out(args, reports, verdict, f"verify-{args.target}")
    return ok


def _verify_thm3_2(args):
    taus = parse_float_list(args.tau) if args.tau is not None else [0.1, 0.25, 0.5]
    rows, ok = [], True
    for t in taus:
        g = freeprob.subordination_density(t)
        quad = freeprob.exp2_moments(g, 4).values
        rec = freeprob.mult_bm_moments(freeprob.moments_delta(1.0, 4), 2 * t).values
        rel = np.abs(quad - rec) / rec
        ok &= bool(np.all(rel <= 0.01))
        rows += [[t, l + 1, float(quad[l]), float(rec[l]), float(rel[l])] for l in range(4)]
    if args.format == "csv":
        write_csv(args.out / "verify-thm3_2.csv", ["t", "l", "quadrature", "recursion", "rel_error"], rows)
    write_json(args.out / "verify-thm3_2.json", {"rows": rows, "verdict": {"passed": ok}}, args)
    return ok


def cor2_6_check(N: int, t: float, paths: int, draws: int, seed: int, cfg: SchemeConfig,
                 workers: int = 1) -> dict:
    """Per-coordinate two-sample KS between k = 1 HO-clock SDE paths and matrix eigenvalues."""
    case = RootCase(Family.A, N)
    ens = run_ensemble(case, 1.0, t, cfg, paths, seed, Clock.HO, workers=workers)
    mat = matmodel.hermitian_spectra(N, t, 1.0, seed, draws)
    res = [stats.ks_two_sample(ens.coords()[:, j], mat[:, j]) for j in range(N)]
    return {"statistics": [r.statistic for r in res], "pvalues": [r.pvalue for r in res],
            "critical_1": res[0].critical_1, "passed": not any(r.reject_1 for r in res)}


def _verify_cor2_6(args):
    N = args.N or 5
    t = float(args.tau) if args.tau is not None else 0.2
    draws = args.draws or 2000
    cfg = _scheme(args, N, t)
    out = cor2_6_check(N, t, args.replicas or 2000, draws, args.seed, cfg, args.threads)
    if args.format == "csv":
        write_csv(args.out / "verify-cor2_6.csv", ["coordinate", "ks", "pvalue", "critical_1"],
                  [[j + 1, s, p, out["critical_1"]] for j, (s, p) in
                   enumerate(zip(out["statistics"], out["pvalues"]))])
    write_json(args.out / "verify-cor2_6.json", {"verdict": out}, args)
    return out["passed"]


SELFTEST_CASES = (
    ("gue", Family.A, 2, 1.0, None),
    ("gue", Family.A, 3, 1.0, None),
    ("drift_c", Family.A, 3, 0.5, 1.0),
    ("b_flat", Family.B, 2, 0.5, None),
    ("b_drift", Family.B, 2, 0.5, None),
    ("d_flat", Family.D, 2, 0.5, None),
    ("d_drift", Family.D, 2, 0.5, None),
    ("c_drift", Family.C, 2, 0.5, None),
)


def normalisation_rows(cases, draws: int, seed: int) -> list[list]:
    rows = []
    for variant, fam, n, t, c in cases:
        d = density.ChamberDensity(RootCase(fam, n), t, variant, c=c)
        est = density.mc_normalization(d, draws=draws, seed=seed)
        rows.append([variant, f"{fam.value}{n}", t, est.value, est.stderr, est.ess,
                     abs(est.value - 1.0) <= 0.02])
    return rows


def _verify_densities(args):
    fam = Family(args.case or "A")
    n = args.N or (3 if fam is Family.A else 2)
    t = float(args.tau) if args.tau is not None else None
    cases = [(v, f, n, t if t is not None else tt, c) for v, f, _, tt, c in SELFTEST_CASES if f is fam]
    cases = list({(v, f, nn, tt): (v, f, nn, tt, c) for v, f, nn, tt, c in cases}.values())
    rows = normalisation_rows(cases, args.draws or 100_000, args.seed)
    header = ["variant", "case", "t", "mass", "stderr", "ess", "passed"]
    if args.format == "csv":
        write_csv(args.out / "verify-densities.csv", header, rows)
    ok = all(r[-1] for r in rows)
    write_json(args.out / "verify-densities.json",
               {"rows": [dict(zip(header, r)) for r in rows], "verdict": {"passed": ok}}, args)
    return ok


def cmd_verify(args) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    target = args.target
    if target == "thm1":
        ok = _verify_sweep(args, stats.Recipe.ADDITIVE, Family.A, (1, 2, 3, 4), [0.5, 1.0, 2.0, math.inf])
    elif target == "thm3_1":
        ok = _verify_sweep(args, stats.Recipe.EXP2, Family.A, (1, 2, 3, 4), [0.5, 1.0, 2.0, math.inf])
    elif target == "thm4_2":
        ok = _verify_sweep(args, stats.Recipe.ABS, Family.B, (2, 4), [1.0])
    elif target == "thm3_2":
        ok = _verify_thm3_2(args)
    elif target == "cor2_6":
        ok = _verify_cor2_6(args)
    else:
        ok = _verify_densities(args)
    print(f"verify {target}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_free_limit(args) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    g = freeprob.subordination_density(args.tau, freeprob.default_grid(args.tau, args.points))
    stem = args.out / f"free-limit-tau{args.tau:g}"
    freeprob.save_density_grid(g, stem)
    m = freeprob.limit_moments(args.tau, args.L).values
    q = freeprob.grid_moments(g, args.L).values
    write_csv(args.out / "free-limit-moments.csv", ["l", "cumulant_engine", "grid_quadrature"],
              [[l + 1, float(m[l]), float(q[l])] for l in range(args.L)])
    write_json(args.out / "free-limit.json",
               {"mass_before_normalisation": g.meta["mass_before_renormalisation"], "support": g.support,
                "moments": m, "grid_moments": q}, args)
    return EXIT_OK


def cmd_density_selftest(args) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    rows = normalisation_rows(SELFTEST_CASES, args.draws, args.seed)
    ok = all(r[-1] for r in rows)
    ks_rows = []
    if args.ks_draws:
        checks = [(density.ChamberDensity(RootCase(Family.A, 3), 0.5, "drift_c", c=1.0),
                   lambda: matmodel.hermitian_spectra(3, 0.5, 1.0, args.seed, args.ks_draws)),
                  (density.ChamberDensity(RootCase(Family.B, 2), 0.5, "b_drift"),
                   lambda: matmodel.skew_spectra(Family.B, 2, 0.5, args.seed, args.ks_draws)),
                  (density.ChamberDensity(RootCase(Family.D, 2), 0.5, "d_drift"),
                   lambda: matmodel.skew_spectra(Family.D, 2, 0.5, args.seed, args.ks_draws))]
        for d, draw in checks:
            r = density.density_vs_sample_ks(d, draw(), seed=args.seed)
            ks_rows.append([d.variant.value, str(d.case), float(np.max(r.statistics)), r.critical_1, r.passed_1])
            ok &= r.passed_1
    header = ["variant", "case", "t", "mass", "stderr", "ess", "passed"]
    if args.format == "csv":
        write_csv(args.out / "density-normalisation.csv", header, rows)
        if ks_rows:
            write_csv(args.out / "density-ks.csv", ["variant", "case", "max_ks", "critical_1", "passed"], ks_rows)
    write_json(args.out / "density-selftest.json",
               {"normalisation": [dict(zip(header, r)) for r in rows], "ks": ks_rows,
                "verdict": {"passed": ok}}, args)
    print(f"density-selftest: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"simulate": cmd_simulate, "verify": cmd_verify, "free-limit": cmd_free_limit,
            "density-selftest": cmd_density_selftest}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            conf = read_config(known.config)
        except (OSError, InvalidArgumentError) as exc:
            print(f"hecop: {exc}", file=sys.stderr)
            return EXIT_INVALID
        command = next((a for a in argv if a in subs), None)
        if command is not None:
            dests = {a.dest for a in subs[command]._actions}
            unknown = sorted(set(conf) - dests)
            if unknown:
                print(f"hecop: unknown config keys: {', '.join(unknown)}", file=sys.stderr)
                return EXIT_INVALID
            subs[command].set_defaults(**conf)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except InvalidArgumentError as exc:
        print(f"hecop: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericFailureError as exc:
        print(f"hecop: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
