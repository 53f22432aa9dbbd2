"""Empirical spectral moments, KS distances and the large-N convergence sweep.

Clock bookkeeping lives here. A sweep at free time ``tau`` simulates the
TILDE-clock process to ``tau / N`` (additive limit, ``Recipe.ADDITIVE``) or
``tau / (2N)`` (exp2 and absolute-value limits); the horizon is stored in
every report.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .errors import InvalidArgumentError
from .freeprob import (MomentVector, Provenance, abs_fold_moments, limit_moments, moments_delta,
                       mult_bm_moments, subordination_density)
from .rootsys import Family, RootCase, as_coords
from .sde import Clock, Method, SchemeConfig, run_ensemble

SCHEMA_VERSION = 1
KS_MIN_SIZE = 100


class Transform(str, enum.Enum):
    IDENT = "ident"
    EXP2 = "exp2"
    ABS = "abs"


def _apply(transform: Transform, x: np.ndarray) -> np.ndarray:
    if transform is Transform.EXP2:
        return np.exp(2.0 * x)
    if transform is Transform.ABS:
        return np.abs(x)
    return x


def empirical_moments(samples, transform: Transform = Transform.IDENT, L: int = 4) -> MomentVector:
    """Moments of the pooled empirical measure, error bars from per-replica means.

    Each replica is one batch; with equal particle counts the pooled moment
    is exactly the mean of the replica moments. A single replica yields NaN
    standard errors.
    """
    transform = Transform(transform)
    rows = [as_coords(s) for s in samples]
    if not rows:
        raise InvalidArgumentError("no samples")
    if len({len(r) for r in rows}) != 1:
        raise InvalidArgumentError("all samples must have the same particle count")
    if not 1 <= L <= 16:
        raise InvalidArgumentError("L must lie in 1..16")
    y = _apply(transform, np.array(rows))
    per = np.stack([np.mean(y**l, axis=1) for l in range(1, L + 1)], axis=1)
    r = len(rows)
    mean = per.mean(axis=0)
    se = per.std(axis=0, ddof=1) / math.sqrt(r) if r > 1 else np.full(L, math.nan)
    return MomentVector(mean, Provenance.EMPIRICAL, None, se)


# ------------------------------------------------------------------- KS


@dataclass(frozen=True)
class KsResult:
    statistic: float
    pvalue: float
    critical_5: float
    critical_1: float
    n: int
    m: int

    @property
    def reject_5(self) -> bool:
        return self.statistic > self.critical_5

    @property
    def reject_1(self) -> bool:
        return self.statistic > self.critical_1


def ks_statistic(a, b) -> float:
    """Two-sample sup-distance between empirical CDFs, any sizes."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / len(a)
    fb = np.searchsorted(b, pts, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def ks_critical(n: int, m: int, alpha: float) -> float:
    """Asymptotic two-sample critical value ``K_{1-alpha} sqrt((n + m) / (n m))``."""
    return float(sps.kstwobign.isf(alpha) * math.sqrt((n + m) / (n * m)))


def ks_two_sample(a, b) -> KsResult:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if len(a) < KS_MIN_SIZE or len(b) < KS_MIN_SIZE:
        raise InvalidArgumentError(f"both samples need at least {KS_MIN_SIZE} points")
    res = sps.ks_2samp(a, b)
    n, m = len(a), len(b)
    return KsResult(float(res.statistic), float(res.pvalue),
                    ks_critical(n, m, 0.05), ks_critical(n, m, 0.01), n, m)


# ---------------------------------------------------------- sweep harness


class Recipe(str, enum.Enum):
    ADDITIVE = "additive"  # IDENT at tau/N, limit U_tau (+) sc
    EXP2 = "exp2"  # EXP2 at tau/(2N), limit delta_1 [x] mu_tau
    ABS = "abs"  # ABS at tau/(2N), limit |U_tau (+) sc|


_TRANSFORM = {Recipe.ADDITIVE: Transform.IDENT, Recipe.EXP2: Transform.EXP2, Recipe.ABS: Transform.ABS}


def horizon(recipe: Recipe, tau: float, N: int) -> float:
    """TILDE-clock simulation time for free time ``tau``."""
    return tau / N if Recipe(recipe) is Recipe.ADDITIVE else tau / (2.0 * N)


def default_recipe(case: RootCase) -> Recipe:
    return Recipe.EXP2 if case.family is Family.A else Recipe.ABS


def target_moments(recipe: Recipe, tau: float, L: int) -> MomentVector:
    recipe = Recipe(recipe)
    if recipe is Recipe.EXP2:
        return mult_bm_moments(moments_delta(1.0, L), tau)
    m = limit_moments(tau, L)
    if recipe is Recipe.ABS:
        # odd moments of the folded law need the density
        return abs_fold_moments(m, subordination_density(tau) if L > 1 else None)
    return m


def target_cdf(recipe: Recipe, tau: float):
    """CDF of the limit law in the transformed variable."""
    recipe = Recipe(recipe)
    g = subordination_density(tau / 2.0 if recipe is Recipe.EXP2 else tau)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (g.density[1:] + g.density[:-1]) * np.diff(g.x))])
    cum /= cum[-1]

    def base(v):
        return np.interp(v, g.x, cum, left=0.0, right=1.0)

    if recipe is Recipe.EXP2:
        return lambda y: base(0.5 * np.log(np.maximum(y, 1e-300)))
    if recipe is Recipe.ABS:
        return lambda y: np.clip(base(y) - base(-np.asarray(y)), 0.0, 1.0)
    return base


def finite_n_exp2_moments(N: int, k: float, tau: float, L: int, steps: int = 20_000) -> np.ndarray:
    """Mean-field prediction for the exp2 moments of type A at finite N.

    Closes ``d s_l = l [((N - l)/N + l/(kN)) s_l + sum_j s_j s_{l-j}] dt`` on
    expectations (dropping O(1/N^2) covariances) and integrates by RK4 from
    ``s_l = 1``. Diagnostic only.
    """
    ls = np.arange(1, L + 1)
    inv_k = 0.0 if math.isinf(k) else 1.0 / k
    coef = ls * ((N - ls) / N + ls * inv_k / N)

    def rhs(s):
        conv = np.array([np.dot(s[: l - 1], s[l - 2:: -1]) if l > 1 else 0.0 for l in ls])
        return coef * s + ls * conv

    s = np.ones(L)
    h = tau / steps
    for _ in range(steps):
        k1 = rhs(s)
        k2 = rhs(s + 0.5 * h * k1)
        k3 = rhs(s + 0.5 * h * k2)
        k4 = rhs(s + h * k3)
        s = s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return s


def default_scheme(N: int, t_sim: float) -> SchemeConfig:
    """Explicit Euler for small systems, drift-implicit on a geometric grid otherwise."""
    if N < 20:
        return SchemeConfig(dt_base=min(1e-3, t_sim / 200.0))
    return SchemeConfig(dt_base=t_sim / 2000.0, method=Method.IMPLICIT, geometric_ratio=0.2)


@dataclass
class EmpiricalReport:
    case: str
    k: float
    N: int
    tau: float
    clock: str
    recipe: str
    t_sim: float
    moments: np.ndarray
    stderr: np.ndarray
    target: np.ndarray
    replicas: int
    seed: int
    ks_statistic: float | None = None
    finite_n: np.ndarray | None = None
    runtime_s: float = 0.0
    scheme: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.moments) > 16:
            raise InvalidArgumentError("at most 16 moments")
        if np.any(self.stderr < 0):
            raise InvalidArgumentError("standard errors must be non-negative")

    @property
    def L(self) -> int:
        return len(self.moments)

    def rel_error(self) -> np.ndarray:
        """Relative error; absolute error where the target vanishes."""
        scale = np.where(self.target != 0, np.abs(self.target), 1.0)
        return (self.moments - self.target) / scale

    def within(self, ls, rel: float = 0.05, nsig: float = 3.0) -> bool:
        idx = np.asarray(ls) - 1
        tol = np.maximum(rel * np.abs(self.target[idx]), nsig * self.stderr[idx])
        return bool(np.all(np.abs(self.moments[idx] - self.target[idx]) <= tol))

    def to_dict(self) -> dict:
        d = asdict(self)
        for key, v in d.items():
            if isinstance(v, np.ndarray):
                d[key] = v.tolist()
        d["k"] = "inf" if math.isinf(self.k) else self.k
        return d


def mutual_consistency(reports, ls, nsig: float = 3.0) -> tuple[bool, float]:
    """Largest pairwise ``|m_a - m_b| / sqrt(se_a^2 + se_b^2)`` over the given moments."""
    worst = 0.0
    idx = np.asarray(ls) - 1
    for a in range(len(reports)):
        for b in range(a + 1, len(reports)):
            ra, rb = reports[a], reports[b]
            se = np.sqrt(ra.stderr[idx] ** 2 + rb.stderr[idx] ** 2)
            z = np.abs(ra.moments[idx] - rb.moments[idx]) / np.where(se > 0, se, np.nan)
            if np.any(~np.isfinite(z) & (ra.moments[idx] != rb.moments[idx])):
                return False, math.inf
            worst = max(worst, float(np.nanmax(z, initial=0.0)))
    return worst <= nsig, worst


def run_cell(case: RootCase, k: float, tau: float, L: int, replicas: int, seed: int,
             recipe: Recipe | None = None, cfg: SchemeConfig | None = None, workers: int = 1,
             with_ks: bool = False, target: MomentVector | None = None) -> EmpiricalReport:
    recipe = default_recipe(case) if recipe is None else Recipe(recipe)
    N = case.rank
    t_sim = horizon(recipe, tau, N)
    cfg = default_scheme(N, t_sim) if cfg is None else cfg
    target = target_moments(recipe, tau, L) if target is None else target
    t0 = time.perf_counter()
    ens = run_ensemble(case, k, t_sim, cfg, replicas, seed, Clock.TILDE, workers=workers)
    runtime = time.perf_counter() - t0
    est = empirical_moments(ens.terminal_states, _TRANSFORM[recipe], L)
    se = np.nan_to_num(est.stderr, nan=0.0)
    if math.isinf(k):
        se = np.zeros(L)  # deterministic: every replica is the same trajectory
    ks = None
    if with_ks:
        cdf = target_cdf(recipe, tau)
        pooled = np.sort(_apply(_TRANSFORM[recipe], ens.coords().ravel()))
        ks = float(sps.kstest(pooled, cdf).statistic)
    finite = None
    if recipe is Recipe.EXP2 and case.family is Family.A:
        finite = finite_n_exp2_moments(N, k, tau, L)
    scheme = {k_: (v.value if isinstance(v, enum.Enum) else v) for k_, v in asdict(cfg).items()}
    return EmpiricalReport(str(case), float(k), N, float(tau), Clock.TILDE.value, recipe.value, t_sim,
                           np.array(est.values), se, np.array(target.values), replicas, seed,
                           ks, finite, runtime, scheme)


def convergence_sweep(case_family, k_list, N_list, tau: float, L: int, replicas: int, seed: int,
                      recipe: Recipe | None = None, cfg_for=None, workers: int = 1,
                      with_ks: bool = False) -> list[EmpiricalReport]:
    """One report per (k, N). ``cfg_for(N, t_sim)`` overrides the scheme choice."""
    ks_ = list(k_list)
    if any(not (k >= 0.5) for k in ks_):
        raise InvalidArgumentError("every k must lie in [1/2, inf]")
    ns = list(N_list)
    if ns != sorted(ns) or len(set(ns)) != len(ns):
        raise InvalidArgumentError("N_list must be strictly ascending")
    fam = Family(case_family)
    recipe = default_recipe(RootCase(fam, max(ns[0], 2))) if recipe is None else Recipe(recipe)
    target = target_moments(recipe, tau, L)
    out = []
    for N in ns:
        case = RootCase(fam, N)
        cfg = None if cfg_for is None else cfg_for(N, horizon(recipe, tau, N))
        for k in ks_:
            out.append(run_cell(case, k, tau, L, replicas, seed, recipe, cfg, workers, with_ks, target))
    return out


def error_trend(reports, ls=(1, 2, 3, 4)) -> dict[int, float]:
    """Median over ``ls`` and k of ``|estimate - target| / target`` for each N (reported, not asserted)."""
    idx = np.asarray(ls) - 1
    by_n: dict[int, list[float]] = {}
    for r in reports:
        by_n.setdefault(r.N, []).extend(np.abs(r.rel_error()[idx]).tolist())
    return {n: float(np.median(v)) for n, v in sorted(by_n.items())}


# ------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.17g}"
    return str(v)


def reports_to_csv(reports, path: str | Path | None = None) -> str:
    """Flat table, one row per (k, N, l)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["case", "recipe", "k", "N", "tau", "t_sim", "l", "estimate", "stderr", "target",
                "rel_error", "replicas", "seed"])
    for r in reports:
        rel = r.rel_error()
        for l in range(1, r.L + 1):
            w.writerow([r.case, r.recipe, _fmt(float(r.k)), r.N, _fmt(r.tau), _fmt(r.t_sim), l,
                        _fmt(float(r.moments[l - 1])), _fmt(float(r.stderr[l - 1])),
                        _fmt(float(r.target[l - 1])), _fmt(float(rel[l - 1])), r.replicas, r.seed])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, newline="")
    return text


def reports_to_json(reports, path: str | Path | None = None, meta: dict | None = None) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "meta": meta or {},
           "reports": [r.to_dict() for r in reports]}
    text = json.dumps(doc, sort_keys=True, indent=2, allow_nan=True) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
