"""Closed-form chamber densities at a fixed time, started from the origin.

Everything is evaluated in log space. The Monte Carlo harness draws an
isotropic Gaussian (optionally recentred on a Weyl orbit), folds it into the
chamber and reweights; it is used both to confirm normalisations and to
tabulate one-dimensional marginals for KS comparisons with samples.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special, stats

from . import _rng
from .errors import InvalidArgumentError, UnreliableEstimateError
from .rootsys import (ChamberPoint, Family, RootCase, _alternating_sum_mp, as_coords,
                      rho, rho_norm_sq, weyl_group, weyl_images)

LOG_2PI = math.log(2.0 * math.pi)
MIN_ESS = 50.0
MAX_LAMBDA_RANK = 8
KS_MIN_SAMPLE = 500
MARGINAL_DRAWS = 200_000
MARGINAL_NODES = 4096
CACHE_VERSION = 1
_CHUNK = 4096
# orbit-centred proposals are skipped for huge Weyl groups
_MAX_ORBIT = 5040


class Variant(str, enum.Enum):
    GUE = "gue"
    DRIFT_C = "drift_c"
    DRIFT_LAMBDA = "drift_lambda"
    B_FLAT = "b_flat"
    B_DRIFT = "b_drift"
    D_FLAT = "d_flat"
    D_DRIFT = "d_drift"
    C_DRIFT = "c_drift"


_FAMILY = {
    Variant.GUE: Family.A,
    Variant.DRIFT_C: Family.A,
    Variant.DRIFT_LAMBDA: Family.A,
    Variant.B_FLAT: Family.B,
    Variant.B_DRIFT: Family.B,
    Variant.D_FLAT: Family.D,
    Variant.D_DRIFT: Family.D,
    Variant.C_DRIFT: Family.C,
}


@dataclass(frozen=True)
class ChamberDensity:
    case: RootCase
    t: float
    variant: Variant
    c: float | None = None
    lam: tuple[float, ...] | None = None

    def __post_init__(self):
        v = Variant(self.variant)
        object.__setattr__(self, "variant", v)
        if self.case.family is not _FAMILY[v]:
            raise InvalidArgumentError(
                f"variant {v.value} needs family {_FAMILY[v].value}, got {self.case.family.value}")
        if not (np.isfinite(self.t) and self.t > 0):
            raise InvalidArgumentError("t must be positive and finite")
        if v is Variant.DRIFT_C:
            if self.c is None or not (np.isfinite(self.c) and self.c > 0):
                raise InvalidArgumentError("DRIFT_C needs c > 0")
        elif self.c is not None:
            raise InvalidArgumentError(f"variant {v.value} takes no c")
        if v is Variant.DRIFT_LAMBDA:
            if self.lam is None:
                raise InvalidArgumentError("DRIFT_LAMBDA needs lam")
            lam = np.asarray(self.lam, dtype=float)
            n = self.case.rank
            if lam.shape != (n,):
                raise InvalidArgumentError(f"lam must have length {n}")
            if n > MAX_LAMBDA_RANK:
                raise InvalidArgumentError(f"DRIFT_LAMBDA is limited to N <= {MAX_LAMBDA_RANK}")
            if abs(lam.sum()) > 1e-12 * max(1.0, np.abs(lam).max()):
                raise InvalidArgumentError("lam must have trace zero")
            if len(np.unique(lam)) != n:
                raise InvalidArgumentError("lam must have distinct entries")
            object.__setattr__(self, "lam", tuple(float(u) for u in lam))
        elif self.lam is not None:
            raise InvalidArgumentError(f"variant {v.value} takes no lam")

    @property
    def drift(self) -> np.ndarray:
        """Drift vector of the underlying process (zero for flat laws)."""
        n = self.case.rank
        if self.variant is Variant.DRIFT_C:
            return self.c * rho(self.case).astype(float)
        if self.variant is Variant.DRIFT_LAMBDA:
            return np.array(self.lam)
        if self.variant in (Variant.GUE, Variant.B_FLAT, Variant.D_FLAT):
            return np.zeros(n)
        return rho(self.case).astype(float)

    def key(self) -> dict:
        return {"family": self.case.family.value, "rank": self.case.rank, "t": float(self.t),
                "variant": self.variant.value, "c": self.c, "lam": self.lam}


def _log_superfactorial(n: int) -> float:
    """``log(1! 2! ... (n-1)!)``."""
    return float(sum(special.gammaln(j + 1) for j in range(1, n)))


def norm_const_flat(case: RootCase) -> float:
    """Log normalising constant of the flat law of ``case`` at ``t = 1``.

    For A this is ``-log((2 pi)^{N/2} 1! ... (N-1)!)``; B and C share the
    B constant; D has its own.
    """
    n = case.rank
    j = np.arange(1, n + 1)
    if case.family is Family.A:
        return -0.5 * n * LOG_2PI - _log_superfactorial(n)
    if case.family in (Family.B, Family.C):
        return (special.gammaln(n + 1) - n * (n - 0.5) * math.log(2.0)
                - float(np.sum(special.gammaln(j + 1) + special.gammaln(j + 0.5))))
    return (special.gammaln(n + 1) - (n * (n - 1.5) + 1) * math.log(2.0)
            - float(np.sum(special.gammaln(j + 1) + special.gammaln(j - 0.5))))


def _log_sinh(u: np.ndarray) -> np.ndarray:
    a = np.abs(u)
    with np.errstate(divide="ignore"):
        return a + np.log(-np.expm1(-2.0 * a)) - math.log(2.0)


def _log_abs(u: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.abs(u))


def _pairs(n: int):
    return np.triu_indices(n, 1)


def _in_closed_chamber(family: Family, x: np.ndarray) -> np.ndarray:
    d = np.diff(x, axis=1)
    ok = np.all(d >= 0, axis=1)
    if family in (Family.B, Family.C):
        ok &= x[:, 0] >= 0
    elif family is Family.D:
        ok &= np.abs(x[:, 0]) <= x[:, 1]
    return ok


_MAX_LOSS = 5.0 * math.log(10.0)


def _alt_sum_log(lam: np.ndarray, case: RootCase, x: np.ndarray) -> np.ndarray:
    """``log sum_w det(w) e^{<lam, w.x>}`` per row; the sum is positive on the chamber."""
    perms, _, dets = weyl_group(case)
    out = np.empty(len(x))
    for s in range(0, len(x), _CHUNK):
        block = x[s:s + _CHUNK]
        expo = block[:, perms] @ lam
        val, sign = special.logsumexp(expo, axis=1, b=dets, return_sign=True)
        top = expo.max(axis=1)
        # rows that lost more than five digits are redone in extended precision
        lost = top - val
        bad = ~np.isfinite(val) | (sign <= 0) | (lost > _MAX_LOSS)
        for i in np.flatnonzero(bad):
            if np.any(np.diff(block[i]) == 0):
                val[i] = -np.inf
                continue
            digits = 30 + int(lost[i] / math.log(10.0)) if np.isfinite(lost[i]) else 60
            val[i], _ = _alternating_sum_mp(case, lam, block[i], digits)
        out[s:s + _CHUNK] = val
    return out


def log_density_batch(d: ChamberDensity, x) -> np.ndarray:
    """Log density at each row of ``x`` (rows must lie in the closed chamber)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    case, t, v = d.case, float(d.t), d.variant
    n = case.rank
    if x.shape[1] != n:
        raise InvalidArgumentError(f"points must have {n} coordinates")
    if not np.all(_in_closed_chamber(case.family, x)):
        raise InvalidArgumentError("points must lie in the closed chamber")
    i, j = _pairs(n)
    gauss = -np.sum(x * x, axis=1) / (2.0 * t)
    diff = x[:, j] - x[:, i]
    summ = x[:, j] + x[:, i]

    if case.family is Family.A:
        base = norm_const_flat(case) - 0.5 * n * n * math.log(t) + gauss
        if v is Variant.GUE:
            return base + 2.0 * np.sum(_log_abs(diff), axis=1)
        if v is Variant.DRIFT_C:
            c = float(d.c)
            return (base - c * c * rho_norm_sq(case) * t / 2.0 - 0.5 * n * (n - 1) * math.log(c)
                    + np.sum(_log_abs(diff) + _log_sinh(c * diff), axis=1))
        # both the alternating sum and the lambda Vandermonde flip sign under
        # permutations of lambda, so sort it once
        lam = np.sort(np.array(d.lam))
        lam_diff = lam[j] - lam[i]
        return (-0.5 * n * LOG_2PI - 0.5 * n * n * math.log(t) + gauss
                - float(lam @ lam) * t / 2.0
                + np.sum(_log_abs(diff), axis=1) - float(np.sum(np.log(np.abs(lam_diff))))
                + _alt_sum_log(lam, case, x))

    vand = _log_abs(diff) + _log_abs(summ)
    if case.family is Family.D:
        out = norm_const_flat(case) - (n * n - 0.5 * n) * math.log(t) + gauss
        if v is Variant.D_FLAT:
            return out + 2.0 * np.sum(vand, axis=1)
        return (out - rho_norm_sq(case) * t / 2.0
                + np.sum(vand + _log_sinh(diff) + _log_sinh(summ), axis=1))

    out = norm_const_flat(case) - (n * n + 0.5 * n) * math.log(t) + gauss
    if v is Variant.B_FLAT:
        return out + 2.0 * np.sum(vand, axis=1) + 2.0 * np.sum(_log_abs(x), axis=1)
    pair = np.sum(vand + _log_sinh(diff) + _log_sinh(summ), axis=1)
    out = out - rho_norm_sq(case) * t / 2.0 + pair
    if v is Variant.B_DRIFT:
        return out + np.sum(_log_abs(x) + _log_sinh(x), axis=1)
    return out + np.sum(_log_abs(x) - math.log(2.0) + _log_sinh(2.0 * x), axis=1)


def log_density(d: ChamberDensity, x) -> float:
    """Log density at one chamber point; ``-inf`` on the chamber walls."""
    return float(log_density_batch(d, as_coords(x)[None, :])[0])


def density(d: ChamberDensity, x) -> float:
    return math.exp(log_density(d, x))


# ---------------------------------------------------------------- Monte Carlo


@dataclass(frozen=True)
class McEstimate:
    value: float
    stderr: float
    ess: float
    draws: int
    sigma: float


def fold(family: Family, y: np.ndarray) -> np.ndarray:
    """Row-wise chamber projection."""
    if family is Family.A:
        return np.sort(y, axis=1)
    out = np.sort(np.abs(y), axis=1)
    if family is Family.D:
        odd = (np.count_nonzero(y < 0, axis=1) % 2 == 1) & np.all(y != 0, axis=1)
        out[odd, 0] = -out[odd, 0]
    return out


def _second_moment_guess(d: ChamberDensity) -> float:
    """Rough ``E|x|^2``: polynomial degree plus dimension, plus the drift shift."""
    n = d.case.rank
    degree = 2 * d.case.n_positive_roots
    if d.variant is Variant.GUE or d.variant is Variant.DRIFT_C or d.variant is Variant.DRIFT_LAMBDA:
        degree = n * (n - 1)
    drift = d.drift
    return d.t * (degree + n) + d.t**2 * float(drift @ drift)


@dataclass
class _Proposal:
    family: Family
    sigma: float
    centres: np.ndarray  # Weyl orbit of the centre, one row per element

    def draw(self, gen: np.random.Generator, m: int) -> np.ndarray:
        n = self.centres.shape[1]
        pick = gen.integers(0, len(self.centres), size=m)
        y = self.centres[pick] + self.sigma * gen.standard_normal((m, n))
        return fold(self.family, y)

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        # folded density of the orbit mixture: sum over the orbit of Gaussians
        n = x.shape[1]
        out = np.empty(len(x))
        norm = -0.5 * n * math.log(2.0 * math.pi * self.sigma**2)
        for s in range(0, len(x), _CHUNK):
            blk = x[s:s + _CHUNK]
            d2 = (np.sum(blk * blk, axis=1)[:, None] - 2.0 * blk @ self.centres.T
                  + np.sum(self.centres**2, axis=1)[None, :])
            out[s:s + _CHUNK] = special.logsumexp(-d2 / (2.0 * self.sigma**2), axis=1)
        return out + norm


def _orbit(case: RootCase, centre: np.ndarray) -> np.ndarray:
    if not np.any(centre) or case.weyl_order > _MAX_ORBIT:
        # a single centred row; _log_weights supplies the |W| folding factor
        return np.zeros((1, case.rank))
    return weyl_images(case, centre)


def _log_weights(d: ChamberDensity, prop: _Proposal, x: np.ndarray) -> np.ndarray:
    lq = prop.log_pdf(x)
    if len(prop.centres) == 1:
        lq = lq + math.log(d.case.weyl_order)
    return log_density_batch(d, x) - lq


def _build_proposal(d: ChamberDensity, sigma: float | None, gen: np.random.Generator,
                    pilot: int) -> _Proposal:
    n = d.case.rank
    s0 = math.sqrt(1.2 * _second_moment_guess(d) / n)
    start = _Proposal(d.case.family, s0 if sigma is None else float(sigma), _orbit(d.case, np.zeros(n)))
    x = start.draw(gen, pilot)
    lw = _log_weights(d, start, x)
    w = np.exp(lw - lw.max())
    if not np.isfinite(w.sum()) or w.sum() == 0:
        return start
    w /= w.sum()
    mean = w @ x
    var = float(np.mean(w @ (x - mean) ** 2))
    s = math.sqrt(1.5 * var) if sigma is None else float(sigma)
    if not s > 0:
        return start
    return _Proposal(d.case.family, s, _orbit(d.case, mean))


def _weighted_sample(d, proposal_sigma, draws, seed):
    gen = _rng.stream(seed, 0, _rng.IMPORTANCE)
    prop = _build_proposal(d, proposal_sigma, gen, max(1000, draws // 10))
    x = prop.draw(gen, draws)
    lw = _log_weights(d, prop, x)
    return x, lw, prop


def _ess(w: np.ndarray) -> float:
    s = w.sum()
    return float(s * s / np.sum(w * w)) if s > 0 else 0.0


def mc_normalization(d: ChamberDensity, proposal_sigma: float | None = None,
                     draws: int = 100_000, seed: int = 0) -> McEstimate:
    """Importance-sampling estimate of the total mass of ``d`` on its chamber."""
    if draws < 1000:
        raise InvalidArgumentError("draws must be >= 1000")
    x, lw, prop = _weighted_sample(d, proposal_sigma, draws, seed)
    w = np.exp(lw)
    ess = _ess(w)
    if not ess >= MIN_ESS:
        raise UnreliableEstimateError(f"effective sample size {ess:.1f} below {MIN_ESS:g}")
    return McEstimate(float(w.mean()), float(w.std(ddof=1) / math.sqrt(draws)), ess, draws, prop.sigma)


# ------------------------------------------------------------- KS harness


@dataclass(frozen=True)
class Marginals:
    """Tabulated marginal CDFs: ``nodes[j]`` are quantile nodes of coordinate j."""

    nodes: np.ndarray
    levels: np.ndarray
    ess: float

    def cdf(self, j: int, v) -> np.ndarray:
        return np.interp(v, self.nodes[j], self.levels, left=0.0, right=1.0)


def cache_dir() -> Path:
    root = os.environ.get("HECOP_CACHE_DIR")
    return Path(root) if root else Path.home() / ".cache" / "hecop"


def _cache_key(d: ChamberDensity, draws: int, seed: int) -> str:
    blob = json.dumps({"v": CACHE_VERSION, "density": d.key(), "draws": draws, "seed": seed},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:32]


def tabulate_marginals(d: ChamberDensity, draws: int = MARGINAL_DRAWS, seed: int = 0,
                       use_cache: bool = True) -> Marginals:
    path = cache_dir() / f"marginals-{_cache_key(d, draws, seed)}.npz"
    if use_cache and path.exists():
        try:
            with np.load(path) as z:
                if int(z["version"]) == CACHE_VERSION:
                    return Marginals(z["nodes"], z["levels"], float(z["ess"]))
        except (OSError, KeyError, ValueError):
            pass
    x, lw, _ = _weighted_sample(d, None, draws, seed)
    w = np.exp(lw - lw.max())
    ess = _ess(w)
    if not ess >= MIN_ESS:
        raise UnreliableEstimateError(f"effective sample size {ess:.1f} below {MIN_ESS:g}")
    w /= w.sum()
    levels = np.linspace(0.0, 1.0, MARGINAL_NODES)
    nodes = np.empty((x.shape[1], MARGINAL_NODES))
    for j in range(x.shape[1]):
        order = np.argsort(x[:, j])
        cw = np.cumsum(w[order])
        cw[-1] = 1.0
        nodes[j] = np.interp(levels, np.concatenate([[0.0], cw]),
                             np.concatenate([[x[order[0], j]], x[order, j]]))
    out = Marginals(nodes, levels, ess)
    if use_cache:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp.npz")
            np.savez(tmp, version=CACHE_VERSION, nodes=nodes, levels=levels, ess=ess)
            os.replace(tmp, path)
        except OSError:
            pass
    return out


@dataclass(frozen=True)
class KsComparison:
    statistics: np.ndarray
    pvalues: np.ndarray
    critical_1: float
    critical_5: float
    n: int
    tabulation_error: float
    meta: dict = field(default_factory=dict)

    @property
    def passed_1(self) -> bool:
        return bool(np.all(self.statistics <= self.critical_1))

    @property
    def passed_5(self) -> bool:
        return bool(np.all(self.statistics <= self.critical_5))


def density_vs_sample_ks(d: ChamberDensity, sample, draws: int = MARGINAL_DRAWS, seed: int = 0,
                         use_cache: bool = True) -> KsComparison:
    """One-sample KS of each coordinate of ``sample`` against the MC marginals of ``d``."""
    pts = np.array([as_coords(p) for p in sample], dtype=float)
    if pts.ndim != 2 or pts.shape[1] != d.case.rank:
        raise InvalidArgumentError(f"sample rows must have {d.case.rank} coordinates")
    n = len(pts)
    if n < KS_MIN_SAMPLE:
        raise InvalidArgumentError(f"sample size must be >= {KS_MIN_SAMPLE}")
    marg = tabulate_marginals(d, draws, seed, use_cache)
    stat = np.empty(pts.shape[1])
    pval = np.empty(pts.shape[1])
    for j in range(pts.shape[1]):
        res = stats.kstest(pts[:, j], lambda v, j=j: marg.cdf(j, v))
        stat[j], pval[j] = res.statistic, res.pvalue
    crit1 = float(stats.kstwo.isf(0.01, n))
    crit5 = float(stats.kstwo.isf(0.05, n))
    tab_err = float(stats.kstwobign.isf(0.05) / math.sqrt(marg.ess))
    if tab_err > crit1 / 5.0:
        raise UnreliableEstimateError(
            f"marginal tabulation error {tab_err:.3g} exceeds a fifth of the 1% critical value")
    return KsComparison(stat, pval, crit1, crit5, n, tab_err, {"ess": marg.ess, "draws": draws})


def as_point(case: RootCase, x) -> ChamberPoint:
    return ChamberPoint(case, as_coords(x))
