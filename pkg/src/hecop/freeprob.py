"""Free-probability limit objects: moments, free cumulants, subordination.

Moment vectors are 1-based in the mathematical sense: ``values[l - 1]`` holds
the l-th moment and ``moment(0)`` is the mass 1.
"""

from __future__ import annotations

import enum
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numba as nb
import numpy as np

from .errors import InvalidArgumentError, NumericFailureError

MAX_MOMENTS = 16
ENUMERATION_LIMIT = 8
DEFAULT_ETAS = (1e-2, 5e-3, 2.5e-3)


class Provenance(str, enum.Enum):
    EMPIRICAL = "empirical"
    RECURSION = "recursion"
    CUMULANT = "cumulant"
    CLOSED_FORM = "closed_form"
    QUADRATURE = "quadrature"


@dataclass(frozen=True)
class MomentVector:
    values: np.ndarray
    provenance: Provenance = Provenance.CLOSED_FORM
    support: tuple[float, float] | None = None
    stderr: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if not 1 <= v.size <= MAX_MOMENTS:
            raise InvalidArgumentError(f"moment count must lie in 1..{MAX_MOMENTS}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        if self.stderr is not None:
            se = np.array(self.stderr, dtype=float).reshape(-1)
            if se.shape != v.shape:
                raise InvalidArgumentError("stderr must match the moment count")
            se.setflags(write=False)
            object.__setattr__(self, "stderr", se)

    @property
    def L(self) -> int:
        return self.values.size

    def moment(self, l: int) -> float:
        if l == 0:
            return 1.0
        if not 1 <= l <= self.L:
            raise InvalidArgumentError(f"moment {l} not available (L = {self.L})")
        return float(self.values[l - 1])

    def with_values(self, values, provenance: Provenance) -> MomentVector:
        return MomentVector(values, provenance, self.support)

    def hankel_psd(self, rtol: float = 1e-10) -> bool:
        """Whether the Hankel matrix ``(m_{i+j})`` of order floor(L/2) is PSD."""
        r = self.L // 2
        full = np.concatenate([[1.0], self.values])
        h = np.array([[full[i + j] for j in range(r + 1)] for i in range(r + 1)])
        ev = np.linalg.eigvalsh(h)
        return bool(ev.min() >= -rtol * max(1.0, np.abs(ev).max()))


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    points: int = 4001

    def __post_init__(self):
        if not (self.hi > self.lo and self.points >= 3):
            raise InvalidArgumentError("grid needs hi > lo and at least 3 points")

    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.points)


@dataclass(frozen=True)
class DensityGrid:
    x: np.ndarray
    density: np.ndarray
    mass: float
    support: tuple[float, float]
    meta: dict = field(default_factory=dict)

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])


# ---------------------------------------------------------------------------
# closed forms


def _check_L(L: int) -> None:
    if not 1 <= L <= MAX_MOMENTS:
        raise InvalidArgumentError(f"L must lie in 1..{MAX_MOMENTS}")


def moments_semicircle(s: float, L: int) -> MomentVector:
    """Semicircle of radius ``s``: ``m_2l = Catalan(l) (s/2)^2l``."""
    if not s > 0:
        raise InvalidArgumentError("radius must be positive")
    _check_L(L)
    m = np.zeros(L)
    for l in range(2, L + 1, 2):
        j = l // 2
        m[l - 1] = math.comb(2 * j, j) / (j + 1) * (s / 2.0) ** l
    return MomentVector(m, Provenance.CLOSED_FORM, (-s, s))


def moments_uniform(r: float, L: int) -> MomentVector:
    if not r > 0:
        raise InvalidArgumentError("r must be positive")
    _check_L(L)
    m = np.zeros(L)
    for l in range(2, L + 1, 2):
        m[l - 1] = r**l / (l + 1)
    return MomentVector(m, Provenance.CLOSED_FORM, (-r, r))


def moments_delta(a: float, L: int) -> MomentVector:
    _check_L(L)
    return MomentVector(a ** np.arange(1, L + 1, dtype=float), Provenance.CLOSED_FORM, (a, a))


# ---------------------------------------------------------------------------
# non-crossing partitions and free cumulants


def noncrossing_partitions(n: int):
    """Yield the non-crossing partitions of {0..n-1} as tuples of sorted blocks.

    The block containing the first element splits the rest into independent
    gaps, each filled with a non-crossing partition of its own.
    """
    if n == 0:
        yield ()
        return
    yield from _nc(tuple(range(n)))


def _nc(elems):
    if not elems:
        yield ()
        return
    first, rest = elems[0], elems[1:]
    m = len(rest)
    # choose which later elements join the first block
    for mask in range(1 << m):
        chosen = [rest[i] for i in range(m) if mask >> i & 1]
        block = (first, *chosen)
        # the gaps between consecutive block members and after the last one
        cuts = [elems.index(b) for b in block] + [len(elems)]
        gaps = [elems[cuts[i] + 1: cuts[i + 1]] for i in range(len(block))]
        yield from _combine(block, gaps)


def _combine(block, gaps):
    if not gaps:
        yield (block,)
        return
    for head in _nc(gaps[0]):
        for tail in _combine(block, gaps[1:]):
            yield tail + head


@lru_cache(maxsize=None)
def _nc_signatures(n: int) -> tuple[tuple[tuple[int, ...], int], ...]:
    """Block-size multisets of NC(n) with their multiplicities."""
    counts = Counter(tuple(sorted(len(b) for b in p)) for p in noncrossing_partitions(n))
    return tuple(sorted(counts.items()))


def _cumulants_to_moments_enum(kappa: np.ndarray) -> np.ndarray:
    L = kappa.size
    m = np.zeros(L)
    for n in range(1, L + 1):
        m[n - 1] = math.fsum(c * math.prod(kappa[s - 1] for s in sig) for sig, c in _nc_signatures(n))
    return m


def _moments_to_cumulants_enum(m: np.ndarray) -> np.ndarray:
    L = m.size
    kappa = np.zeros(L)
    for n in range(1, L + 1):
        terms = [-c * math.prod(kappa[s - 1] for s in sig)
                 for sig, c in _nc_signatures(n) if sig != (n,)]
        kappa[n - 1] = math.fsum([m[n - 1], *terms])
    return kappa


def _power_coeff(mfull: np.ndarray, s: int, deg: int) -> float:
    # [z^deg] M(z)^s with M(z) = sum_{i<=deg} m_i z^i, m_0 = 1
    p = np.zeros(deg + 1)
    p[0] = 1.0
    base = mfull[: deg + 1]
    for _ in range(s):
        p = np.convolve(p, base)[: deg + 1]
    return float(p[deg])


def _cumulants_to_moments_rec(kappa: np.ndarray) -> np.ndarray:
    L = kappa.size
    mfull = np.zeros(L + 1)
    mfull[0] = 1.0
    for n in range(1, L + 1):
        mfull[n] = sum(kappa[s - 1] * _power_coeff(mfull, s, n - s) for s in range(1, n + 1))
    return mfull[1:]


def _moments_to_cumulants_rec(m: np.ndarray) -> np.ndarray:
    L = m.size
    mfull = np.concatenate([[1.0], m])
    kappa = np.zeros(L)
    for n in range(1, L + 1):
        kappa[n - 1] = m[n - 1] - sum(kappa[s - 1] * _power_coeff(mfull, s, n - s)
                                      for s in range(1, n))
    return kappa


def moments_to_cumulants(m: MomentVector) -> np.ndarray:
    """Free cumulants ``kappa_1..kappa_L``."""
    if m.L <= ENUMERATION_LIMIT:
        return _moments_to_cumulants_enum(m.values)
    return _moments_to_cumulants_rec(m.values)


def cumulants_to_moments(kappa, support=None) -> MomentVector:
    kappa = np.asarray(kappa, dtype=float).reshape(-1)
    _check_L(kappa.size)
    if kappa.size <= ENUMERATION_LIMIT:
        m = _cumulants_to_moments_enum(kappa)
    else:
        m = _cumulants_to_moments_rec(kappa)
    return MomentVector(m, Provenance.CUMULANT, support)


def free_add_convolve(a: MomentVector, b: MomentVector) -> MomentVector:
    """Moments of ``a (+) b``: free cumulants add."""
    if a.L != b.L:
        raise InvalidArgumentError("moment vectors must have the same length")
    support = None
    if a.support is not None and b.support is not None:
        support = (a.support[0] + b.support[0], a.support[1] + b.support[1])
    return cumulants_to_moments(moments_to_cumulants(a) + moments_to_cumulants(b), support)


def limit_moments(tau: float, L: int) -> MomentVector:
    """Moments of ``U_tau (+) semicircle(2 sqrt(tau))``."""
    return free_add_convolve(moments_uniform(tau, L), moments_semicircle(2.0 * math.sqrt(tau), L))


# ---------------------------------------------------------------------------
# free multiplicative Brownian motion


@dataclass(frozen=True)
class MomentConditionReport:
    passed: bool
    gamma: float
    violations: tuple[int, ...]
    gamma_min: float
    carleman_partial_sums: np.ndarray


def moment_condition_check(nu: MomentVector, gamma: float) -> MomentConditionReport:
    """Check ``s_l <= (gamma l)^l`` on the available moments.

    ``gamma_min`` is the smallest gamma that passes. The Carleman partial sums
    over the even moments are informational only.
    """
    if nu.L < 4:
        raise InvalidArgumentError("need at least 4 moments")
    if not gamma > 0:
        raise InvalidArgumentError("gamma must be positive")
    s = nu.values
    ls = np.arange(1, nu.L + 1)
    if not np.all(np.isfinite(s)):
        return MomentConditionReport(False, gamma, tuple(int(l) for l in ls), math.inf, np.array([]))
    violations = tuple(int(l) for l in ls if s[l - 1] > (gamma * l) ** l)
    pos = s > 0
    gamma_min = float(np.max(s[pos] ** (1.0 / ls[pos]) / ls[pos])) if pos.any() else 0.0
    even = s[1::2]
    with np.errstate(divide="ignore"):
        terms = np.where(even > 0, even ** (-1.0 / (2 * np.arange(1, even.size + 1))), np.inf)
    return MomentConditionReport(not violations, gamma, violations, gamma_min, np.cumsum(terms))


def growth_bound(gamma: float, t: float, l: int) -> float:
    """``(e^t gamma l)^l (1 + t)^(l - 1)``."""
    return (math.exp(t) * gamma * l) ** l * (1.0 + t) ** (l - 1)


@nb.njit(cache=True)
def _moment_rhs(s, out):
    L = s.size
    for l in range(1, L + 1):
        acc = s[l - 1]
        for j in range(1, l):
            acc += s[j - 1] * s[l - j - 1]
        out[l - 1] = l * acc


@nb.njit(cache=True)
def _rk4_moments(s0, t, steps):
    s = s0.copy()
    h = t / steps
    k1 = np.empty_like(s)
    k2 = np.empty_like(s)
    k3 = np.empty_like(s)
    k4 = np.empty_like(s)
    for _ in range(steps):
        _moment_rhs(s, k1)
        _moment_rhs(s + 0.5 * h * k1, k2)
        _moment_rhs(s + 0.5 * h * k2, k3)
        _moment_rhs(s + h * k3, k4)
        s = s + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return s


def mult_bm_moments(nu: MomentVector, t: float, L: int | None = None) -> MomentVector:
    """Moments of ``nu [x] mu_t`` from the triangular moment ODE, RK4.

    ``d/dt s_l = l (s_l + sum_{j=1}^{l-1} s_j s_{l-j})`` with ``s_l(0)`` the
    moments of ``nu``.
    """
    L = nu.L if L is None else L
    _check_L(L)
    if L > nu.L:
        raise InvalidArgumentError(f"nu carries only {nu.L} moments")
    if not t >= 0:
        raise InvalidArgumentError("t must be >= 0")
    s0 = nu.values[:L]
    if not np.all(np.isfinite(s0)) or np.any(s0 <= 0):
        raise InvalidArgumentError("nu must be a measure on (0, inf) with finite moments")
    if t == 0:
        return MomentVector(s0.copy(), Provenance.RECURSION)
    h = 1e-4 * min(1.0, 1.0 / L)
    steps = max(1, math.ceil(t / h - 1e-9))
    return MomentVector(_rk4_moments(np.array(s0), float(t), steps), Provenance.RECURSION)


# ---------------------------------------------------------------------------
# subordination density of U_t (+) semicircle


def default_grid(t: float, points: int = 4001) -> GridSpec:
    edge = t + 2.0 * math.sqrt(t) + 1.0
    return GridSpec(-edge, edge, points)


def _g_uniform(w: np.ndarray, t: float) -> np.ndarray:
    return np.log((w + t) / (w - t)) / (2.0 * t)


def _g_uniform_prime(w: np.ndarray, t: float) -> np.ndarray:
    return (1.0 / (w + t) - 1.0 / (w - t)) / (2.0 * t)


def _solve_subordination(z: np.ndarray, t: float, g0: np.ndarray, tol: float, max_iter: int):
    """Damped fixed point for G = G_U(z - t G), then Newton on the stragglers."""
    g = g0.copy()
    todo = np.ones(z.size, dtype=bool)
    iters = 0
    for iters in range(1, max_iter + 1):
        w = z[todo] - t * g[todo]
        new = 0.5 * g[todo] + 0.5 * _g_uniform(w, t)
        done = np.abs(new - g[todo]) <= tol * np.maximum(1.0, np.abs(new))
        g[todo] = new
        idx = np.flatnonzero(todo)
        todo[idx[done]] = False
        if not todo.any():
            break
    polished = int(todo.sum())
    if polished:
        idx = np.flatnonzero(todo)
        gi = g[idx]
        for _ in range(50):
            w = z[idx] - t * gi
            f = gi - _g_uniform(w, t)
            step = f / (1.0 + t * _g_uniform_prime(w, t))
            gi = gi - step
            if np.all(np.abs(step) <= tol * np.maximum(1.0, np.abs(gi))):
                break
        else:
            raise NumericFailureError("subordination fixed point did not converge")
        g[idx] = gi
    w = z - t * g
    if np.any(w.imag <= 0) or np.any(g.imag >= 0):
        raise NumericFailureError("subordination iterate left the upper half-plane")
    return g, iters, polished


def subordination_density(t: float, grid: GridSpec | None = None, etas=DEFAULT_ETAS,
                          tol: float = 1e-10, max_iter: int = 500) -> DensityGrid:
    """Density of ``U_t (+) semicircle(2 sqrt t)`` by Stieltjes inversion.

    Solves ``G(z) = G_U(z - t G(z))`` at ``z = x + i eta`` for each eta,
    extrapolates ``-Im G / pi`` to eta = 0 with two Richardson stages and
    renormalises after checking that the mass is within 1e-3 of 1. The eta
    levels are scaled by ``min(1, t + 2 sqrt t)`` so they stay small relative
    to the support.
    """
    if not t > 0:
        raise InvalidArgumentError("t must be positive")
    grid = default_grid(t) if grid is None else grid
    edge = t + 2.0 * math.sqrt(t)
    if grid.lo > -edge - 1.0 or grid.hi < edge + 1.0:
        raise InvalidArgumentError("grid must cover the support with a margin of 1")
    etas = tuple(sorted(etas, reverse=True))
    if len(etas) != 3 or not all(abs(etas[i + 1] / etas[i] - 0.5) < 1e-12 for i in range(2)):
        raise InvalidArgumentError("etas must be three levels in ratio 1/2")
    scale = min(1.0, edge)
    x = grid.nodes()
    v = t + t * t / 3.0
    dens = []
    stats = {"iterations": [], "newton_points": []}
    g = None
    for eta in etas:
        z = x + 1j * eta * scale
        if g is None:
            # semicircle with the same variance as the warm start
            r = 2.0 * math.sqrt(v)
            g = (z - np.sqrt(z - r) * np.sqrt(z + r)) / (2.0 * v)
        g, iters, polished = _solve_subordination(z, t, g, tol, max_iter)
        stats["iterations"].append(iters)
        stats["newton_points"].append(polished)
        dens.append(-g.imag / math.pi)
    r1 = 2.0 * dens[1] - dens[0]
    r2 = 2.0 * dens[2] - dens[1]
    rho = np.clip((4.0 * r2 - r1) / 3.0, 0.0, None)
    mass = float(np.trapezoid(rho, x))
    if abs(mass - 1.0) >= 1e-3:
        raise NumericFailureError(f"inverted density has mass {mass:.6f}")
    rho = rho / mass
    nz = np.flatnonzero(rho > 1e-8 * rho.max())
    support = (float(x[nz[0]]), float(x[nz[-1]]))
    meta = {"t": t, "grid": {"lo": grid.lo, "hi": grid.hi, "points": grid.points},
            "etas": [e * scale for e in etas], "mass_before_renormalisation": mass, **stats}
    return DensityGrid(x, rho, 1.0, support, meta)


# ---------------------------------------------------------------------------
# quadrature on a density grid

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


def _grid_integral(g: DensityGrid, f) -> float:
    # exact Gauss-Legendre on each cell for f times the linear interpolant
    x0, x1 = g.x[:-1], g.x[1:]
    r0, r1 = g.density[:-1], g.density[1:]
    half = 0.5 * (x1 - x0)
    total = 0.0
    for u, w in zip(_GL_NODES, _GL_WEIGHTS):
        lam = 0.5 * (u + 1.0)
        xs = x0 + lam * (x1 - x0)
        total += float(np.sum(w * half * ((1.0 - lam) * r0 + lam * r1) * f(xs)))
    return total


def _check_mass(g: DensityGrid) -> None:
    mass = _grid_integral(g, np.ones_like)
    if abs(mass - 1.0) > 1e-3:
        raise InvalidArgumentError(f"grid mass {mass:.6f} is not within 1e-3 of 1")


def grid_moments(g: DensityGrid, L: int) -> MomentVector:
    _check_L(L)
    _check_mass(g)
    m = [_grid_integral(g, lambda x, l=l: x**l) for l in range(1, L + 1)]
    return MomentVector(m, Provenance.QUADRATURE, g.support)


def exp2_moments(g: DensityGrid, lmax: int) -> MomentVector:
    """``int e^{2 l x} rho(x) dx`` for l = 1..lmax."""
    _check_L(lmax)
    _check_mass(g)
    m = [_grid_integral(g, lambda x, l=l: np.exp(2.0 * l * x)) for l in range(1, lmax + 1)]
    lo, hi = g.support
    return MomentVector(m, Provenance.QUADRATURE, (math.exp(2 * lo), math.exp(2 * hi)))


def abs_fold_moments(m: MomentVector, grid: DensityGrid | None = None,
                     tol: float = 1e-8) -> MomentVector:
    """Moments of the image of a symmetric measure under ``x -> |x|``.

    Even moments pass through. Odd ones need the density and come from
    ``grid`` by quadrature; without a grid they are NaN.
    """
    odd = m.values[0::2]
    scale = max(1.0, float(np.max(np.abs(m.values))))
    if np.any(np.abs(odd) > tol * scale):
        raise InvalidArgumentError("input measure is not symmetric")
    out = m.values.copy()
    for l in range(1, m.L + 1, 2):
        out[l - 1] = math.nan if grid is None else _grid_integral(grid, lambda x, l=l: np.abs(x) ** l)
    support = None if m.support is None else (0.0, max(abs(m.support[0]), abs(m.support[1])))
    return MomentVector(out, m.provenance, support)


# ---------------------------------------------------------------------------
# serialisation


def _sibling(stem: str | Path, ext: str) -> Path:
    # not with_suffix: stems such as "tau0.5" contain dots
    stem = Path(stem)
    return stem.with_name(stem.name + ext)


def save_density_grid(g: DensityGrid, stem: str | Path) -> tuple[Path, Path]:
    """Write ``stem.csv`` (x, rho) and the ``stem.json`` sidecar."""
    csv_path, json_path = _sibling(stem, ".csv"), _sibling(stem, ".json")
    with csv_path.open("w", newline="") as fh:
        fh.write("x,rho\r\n")
        for a, b in zip(g.x, g.density):
            fh.write(f"{a:.17g},{b:.17g}\r\n")
    side = {"schema_version": 1, "mass": g.mass, "support": list(g.support), **g.meta}
    json_path.write_text(json.dumps(side, sort_keys=True, indent=2) + "\n")
    return csv_path, json_path


def load_density_grid(stem: str | Path) -> DensityGrid:
    data = np.loadtxt(_sibling(stem, ".csv"), delimiter=",", skiprows=1, ndmin=2)
    side = json.loads(_sibling(stem, ".json").read_text())
    meta = {k: v for k, v in side.items() if k not in ("mass", "support", "schema_version")}
    return DensityGrid(data[:, 0], data[:, 1], side["mass"], tuple(side["support"]), meta)
