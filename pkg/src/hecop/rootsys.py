"""Root systems A, B, C, D and the special functions built on them.

Conventions follow the coth-drift processes simulated elsewhere in the
package: ``rho`` is the full sum of the positive roots (not the half sum),
chamber coordinates are stored in ascending order, and the Weyl group acts by
signed permutations ``(w.x)_i = eps_i * x[perm[i]]``.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np

from .errors import InvalidArgumentError, SingularInputError, UnsupportedRankError

SERIES_EPS = 1e-4

# Largest ranks for which explicit Weyl-group sums are allowed.
MAX_RANK_A = 8
MAX_RANK_BCD = 6


class Family(str, enum.Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"


@dataclass(frozen=True)
class RootCase:
    family: Family
    rank: int

    def __post_init__(self):
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        minimum = 1 if fam is Family.A else 2
        if int(self.rank) != self.rank or self.rank < minimum:
            raise InvalidArgumentError(
                f"rank {self.rank} below minimum {minimum} for case {fam.value}"
            )
        object.__setattr__(self, "rank", int(self.rank))

    @classmethod
    def parse(cls, family: str, rank: int) -> "RootCase":
        try:
            fam = Family(str(family).upper())
        except ValueError:
            raise InvalidArgumentError(f"unknown root family {family!r}") from None
        return cls(fam, rank)

    @property
    def n_positive_roots(self) -> int:
        n = self.rank
        return {
            Family.A: n * (n - 1) // 2,
            Family.B: n * n,
            Family.C: n * n,
            Family.D: n * (n - 1),
        }[self.family]

    @property
    def weyl_order(self) -> int:
        n = self.rank
        if self.family is Family.A:
            return math.factorial(n)
        if self.family is Family.D:
            return 2 ** (n - 1) * math.factorial(n)
        return 2**n * math.factorial(n)

    def __str__(self) -> str:
        return f"{self.family.value}{self.rank}"


@dataclass(frozen=True)
class ChamberPoint:
    """A point of the closed Weyl chamber, coordinates in canonical order."""

    case: RootCase
    coords: np.ndarray

    def __post_init__(self):
        arr = np.array(self.coords, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "coords", arr)

    def __len__(self) -> int:
        return len(self.coords)


def as_coords(x) -> np.ndarray:
    """Coordinates of a ChamberPoint/ParticleState or a plain array-like."""
    if hasattr(x, "coords"):
        return np.asarray(x.coords, dtype=float)
    return np.asarray(x, dtype=float)


def positive_roots(case: RootCase) -> list[np.ndarray]:
    """Positive roots in the standard basis.

    Ordered lexicographically in ``(j, i, sign)``: pair roots ``e_j - e_i`` then
    ``e_j + e_i`` for ``i < j``, followed by the short/long roots on single
    coordinates for B and C.
    """
    n = case.rank
    eye = np.eye(n, dtype=np.int64)
    roots = []
    for j in range(n):
        for i in range(j):
            roots.append(eye[j] - eye[i])
            if case.family is not Family.A:
                roots.append(eye[j] + eye[i])
    if case.family is Family.B:
        roots.extend(eye[i].copy() for i in range(n))
    elif case.family is Family.C:
        roots.extend(2 * eye[i] for i in range(n))
    return roots


def simple_roots(case: RootCase) -> np.ndarray:
    """Simple roots as rows; the open chamber is where all pairings are > 0."""
    n = case.rank
    eye = np.eye(n, dtype=np.int64)
    rows = [eye[i + 1] - eye[i] for i in range(n - 1)]
    if case.family is Family.B:
        rows.insert(0, eye[0])
    elif case.family is Family.C:
        rows.insert(0, 2 * eye[0])
    elif case.family is Family.D:
        rows.insert(0, eye[0] + eye[1])
    if not rows:
        return np.zeros((0, n), dtype=np.int64)
    return np.array(rows)


def rho(case: RootCase) -> np.ndarray:
    """Sum of the positive roots, as an exact integer vector."""
    n = case.rank
    j = np.arange(1, n + 1, dtype=np.int64)
    if case.family is Family.A:
        return 2 * j - n - 1
    if case.family is Family.B:
        return 2 * j - 1
    if case.family is Family.C:
        return 2 * j
    return 2 * (j - 1)


def rho_norm_sq(case: RootCase) -> int:
    n = case.rank
    if case.family is Family.A:
        return (n - 1) * n * (n + 1) // 3
    if case.family is Family.B:
        return n * (2 * n - 1) * (2 * n + 1) // 3
    if case.family is Family.C:
        return 2 * n * (n + 1) * (2 * n + 1) // 3
    return 2 * n * (n - 1) * (2 * n - 1) // 3


def _root_matrix(case: RootCase) -> np.ndarray:
    return np.array(positive_roots(case), dtype=float).reshape(-1, case.rank)


def pi_poly(case: RootCase, lam) -> float:
    """Product of the pairings of ``lam`` with every positive root."""
    v = as_coords(lam)
    _check_len(case, v)
    return float(np.prod(_root_matrix(case) @ v))


def _check_len(case: RootCase, v: np.ndarray) -> None:
    if v.shape != (case.rank,):
        raise InvalidArgumentError(f"expected a vector of length {case.rank}, got {v.shape}")


def chamber_project(case: RootCase, x) -> ChamberPoint:
    """Representative of the Weyl orbit of ``x`` in the closed chamber."""
    v = as_coords(x)
    _check_len(case, v)
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("coordinates must be finite")
    if case.family is Family.A:
        return ChamberPoint(case, np.sort(v))
    out = np.sort(np.abs(v))
    if case.family is Family.D:
        # only even numbers of sign flips are available
        negatives = np.count_nonzero(v < 0)
        if negatives % 2 == 1 and not np.any(v == 0):
            out[0] = -out[0]
    return ChamberPoint(case, out)


def in_open_chamber(case: RootCase, x) -> bool:
    v = as_coords(x)
    return bool(np.all(simple_roots(case) @ v > 0))


def coth_reg(x):
    """coth with a Laurent-series branch near zero.

    Accepts scalars or arrays. Zero is a pole and raises SingularInputError.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr == 0):
        raise SingularInputError("coth_reg evaluated at 0")
    small = np.abs(arr) < SERIES_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(small, 1.0 / arr + arr / 3.0 - arr**3 / 45.0, 1.0 / np.tanh(arr))
    if out.ndim == 0:
        return float(out)
    return out


def _coth_unchecked(arr: np.ndarray) -> np.ndarray:
    small = np.abs(arr) < SERIES_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(small, 1.0 / arr + arr / 3.0 - arr**3 / 45.0, 1.0 / np.tanh(arr))


def drift_field(case: RootCase, k: float, x) -> np.ndarray:
    """Interaction drift of the time-normalized process (no factor ``k``).

    Component i is ``sum_{j != i} coth(x_i - x_j)`` plus, outside type A,
    ``sum_{j != i} coth(x_i + x_j)`` and the single-coordinate term
    ``coth(x_i)`` (B) or ``2 coth(2 x_i)`` (C). ``k`` only scales the noise
    and is accepted for signature symmetry with the integrators.
    """
    if not k >= 0.5:
        raise InvalidArgumentError("k must be >= 1/2")
    v = as_coords(x)
    _check_len(case, v)
    if not in_open_chamber(case, v):
        raise SingularInputError("drift_field needs a point in the open chamber")
    n = case.rank
    diff = v[:, None] - v[None, :]
    off = ~np.eye(n, dtype=bool)
    out = np.zeros(n)
    if n > 1:
        out += np.where(off, _coth_unchecked(np.where(off, diff, 1.0)), 0.0).sum(axis=1)
    if case.family is not Family.A:
        total = v[:, None] + v[None, :]
        out += np.where(off, _coth_unchecked(np.where(off, total, 1.0)), 0.0).sum(axis=1)
    if case.family is Family.B:
        out += _coth_unchecked(v)
    elif case.family is Family.C:
        out += 2.0 * _coth_unchecked(2.0 * v)
    return out


@lru_cache(maxsize=32)
def weyl_group(case: RootCase) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Explicit Weyl group as ``(perms, signs, dets)``.

    Element w acts as ``(w.x)_i = signs[w, i] * x[perms[w, i]]``.
    """
    n = case.rank
    cap = MAX_RANK_A if case.family is Family.A else MAX_RANK_BCD
    if n > cap:
        raise UnsupportedRankError(f"Weyl-group enumeration capped at rank {cap} for {case.family.value}")
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    inversions = np.array(
        [sum(p[a] > p[b] for a in range(n) for b in range(a + 1, n)) for p in perms]
    )
    perm_sign = np.where(inversions % 2 == 0, 1, -1)
    if case.family is Family.A:
        signs = np.ones_like(perms)
        dets = perm_sign
    else:
        patterns = np.array(list(itertools.product((1, -1), repeat=n)), dtype=np.int64)
        if case.family is Family.D:
            patterns = patterns[np.prod(patterns, axis=1) == 1]
        perms = np.repeat(perms, len(patterns), axis=0)
        dets = np.repeat(perm_sign, len(patterns)) * np.tile(np.prod(patterns, axis=1), len(perm_sign))
        signs = np.tile(patterns, (len(perm_sign), 1))
    for arr in (perms, signs, dets):
        arr.setflags(write=False)
    return perms, signs, dets


def weyl_images(case: RootCase, x) -> np.ndarray:
    perms, signs, _ = weyl_group(case)
    v = as_coords(x)
    return signs * v[perms]


def drift_field_lambda(case: RootCase, lam, x) -> np.ndarray:
    """Drift of the projected Brownian motion with general drift ``lam`` (type A).

    Gradient of ``log sum_w det(w) exp(<w.lam, x>)``; at ``lam = rho`` this is
    the coth field of :func:`drift_field`.
    """
    if case.family is not Family.A:
        raise InvalidArgumentError("drift_field_lambda is implemented for type A only")
    lam_v = as_coords(lam)
    v = as_coords(x)
    _check_len(case, lam_v)
    _check_len(case, v)
    if len(np.unique(lam_v)) != len(lam_v):
        raise SingularInputError("lambda must have distinct entries")
    if not in_open_chamber(case, v):
        raise SingularInputError("x must lie in the open chamber")
    _, _, dets = weyl_group(case)
    images = weyl_images(case, lam_v)
    exponents = images @ v
    top = exponents.max()
    weights = dets * np.exp(exponents - top)
    denom = weights.sum()
    scale = np.abs(weights).sum()
    if denom == 0 or abs(denom) < 1e-300 * max(scale, 1.0):
        raise SingularInputError("alternating Weyl sum underflows")
    return (weights @ images) / denom


def _log_sinhc(u: np.ndarray) -> np.ndarray:
    """``log(sinh(u)/u)`` with the removable singularity at 0 filled in."""
    a = np.abs(np.asarray(u, dtype=float))
    small = a < SERIES_EPS
    safe = np.where(small, 1.0, a)
    big = safe + np.log1p(-np.exp(-2.0 * safe)) - math.log(2.0) - np.log(safe)
    series = np.log1p(a * a / 6.0 + a**4 / 120.0)
    return np.where(small, series, big)


def log_psi_weyl(case: RootCase, x) -> float:
    v = as_coords(x)
    _check_len(case, v)
    return float(np.sum(_log_sinhc(_root_matrix(case) @ v)))


def psi_weyl(case: RootCase, x) -> float:
    """Spherical function at ``-i rho``: product of ``sinh<a,x>/<a,x>``."""
    return math.exp(log_psi_weyl(case, x))


def _alternating_sum_mp(case: RootCase, lam: np.ndarray, x: np.ndarray, digits: int):
    """``log|sum_w det(w) e^{<lam, w.x>}|`` and sign in extended precision."""
    perms, signs, dets = weyl_group(case)
    with mpmath.workdps(digits):
        lam_mp = [mpmath.mpf(float(v)) for v in lam]
        x_mp = [mpmath.mpf(float(v)) for v in x]
        total = mpmath.mpf(0)
        for perm, sgn, det in zip(perms, signs, dets):
            expo = mpmath.fsum(lam_mp[i] * int(sgn[i]) * x_mp[perm[i]] for i in range(len(lam)))
            total += int(det) * mpmath.exp(expo)
        if total == 0:
            raise SingularInputError("alternating Weyl sum cancels to zero")
        return float(mpmath.log(abs(total))), (1.0 if total > 0 else -1.0)


def psi_general(case: RootCase, lam, x) -> float:
    """Spherical function ``psi_{-i lam}(x)`` via the alternating Weyl sum.

    Requires regular ``lam`` and ``x``; the analytic continuation onto
    reflecting hyperplanes is not implemented. When the alternating sum loses
    more than three digits to cancellation it is redone in extended precision.
    """
    lam_v = as_coords(lam)
    v = as_coords(x)
    _check_len(case, lam_v)
    _check_len(case, v)
    pl = pi_poly(case, lam_v)
    px = pi_poly(case, v)
    if pl == 0 or px == 0:
        raise SingularInputError("psi_general needs pi(lam) * pi(x) != 0")
    _, _, dets = weyl_group(case)
    exponents = weyl_images(case, v) @ lam_v
    top = exponents.max()
    terms = dets * np.exp(exponents - top)
    total = terms.sum()
    cond = np.abs(terms).sum() / abs(total) if total != 0 else np.inf
    # each term carries ~|exponent| * eps of relative error, magnified by cond
    if not np.isfinite(cond) or cond * (1.0 + np.abs(exponents).max()) > 1e3:
        digits = 30 + int(math.log10(cond)) if np.isfinite(cond) else 60
        log_sum, sign = _alternating_sum_mp(case, lam_v, v, digits)
    else:
        log_sum, sign = top + math.log(abs(total)), math.copysign(1.0, total)
    log_pref = math.log(abs(pi_poly(case, rho(case)))) - case.n_positive_roots * math.log(2.0)
    sign *= math.copysign(1.0, pl * px)
    return sign * math.exp(log_pref - math.log(abs(pl)) - math.log(abs(px)) + log_sum)
