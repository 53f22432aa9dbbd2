"""Fixed-time matrix models with drift and their spectra folded to the chamber.

Hermitian Brownian motion ``B_t + t diag(lam)`` realises type A; Brownian
motion on ``Skew(2N+1)`` / ``Skew(2N)`` with drift ``t A(rho)`` realises types
B and D. Entries are drawn from the counter-based streams keyed by
``(seed, index)`` so individual draws are reproducible in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _rng
from .errors import InvalidArgumentError, NumericFailureError
from .rootsys import ChamberPoint, Family, RootCase, rho

PAIR_TOL = 1e-8


@dataclass(frozen=True)
class HermitianSample:
    dimension: int
    time: float
    drift_scale: float
    spectrum: ChamberPoint


@dataclass(frozen=True)
class SkewSample:
    family: Family
    rank: int
    time: float
    spectrum: ChamberPoint


def _hermitian_noise(n: int, t: float, gen: np.random.Generator) -> np.ndarray:
    g = gen.standard_normal((3, n, n)) * np.sqrt(t)
    h = np.zeros((n, n), dtype=complex)
    iu = np.triu_indices(n, 1)
    h[iu] = (g[0][iu] + 1j * g[1][iu]) / np.sqrt(2.0)
    h = h + h.conj().T
    h[np.diag_indices(n)] = g[2].diagonal()
    return h


def _eigvalsh(m: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.eigvalsh(m, lower=False)
    except np.linalg.LinAlgError as exc:
        raise NumericFailureError(f"eigensolver did not converge: {exc}") from exc


def _hermitian_sample(n, t, drift, seed, index, scale):
    if n < 1:
        raise InvalidArgumentError("N must be >= 1")
    if not t > 0:
        raise InvalidArgumentError("t must be positive")
    gen = _rng.stream(seed, index, _rng.HERMITIAN)
    h = _hermitian_noise(n, t, gen)
    h[np.diag_indices(n)] += t * np.asarray(drift, dtype=float)
    ev = np.sort(_eigvalsh(h))
    return HermitianSample(n, t, scale, ChamberPoint(RootCase(Family.A, n), ev))


def sample_hermitian_bm_drift(N: int, t: float, c: float, seed: int, index: int = 0) -> HermitianSample:
    """Ordered eigenvalues of ``B_t^H + t c diag(rho)``."""
    if not c >= 0:
        raise InvalidArgumentError("c must be >= 0")
    r = rho(RootCase(Family.A, N)) if N >= 1 else None
    return _hermitian_sample(N, t, c * r, seed, index, c)


def sample_hermitian_bm_drift_lambda(N: int, t: float, lam, seed: int, index: int = 0) -> HermitianSample:
    """Ordered eigenvalues of ``B_t^H + t diag(lam)`` for trace-zero, distinct ``lam``."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (N,):
        raise InvalidArgumentError(f"lambda must have length {N}")
    if abs(lam.sum()) > 1e-12 * max(1.0, np.abs(lam).max()):
        raise InvalidArgumentError("lambda must have trace zero")
    if len(np.unique(lam)) != N:
        raise InvalidArgumentError("lambda must have distinct entries")
    return _hermitian_sample(N, t, lam, seed, index, float("nan"))


def hermitian_spectra(N: int, t: float, c: float, seed: int, draws: int, start: int = 0) -> np.ndarray:
    """``draws`` spectra as rows, draw i using stream index ``start + i``."""
    return np.array([sample_hermitian_bm_drift(N, t, c, seed, start + i).spectrum.coords
                     for i in range(draws)])


def block_embed(x, family: Family) -> np.ndarray:
    """Skew matrix with 2x2 blocks ``[[0, x_i], [-x_i, 0]]``; B adds a zero row/column."""
    family = Family(family)
    if family not in (Family.B, Family.D):
        raise InvalidArgumentError("block_embed is defined for families B and D")
    x = np.asarray(x, dtype=float)
    n = len(x)
    dim = 2 * n + (1 if family is Family.B else 0)
    m = np.zeros((dim, dim))
    idx = 2 * np.arange(n)
    m[idx, idx + 1] = x
    m[idx + 1, idx] = -x
    return m


def pfaffian(a: np.ndarray) -> float:
    """Pfaffian of a real skew matrix by Parlett-Reid style elimination."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    if n % 2:
        return 0.0
    result = 1.0
    for k in range(0, n - 1, 2):
        p = k + 1 + int(np.argmax(np.abs(a[k, k + 1:])))
        if p != k + 1:
            a[[k + 1, p]] = a[[p, k + 1]]
            a[:, [k + 1, p]] = a[:, [p, k + 1]]
            result = -result
        pivot = a[k, k + 1]
        if pivot == 0:
            return 0.0
        result *= pivot
        if k + 2 < n:
            tau = a[k, k + 2:] / pivot
            # eliminate row/column k from the trailing block
            col = a[k + 2:, k + 1]
            a[k + 2:, k + 2:] += np.outer(tau, col) - np.outer(col, tau)
    return result


def _fold_pairs(ev: np.ndarray, family: Family, n: int) -> np.ndarray:
    ev = np.sort(ev)
    m = len(ev)
    pair_sums = ev + ev[::-1]
    if np.max(np.abs(pair_sums)) > PAIR_TOL * max(1.0, np.abs(ev).max()):
        raise NumericFailureError("spectrum is not symmetric: skewness violated")
    pos = ev[m - n:]
    if family is Family.B and abs(ev[n]) > PAIR_TOL * max(1.0, np.abs(ev).max()):
        raise NumericFailureError("B-type spectrum lost its zero eigenvalue")
    return np.sort(np.clip(pos, 0.0, None))


def skew_spectrum(m: np.ndarray, family: Family) -> np.ndarray:
    """Chamber parameters of a skew matrix: eigenvalues ``+-i x_j`` folded.

    For D the sign of ``x_1`` is the sign of the Pfaffian, so the result is a
    genuine D-chamber point.
    """
    family = Family(family)
    dim = m.shape[0]
    n = dim // 2
    ev = _eigvalsh(1j * m)
    x = _fold_pairs(ev, family, n)
    if family is Family.D and np.sign(pfaffian(m)) < 0:
        x[0] = -x[0]
    return x


def sample_skew_bm_drift(family: Family, N: int, t: float, seed: int, index: int = 0) -> SkewSample:
    """Spectrum parameters of ``B_t + t A(rho)`` on Skew(2N+1) (B) or Skew(2N) (D)."""
    family = Family(family)
    if family not in (Family.B, Family.D):
        raise InvalidArgumentError("skew sampler exists for families B and D only")
    if N < 2:
        raise InvalidArgumentError("N must be >= 2")
    if not t > 0:
        raise InvalidArgumentError("t must be positive")
    case = RootCase(family, N)
    dim = 2 * N + (1 if family is Family.B else 0)
    gen = _rng.stream(seed, index, _rng.SKEW)
    g = gen.standard_normal((dim, dim)) * np.sqrt(t)
    upper = np.triu(g, 1)
    m = upper - upper.T + t * block_embed(rho(case).astype(float), family)
    return SkewSample(family, N, t, ChamberPoint(case, skew_spectrum(m, family)))


def skew_spectra(family: Family, N: int, t: float, seed: int, draws: int, start: int = 0) -> np.ndarray:
    return np.array([sample_skew_bm_drift(family, N, t, seed, start + i).spectrum.coords
                     for i in range(draws)])
