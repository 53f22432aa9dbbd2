"""Integrators for the coth-drift particle systems and their k = infinity ODE.

Two stochastic schemes share one interface.

``euler`` is Euler-Maruyama with rejection and step halving. A step whose
drift part changes some wall distance by more than ``max_rel_gap_change`` of
its value, or whose full increment leaves the chamber, is refined along the
same Brownian path (bridge midpoints), so this accuracy control does not bias
the noise. A step that would push a wall distance below the collision floor is
discarded together with its pending increments and redrawn, which makes the
floor a soft reflecting barrier. The floor is ``collision_margin``, lowered to
1% of the smallest initial wall distance when the start sits closer to the
walls (the warm start at large N does). Step sizes recover by doubling after a
run of accepted steps.

``implicit`` treats the drift implicitly: each step minimises
``|y - z|^2 / 2 - a h sum_alpha log sinh<alpha, y>`` with ``z`` the noisy
explicit point. The log-sinh barrier keeps every step in the open chamber, so
near-collisions no longer force the step size down, and a geometric grid
``h = geometric_ratio * (t + g0^2)`` (g0 the smallest initial wall distance)
walks through the scale-free start in a few hundred steps. This is the scheme
that makes N in the hundreds affordable; bias is first order in the step.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import _rng
from .errors import InvalidArgumentError, StepFailureError
from .rootsys import Family, RootCase, as_coords, in_open_chamber, rho

_FAMILY_CODE = {Family.A: 0, Family.B: 1, Family.C: 2, Family.D: 3}
_STACK_DEPTH = 128
_FLOOR_RETRIES = 4
_FLOOR_FRACTION = 0.01

# kernel status codes
_DONE, _NEED_NORMALS, _DT_UNDERFLOW, _TOO_MANY_STEPS = 0, 1, 2, 3


class Method(str, enum.Enum):
    EULER = "euler"  # explicit Euler-Maruyama with rejection
    IMPLICIT = "implicit"  # drift-implicit Euler on a geometric time grid


class Clock(str, enum.Enum):
    HO = "HO"  # dX = dB + k F dt
    TILDE = "TILDE"  # dX = k^{-1/2} dB + F dt, i.e. X~_t = X_{t/k}


@dataclass(frozen=True)
class SchemeConfig:
    dt_base: float = 1e-3
    dt_min: float = 1e-24
    collision_margin: float = 1e-7
    warm_start_delta: float = 1e-6
    max_steps: int = 50_000_000
    max_rel_gap_change: float = 0.3
    recover_after: int = 10
    method: Method = Method.EULER
    geometric_ratio: float = 0.02

    def __post_init__(self):
        try:
            object.__setattr__(self, "method", Method(self.method))
        except ValueError as exc:
            raise InvalidArgumentError(f"unknown method {self.method!r}") from exc
        if not 0 < self.geometric_ratio <= 1:
            raise InvalidArgumentError("geometric_ratio must lie in (0, 1]")
        if not (self.dt_base > 0 and self.dt_min > 0 and self.dt_min <= self.dt_base):
            raise InvalidArgumentError("need 0 < dt_min <= dt_base")
        if not self.collision_margin > 0:
            raise InvalidArgumentError("collision_margin must be positive")
        if not self.warm_start_delta > 0:
            raise InvalidArgumentError("warm_start_delta must be positive")
        if not 0 < self.max_rel_gap_change < 1:
            raise InvalidArgumentError("max_rel_gap_change must lie in (0, 1)")
        if self.max_steps < 1 or self.recover_after < 1:
            raise InvalidArgumentError("max_steps and recover_after must be >= 1")


@dataclass(frozen=True)
class ParticleState:
    case: RootCase
    coords: np.ndarray
    time: float

    def __post_init__(self):
        arr = np.array(self.coords, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "coords", arr)


@dataclass
class PathEnsemble:
    case: RootCase
    k: float
    replicas: int
    seed: int
    terminal_states: list[ParticleState]
    clock: Clock
    t_end: float
    config: SchemeConfig
    attempts: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.terminal_states) != self.replicas:
            raise InvalidArgumentError("replica count does not match terminal states")

    def coords(self) -> np.ndarray:
        return np.array([s.coords for s in self.terminal_states])


# ---------------------------------------------------------------------------
# numba kernels


@nb.njit(cache=True, nogil=True, error_model="numpy")
def _coth(u):
    if abs(u) < 1e-4:
        return 1.0 / u + u / 3.0 - u * u * u / 45.0
    return 1.0 / math.tanh(u)


@nb.njit(cache=True, nogil=True, error_model="numpy")
def _drift_kernel(x, fam, out):
    n = x.size
    for i in range(n):
        out[i] = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            c = _coth(x[i] - x[j])
            out[i] += c
            out[j] -= c
            if fam != 0:
                s = _coth(x[i] + x[j])
                out[i] += s
                out[j] += s
        if fam == 1:
            out[i] += _coth(x[i])
        elif fam == 2:
            out[i] += 2.0 * _coth(2.0 * x[i])


@nb.njit(cache=True, nogil=True, error_model="numpy")
def _gaps_kernel(x, fam, out):
    n = x.size
    m = 0
    if fam == 1 or fam == 2:
        out[0] = x[0]
        m = 1
    elif fam == 3:
        out[0] = x[0] + x[1]
        m = 1
    for i in range(n - 1):
        out[m + i] = x[i + 1] - x[i]


@nb.njit(cache=True, nogil=True, error_model="numpy")
def _verdict(g_old, g_drift, g_new, floor, max_rel):
    # 0 accept, 1 too coarse (refine the same Brownian path), 2 below the floor
    code = 0
    for i in range(g_new.size):
        g = g_new[i]
        if not np.isfinite(g):
            code = 1
        elif g < floor:
            return 2
        elif abs(g_drift[i] - g_old[i]) > max_rel * g_old[i]:
            code = 1
    return code


@nb.njit(cache=True, nogil=True, error_model="numpy")
def _em_kernel(x, fam, a, sigma, t_end, dt_base, dt_min, margin, max_rel, recover, max_steps,
               normals, fst, ist, stack_h, stack_w, cur_w):
    # fst = [t, dt_cur, cur_h]; ist = [pos, run, top, has_cur, attempts, floor_hits]
    n = x.size
    ng = n if fam != 0 else n - 1
    drift = np.empty(n)
    xd = np.empty(n)
    xn = np.empty(n)
    g_old = np.empty(max(ng, 1))
    g_drift = np.empty(max(ng, 1))
    g_new = np.empty(max(ng, 1))
    t, dt_cur, cur_h = fst[0], fst[1], fst[2]
    stale = True
    pos, run, top, has_cur, attempts, hits = ist[0], ist[1], ist[2], ist[3], ist[4], ist[5]
    status = _DONE
    while True:
        if has_cur == 0:
            if top > 0:
                top -= 1
                cur_h = stack_h[top]
                for i in range(n):
                    cur_w[i] = stack_w[top, i]
                has_cur = 1
            else:
                remaining = t_end - t
                if remaining <= 1e-15 * t_end:
                    status = _DONE
                    break
                h = min(dt_cur, remaining)
                if pos + n > normals.size:
                    status = _NEED_NORMALS
                    break
                sq = math.sqrt(h)
                for i in range(n):
                    cur_w[i] = sq * normals[pos + i]
                pos += n
                cur_h = h
                has_cur = 1
        attempts += 1
        if attempts > max_steps:
            status = _TOO_MANY_STEPS
            break
        if stale:
            _drift_kernel(x, fam, drift)
            if ng > 0:
                _gaps_kernel(x, fam, g_old)
            stale = False
        for i in range(n):
            xd[i] = x[i] + a * cur_h * drift[i]
            xn[i] = xd[i] + sigma * cur_w[i]
        verdict = 0
        if ng > 0:
            _gaps_kernel(xd, fam, g_drift)
            _gaps_kernel(xn, fam, g_new)
            verdict = _verdict(g_old[:ng], g_drift[:ng], g_new[:ng], margin, max_rel)
        else:
            for i in range(n):
                if not np.isfinite(xn[i]):
                    verdict = 1
        if verdict == 0:
            for i in range(n):
                x[i] = xn[i]
            stale = True
            t += cur_h
            has_cur = 0
            hits = 0
            run += 1
            if run >= recover:
                dt_cur = min(2.0 * dt_cur, dt_base)
                run = 0
        elif verdict == 2:
            # a fixed floor is absorbing for a fixed path: drop the pending
            # increments and redraw; halve only after repeated hits, since at
            # small steps the noise dominates and halving alone cannot help
            top = 0
            has_cur = 0
            run = 0
            hits += 1
            dt_cur = cur_h
            if hits % _FLOOR_RETRIES == 0:
                dt_cur = 0.5 * cur_h
                if dt_cur < dt_min:
                    status = _DT_UNDERFLOW
                    break
        else:
            half = 0.5 * cur_h
            if half < dt_min or top >= stack_h.size:
                status = _DT_UNDERFLOW
                break
            if pos + n > normals.size:
                status = _NEED_NORMALS
                attempts -= 1
                break
            # Brownian bridge midpoint: W(h/2) | W(h) = w  ~  N(w/2, h/4)
            sq = 0.5 * math.sqrt(cur_h)
            for i in range(n):
                w1 = 0.5 * cur_w[i] + sq * normals[pos + i]
                stack_w[top, i] = cur_w[i] - w1
                cur_w[i] = w1
            pos += n
            stack_h[top] = half
            top += 1
            cur_h = half
            dt_cur = min(dt_cur, half)
            run = 0
    fst[0], fst[1], fst[2] = t, dt_cur, cur_h
    ist[0], ist[1], ist[2], ist[3], ist[4], ist[5] = pos, run, top, has_cur, attempts, hits
    return status


@nb.njit(cache=True, nogil=True, error_model="numpy")
def _coth_csch2(u):
    # both from one expm1: with m = 1 - e^{-2|u|}, coth = (2 - m)/m, csch^2 = 4(1 - m)/m^2
    m = -math.expm1(-2.0 * abs(u))
    c = (2.0 - m) / m
    return (c if u > 0 else -c), 4.0 * (1.0 - m) / (m * m)


@nb.njit(cache=True, nogil=True, error_model="numpy")
def _barrier_newton_system(y, z, fam, ah, grad, hess):
    # gradient and Hessian of 0.5|y - z|^2 - ah * sum_alpha log sinh<alpha, y>
    n = y.size
    for i in range(n):
        grad[i] = y[i] - z[i]
        for j in range(n):
            hess[i, j] = 0.0
        hess[i, i] = 1.0
    for i in range(n):
        for j in range(i + 1, n):
            c, s = _coth_csch2(y[j] - y[i])
            s *= ah
            grad[j] -= ah * c
            grad[i] += ah * c
            hess[i, i] += s
            hess[j, j] += s
            hess[i, j] -= s
            hess[j, i] -= s
            if fam != 0:
                c, s = _coth_csch2(y[j] + y[i])
                s *= ah
                grad[j] -= ah * c
                grad[i] -= ah * c
                hess[i, i] += s
                hess[j, j] += s
                hess[i, j] += s
                hess[j, i] += s
        if fam == 1:
            c, s = _coth_csch2(y[i])
            grad[i] -= ah * c
            hess[i, i] += ah * s
        elif fam == 2:
            c, s = _coth_csch2(2.0 * y[i])
            grad[i] -= 2.0 * ah * c
            hess[i, i] += 4.0 * ah * s


@nb.njit(cache=True, nogil=True, error_model="numpy")
def _ungap(g, fam, z, ah, drift, y):
    # invert _gaps_kernel; type A is anchored at the explicit centre of mass
    n = y.size
    if fam == 0:
        y[0] = 0.0
        for i in range(n - 1):
            y[i + 1] = y[i] + g[i]
        shift = 0.0
        for i in range(n):
            shift += z[i] + ah * drift[i] - y[i]
        shift /= n
        for i in range(n):
            y[i] += shift
        return
    if fam == 3:
        y[0] = 0.5 * (g[0] - g[1])
        y[1] = 0.5 * (g[0] + g[1])
        start = 1
    else:
        y[0] = g[0]
        start = 0
    for i in range(start, n - 1):
        y[i + 1] = y[i] + g[i + 1]


@nb.njit(cache=True, nogil=True, error_model="numpy")
def _implicit_step(x, z, fam, ah, y, max_iter):
    """Solve y = z + ah * F(y) by damped Newton; Newton iterations used, -1 if it stalls.

    The map is the minimiser of a strictly convex barrier function, so its
    solution lies in the open chamber; a fraction-to-boundary rule keeps
    every iterate there too.
    """
    n = x.size
    ng = n if fam != 0 else n - 1
    grad = np.empty(n)
    hess = np.empty((n, n))
    g = np.empty(max(ng, 1))
    dg = np.empty(max(ng, 1))
    # predictor in gap space: each gap solves its own pair repulsion exactly,
    # g' = b + c ah / g' with b the noisy gap plus the rest of the drift
    _drift_kernel(x, fam, grad)
    if ng > 0:
        _gaps_kernel(z, fam, g)
        _gaps_kernel(grad, fam, dg)
        _gaps_kernel(x, fam, y)
        for i in range(ng):
            c = 2.0 if (fam == 0 or fam == 3 or i > 0) else 1.0
            b = g[i] + ah * (dg[i] - c * _coth(y[i]))
            g[i] = 0.5 * (b + math.sqrt(b * b + 4.0 * c * ah))
        _ungap(g, fam, z, ah, grad, y)
    else:
        for i in range(n):
            y[i] = z[i] + ah * grad[i]
    for it in range(max_iter):
        _barrier_newton_system(y, z, fam, ah, grad, hess)
        d = -np.linalg.solve(hess, grad)
        step = 1.0
        worst = 0.0
        if ng > 0:
            _gaps_kernel(y, fam, g)
            _gaps_kernel(d, fam, dg)
            for i in range(ng):
                if dg[i] < 0.0:
                    step = min(step, 0.9 * g[i] / -dg[i])
                worst = max(worst, abs(dg[i]) / g[i])
        ymax = 0.0
        dmax = 0.0
        for i in range(n):
            y[i] += step * d[i]
            ymax = max(ymax, abs(y[i]))
            dmax = max(dmax, abs(d[i]))
        if step == 1.0 and worst <= 1e-6 and dmax <= 1e-8 * (1.0 + ymax):
            # quadratic convergence: the error left after this update is ~1e-12
            return it + 1
    return -1


@nb.njit(cache=True, nogil=True, error_model="numpy")
def _implicit_kernel(x, fam, a, sigma, t_end, dt_base, dt_min, floor, geo, t_ref, recover,
                     max_steps, normals, fst, ist):
    # fst = [t, dt_cur]; ist = [pos, run, attempts, newton iterations]
    n = x.size
    ng = n if fam != 0 else n - 1
    z = np.empty(n)
    y = np.empty(n)
    g_new = np.empty(max(ng, 1))
    t, dt_cur = fst[0], fst[1]
    pos, run, attempts, newton = ist[0], ist[1], ist[2], ist[3]
    status = _DONE
    while True:
        remaining = t_end - t
        if remaining <= 1e-15 * t_end:
            break
        if pos + n > normals.size:
            status = _NEED_NORMALS
            break
        h = min(dt_cur, geo * (t + t_ref), remaining)
        attempts += 1
        if attempts > max_steps:
            status = _TOO_MANY_STEPS
            break
        sq = sigma * math.sqrt(h)
        for i in range(n):
            z[i] = x[i] + sq * normals[pos + i]
        pos += n
        iters = _implicit_step(x, z, fam, a * h, y, 60)
        newton += max(iters, 0)
        ok = iters >= 0
        if ok and ng > 0:
            _gaps_kernel(y, fam, g_new)
            for i in range(ng):
                if not g_new[i] >= floor:
                    ok = False
        if ok:
            for i in range(n):
                x[i] = y[i]
            t += h
            run += 1
            if run >= recover:
                dt_cur = min(2.0 * dt_cur, dt_base)
                run = 0
        else:
            # redraw at half the step; the floor acts as a soft barrier
            dt_cur = 0.5 * h
            run = 0
            if dt_cur < dt_min:
                status = _DT_UNDERFLOW
                break
    fst[0], fst[1] = t, dt_cur
    ist[0], ist[1], ist[2], ist[3] = pos, run, attempts, newton
    return status


@nb.njit(cache=True, nogil=True, error_model="numpy")
def _rk4_kernel(x, fam, t_end, dt_base, dt_min, margin, max_rel, recover, max_steps, fst, ist):
    # fst = [t, dt_cur]; ist = [attempts]
    n = x.size
    ng = n if fam != 0 else n - 1
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    xn = np.empty(n)
    g_old = np.empty(max(ng, 1))
    g_new = np.empty(max(ng, 1))
    t, dt_cur = fst[0], fst[1]
    attempts = ist[0]
    run = 0
    status = _DONE
    while True:
        remaining = t_end - t
        if remaining <= 1e-15 * t_end:
            break
        h = min(dt_cur, remaining)
        attempts += 1
        if attempts > max_steps:
            status = _TOO_MANY_STEPS
            break
        _drift_kernel(x, fam, k1)
        for i in range(n):
            tmp[i] = x[i] + 0.5 * h * k1[i]
        _drift_kernel(tmp, fam, k2)
        for i in range(n):
            tmp[i] = x[i] + 0.5 * h * k2[i]
        _drift_kernel(tmp, fam, k3)
        for i in range(n):
            tmp[i] = x[i] + h * k3[i]
        _drift_kernel(tmp, fam, k4)
        for i in range(n):
            xn[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        ok = True
        if ng > 0:
            _gaps_kernel(x, fam, g_old)
            _gaps_kernel(xn, fam, g_new)
            ok = _verdict(g_old[:ng], g_new[:ng], g_new[:ng], margin, max_rel) == 0
        if ok:
            for i in range(n):
                x[i] = xn[i]
            t += h
            run += 1
            if run >= recover:
                dt_cur = min(2.0 * dt_cur, dt_base)
                run = 0
        else:
            dt_cur = 0.5 * h
            run = 0
            if dt_cur < dt_min:
                status = _DT_UNDERFLOW
                break
    fst[0], fst[1] = t, dt_cur
    ist[0] = attempts
    return status


# ---------------------------------------------------------------------------
# public API


def warm_start(case: RootCase, delta: float) -> ParticleState:
    """Interior starting point ``delta * rho / N`` standing in for the origin."""
    if not delta > 0:
        raise InvalidArgumentError("delta must be positive")
    x = delta * rho(case).astype(float) / case.rank
    if case.family is Family.D:
        x[0] = delta / (2 * case.rank)
    return ParticleState(case, x, 0.0)


def _resolve_start(case: RootCase, start, cfg: SchemeConfig) -> np.ndarray:
    if start is None:
        return np.array(warm_start(case, cfg.warm_start_delta).coords)
    x = as_coords(start)
    if x.shape != (case.rank,):
        raise InvalidArgumentError(f"start must have length {case.rank}")
    if np.all(x == 0):
        return np.array(warm_start(case, cfg.warm_start_delta).coords)
    if case.rank > 1 and not in_open_chamber(case, x):
        raise InvalidArgumentError("start must be interior to the chamber or the zero state")
    return np.array(x, dtype=float)


def _check_common(k: float, t_end: float) -> None:
    if not t_end > 0:
        raise InvalidArgumentError("t_end must be positive")
    if not k >= 0.5:
        raise InvalidArgumentError("k must be >= 1/2 (strong solutions are guaranteed only there)")


def _min_gap(case: RootCase, x: np.ndarray) -> float:
    ng = case.rank if case.family is not Family.A else case.rank - 1
    if ng == 0:
        return math.inf
    g = np.empty(ng)
    _gaps_kernel(x, _FAMILY_CODE[case.family], g)
    return float(g.min())


def _floor(case: RootCase, x: np.ndarray, cfg: SchemeConfig) -> float:
    return min(cfg.collision_margin, _FLOOR_FRACTION * _min_gap(case, x))


def _normals_block(n: int) -> int:
    return max(8192, 64 * n)


def _simulate_sde_attempts(case, k, t_end, cfg, seed, start, clock, replica):
    _check_common(k, t_end)
    if math.isinf(k):
        raise InvalidArgumentError("k = inf has no noise; use simulate_ode")
    clock = Clock(clock)
    x = _resolve_start(case, start, cfg)
    if clock is Clock.HO:
        a, sigma = float(k), 1.0
    else:
        a, sigma = 1.0, 1.0 / math.sqrt(k)
    n = case.rank
    gen = _rng.stream(seed, replica, _rng.SDE)
    block = _normals_block(n)
    normals = gen.standard_normal(block)
    fam = _FAMILY_CODE[case.family]
    floor = _floor(case, x, cfg)
    if cfg.method is Method.IMPLICIT:
        # the geometric grid resolves the scale-free start: h ~ geo * (t + g0^2)
        g0 = _min_gap(case, x)
        t_ref = g0 * g0 if math.isfinite(g0) else cfg.dt_base / cfg.geometric_ratio
        fst = np.array([0.0, cfg.dt_base])
        ist = np.zeros(4, dtype=np.int64)

        def step():
            return _implicit_kernel(
                x, fam, a, sigma, float(t_end), cfg.dt_base, cfg.dt_min, floor,
                cfg.geometric_ratio, t_ref, cfg.recover_after, cfg.max_steps, normals, fst, ist,
            )
        attempts_slot = 2
    else:
        fst = np.array([0.0, cfg.dt_base, 0.0])
        ist = np.zeros(6, dtype=np.int64)
        stack_h = np.zeros(_STACK_DEPTH)
        stack_w = np.zeros((_STACK_DEPTH, n))
        cur_w = np.zeros(n)

        def step():
            return _em_kernel(
                x, fam, a, sigma, float(t_end), cfg.dt_base, cfg.dt_min, floor,
                cfg.max_rel_gap_change, cfg.recover_after, cfg.max_steps,
                normals, fst, ist, stack_h, stack_w, cur_w,
            )
        attempts_slot = 4
    while True:
        status = step()
        if status == _NEED_NORMALS:
            normals[:] = gen.standard_normal(block)
            ist[0] = 0
            continue
        if status == _DT_UNDERFLOW:
            raise StepFailureError("step size fell below dt_min", float(fst[0]), replica)
        if status == _TOO_MANY_STEPS:
            raise StepFailureError("max_steps exceeded", float(fst[0]), replica)
        break
    return ParticleState(case, x, float(t_end)), int(ist[attempts_slot])


def simulate_sde(case: RootCase, k: float, t_end: float, cfg: SchemeConfig, seed: int,
                 start=None, clock: Clock = Clock.TILDE, replica: int = 0) -> ParticleState:
    """Terminal state of one trajectory of the coth-drift SDE.

    ``start=None`` or the zero vector uses :func:`warm_start`. Deterministic
    in ``(seed, replica)``.
    """
    state, _ = _simulate_sde_attempts(case, k, t_end, cfg, seed, start, clock, replica)
    return state


def _simulate_ode_attempts(case, t_end, cfg, start):
    if not t_end > 0:
        raise InvalidArgumentError("t_end must be positive")
    x = _resolve_start(case, start, cfg)
    fst = np.array([0.0, cfg.dt_base])
    ist = np.zeros(1, dtype=np.int64)
    status = _rk4_kernel(
        x, _FAMILY_CODE[case.family], float(t_end), cfg.dt_base, cfg.dt_min, _floor(case, x, cfg),
        cfg.max_rel_gap_change, cfg.recover_after, cfg.max_steps, fst, ist,
    )
    if status == _DT_UNDERFLOW:
        raise StepFailureError("step size fell below dt_min", float(fst[0]))
    if status == _TOO_MANY_STEPS:
        raise StepFailureError("max_steps exceeded", float(fst[0]))
    return ParticleState(case, x, float(t_end)), int(ist[0])


def simulate_ode(case: RootCase, t_end: float, cfg: SchemeConfig, start=None) -> ParticleState:
    """Classical RK4 for ``dx/dt = drift_field(x)`` (the k = infinity limit)."""
    state, _ = _simulate_ode_attempts(case, t_end, cfg, start)
    return state


def run_ensemble(case: RootCase, k: float, t_end: float, cfg: SchemeConfig, replicas: int,
                 seed: int, clock: Clock = Clock.TILDE, start=None, workers: int = 1) -> PathEnsemble:
    """Independent replicas; replica r draws from the stream keyed by (seed, r).

    ``k = inf`` runs the deterministic ODE (TILDE clock only) and repeats the
    single trajectory. Results do not depend on ``workers``.
    """
    if replicas < 1:
        raise InvalidArgumentError("replicas must be >= 1")
    clock = Clock(clock)
    if math.isinf(k):
        if clock is not Clock.TILDE:
            raise InvalidArgumentError("k = inf is only defined on the TILDE clock")
        state, attempts = _simulate_ode_attempts(case, t_end, cfg, start)
        return PathEnsemble(case, k, replicas, seed, [state] * replicas, clock, t_end, cfg,
                            [attempts] * replicas)
    _check_common(k, t_end)

    def one(r):
        try:
            return _simulate_sde_attempts(case, k, t_end, cfg, seed, start, clock, r)
        except StepFailureError as exc:
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(replicas)))
    else:
        results = [one(r) for r in range(replicas)]
    for res in results:
        if isinstance(res, StepFailureError):
            raise res
    states = [res[0] for res in results]
    attempts = [res[1] for res in results]
    return PathEnsemble(case, k, replicas, seed, states, clock, t_end, cfg, attempts)
