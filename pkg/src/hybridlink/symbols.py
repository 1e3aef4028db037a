"""Symbol allocation at fixed payloads by successive convex approximation.

Each device's throughput is replaced by its closed-form approximation
(Q(x) -> exponential), which splits the forward PER into two branches at the
blocklength ``U = 2k / log2(1 + snr)`` where the Q argument changes sign.
Every SCA iteration fixes each device to one branch, builds a concave
quadratic minorant of the approximate throughput around the current point,
and maximizes the sum of logs of the minorants over the simplex slice
``sum(n) = N``. Steps are accepted only if the approximate sum-log objective
does not decrease.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .config import SolverConfig
from .errors import ConfigError, DegenerateInputError
from .linkmath import LN2, LN3, LOG2E, DeviceLink, log_pow4_minus_one

# exp(-e^6.62) underflows, so the feedback approximation is exactly zero past it.
_LOG_V_SATURATION = 6.62
_SEAM_TOL = 1e-9


class ApproxValue(NamedTuple):
    value: float
    d1: float
    d2: float


def branch_bound(k: float, snr: float) -> float:
    """Blocklength at which the forward Q argument changes sign."""
    return 2.0 * k / math.log2(1.0 + snr)


def _forward_success_approx(k, n, snr):
    # u = x^2 / 2 with x the forward Q argument: u = q (c n - d)^2 / n.
    c = math.log2(1.0 + snr)
    d = 2.0 * k
    q = (snr + 1.0) ** 2 / (4.0 * LOG2E ** 2 * snr * (snr + 2.0))
    u = q * (c * n - d) ** 2 / n
    du = q * (c * c - d * d / (n * n))
    d2u = 2.0 * q * d * d / n ** 3
    e = 0.5 * math.exp(-u)
    de = -e * du
    d2e = e * (du * du - d2u)
    if c * n - d >= 0:
        return 1.0 - e, -de, -d2e
    return e, de, d2e


def _feedback_success_approx(k, n, snr):
    # 1 - eps~ with eps~ = exp(-v) / 2, v = exp(w), w = ln(3 / (2 (4^k - 1))) + n ln a.
    a = snr + 1.0 - 1.0 / n
    m = n * (snr + 1.0) - 1.0
    w = LN3 - LN2 - log_pow4_minus_one(k) + n * math.log(a)
    if w > _LOG_V_SATURATION:
        return 1.0, 0.0, 0.0
    dw = math.log(a) + 1.0 / m
    d2w = 1.0 / (n * m) - (snr + 1.0) / (m * m)
    v = math.exp(w)
    dv = v * dw
    d2v = v * (d2w + dw * dw)
    eps = 0.5 * math.exp(-v)
    return 1.0 - eps, eps * dv, -eps * (dv * dv - d2v)


def approx_throughput_derivs(k: float, n: float, link: DeviceLink) -> ApproxValue:
    """Approximate throughput and its first two derivatives in ``n``."""
    if n < 1:
        raise ConfigError(f"blocklength must be >= 1, got {n}")
    p = link.block_prob
    value = d1 = d2 = 0.0
    if p > 0:
        s, ds, d2s = _forward_success_approx(k, n, link.snr)
        value, d1, d2 = p * s, p * ds, p * d2s
    if p < 1:
        w = (1.0 - p) * (1.0 - link.feedback_cost)
        g, dg, d2g = _feedback_success_approx(k, n, link.snr)
        value, d1, d2 = value + w * g, d1 + w * dg, d2 + w * d2g
    scale = k / link.duration
    return ApproxValue(scale * value, scale * d1, scale * d2)


def approx_throughput(k: float, n: float, link: DeviceLink) -> float:
    """Throughput with both PERs replaced by their exponential approximations."""
    return approx_throughput_derivs(k, n, link).value


@dataclass(frozen=True)
class AllocationProblem:
    ks: Tuple[float, ...]
    links: Tuple[DeviceLink, ...]
    n_total: float

    def __post_init__(self):
        object.__setattr__(self, "ks", tuple(float(k) for k in self.ks))
        object.__setattr__(self, "links", tuple(self.links))
        if len(self.ks) != len(self.links) or not self.ks:
            raise ConfigError("need one payload per device and at least one device")
        if any(k < 1 for k in self.ks):
            raise ConfigError("payloads must be >= 1")
        if self.n_total < len(self.ks):
            raise ConfigError(f"n_total={self.n_total} cannot give each of "
                              f"{len(self.ks)} devices at least one symbol")

    @property
    def size(self) -> int:
        return len(self.ks)

    def bounds(self) -> List[float]:
        return [branch_bound(k, link.snr) for k, link in zip(self.ks, self.links)]

    def objective(self, n: Sequence[float]) -> float:
        total = 0.0
        for k, link, ni in zip(self.ks, self.links, n):
            r = approx_throughput(k, ni, link)
            if r <= 0:
                return -math.inf
            total += math.log(r)
        return total


@dataclass(frozen=True)
class SurrogateState:
    """Concave quadratic minorant ``value + grad d + rho/2 d^2`` around ``n0``."""

    n0: float
    value: float
    grad: float
    rho: float
    iteration: int = 0

    def __call__(self, n):
        d = n - self.n0
        return self.value + self.grad * d + 0.5 * self.rho * d * d

    @classmethod
    def build(cls, k, n0, link, iteration=0):
        r, dr, d2r = approx_throughput_derivs(k, n0, link)
        return cls(n0, r, dr, min(d2r, 0.0), iteration)


class InnerSolution(NamedTuple):
    n: np.ndarray
    nu: float
    fallback: bool


def _positive_interval(value, grad, rho):
    """Offsets d around n0 where the surrogate stays positive (open interval)."""
    if rho == 0.0:
        if grad > 0:
            return -value / grad, math.inf
        if grad < 0:
            return -math.inf, -value / grad
        return -math.inf, math.inf
    disc = math.sqrt(grad * grad - 2.0 * rho * value)
    r1 = (-grad + disc) / rho
    r2 = (-grad - disc) / rho
    return min(r1, r2), max(r1, r2)


def _responses(nu, v, g, rho, dlo, dhi, phi_lo, phi_hi):
    """Per-device maximizer of ln(surrogate) - nu * n, as offsets from n0."""
    out = np.empty_like(v)
    for i in range(len(v)):
        if phi_lo[i] <= nu:
            out[i] = dlo[i]
            continue
        if phi_hi[i] >= nu:
            out[i] = dhi[i]
            continue
        # (nu rho / 2) d^2 + (nu g - rho) d + (nu v - g) = 0
        a2, a1, a0 = 0.5 * nu * rho[i], nu * g[i] - rho[i], nu * v[i] - g[i]
        if abs(a2) <= 1e-14 * (abs(a1) + abs(a0)):
            roots = (-a0 / a1,)
        else:
            disc = math.sqrt(max(a1 * a1 - 4.0 * a2 * a0, 0.0))
            qq = -0.5 * (a1 + math.copysign(disc, a1))
            roots = (qq / a2, a0 / qq) if qq != 0 else (-a1 / (2 * a2),)
        best = min(roots, key=lambda d: max(dlo[i] - d, d - dhi[i], 0.0))
        out[i] = min(max(best, dlo[i]), dhi[i])
    return out


def _project_simplex_box(y, lo, hi, total):
    """Euclidean projection onto {sum = total, lo <= x <= hi}."""
    def excess(tau):
        return float(np.clip(y - tau, lo, hi).sum() - total)
    a = float(np.min(y - hi)) - 1.0
    b = float(np.max(y - lo)) + 1.0
    tau = brentq(excess, a, b, xtol=1e-14, rtol=1e-15, maxiter=500)
    return np.clip(y - tau, lo, hi)


def _projected_gradient(states, n_total, lo, hi, iters=500):
    """Diminishing-step projected ascent on sum(ln surrogate); the slow fallback."""
    n = np.array([s.n0 for s in states])
    base_step = n_total / len(states)
    for t in range(1, iters + 1):
        vals = np.maximum([s(x) for s, x in zip(states, n)], 1e-300)
        grad = np.array([s.grad + s.rho * (x - s.n0) for s, x in zip(states, n)]) / vals
        step = base_step / math.sqrt(t) / max(1.0, float(np.abs(grad).max()))
        trial = _project_simplex_box(n + step * grad, lo, hi, n_total)
        if all(s(x) > 0 for s, x in zip(states, trial)):
            n = trial
    return n


def solve_inner_surrogate(states: Sequence[SurrogateState], n_total: float,
                          bounds: Sequence[Tuple[float, float]]) -> InnerSolution:
    """Maximize sum(ln surrogate_i(n_i)) s.t. sum(n) = n_total and box bounds.

    KKT: every device strictly inside its box has
    surrogate_i'(n_i) / surrogate_i(n_i) = nu. The common multiplier ``nu`` is
    found by root bracketing; each device's response to a given ``nu`` is the
    root of a quadratic. Devices whose surrogate is nonpositive at their
    expansion point are pinned to the box endpoint with the larger surrogate.
    """
    m = len(states)
    v = np.array([s.value for s in states], dtype=float)
    g = np.array([s.grad for s in states], dtype=float)
    rho = np.array([s.rho for s in states], dtype=float)
    n0 = np.array([s.n0 for s in states], dtype=float)
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)

    if m == 1:
        return InnerSolution(np.array([min(max(n_total, lo[0]), hi[0])]), 0.0, False)

    pinned = v <= 0
    dlo = lo - n0
    dhi = hi - n0
    for i in range(m):
        if pinned[i]:
            dlo[i] = dhi[i] = dhi[i] if states[i](hi[i]) > states[i](lo[i]) else dlo[i]
            continue
        plo, phi = _positive_interval(v[i], g[i], rho[i])
        margin = 1e-12 * (1.0 + abs(n0[i]))
        dlo[i] = max(dlo[i], plo + margin)
        dhi[i] = min(dhi[i], phi - margin)

    def slope(i, d):
        return (g[i] + rho[i] * d) / (v[i] + g[i] * d + 0.5 * rho[i] * d * d)

    free = ~pinned
    phi_lo = np.array([slope(i, dlo[i]) if free[i] else math.inf for i in range(m)])
    phi_hi = np.array([slope(i, dhi[i]) if free[i] else -math.inf for i in range(m)])
    # Pinned devices answer every nu with their fixed offset.
    phi_lo[pinned] = -math.inf
    phi_hi[pinned] = math.inf
    target = n_total - n0.sum()

    def excess(nu):
        return float(_responses(nu, v, g, rho, dlo, dhi, phi_lo, phi_hi).sum() - target)

    finite = np.concatenate([phi_lo[free], phi_hi[free]])
    finite = finite[np.isfinite(finite)]
    a = float(finite.min()) if finite.size else -1.0
    b = float(finite.max()) if finite.size else 1.0
    a -= 1.0 + abs(a)
    b += 1.0 + abs(b)
    fa, fb = excess(a), excess(b)
    if not (fa >= 0 >= fb):
        n = _projected_gradient(states, n_total, lo, hi)
        return InnerSolution(n, math.nan, True)
    if fa == 0:
        nu = a
    elif fb == 0:
        nu = b
    else:
        nu = brentq(excess, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    d = _responses(nu, v, g, rho, dlo, dhi, phi_lo, phi_hi)
    n = n0 + d
    _fix_residual(n, lo, hi, n_total)
    return InnerSolution(n, float(nu), False)


def _fix_residual(n, lo, hi, n_total):
    """Push the last rounding residual of sum(n) onto devices with slack."""
    for _ in range(3):
        resid = n_total - float(n.sum())
        if resid == 0.0:
            return
        room = (hi - n) if resid > 0 else (n - lo)
        order = np.argsort(-room)
        for i in order:
            shift = math.copysign(min(abs(resid), room[i]), resid)
            n[i] += shift
            resid -= shift
            if resid == 0.0:
                break


@dataclass
class SCAStep:
    iteration: int
    objective: float
    improvement: float
    step: float
    backtracks: int
    surrogate_violation: bool
    displacement: float
    nu: float
    fallback: bool = False


@dataclass
class SCAResult:
    n: np.ndarray
    objective: float
    converged: bool
    trace: List[SCAStep] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.trace)


def _box(side, bound, n_total):
    if side == "full":
        return 1.0, float(n_total)
    if side == "P1":
        return 1.0, min(max(bound, 1.0), float(n_total))
    return min(max(bound, 1.0), float(n_total)), float(n_total)


def _side(ni, bound, link, preferred):
    """Branch box of one device for the coming iteration."""
    if link.block_prob == 0.0:
        # No forward term, hence no seam.
        return "full"
    if bound <= 1.0:
        return "P2"
    if abs(ni - bound) <= _SEAM_TOL * max(1.0, bound):
        return preferred
    return "P1" if ni < bound else "P2"


def sca_allocate(problem: AllocationProblem, cfg: Optional[SolverConfig] = None,
                 init: Optional[Sequence[float]] = None) -> SCAResult:
    """Maximize sum(ln r~_l(n_l)) over the symbol split at fixed payloads."""
    cfg = cfg or SolverConfig()
    m, n_total = problem.size, float(problem.n_total)
    if m == 1:
        n = np.array([n_total])
        return SCAResult(n, problem.objective(n), True, [])

    if init is None:
        n = np.full(m, n_total / m)
    else:
        n = np.asarray(init, dtype=float).copy()
        if n.shape != (m,) or np.any(n < 1) or abs(n.sum() - n_total) > 1e-9 * n_total:
            raise ConfigError("initial split must be feasible")
        _fix_residual(n, np.ones(m), np.full(m, n_total), n_total)

    values = [approx_throughput(k, ni, link)
              for k, ni, link in zip(problem.ks, n, problem.links)]
    if all(r <= 0 for r in values):
        raise DegenerateInputError(
            "approximate throughput is numerically zero for every device",
            devices=range(m))

    bounds = problem.bounds()
    preferred = ["P2"] * m
    obj = problem.objective(n)
    trace: List[SCAStep] = []
    converged = False
    for it in range(1, cfg.max_iter + 1):
        sides = [_side(ni, b, link, pref)
                 for ni, b, link, pref in zip(n, bounds, problem.links, preferred)]
        boxes = [_box(s, b, n_total) for s, b in zip(sides, bounds)]
        states = [SurrogateState.build(k, ni, link, it)
                  for k, ni, link in zip(problem.ks, n, problem.links)]
        inner = solve_inner_surrogate(states, n_total, boxes)
        target = inner.n

        step, backtracks, accepted = 1.0, 0, None
        violation = False
        while backtracks <= 40:
            cand = n + step * (target - n)
            _fix_residual(cand, np.array([b[0] for b in boxes]),
                          np.array([b[1] for b in boxes]), n_total)
            cand_obj = problem.objective(cand)
            if backtracks == 0:
                # Full steps must also respect the minorant property.
                violation = any(
                    s(c) > approx_throughput(k, c, link) + 1e-9
                    for s, c, k, link in zip(states, cand, problem.ks, problem.links))
                ok = cand_obj >= obj and not violation
            else:
                ok = cand_obj >= obj
            if ok:
                accepted = cand
                break
            step *= 0.5
            backtracks += 1

        # Devices parked on their seam get the branch their KKT pull points to.
        seam_flip = False
        if math.isfinite(inner.nu):
            for i in range(m):
                at_seam = abs(target[i] - bounds[i]) <= _SEAM_TOL * max(1.0, bounds[i])
                if not at_seam or sides[i] == "full":
                    continue
                r, dr, _ = approx_throughput_derivs(problem.ks[i], bounds[i], problem.links[i])
                want = "P2" if r > 0 and dr / r > inner.nu else "P1"
                if want != sides[i]:
                    seam_flip = True
                preferred[i] = want

        if accepted is None:
            trace.append(SCAStep(it, obj, 0.0, 0.0, backtracks, violation, 0.0,
                                 inner.nu, inner.fallback))
            if not seam_flip:
                converged = True
                break
            continue

        improvement = cand_obj - obj
        displacement = float(np.abs(accepted - n).max())
        n, obj = accepted, cand_obj
        trace.append(SCAStep(it, obj, improvement, step, backtracks, violation,
                             displacement, inner.nu, inner.fallback))
        if improvement < cfg.tol_obj and not seam_flip:
            converged = True
            break
    return SCAResult(n, obj, converged, trace)
