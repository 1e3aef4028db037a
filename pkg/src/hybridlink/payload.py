"""Optimal payload size of one device at a fixed blocklength.

The throughput is unimodal in the payload, so the maximizer is the unique
sign change of its derivative. A closed-form root of a quadratic that
governs the curvature of the forward-mode derivative gives the starting
point; a doubling bracket and bisection on the exact derivative finish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

from .errors import ConfigError
from .linkmath import (LN3, DeviceLink, LogScalar, dispersion_scale, log_feedback_power,
                       rate, throughput_dk)

# sqrt(2/pi) + 1
H_CONSTANT = math.sqrt(2.0 / math.pi) + 1.0


def default_k_max(n: float, snr: float) -> int:
    return math.ceil(n * math.log2(1.0 + snr)) + 64


@dataclass(frozen=True)
class PayloadProblem:
    n: float
    link: DeviceLink
    k_max: Optional[float] = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"blocklength must be >= 1, got {self.n}")
        if self.k_max is None:
            object.__setattr__(self, "k_max", float(default_k_max(self.n, self.link.snr)))
        if self.k_max < 1:
            raise ConfigError(f"k_max must be >= 1, got {self.k_max}")


@dataclass(frozen=True)
class DerivedConstants:
    """Constants of the payload derivative at fixed blocklength and SNR.

    ``a`` is 3 (snr + (n-1)/n)^n in log form, ``b`` the forward PER spread,
    ``c`` the forward capacity in bits and ``lam = c / b``.
    """

    a: LogScalar
    b: float
    c: float

    @classmethod
    def for_problem(cls, n: float, snr: float) -> "DerivedConstants":
        return cls(LogScalar(LN3 + log_feedback_power(n, snr)),
                   dispersion_scale(n, snr), n * math.log2(1.0 + snr))

    @property
    def lam(self) -> float:
        return self.c / self.b

    def z_of_k(self, k: float) -> float:
        return (2.0 * k - self.c) / self.b

    def k_of_z(self, z: float) -> float:
        return 0.5 * (self.b * z + self.c)


def h_poly(z: float, lam: float) -> float:
    return z * z + lam * z - H_CONSTANT


def h_root(lam: float) -> float:
    """Positive root of z^2 + lam z - sqrt(2/pi) - 1."""
    if lam < 0:
        raise ConfigError(f"lambda must be nonnegative, got {lam}")
    # Rationalized form avoids cancellation for large lambda.
    return 2.0 * H_CONSTANT / (lam + math.sqrt(lam * lam + 4.0 * H_CONSTANT))


class PayloadResult(NamedTuple):
    k_star: float
    r_star: float


def _bracket(dk, k0, lo_bound, hi_bound):
    """Find [lo, hi] with dk(lo) > 0 >= dk(hi), stepping geometrically from k0.

    Returns None when the derivative does not change sign inside the bounds.
    """
    d0 = dk(k0)
    step = 1.0
    if d0 > 0:
        lo = k0
        while True:
            hi = min(k0 + step, hi_bound)
            if dk(hi) <= 0:
                return lo, hi
            if hi >= hi_bound:
                return None
            lo = hi
            step *= 2.0
    hi = k0
    while True:
        lo = max(k0 - step, lo_bound)
        if dk(lo) > 0:
            return lo, hi
        if lo <= lo_bound:
            return None
        hi = lo
        step *= 2.0


def optimal_payload(problem: PayloadProblem, tol: float = 1e-9) -> PayloadResult:
    """Throughput-maximizing real payload in [1, k_max] at fixed blocklength."""
    n, link, k_max = problem.n, problem.link, problem.k_max
    if k_max == 1.0:
        return PayloadResult(1.0, rate(1.0, n, link))
    consts = DerivedConstants.for_problem(n, link.snr)
    k0 = min(max(consts.k_of_z(h_root(consts.lam)), 1.0), k_max)

    def dk(k):
        return throughput_dk(k, n, link)

    candidates = [1.0, k_max]
    bracket = _bracket(dk, k0, 1.0, k_max)
    if bracket is not None:
        lo, hi = bracket
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if dk(mid) > 0:
                lo = mid
            else:
                hi = mid
        candidates.insert(0, 0.5 * (lo + hi))
    # Interior stationary point first so exact ties favour it.
    best = max(candidates, key=lambda k: rate(k, n, link))
    return PayloadResult(best, rate(best, n, link))


class UnimodalityReport(NamedTuple):
    local_maxima: int
    maxima_at: tuple


def unimodality_probe(problem: PayloadProblem) -> UnimodalityReport:
    """Count strict local maxima of r(k) over k = 1..k_max, merging plateaus."""
    n, link = problem.n, problem.link
    values = [rate(float(k), n, link) for k in range(1, int(problem.k_max) + 1)]
    # Collapse runs of equal values so a flat top counts once.
    runs = []
    for k, v in enumerate(values, start=1):
        if runs and runs[-1][1] == v:
            continue
        runs.append((k, v))
    maxima = []
    for i, (k, v) in enumerate(runs):
        left_ok = i == 0 or runs[i - 1][1] < v
        right_ok = i == len(runs) - 1 or runs[i + 1][1] < v
        if left_ok and right_ok:
            maxima.append(k)
    return UnimodalityReport(len(maxima), tuple(maxima))
