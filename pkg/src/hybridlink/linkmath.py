"""Packet error rates and throughput of a single uplink.

Everything here is a pure function of scalar inputs. Payload ``k`` (bits) and
blocklength ``n`` (channel symbols) may be real-valued so the relaxed
allocation problem can use the same formulas as the integer one.

The feedback-mode PER involves ``(snr + (n-1)/n) ** n`` and ``4 ** k``, which
overflow doubles for blocklengths in the hundreds; its Q-function argument is
therefore assembled in the log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import log_ndtr

from .errors import DomainError

LOG2E = math.log2(math.e)
LN2 = math.log(2.0)
LN3 = math.log(3.0)
LN4 = math.log(4.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Q(40) < 1e-300: beyond this the tail is reported as an exact zero.
Q_SATURATION = 40.0
LOG_Q_SATURATION = math.log(Q_SATURATION)


@dataclass(frozen=True)
class DeviceLink:
    """Uplink parameters of one device.

    ``snr`` is linear, ``block_prob`` is the probability that the optical
    downlink (and hence feedback) is unavailable, ``feedback_cost`` is the
    payload fraction lost to feedback signalling and ``duration`` the frame
    length in seconds.
    """

    snr: float
    block_prob: float = 0.0
    feedback_cost: float = 0.0
    duration: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.snr) and self.snr > 0):
            raise DomainError(f"snr must be positive and finite, got {self.snr}")
        if not 0.0 <= self.block_prob <= 1.0:
            raise DomainError(f"block_prob must lie in [0, 1], got {self.block_prob}")
        if not 0.0 <= self.feedback_cost < 1.0:
            raise DomainError(f"feedback_cost must lie in [0, 1), got {self.feedback_cost}")
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise DomainError(f"duration must be positive, got {self.duration}")

    def replace(self, **changes) -> "DeviceLink":
        fields = dict(snr=self.snr, block_prob=self.block_prob,
                      feedback_cost=self.feedback_cost, duration=self.duration)
        fields.update(changes)
        return DeviceLink(**fields)


@dataclass(frozen=True)
class FadingModel:
    """Average received SNR of a device and how realizations are drawn."""

    mean_snr: float
    distribution: str = "rayleigh"

    def __post_init__(self):
        if not self.mean_snr > 0:
            raise DomainError(f"mean_snr must be positive, got {self.mean_snr}")
        if self.distribution not in ("rayleigh", "fixed"):
            raise DomainError(f"unknown fading distribution {self.distribution!r}")


@dataclass(frozen=True)
class LogScalar:
    """Nonnegative number stored as its natural log; ``-inf`` encodes zero."""

    log: float

    @classmethod
    def from_value(cls, value: float) -> "LogScalar":
        if value < 0:
            raise DomainError("LogScalar holds nonnegative values only")
        return cls(math.log(value) if value > 0 else -math.inf)

    @property
    def is_zero(self) -> bool:
        return self.log == -math.inf

    def exp(self) -> float:
        """Plain float value; ``inf`` when it does not fit in a double."""
        if self.log > 709.78:
            return math.inf
        return math.exp(self.log)

    def __mul__(self, other: "LogScalar") -> "LogScalar":
        return LogScalar(self.log + other.log)


class TailValue(NamedTuple):
    value: float
    saturated: bool


class PerValue(NamedTuple):
    value: float
    saturated: bool = False
    clamped: bool = False


class Slope(NamedTuple):
    value: float
    saturated: bool


@dataclass(frozen=True)
class DeviceReport:
    """Per-device entry of a throughput report.

    ``per_feedback`` and ``r_feedback`` are ``None`` for a device whose
    optical link is always blocked, since feedback mode is then never used.
    """

    k: float
    n: float
    per_forward: float
    per_feedback: Optional[float]
    r_forward: float
    r_feedback: Optional[float]
    r: float
    saturated: bool = False
    clamped: bool = False

    @property
    def log_r(self) -> float:
        return math.log(self.r) if self.r > 0 else -math.inf


def _check_finite(x):
    if not math.isfinite(x):
        raise DomainError(f"argument must be finite, got {x}")


def _check_kn(k, n):
    if not n > 0:
        raise DomainError(f"blocklength must be positive, got n={n}")
    if not k > 0:
        raise DomainError(f"payload must be positive, got k={k}")


def q_tail_eval(x: float) -> TailValue:
    _check_finite(x)
    if x > Q_SATURATION:
        return TailValue(0.0, True)
    return TailValue(0.5 * math.erfc(x / math.sqrt(2.0)), False)


def q_tail(x: float) -> float:
    """Standard Gaussian tail probability Q(x)."""
    return q_tail_eval(x).value


def q_tail_approx(x: float) -> float:
    """Exponential (Chernoff-type) approximation of Q(x)."""
    _check_finite(x)
    half = 0.5 * math.exp(-0.5 * x * x)
    return half if x >= 0 else 1.0 - half


def _pdf(x):
    if abs(x) > Q_SATURATION:
        return 0.0
    return INV_SQRT_2PI * math.exp(-0.5 * x * x)


def dispersion_scale(n: float, snr: float) -> float:
    """log2(e) * sqrt(2 n snr (snr + 2)) / (snr + 1), the PER spread in bits."""
    return LOG2E * math.sqrt(2.0 * n * snr * (snr + 2.0)) / (snr + 1.0)


def forward_argument(k: float, n: float, snr: float) -> float:
    """Argument of Q in the finite-blocklength PER (positive = below capacity)."""
    _check_kn(k, n)
    return (n * math.log2(1.0 + snr) - 2.0 * k) / dispersion_scale(n, snr)


def per_forward_eval(k: float, n: float, snr: float) -> PerValue:
    x = forward_argument(k, n, snr)
    tail = q_tail_eval(x)
    return PerValue(tail.value, tail.saturated)


def per_forward(k: float, n: float, snr: float) -> float:
    """PER of forward (no feedback) finite-blocklength coding."""
    return per_forward_eval(k, n, snr).value


def _forward_success(x):
    # 1 - Q(x) evaluated as Q(-x) to keep precision when the PER is near one.
    if x < -Q_SATURATION:
        return 0.0
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def log_feedback_power(n: float, snr: float) -> float:
    """ln((snr + (n-1)/n) ** n)."""
    return n * math.log(snr + 1.0 - 1.0 / n)


def log_pow4_minus_one(k: float) -> float:
    """ln(4**k - 1) without forming 4**k."""
    return k * LN4 + math.log1p(-math.exp(-k * LN4))


def feedback_log_argument(k: float, n: float, snr: float) -> float:
    """Natural log of the Q-function argument in the feedback-mode PER."""
    _check_kn(k, n)
    return 0.5 * (LN3 + log_feedback_power(n, snr) - log_pow4_minus_one(k))


def _feedback_factor(k):
    # (2^k - 1) / 2^(k-1)
    return 2.0 - 2.0 ** (1.0 - k)


def _feedback_success(k, s):
    # 1 - (2 - 2^(1-k)) Q(s) rewritten as 2^-k + (2 - 2^(1-k)) erf(s/sqrt2)/2,
    # which stays accurate when the PER approaches one.
    return 2.0 ** -k + _feedback_factor(k) * 0.5 * math.erf(s / math.sqrt(2.0))


def per_feedback_eval(k: float, n: float, snr: float) -> PerValue:
    log_s = feedback_log_argument(k, n, snr)
    if log_s > LOG_Q_SATURATION:
        return PerValue(0.0, saturated=True)
    tail = q_tail(math.exp(log_s))
    value = _feedback_factor(k) * tail
    if value > 1.0:
        return PerValue(1.0, clamped=True)
    return PerValue(value)


def per_feedback(k: float, n: float, snr: float) -> float:
    """PER of Schalkwijk-Kailath feedback coding."""
    return per_feedback_eval(k, n, snr).value


def per_forward_approx(k: float, n: float, snr: float) -> float:
    """Forward PER with Q replaced by its exponential approximation.

    The branch follows the sign of the Q argument, so the result is the
    approximation applied to exactly the argument used by ``per_forward``.
    The dispersion uses snr*(snr + 2) throughout; the ``snr**2 + 2`` that
    appears in some printed versions of this expression is a typo.
    """
    return q_tail_approx(forward_argument(k, n, snr))


def feedback_log_exponent(k: float, n: float, snr: float) -> float:
    """ln of 3 (snr + (n-1)/n)^n / (2 (4^k - 1)), the approximate-PER exponent."""
    _check_kn(k, n)
    return LN3 - LN2 + log_feedback_power(n, snr) - log_pow4_minus_one(k)


def per_feedback_approx(k: float, n: float, snr: float) -> float:
    """Feedback PER approximated as 0.5 * exp(-s^2 / 2)."""
    log_v = feedback_log_exponent(k, n, snr)
    if log_v > 6.62:  # exp(-e^6.62) underflows to zero
        return 0.0
    return 0.5 * math.exp(-math.exp(log_v))


def _check_link_inputs(k, n, link):
    _check_finite(k)
    _check_finite(n)
    _check_kn(k, n)
    if n < 1 or k < 1:
        raise DomainError(f"throughput needs k >= 1 and n >= 1, got k={k}, n={n}")


def _log_forward_success(x):
    if x < -Q_SATURATION:
        return -math.inf
    if x < -30.0:
        return float(log_ndtr(x))
    return math.log(0.5 * math.erfc(-x / math.sqrt(2.0)))


def _log_feedback_success(k, log_s):
    if log_s > LOG_Q_SATURATION:
        return 0.0
    if log_s < -20.0:
        # erf(s / sqrt2) / 2 ~ s / sqrt(2 pi) for tiny s; both terms may be far
        # below the smallest normal double, so add them in the log domain.
        return float(np.logaddexp(-k * LN2, math.log(_feedback_factor(k)) + log_s
                                  + math.log(INV_SQRT_2PI)))
    return math.log(_feedback_success(k, math.exp(log_s)))


def throughput(k: float, n: float, link: DeviceLink) -> DeviceReport:
    """Blockage-averaged uplink throughput of one device (bits per second)."""
    _check_link_inputs(k, n, link)
    x = forward_argument(k, n, link.snr)
    eps_f = q_tail_eval(x)
    log_k = math.log(k / link.duration)
    log_fs = _log_forward_success(x)
    # Tiny rates go through the log domain so they keep decreasing in k
    # instead of dissolving into denormal rounding noise.
    if log_fs > -600.0:
        r_forward = k * _forward_success(x) / link.duration
    else:
        r_forward = math.exp(log_k + log_fs)
    p = link.block_prob
    if p == 1.0:
        return DeviceReport(k, n, eps_f.value, None, r_forward, None, r_forward,
                            saturated=eps_f.saturated or log_fs == -math.inf)
    eps_b = per_feedback_eval(k, n, link.snr)
    cost = 1.0 - link.feedback_cost
    if eps_b.clamped:
        log_bs = -math.inf
    else:
        log_bs = _log_feedback_success(k, feedback_log_argument(k, n, link.snr))
    r_feedback = math.exp(log_k + log_bs + math.log(cost))
    if max(log_fs, log_bs) > -600.0:
        r = p * r_forward + (1.0 - p) * r_feedback
    else:
        terms = [log_k + log_bs + math.log(cost) + math.log(1.0 - p)]
        if p > 0:
            terms.append(log_k + log_fs + math.log(p))
        r = math.exp(float(np.logaddexp.reduce(terms)))
    return DeviceReport(k, n, eps_f.value, eps_b.value, r_forward, r_feedback, r,
                        saturated=eps_f.saturated or eps_b.saturated,
                        clamped=eps_b.clamped)


def rate(k: float, n: float, link: DeviceLink) -> float:
    """Shorthand for ``throughput(k, n, link).r``."""
    return throughput(k, n, link).r


def log_rate(k: float, n: float, link: DeviceLink) -> float:
    r = throughput(k, n, link).r
    return math.log(r) if r > 0 else -math.inf


def throughput_dk_eval(k: float, n: float, link: DeviceLink) -> Slope:
    _check_link_inputs(k, n, link)
    snr = link.snr
    scale = dispersion_scale(n, snr)
    x = (n * math.log2(1.0 + snr) - 2.0 * k) / scale
    saturated = abs(x) > Q_SATURATION
    # d eps_f / dk = 2 phi(x) / scale
    d_forward = _forward_success(x) - k * 2.0 * _pdf(x) / scale
    p = link.block_prob
    total = p * d_forward
    if p < 1.0:
        log_s = feedback_log_argument(k, n, snr)
        factor = _feedback_factor(k)
        if log_s > LOG_Q_SATURATION:
            success, d_eps_b = 1.0, 0.0
            saturated = True
        else:
            s = math.exp(log_s)
            tail = q_tail(s)
            success = _feedback_success(k, s)
            # ds/dk = -s ln2 / (1 - 4^-k); factor' = 2^(1-k) ln2
            d_eps_b = (2.0 ** (1.0 - k) * LN2 * tail
                       + factor * _pdf(s) * s * LN2 / -math.expm1(-k * LN4))
            if factor * tail > 1.0:
                success, d_eps_b = 0.0, 0.0
        d_feedback = success - k * d_eps_b
        total += (1.0 - p) * (1.0 - link.feedback_cost) * d_feedback
    return Slope(total / link.duration, saturated)


def throughput_dk(k: float, n: float, link: DeviceLink) -> float:
    """Exact derivative of the throughput with respect to the payload size."""
    return throughput_dk_eval(k, n, link).value
