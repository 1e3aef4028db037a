"""Joint payload/symbol planning for a set of devices sharing N uplink symbols.

The relaxed problem is solved by alternating between the per-device payload
optimum (exact throughput) and the SCA symbol split (approximate
throughput). The continuous answer is then rounded by enumerating
floor/ceil candidates and scoring them with the exact objective.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import SolverConfig
from .errors import CombinatorialCapError, ConfigError
from .linkmath import DeviceLink, DeviceReport, throughput
from .payload import PayloadProblem, optimal_payload
from .symbols import AllocationProblem, sca_allocate

log = logging.getLogger(__name__)

_INT_SNAP = 1e-9
_MAX_HALVINGS = 8
_MAX_EXTRAPOLATIONS = 30


@dataclass(frozen=True)
class NetworkProblem:
    links: Tuple[DeviceLink, ...]
    n_total: int
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        if not self.links:
            raise ConfigError("need at least one device")
        if self.n_total < len(self.links):
            raise ConfigError(f"n_total={self.n_total} is smaller than the number "
                              f"of devices ({len(self.links)})")

    @property
    def size(self) -> int:
        return len(self.links)

    def with_block_prob(self, p: float) -> "NetworkProblem":
        """Same problem with every optical link blocked with probability ``p``."""
        return NetworkProblem(tuple(l.replace(block_prob=p) for l in self.links),
                              self.n_total, self.solver)


@dataclass(frozen=True)
class Allocation:
    k: Tuple[float, ...]
    n: Tuple[float, ...]
    integral: bool
    objective: float
    converged: bool = True
    iterations: int = 0
    history: Tuple[float, ...] = ()

    def to_dict(self) -> dict:
        as_num = int if self.integral else float
        return {
            "k": [as_num(v) for v in self.k],
            "n": [as_num(v) for v in self.n],
            "integral": self.integral,
            "objective": self.objective,
            "converged": self.converged,
            "iterations": self.iterations,
        }


@dataclass(frozen=True)
class ThroughputReport:
    devices: Tuple[DeviceReport, ...]
    objective: float

    def to_dict(self) -> dict:
        rows = []
        for d in self.devices:
            rows.append({
                "k": d.k, "n": d.n,
                "per_forward": d.per_forward,
                "per_feedback": d.per_feedback if d.per_feedback is not None else "unused",
                "r_forward": d.r_forward,
                "r_feedback": d.r_feedback if d.r_feedback is not None else "unused",
                "r": d.r,
                "saturated": d.saturated,
                "clamped": d.clamped,
            })
        return {"devices": rows, "objective": self.objective}


def exact_objective(k: Sequence[float], n: Sequence[float],
                    links: Sequence[DeviceLink]) -> float:
    total = 0.0
    for ki, ni, link in zip(k, n, links):
        r = throughput(ki, ni, link).r
        if r <= 0:
            return -math.inf
        total += math.log(r)
    return total


def evaluate(alloc: Allocation, problem: NetworkProblem) -> ThroughputReport:
    """Per-device PERs and rates plus the sum-log objective, all exact."""
    devices = tuple(throughput(k, n, link)
                    for k, n, link in zip(alloc.k, alloc.n, problem.links))
    total = sum(d.log_r for d in devices)
    return ThroughputReport(devices, total)


def _payload_step(n, links, cfg):
    return [optimal_payload(PayloadProblem(ni, link), tol=cfg.k_tol).k_star
            for ni, link in zip(n, links)]


def _initial_split(problem):
    cfg, m, total = problem.solver, problem.size, float(problem.n_total)
    if cfg.init_split is None:
        return np.full(m, total / m)
    n = np.asarray(cfg.init_split, dtype=float)
    if n.shape != (m,) or np.any(n < 1) or abs(n.sum() - total) > 1e-9 * total:
        raise ConfigError("init_split must give every device >= 1 symbol and sum to n_total")
    return n


def _trial_split(n, direction, scale):
    """``n + scale * direction``, snapped back onto the feasible set.

    Long steps can leave a device a hair under one symbol or shift the total
    by a few ulps; both are corrected so the SCA accepts the point as a start.
    """
    n_try = np.maximum(n + scale * direction, 1.0)
    big = int(np.argmax(n_try))
    n_try[big] += n.sum() - n_try.sum()
    return n_try


def _line_search(n, direction, obj, links, cfg, strict=False):
    """Halve (or, if the full step works, stretch) a move until it pays off.

    Every trial split gets freshly optimized payloads and is judged by the
    exact objective. Returns ``(n, k, objective)`` or None.
    """
    step = 1.0
    for _ in range(_MAX_HALVINGS + 1):
        n_try = _trial_split(n, direction, step)
        if np.all(n + step * direction >= 1.0 - 1e-9):
            k_try = _payload_step(n_try, links, cfg)
            obj_try = exact_objective(k_try, n_try, links)
            if obj_try > obj or (obj_try == obj and not strict):
                found = (n_try, k_try, obj_try)
                if step == 1.0:
                    found = _extrapolate(n, direction, found, links, cfg)
                return found
        step *= 0.5
    return None


def _extrapolate(n, direction, accepted, links, cfg):
    """Keep doubling a full step while the exact objective keeps rising.

    At fixed payloads the symbol step is short: shrinking a device's
    blocklength under an unchanged payload falls off the feedback PER cliff.
    The payload step then moves the cliff, so the loop creeps along a ridge.
    Following the same direction with payloads re-optimized at every trial
    point walks that ridge in a few evaluations.
    """
    neg = direction < 0
    # Largest multiple of ``direction`` that keeps every device at n >= 1.
    limit = float(np.min((n[neg] - 1.0) / -direction[neg])) if neg.any() else 1.0
    best = accepted
    scale = 2.0
    for _ in range(_MAX_EXTRAPOLATIONS):
        if scale > limit:
            break
        n_try = _trial_split(n, direction, scale)
        k_try = _payload_step(n_try, links, cfg)
        obj_try = exact_objective(k_try, n_try, links)
        if obj_try <= best[2]:
            break
        best = (n_try, k_try, obj_try)
        scale *= 2.0
    return best


def alternating_solve(problem: NetworkProblem) -> Allocation:
    """Continuous (relaxed) allocation by alternating symbol and payload steps.

    The SCA symbol split is proposed at fixed payloads, then payloads are
    re-optimized for the proposed split. The pair is accepted only if the
    exact objective does not drop; otherwise the proposal is halved toward
    the current split (at most ``_MAX_HALVINGS`` times), or stretched while
    that keeps paying off. If no fraction of the proposal helps, the mirrored
    move gets one try before the loop stops. Payloads sit on the steep edge
    of the feedback PER, so judging the split before the payload step would
    reject nearly every move.
    """
    cfg, links = problem.solver, problem.links
    n = _initial_split(problem)
    k = _payload_step(n, links, cfg)
    obj = exact_objective(k, n, links)
    history = [obj]
    converged = problem.size == 1
    it = 0
    while not converged and it < cfg.max_outer:
        it += 1
        proposal = sca_allocate(AllocationProblem(k, links, problem.n_total), cfg, init=n).n
        direction = proposal - n
        accepted = _line_search(n, direction, obj, links, cfg)
        if accepted is None:
            # The surrogate works on the approximate throughput and can point
            # the wrong way for the exact one; try the mirrored move once.
            accepted = _line_search(n, -direction, obj, links, cfg, strict=True)
        if accepted is None:
            converged = True
            break
        improvement = accepted[2] - obj
        n, k, obj = accepted
        history.append(obj)
        if improvement < cfg.tol_obj:
            converged = True
    if not converged:
        log.warning("alternating optimization hit max_outer=%d without converging",
                    cfg.max_outer)
    return Allocation(tuple(float(v) for v in k), tuple(float(v) for v in n), False,
                      obj, converged, it, tuple(history))


def _snap(x):
    r = round(x)
    return float(r) if abs(x - r) <= _INT_SNAP * max(1.0, abs(x)) else x


def _int_options(x):
    x = _snap(x)
    lo, hi = math.floor(x), math.ceil(x)
    return (max(lo, 1),) if lo == hi or hi <= 1 else (max(lo, 1), hi)


def _best_integer_payload(n, link, options):
    best, best_r = None, -math.inf
    for k in options:
        r = throughput(float(k), float(n), link).r
        if r > best_r:
            best, best_r = k, r
    return best, best_r


def _rescan_options(n, link, cfg):
    # r(k) is unimodal, so the best integer neighbours the continuous optimum.
    k_star = optimal_payload(PayloadProblem(float(n), link), tol=cfg.k_tol).k_star
    return _int_options(k_star)


def _repair(n_cont, total):
    """Largest-remainder rounding of n so that it sums to ``total``."""
    base = [max(1, math.floor(_snap(x))) for x in n_cont]
    resid = total - sum(base)
    frac = [x - b for x, b in zip(n_cont, base)]
    order = sorted(range(len(base)), key=lambda i: -frac[i]) if resid > 0 else \
        sorted(range(len(base)), key=lambda i: frac[i])
    step = 1 if resid > 0 else -1
    while resid != 0:
        moved = False
        for i in order:
            if resid == 0:
                break
            if step < 0 and base[i] <= 1:
                continue
            base[i] += step
            resid -= step
            moved = True
        if not moved:
            raise ConfigError("cannot repair rounding: every device is at n = 1")
    return base


def round_to_integers(cont: Allocation, problem: NetworkProblem) -> Allocation:
    """Best floor/ceil rounding of a continuous allocation under the exact objective.

    The objective is separable across devices once the symbol split is fixed,
    so scoring every symbol combination with each device's better payload
    rounding selects the same candidate as scoring all 2^(2L) combinations.
    """
    cfg, links, total = problem.solver, problem.links, problem.n_total
    m = problem.size
    if m > cfg.max_enum_devices:
        raise CombinatorialCapError(
            f"{m} devices exceed the rounding enumeration cap of {cfg.max_enum_devices}; "
            "use round_per_device() for independent per-device rounding instead")
    if cont.integral:
        return cont

    n_opts = [_int_options(x) for x in cont.n]
    k_opts = [_int_options(x) for x in cont.k]
    cache = {}
    # The rescan widens each candidate's payload choices with the integers
    # around k*(n) at that candidate n, so selection sees the rescanned k.
    rescan = cfg.rounding == "paper_enum_plus_k_rescan"

    def device_best(i, ni):
        key = (i, ni)
        if key not in cache:
            opts = k_opts[i]
            if rescan:
                opts = sorted(set(opts) | set(_rescan_options(ni, links[i], cfg)))
            cache[key] = _best_integer_payload(ni, links[i], opts)
        return cache[key]

    best = None
    for combo in itertools.product(*n_opts):
        if sum(combo) != total:
            continue
        picks = [device_best(i, ni) for i, ni in enumerate(combo)]
        obj = sum(math.log(r) if r > 0 else -math.inf for _, r in picks)
        if best is None or obj > best[0]:
            best = (obj, [kk for kk, _ in picks], list(combo))
    if best is None:
        combo = _repair(cont.n, total)
        picks = [device_best(i, ni) for i, ni in enumerate(combo)]
        best = (exact_objective([kk for kk, _ in picks], combo, links),
                [kk for kk, _ in picks], combo)

    obj, ks, ns = best
    return Allocation(tuple(int(v) for v in ks), tuple(int(v) for v in ns), True,
                      exact_objective(ks, ns, links), cont.converged, cont.iterations,
                      cont.history)


def round_per_device(cont: Allocation, problem: NetworkProblem) -> Allocation:
    """Rounding fallback for large networks: largest-remainder n, best k per device."""
    ns = _repair(cont.n, problem.n_total)
    ks = [_best_integer_payload(ni, link, _int_options(ki))[0]
          for ni, ki, link in zip(ns, cont.k, problem.links)]
    return Allocation(tuple(ks), tuple(ns), True, exact_objective(ks, ns, problem.links),
                      cont.converged, cont.iterations, cont.history)


@dataclass(frozen=True)
class PlanResult:
    continuous: Allocation
    integral: Allocation
    report: ThroughputReport


def solve(problem: NetworkProblem) -> PlanResult:
    """Relax, alternate, round, and report."""
    cont = alternating_solve(problem)
    if problem.size > problem.solver.max_enum_devices:
        integral = round_per_device(cont, problem)
    else:
        integral = round_to_integers(cont, problem)
    return PlanResult(cont, integral, evaluate(integral, problem))
