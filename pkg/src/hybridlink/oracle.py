"""Exact integer reference solutions, for tests and acceptance runs only.

Once the symbol split is fixed the sum-log objective separates across
devices, and each device's best payload is found by scanning every integer.
The split itself is a knapsack with an equality constraint, solved by
dynamic programming over (device, symbols used).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .errors import BudgetExceededError
from .linkmath import DeviceLink, throughput
from .planner import Allocation, NetworkProblem, exact_objective


def k_max_for(n: int, snr: float) -> int:
    return math.ceil(n * math.log2(1.0 + snr)) + 64


def best_k_given_n(n: int, link: DeviceLink, k_max: Optional[int] = None) -> Tuple[int, float]:
    """Exhaustive scan of k = 1..k_max; returns (argmax, ln r), smallest k on ties."""
    if k_max is None:
        k_max = k_max_for(n, link.snr)
    best_k, best_v = 1, -math.inf
    for k in range(1, k_max + 1):
        r = throughput(float(k), float(n), link).r
        v = math.log(r) if r > 0 else -math.inf
        if v > best_v:
            best_k, best_v = k, v
    return best_k, best_v


@dataclass(frozen=True)
class OracleResult:
    allocation: Allocation
    objective: float
    # (device, n) -> (best k, ln r) for every cell the DP used
    table: Dict[Tuple[int, int], Tuple[int, float]]


def dp_optimal(problem: NetworkProblem, max_devices: int = 8,
               max_symbols: int = 512) -> OracleResult:
    """Global integer optimum of the sum-log problem."""
    m, total, links = problem.size, int(problem.n_total), problem.links
    if m > max_devices or total > max_symbols:
        raise BudgetExceededError(
            f"oracle budget is L <= {max_devices}, N <= {max_symbols}; "
            f"got L={m}, N={total}")
    cap = total - (m - 1)
    table = {(i, n): best_k_given_n(n, links[i])
             for i in range(m) for n in range(1, cap + 1)}

    # tail[i][s]: best objective of devices i..m-1 using exactly s symbols
    neg = -math.inf
    tail: List[List[float]] = [[neg] * (total + 1) for _ in range(m + 1)]
    tail[m][0] = 0.0
    for i in range(m - 1, -1, -1):
        for s in range(m - i, total + 1):
            best = neg
            for n in range(1, min(cap, s - (m - i - 1)) + 1):
                rest = tail[i + 1][s - n]
                if rest == neg:
                    continue
                v = table[(i, n)][1] + rest
                if v > best:
                    best = v
            tail[i][s] = best

    # Forward reconstruction picks the smallest n_i at every tie.
    ns, ks = [], []
    remaining = total
    for i in range(m):
        target = tail[i][remaining]
        for n in range(1, min(cap, remaining - (m - i - 1)) + 1):
            rest = tail[i + 1][remaining - n]
            if rest != neg and table[(i, n)][1] + rest == target:
                ns.append(n)
                ks.append(table[(i, n)][0])
                remaining -= n
                break
    obj = exact_objective(ks, ns, links)
    alloc = Allocation(tuple(ks), tuple(ns), True, obj)
    return OracleResult(alloc, obj, table)
