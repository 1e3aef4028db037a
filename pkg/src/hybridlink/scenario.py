"""Scenario configuration, fading draws, and sweep execution.

A scenario describes a device population (mean SNR in dB, blockage
probability), the shared symbol budget, and one sweep axis. Every sweep row
averages the sum-log throughput over Monte Carlo SNR draws for two systems:

* ``cbf``: feedback-capable system, solved by the planner under the actual
  blockage probabilities;
* ``baseline``: the same devices with feedback disabled (all p = 1).

Draw ``d`` always uses the generator seeded with ``(seed, d)``, so every grid
point sees the same channel realizations and the baseline column is constant
along p and zeta axes.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import SolverConfig
from .errors import ConfigError
from .linkmath import DeviceLink, FadingModel
from .planner import Allocation, NetworkProblem, evaluate, solve

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SWEEP_KINDS = ("p_grid", "p_slice", "device_count", "zeta_grid")
THREADS_ENV = "HYBRIDLINK_THREADS"

_BASE_COLUMNS = ["cbf_mean", "baseline_mean"]
_TAIL_COLUMNS = ["draws", "seed", "flag"]
COLUMNS = {
    "p_grid": ["p1", "p2"] + _BASE_COLUMNS + ["k1", "k2", "n1", "n2"] + _TAIL_COLUMNS,
    "p_slice": ["p1", "p2"] + _BASE_COLUMNS
               + ["k1", "k2", "n1", "n2", "k1_cont", "k2_cont", "n1_cont", "n2_cont"]
               + _TAIL_COLUMNS,
    "device_count": ["num_devices"] + _BASE_COLUMNS + ["mean_k", "mean_n"] + _TAIL_COLUMNS,
    "zeta_grid": ["zeta"] + _BASE_COLUMNS + ["mean_k", "mean_n"] + _TAIL_COLUMNS,
}


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class DeviceSpec:
    mean_snr_db: float = 10.0
    block_prob: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.mean_snr_db):
            raise ConfigError("mean_snr_db must be finite")
        if not 0.0 <= self.block_prob <= 1.0:
            raise ConfigError(f"block_prob must lie in [0, 1], got {self.block_prob}")


@dataclass(frozen=True)
class SweepSpec:
    kind: str
    values: Tuple[float, ...]

    def __post_init__(self):
        if self.kind not in SWEEP_KINDS:
            raise ConfigError(f"unknown sweep kind {self.kind!r}; expected one of {SWEEP_KINDS}")
        cast = int if self.kind == "device_count" else float
        try:
            object.__setattr__(self, "values", tuple(cast(x) for x in self.values))
        except (TypeError, ValueError):
            raise ConfigError("sweep values must be numbers") from None
        v = self.values
        if not v:
            raise ConfigError("sweep grid must be nonempty")
        if any(b < a for a, b in zip(v, v[1:])):
            raise ConfigError("sweep grid must be sorted ascending")
        if self.kind in ("p_grid", "p_slice") and not all(0.0 <= x <= 1.0 for x in v):
            raise ConfigError("blockage probabilities must lie in [0, 1]")
        if self.kind == "zeta_grid" and not all(0.0 <= x < 1.0 for x in v):
            raise ConfigError("feedback costs must lie in [0, 1)")
        if self.kind == "device_count" and not all(x >= 1 for x in v):
            raise ConfigError("device counts must be positive integers")


@dataclass(frozen=True)
class ScenarioConfig:
    devices: Tuple[DeviceSpec, ...]
    sweep: SweepSpec
    n_total: int = 256
    feedback_cost: float = 0.05
    fading: str = "rayleigh"
    monte_carlo_draws: int = 100
    seed: int = 0
    output: str = "sweep.csv"
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        if not self.devices:
            raise ConfigError("need at least one device")
        if self.fading not in ("rayleigh", "fixed"):
            raise ConfigError(f"fading must be 'rayleigh' or 'fixed', got {self.fading!r}")
        if self.monte_carlo_draws < 1:
            raise ConfigError("monte_carlo_draws must be >= 1")
        if not 0.0 <= self.feedback_cost < 1.0:
            raise ConfigError("feedback_cost must lie in [0, 1)")
        if int(self.n_total) != self.n_total or self.n_total < 1:
            raise ConfigError("n_total must be a positive integer")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.sweep.kind in ("p_grid", "p_slice") and len(self.devices) != 2:
            raise ConfigError(f"{self.sweep.kind} sweeps need exactly two devices")
        sizes = self.sweep.values if self.sweep.kind == "device_count" else [len(self.devices)]
        if self.n_total < max(sizes):
            raise ConfigError("n_total is smaller than the number of devices")

    @property
    def draws(self) -> int:
        # Fixed fading makes every draw identical.
        return 1 if self.fading == "fixed" else self.monte_carlo_draws

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("scenario config must be a JSON object")
        known = {"devices", "sweep", "n_total", "feedback_cost", "fading",
                 "monte_carlo_draws", "seed", "output", "solver"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("devices", "sweep"):
            if key not in data:
                raise ConfigError(f"missing required key {key!r}")
        try:
            devices = [DeviceSpec(**d) for d in data["devices"]]
            sweep = SweepSpec(**data["sweep"])
            solver = SolverConfig(**data.get("solver", {}))
        except TypeError as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        rest = {k: data[k] for k in known - {"devices", "sweep", "solver"} if k in data}
        return cls(devices=devices, sweep=sweep, solver=solver, **rest)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "devices": [{"mean_snr_db": d.mean_snr_db, "block_prob": d.block_prob}
                        for d in self.devices],
            "sweep": {"kind": self.sweep.kind, "values": list(self.sweep.values)},
            "n_total": self.n_total,
            "feedback_cost": self.feedback_cost,
            "fading": self.fading,
            "monte_carlo_draws": self.monte_carlo_draws,
            "seed": self.seed,
            "output": self.output,
            "solver": self.solver.to_dict(),
        }


def sample_snr(fading: FadingModel, rng: np.random.Generator) -> float:
    """One realized linear SNR: mean times |h|^2, exponential under Rayleigh."""
    if fading.distribution == "fixed":
        return fading.mean_snr
    return fading.mean_snr * float(rng.exponential(1.0))


def draw_rng(seed: int, draw: int) -> np.random.Generator:
    return np.random.default_rng([seed, draw])


def draw_snrs(cfg: ScenarioConfig, draw: int, count: int) -> Tuple[float, ...]:
    """SNRs of the first ``count`` devices for Monte Carlo draw ``draw``.

    Devices beyond the configured list repeat it cyclically. Draws are taken in
    device order, so growing ``count`` keeps the earlier devices' values.
    """
    rng = draw_rng(cfg.seed, draw)
    out = []
    for i in range(count):
        spec = cfg.devices[i % len(cfg.devices)]
        out.append(sample_snr(FadingModel(db_to_linear(spec.mean_snr_db), cfg.fading), rng))
    return tuple(out)


@dataclass(frozen=True)
class GridPoint:
    coords: Tuple[float, ...]
    block_probs: Tuple[float, ...]
    feedback_cost: float

    @property
    def size(self) -> int:
        return len(self.block_probs)


def grid_points(cfg: ScenarioConfig) -> List[GridPoint]:
    kind, values = cfg.sweep.kind, cfg.sweep.values
    base_p = tuple(d.block_prob for d in cfg.devices)
    zeta = cfg.feedback_cost
    if kind == "p_grid":
        return [GridPoint((p1, p2), (p1, p2), zeta) for p1 in values for p2 in values]
    if kind == "p_slice":
        return [GridPoint((p1, base_p[1]), (p1, base_p[1]), zeta) for p1 in values]
    if kind == "device_count":
        m = len(cfg.devices)
        return [GridPoint((int(L),), tuple(base_p[i % m] for i in range(int(L))), zeta)
                for L in values]
    return [GridPoint((z,), base_p, z) for z in values]


@dataclass(frozen=True)
class DrawResult:
    cbf: float
    k: Tuple[int, ...]
    n: Tuple[int, ...]
    k_cont: Tuple[float, ...]
    n_cont: Tuple[float, ...]
    flags: Tuple[str, ...]


def _links(snrs, probs, zeta):
    return tuple(DeviceLink(s, p, zeta) for s, p in zip(snrs, probs))


def _plan_flags(plan) -> List[str]:
    flags = []
    if not plan.continuous.converged:
        flags.append("nonconverged")
    if any(d.saturated for d in plan.report.devices):
        flags.append("saturated")
    if any(d.clamped for d in plan.report.devices):
        flags.append("clamped")
    return flags


def solve_baseline(snrs: Sequence[float], n_total: int, solver: SolverConfig):
    """Feedback-free solve (all p = 1); returns (objective, allocation, flags)."""
    problem = NetworkProblem(_links(snrs, [1.0] * len(snrs), 0.0), n_total, solver)
    plan = solve(problem)
    return plan.report.objective, plan.integral, tuple(_plan_flags(plan))


def solve_cbf(snrs, probs, zeta, n_total, solver,
              baseline: Optional[Allocation] = None) -> DrawResult:
    """Planner solve under the actual blockage; the baseline allocation is also a
    feasible plan for this system, so the better of the two is kept."""
    problem = NetworkProblem(_links(snrs, probs, zeta), n_total, solver)
    plan = solve(problem)
    obj, alloc = plan.report.objective, plan.integral
    flags = _plan_flags(plan)
    if baseline is not None:
        alt = evaluate(baseline, problem).objective
        if alt > obj:
            obj, alloc = alt, baseline
            flags.append("baseline_alloc")
    return DrawResult(obj, tuple(int(v) for v in alloc.k), tuple(int(v) for v in alloc.n),
                      plan.continuous.k, plan.continuous.n, tuple(flags))


def _baseline_task(args):
    snrs, n_total, solver = args
    return solve_baseline(snrs, n_total, solver)


def _cbf_task(args):
    return solve_cbf(*args)


def worker_count(tasks: int) -> int:
    cap = os.environ.get(THREADS_ENV)
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return max(1, min(n, tasks))


def _run_all(fn, tasks):
    # Results come back in submission order regardless of worker count.
    workers = worker_count(len(tasks))
    if workers == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


@dataclass(frozen=True)
class SweepRow:
    kind: str
    coords: Tuple[float, ...]
    cbf_mean: float
    baseline_mean: float
    mean_k: Tuple[float, ...]
    mean_n: Tuple[float, ...]
    mean_k_cont: Tuple[float, ...]
    mean_n_cont: Tuple[float, ...]
    draws: int
    seed: int
    flags: Tuple[str, ...] = ()

    def as_record(self) -> Dict[str, object]:
        rec: Dict[str, object] = {}
        if self.kind in ("p_grid", "p_slice"):
            rec["p1"], rec["p2"] = self.coords
        elif self.kind == "device_count":
            rec["num_devices"] = int(self.coords[0])
        else:
            rec["zeta"] = self.coords[0]
        rec["cbf_mean"] = self.cbf_mean
        rec["baseline_mean"] = self.baseline_mean
        if self.kind in ("p_grid", "p_slice"):
            rec.update(k1=self.mean_k[0], k2=self.mean_k[1],
                       n1=self.mean_n[0], n2=self.mean_n[1])
            if self.kind == "p_slice":
                rec.update(k1_cont=self.mean_k_cont[0], k2_cont=self.mean_k_cont[1],
                           n1_cont=self.mean_n_cont[0], n2_cont=self.mean_n_cont[1])
        else:
            rec["mean_k"] = float(np.mean(self.mean_k))
            rec["mean_n"] = float(np.mean(self.mean_n))
        rec["draws"] = self.draws
        rec["seed"] = self.seed
        rec["flag"] = "|".join(self.flags) if self.flags else "ok"
        return rec


def run_sweep(cfg: ScenarioConfig) -> List[SweepRow]:
    """Solve every (grid point, draw) pair and average per grid point."""
    points = grid_points(cfg)
    draws = cfg.draws
    sizes = sorted({pt.size for pt in points})
    snrs = {(L, d): draw_snrs(cfg, d, L) for L in sizes for d in range(draws)}

    base_keys = sorted(snrs)
    base_out = _run_all(_baseline_task,
                        [(snrs[key], cfg.n_total, cfg.solver) for key in base_keys])
    baseline = dict(zip(base_keys, base_out))

    tasks = [(snrs[(pt.size, d)], pt.block_probs, pt.feedback_cost, cfg.n_total,
              cfg.solver, baseline[(pt.size, d)][1])
             for pt in points for d in range(draws)]
    results = _run_all(_cbf_task, tasks)

    rows = []
    for g, pt in enumerate(points):
        chunk = results[g * draws:(g + 1) * draws]
        bases = [baseline[(pt.size, d)] for d in range(draws)]
        flags = []
        for item in [f for r in chunk for f in r.flags] + [f for b in bases for f in b[2]]:
            if item not in flags:
                flags.append(item)
        rows.append(SweepRow(
            kind=cfg.sweep.kind,
            coords=pt.coords,
            cbf_mean=math.fsum(r.cbf for r in chunk) / draws,
            baseline_mean=math.fsum(b[0] for b in bases) / draws,
            mean_k=tuple(np.mean([r.k for r in chunk], axis=0).tolist()),
            mean_n=tuple(np.mean([r.n for r in chunk], axis=0).tolist()),
            mean_k_cont=tuple(np.mean([r.k_cont for r in chunk], axis=0).tolist()),
            mean_n_cont=tuple(np.mean([r.n_cont for r in chunk], axis=0).tolist()),
            draws=draws,
            seed=cfg.seed,
            flags=tuple(sorted(flags)),
        ))
        if "nonconverged" in flags:
            log.warning("grid point %s: solver did not converge on every draw", pt.coords)
    return rows


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def write_outputs(rows: Sequence[SweepRow], cfg: ScenarioConfig,
                  path=None) -> Path:
    """Write the CSV table and its JSON sidecar; returns the CSV path."""
    from . import __version__

    out = Path(path if path is not None else cfg.output)
    columns = COLUMNS[cfg.sweep.kind]
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_NONE)
        writer.writerow(columns)
        for row in rows:
            rec = row.as_record()
            writer.writerow([_cell(rec[c]) for c in columns])
    meta = {"config": cfg.to_dict(), "seed": cfg.seed,
            "schema_version": SCHEMA_VERSION, "tool_version": __version__}
    with open(sidecar_path(out), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def zeta_crossover(snrs: Sequence[float], probs: Sequence[float], n_total: int,
                   solver: SolverConfig = SolverConfig(), tol: float = 1e-4) -> Optional[float]:
    """Smallest feedback cost at which the feedback system falls below the baseline.

    Bisects on zeta in (0, 1) using the planner's own solve (the baseline
    allocation is deliberately not offered as a fallback here). Returns None if
    the feedback system is already worse at zeta = 0 or still better just
    below 1.
    """
    base, _, _ = solve_baseline(snrs, n_total, solver)

    def gap(z):
        return solve_cbf(snrs, probs, z, n_total, solver).cbf - base

    lo, hi = 0.0, 1.0 - 1e-6
    if gap(lo) < 0 or gap(hi) >= 0:
        return None
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gap(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
