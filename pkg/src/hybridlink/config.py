"""Solver tuning knobs shared by the allocation and planning stages."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

from .errors import ConfigError

ROUNDING_POLICIES = ("paper_enum", "paper_enum_plus_k_rescan")


@dataclass(frozen=True)
class SolverConfig:
    tol_obj: float = 1e-9
    max_outer: int = 500
    max_inner: int = 200
    rounding: str = "paper_enum"
    # Starting symbol split for the alternating loop; None means uniform.
    init_split: Optional[Sequence[float]] = None
    k_tol: float = 1e-9
    max_enum_devices: int = 16

    def __post_init__(self):
        if not (self.tol_obj > 0 and self.k_tol > 0):
            raise ConfigError("tolerances must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ConfigError("iteration caps must be >= 1")
        if self.rounding not in ROUNDING_POLICIES:
            raise ConfigError(f"unknown rounding policy {self.rounding!r}; "
                              f"expected one of {ROUNDING_POLICIES}")

    @property
    def max_iter(self) -> int:
        """Iteration cap of a single SCA run."""
        return self.max_inner

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["init_split"] is not None:
            d["init_split"] = list(d["init_split"])
        return d
