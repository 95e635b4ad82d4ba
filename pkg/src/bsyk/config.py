"""Runtime knobs: dimension caps, solver thresholds, summation accuracy."""
from __future__ import annotations

import os
from dataclasses import dataclass

WORKERS_ENV_VAR = "BSYK_WORKERS"


@dataclass(frozen=True)
class Config:
    """Caps and thresholds; all sizes are basis-state counts.

    ``sector_cap`` bounds any sector enumeration (fail loudly instead of
    truncating).  ``assembled_threshold`` switches the effective Hamiltonian
    from assembled-sparse to matrix-free application.  ``dense_cap`` bounds
    the full 8-mode symmetric space used by the dense oracle.
    ``extended_accumulator`` switches overlap sums from Kahan compensation to
    exact ``math.fsum``.
    """

    sector_cap: int = 50_000_000
    assembled_threshold: int = 200_000
    dense_cap: int = 20_000
    eigen_steady_cap: int = 10_000
    krylov_dim: int = 60
    krylov_dim_large: int = 30
    krylov_large_dim_threshold: int = 500_000
    steady_time: float = 50.0
    extended_accumulator: bool = False
    # Relative amplitude floor during propagation.  Entries this far below
    # the vector maximum sit near the double-precision floor where relative
    # accuracy is lost, while the initial-state overlap weights grow with
    # distance from the witness support; they are zeroed to keep weighted
    # overlaps free of amplified rounding junk.
    amplitude_floor: float = 1e-250
    # In the ladder gauge stored entries are overlap-contribution sized,
    # so a much higher floor is safe and keeps the active window small.
    amplitude_floor_ladder: float = 1e-24

    def krylov_cap(self, dim: int) -> int:
        if dim > self.krylov_large_dim_threshold:
            return self.krylov_dim_large
        return self.krylov_dim


DEFAULT_CONFIG = Config()


def worker_count() -> int:
    """Worker-pool size for sweeps, from BSYK_WORKERS (default: logical cores)."""
    raw = os.environ.get(WORKERS_ENV_VAR, "")
    if raw:
        n = int(raw)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV_VAR} must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1
