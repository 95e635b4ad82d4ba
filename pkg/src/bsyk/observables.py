"""Witness assembly and the physical observables.

Each observable is an overlap between the evolved witness vector and the
initial product state, evaluated sector by sector:

* OTOCs of Majorana strings sharing p factors, with n and m extra factors;
  one sector of dimension ~2N.
* Renyi-2 entropies of the evolution operator's Choi state for the aligned
  contiguous bipartitions; a binomial tower of ~lbar sectors recombined in
  the log domain.
* The tripartite information, operator length, closed-form large-N
  references, Haar asymptotes from generator kernels, and the growth /
  decay fit procedures.

Default mode frames follow the stability findings: b for OTOCs, c for the
AC entropy, the b12/c34 hybrid for the AD entropy.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import DEFAULT_CONFIG, Config
from .errors import LogDomain, PrecisionLoss, WindowOutOfRange
from .fock import (
    DualWeightSpec,
    FockVector,
    SectorBasis,
    SectorKey,
    build_polynomial_state,
    compensated_sum,
    dual_pair,
    enumerate_sector,
    initial_dual,
    log_factorial_table,
    to_ladder_gauge,
)
from .fock import FOUR_MODES
from .frames import ModeFrame, get_frame
from .hamiltonian import build_hamiltonian
from .propagator import TimeGrid, evolve, steady_state

_B1 = np.eye(8)[0]
_B2 = np.eye(8)[1]
_B3 = np.eye(8)[2]
_B4 = np.eye(8)[3]
# Initial-state weights with the 1/sqrt(8) per mode stripped; the matching
# sqrt(8)^N witness prefactor is dropped too, which keeps every log scale
# O(ln N) and the t=0 identities exact to ~1e-14 even at N = 10^6.
_ALPHA_B_UNNORM = np.array([1, -1, -1, -1, 1, 1, 1, -1], dtype=complex)


def _otoc_dual(N: int, frame: ModeFrame) -> DualWeightSpec:
    return DualWeightSpec(frame.from_b(_ALPHA_B_UNNORM), N)


@dataclass(frozen=True)
class OtocSpec:
    """Out-of-time-ordered correlator of two Majorana strings.

    The strings share p factors; the time-evolved one carries n extra
    Majoranas and the static one m.
    """

    p: int
    n: int
    m: int
    N: int
    q: int = 4

    def __post_init__(self) -> None:
        if min(self.p, self.n, self.m) < 0:
            raise ValueError("p, n, m must be nonnegative")
        if self.p + self.n + self.m > self.N:
            raise ValueError("p + n + m exceeds N")
        if self.q not in (2, 4):
            raise ValueError("q must be 2 or 4")

    @property
    def sector_key(self) -> SectorKey:
        return SectorKey(self.N - self.p - self.m, self.p + self.m, 0, 0)

    @property
    def sign(self) -> int:
        m, n = self.m, self.n
        return (-1) ** ((m * (m - 1)) // 2 + (n * (n - 1)) // 2 + n * m)

    def label(self) -> str:
        return f"p{self.p}n{self.n}m{self.m}"


@dataclass(frozen=True)
class PartitionSpec:
    """Aligned contiguous bipartition; lbar sites in B and D, l in A and C."""

    lbar: int
    N: int

    def __post_init__(self) -> None:
        if not 0 <= self.lbar <= self.N:
            raise ValueError(f"lbar must be in [0, N], got {self.lbar}")

    @property
    def l(self) -> int:
        return self.N - self.lbar


@dataclass
class ObservableSeries:
    grid: TimeGrid
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.grid.points

    def stderr(self) -> np.ndarray | None:
        return self.meta.get("stderr")


@dataclass
class FitResult:
    lamb: float | None = None
    c: float | None = None
    tstar: float | None = None
    tau: float | None = None
    a: float | None = None
    b: float | None = None
    window: tuple[float, float] | None = None
    stderr: dict = field(default_factory=dict)
    residual: float | None = None
    flags: list[str] = field(default_factory=list)


# -- witness construction ---------------------------------------------------


def _witness_otoc(spec: OtocSpec, frame: ModeFrame, gauge: str,
                  config: Config) -> tuple[SectorBasis, FockVector]:
    """W_(p,n,m) with its sign and sqrt(8)^N/sqrt(N!) prefactor, in `frame`."""
    basis = enumerate_sector(spec.N, spec.sector_key, FOUR_MODES, config)
    raw = [(-_B3, spec.p), (-_B2, spec.n), (-_B4, spec.m),
           (_B1, spec.N - spec.p - spec.n - spec.m)]
    factors = [(frame.from_b(a), pw) for a, pw in raw if pw > 0]
    v = build_polynomial_state(basis, factors, gauge)
    if gauge == "orthonormal":
        # sqrt(8)^N/sqrt(N!) prefactor with the sqrt(8)^N stripped against
        # the unnormalized dual weights; the ladder build needs neither.
        half_lgn = 0.5 * log_factorial_table(spec.N)[spec.N]
        v.log_scale = float(np.longdouble(v.log_scale) - half_lgn)
    v.amplitudes *= spec.sign
    return basis, v


def _entropy_terms(kind: str, part: PartitionSpec, frame: ModeFrame,
                   gauge: str, config: Config):
    """Binomial decomposition of the entropy witness into sector terms.

    Yields (log_weight, sign, basis, state); the caller supplies the global
    prefactor.  For S_AC the split is (b1-b4)^lbar over (b1)^r (-b4)^(lbar-r);
    for S_AD it is (b1-b2+b3-b4)^lbar over (b1-b2)^r (b3-b4)^(lbar-r).
    """
    N, lbar, l = part.N, part.lbar, part.l
    if kind == "ac":
        head, mid, tail = _B1 - _B2, _B1, -_B4
    elif kind == "ad":
        head, mid, tail = _B1, _B1 - _B2, _B3 - _B4
    else:
        raise ValueError(kind)
    for r in range(lbar + 1):
        key = SectorKey(l + r, lbar - r, 0, 0)
        basis = enumerate_sector(N, key, FOUR_MODES, config)
        factors = [
            (frame.from_b(a), pw)
            for a, pw in ((head, l), (mid, r), (tail, lbar - r))
            if pw > 0
        ]
        v = build_polynomial_state(basis, factors, gauge)
        # Binomial weight, global prefactor, and the purity scale offset ride
        # in the log scale so the evolved overlaps come out O(2^{+-lbar})
        # term by term; the raw A+D purity itself is 2^{-N/2}-small and
        # would underflow at large N otherwise.
        v.log_scale += (
            math.lgamma(lbar + 1)
            - math.lgamma(r + 1)
            - math.lgamma(lbar - r + 1)
            + _entropy_prefactor_log(kind, N, lbar, gauge)
            - _purity_log_offset(kind, N, lbar)
        )
        yield basis, v


def _purity_log_offset(kind: str, N: int, lbar: int) -> float:
    """Representative log purity scale; S_AD stays near (N/2 - lbar) ln 2."""
    if kind == "ad":
        return -(N / 2.0 - lbar) * math.log(2.0)
    return 0.0


def _entropy_prefactor_log(kind: str, N: int, lbar: int, gauge: str) -> float:
    """Log of the witness prefactor against the unnormalized dual weights.

    The orthonormal witness carries sqrt8^N/(sqrt(N!) 2^N) for AC and
    sqrt8^N/(sqrt(N!) 2^(N/2+lbar)) for AD; pairing against the stripped
    dual multiplies by sqrt(N!)/sqrt8^N, and the ladder-gauge build absorbs
    the sqrt(N!) too, leaving pure powers of two.
    """
    if gauge == "ladder":
        base = 0.0
    else:
        base = float(-0.5 * log_factorial_table(N)[N])
    if kind == "ac":
        return base - N * math.log(2.0)
    return base - (N / 2.0 + lbar) * math.log(2.0)


# -- observables -------------------------------------------------------------


def otoc(
    spec: OtocSpec,
    grid: TimeGrid,
    tol: float = 1e-9,
    frame: str | ModeFrame = "b",
    config: Config = DEFAULT_CONFIG,
    gauge: str = "ladder",
    method: str = "auto",
) -> ObservableSeries:
    """Disorder-averaged F_(p,n,m)(t) on the grid."""
    t0 = time.perf_counter()
    frame = get_frame(frame)
    basis, w = _witness_otoc(spec, frame, gauge, config)
    h = build_hamiltonian(spec.q, spec.N, frame, basis, config=config, gauge=gauge)
    dual = _otoc_dual(spec.N, frame)
    res = evolve(h, w, grid, tol=tol, dual=dual, config=config, method=method)
    overlaps = np.conj(res.overlaps)
    im = float(np.max(np.abs(overlaps.imag)))
    if im > 1e-8 * max(1.0, float(np.max(np.abs(overlaps.real)))):
        raise AssertionError(f"OTOC has imaginary part {im:.2e}; numerics unhealthy")
    return ObservableSeries(
        grid,
        overlaps.real,
        meta={
            "kind": "otoc", "N": spec.N, "q": spec.q, "spec": spec.label(),
            "frame": frame.name, "tol": tol, "wall_time": time.perf_counter() - t0,
            "steps": res.step_count,
        },
    )


def _entropy_series(
    kind: str,
    N: int,
    q: int,
    part: PartitionSpec,
    grid: TimeGrid,
    tol: float,
    frame: ModeFrame,
    config: Config,
    gauge: str,
    method: str,
) -> ObservableSeries:
    t0 = time.perf_counter()
    dual = _otoc_dual(N, frame)
    term_vals = []
    steps = 0
    for basis, v in _entropy_terms(kind, part, frame, gauge, config):
        h = build_hamiltonian(q, N, frame, basis, config=config, gauge=gauge)
        res = evolve(h, v, grid, tol=tol, dual=dual, config=config, method=method)
        term_vals.append(np.conj(res.overlaps))
        steps += res.step_count
    purity, cancel = _recombine(term_vals, config)
    im = float(np.max(np.abs(purity.imag)))
    re_floor = float(np.max(np.abs(purity.real)))
    if im > 1e-9 * max(re_floor, 1e-300):
        raise AssertionError(f"purity has imaginary part {im:.2e}")
    if np.any(purity.real <= 0):
        raise AssertionError("purity lost positivity; increase tolerance")
    if cancel > 1e-6:
        warnings.warn(
            f"entropy recombination lost ~{cancel:.1e} relative precision",
            PrecisionLoss,
        )
    values = -(np.log(purity.real) + _purity_log_offset(kind, N, part.lbar))
    return ObservableSeries(
        grid,
        values,
        meta={
            "kind": f"s_{kind}", "N": N, "q": q, "spec": f"lbar{part.lbar}",
            "frame": frame.name, "tol": tol, "wall_time": time.perf_counter() - t0,
            "steps": steps, "cancellation": cancel,
        },
    )


def _recombine(term_vals, config) -> tuple[np.ndarray, float]:
    """Sum per-sector overlap series with a cancellation estimate.

    The estimate is the ratio of rounding noise on the magnitude sum to the
    result; the binomial cross terms alternate in sign away from t=0.
    """
    n_t = len(term_vals[0])
    out = np.empty(n_t, dtype=np.complex128)
    cancel = 0.0
    for k in range(n_t):
        terms = np.array([v[k] for v in term_vals])
        s = compensated_sum(terms, config.extended_accumulator)
        mag = float(np.sum(np.abs(terms)))
        if abs(s) > 0:
            cancel = max(cancel, 2.2e-16 * mag / abs(s))
        out[k] = s
    return out, cancel


def renyi2_ac(
    N: int,
    q: int,
    part: PartitionSpec,
    grid: TimeGrid,
    tol: float = 1e-9,
    frame: str | ModeFrame = "c",
    config: Config = DEFAULT_CONFIG,
    gauge: str = "ladder",
    method: str = "auto",
) -> ObservableSeries:
    """Renyi-2 entropy of the A+C region of the Choi state."""
    return _entropy_series(
        "ac", N, q, part, grid, tol, get_frame(frame), config, gauge, method
    )


def renyi2_ad(
    N: int,
    q: int,
    part: PartitionSpec,
    grid: TimeGrid,
    tol: float = 1e-9,
    frame: str | ModeFrame = "hybrid_b12_c34",
    config: Config = DEFAULT_CONFIG,
    gauge: str = "ladder",
    method: str = "auto",
) -> ObservableSeries:
    """Renyi-2 entropy of the A+D region of the Choi state."""
    return _entropy_series(
        "ad", N, q, part, grid, tol, get_frame(frame), config, gauge, method
    )


def tripartite_i3(
    N: int,
    q: int,
    part: PartitionSpec,
    grid: TimeGrid,
    tol: float = 1e-9,
    config: Config = DEFAULT_CONFIG,
    frames: tuple[str, str] = ("c", "hybrid_b12_c34"),
) -> ObservableSeries:
    """Renyi-2 tripartite information (N/2) ln2 - S_AC - S_AD."""
    t0 = time.perf_counter()
    sac = renyi2_ac(N, q, part, grid, tol, frames[0], config)
    sad = renyi2_ad(N, q, part, grid, tol, frames[1], config)
    values = (N / 2.0) * math.log(2.0) - sac.values - sad.values
    return ObservableSeries(
        grid,
        values,
        meta={
            "kind": "i3", "N": N, "q": q, "spec": f"lbar{part.lbar}",
            "frame": "+".join(frames), "tol": tol,
            "wall_time": time.perf_counter() - t0,
        },
    )


def operator_length(
    N: int,
    q: int,
    grid: TimeGrid,
    tol: float = 1e-9,
    config: Config = DEFAULT_CONFIG,
) -> ObservableSeries:
    """Average operator length of a time-evolved single Majorana,
    L = (N + F_xx + (N-1) F_xy) / 2."""
    t0 = time.perf_counter()
    fxx = otoc(OtocSpec(1, 0, 0, N, q), grid, tol, config=config)
    fxy = otoc(OtocSpec(0, 1, 1, N, q), grid, tol, config=config)
    values = (N + fxx.values + (N - 1) * fxy.values) / 2.0
    return ObservableSeries(
        grid,
        values,
        meta={
            "kind": "length", "N": N, "q": q, "spec": "xx+xy", "frame": "b",
            "tol": tol, "wall_time": time.perf_counter() - t0,
        },
    )


# -- Haar asymptotes ---------------------------------------------------------


def haar_otoc(
    spec: OtocSpec, tol: float = 1e-9, config: Config = DEFAULT_CONFIG
) -> float:
    """Infinite-time OTOC plateau from the kernel of the sector generator."""
    frame = get_frame("b")
    basis, w = _witness_otoc(spec, frame, "orthonormal", config)
    h = build_hamiltonian(spec.q, spec.N, frame, basis, config=config)
    proj = steady_state(h, w, tol=tol, config=config)
    return float(np.conj(dual_pair(proj.vector, _otoc_dual(spec.N, frame), config)).real)


def _haar_entropy(kind, N, q, part, tol, frame, config) -> float:
    frame = get_frame(frame)
    dual = _otoc_dual(N, frame)
    vals = []
    for basis, v in _entropy_terms(kind, part, frame, "orthonormal", config):
        h = build_hamiltonian(q, N, frame, basis, config=config)
        proj = steady_state(h, v, tol=tol, config=config)
        vals.append(np.array([np.conj(dual_pair(proj.vector, dual, config))]))
    purity, _ = _recombine(vals, config)
    return float(-(math.log(purity[0].real) + _purity_log_offset(kind, N, part.lbar)))


def haar_renyi2_ac(N, q, part, tol=1e-9, frame="c", config=DEFAULT_CONFIG) -> float:
    return _haar_entropy("ac", N, q, part, tol, frame, config)


def haar_renyi2_ad(N, q, part, tol=1e-9, frame="hybrid_b12_c34", config=DEFAULT_CONFIG) -> float:
    return _haar_entropy("ad", N, q, part, tol, frame, config)


def haar_tripartite(N, q, part, tol=1e-9, config=DEFAULT_CONFIG) -> float:
    return (
        (N / 2.0) * math.log(2.0)
        - haar_renyi2_ac(N, q, part, tol, config=config)
        - haar_renyi2_ad(N, q, part, tol, config=config)
    )


# -- closed forms ------------------------------------------------------------


def analytic_reference(kind: str, grid: TimeGrid, **params) -> ObservableSeries:
    """Closed-form reference curves (large-N limits and the free case)."""
    t = grid.points
    if kind == "F_xx_largeN":
        vals = -1.0 + 2.0 * np.exp(-2.0 * t / 3.0)
    elif kind == "F_xy_largeN":
        vals = np.full_like(t, -1.0)
    elif kind == "S_AC_largeN":
        lbar = params["lbar"]
        vals = lbar * np.log(2.0 / (1.0 + np.exp(-2.0 * t / 3.0)))
    elif kind == "F_xy_q2":
        N = params["N"]
        vals = -1.0 + 2.0 / N - (2.0 / N) * np.exp(-4.0 * t)
    elif kind == "F_xx_q2":
        N = params["N"]
        vals = -1.0 + 2.0 / N + (2.0 / N) * (N - 1) * np.exp(-4.0 * t)
    elif kind == "S_AC_q2":
        lbar = params["lbar"]
        vals = lbar * np.log(2.0 / (1.0 + np.exp(-4.0 * t)))
    else:
        raise ValueError(f"unknown reference kind {kind!r}")
    return ObservableSeries(grid, vals, meta={"kind": kind, **params})


# -- fits --------------------------------------------------------------------


def _window_mask(series: ObservableSeries, window: tuple[float, float]) -> np.ndarray:
    lo, hi = window
    mask = (series.times >= lo) & (series.times <= hi)
    if np.count_nonzero(mask) < 3:
        raise WindowOutOfRange(
            f"window [{lo}, {hi}] covers fewer than 3 grid points"
        )
    return mask


def fit_growth(series: ObservableSeries, window: tuple[float, float]) -> FitResult:
    """Linear fit of ln[1 + F_xy] + ln N on the window.

    Returns the growth exponent, the prefactor c = exp(intercept), and the
    scrambling time (3/4) ln N.
    """
    N = series.meta["N"]
    mask = _window_mask(series, window)
    f = series.values[mask]
    if np.any(1.0 + f <= 0):
        raise LogDomain("1 + F is nonpositive inside the growth window")
    t = series.times[mask]
    y = np.log1p(f) + math.log(N)
    a = np.vstack([t, np.ones_like(t)]).T
    coef, res, *_ = np.linalg.lstsq(a, y, rcond=None)
    slope, intercept = coef
    dof = max(len(t) - 2, 1)
    sigma2 = float(res[0]) / dof if len(res) else 0.0
    cov = sigma2 * np.linalg.inv(a.T @ a)
    return FitResult(
        lamb=float(slope),
        c=float(math.exp(intercept)),
        tstar=0.75 * math.log(N),
        window=window,
        stderr={
            "lambda": float(np.sqrt(cov[0, 0])),
            "c": float(math.exp(intercept) * np.sqrt(cov[1, 1])),
        },
        residual=math.sqrt(sigma2),
    )


def fit_decay(series: ObservableSeries, window: tuple[float, float] | None = None) -> FitResult:
    """Fit ln(-F) with a - t/tau - b/t on the window (default: last 30%).

    A series that does not decay toward zero (the free case plateaus at
    -1 + 2/N) is flagged instead of fitted.
    """
    t_all = series.times
    if window is None:
        lo = t_all[0] + 0.7 * (t_all[-1] - t_all[0])
        window = (float(lo), float(t_all[-1]))
    mask = _window_mask(series, window)
    f = series.values[mask]
    t = t_all[mask]
    if np.any(f >= 0):
        raise LogDomain("series is not strictly negative inside the window")
    y = np.log(-f)
    span = y[0] - y[-1]
    if span < 0.05:
        return FitResult(window=window, flags=["no-decay"])
    a = np.vstack([np.ones_like(t), -t, -1.0 / t]).T
    coef, res, *_ = np.linalg.lstsq(a, y, rcond=None)
    aa, inv_tau, b = coef
    if inv_tau <= 0:
        return FitResult(window=window, flags=["no-decay"])
    dof = max(len(t) - 3, 1)
    sigma2 = float(res[0]) / dof if len(res) else 0.0
    cov = sigma2 * np.linalg.inv(a.T @ a)
    tau = 1.0 / float(inv_tau)
    return FitResult(
        tau=tau,
        a=float(aa),
        b=float(b),
        window=window,
        stderr={"tau": tau * tau * float(np.sqrt(cov[1, 1]))},
        residual=math.sqrt(sigma2),
    )


def shifted_on_common_grid(
    n_values: Sequence[int],
    s_grid: np.ndarray,
    q: int = 4,
    tol: float = 1e-9,
    spec=(0, 1, 1),
    config: Config = DEFAULT_CONFIG,
) -> dict[int, np.ndarray]:
    """F(t + (3/4) ln N) for several N on one shifted-time grid.

    Used for the data-collapse comparison; shifted times must give
    nonnegative absolute times for every N.
    """
    out = {}
    for N in n_values:
        tstar = 0.75 * math.log(N)
        ts = np.asarray(s_grid) + tstar
        if ts[0] < 0:
            raise ValueError(f"shifted grid starts before t=0 for N={N}")
        series = otoc(OtocSpec(spec[0], spec[1], spec[2], N, q), TimeGrid(ts), tol, config=config)
        out[N] = series.values
    return out
