"""Imaginary-time evolution e^{Ht} and steady states (Haar asymptotes).

The generator is Hermitian and negative semidefinite, so the action of the
exponential is computed with restarted Lanczos: build a Krylov basis of the
current vector, exponentiate the tridiagonal projection, and advance by the
largest substep whose residual-based local error estimate stays within the
budget.  Decaying norms are folded into the vector's log_scale after every
restart so amplitudes remain O(1) throughout.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_CONFIG, Config
from .errors import NonFiniteAmplitude, SectorMismatch
from .fock import DualWeightSpec, FockVector, dual_pair
from .hamiltonian import EffectiveHamiltonian


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing nonnegative times, in units of inverse coupling."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size == 0:
            raise ValueError("time grid must be a nonempty 1D array")
        if pts[0] < 0 or np.any(np.diff(pts) <= 0):
            raise ValueError("time grid must be strictly increasing and nonnegative")
        object.__setattr__(self, "points", pts)
        pts.setflags(write=False)

    @classmethod
    def linear(cls, tmax: float, steps: int, t0: float = 0.0) -> "TimeGrid":
        return cls(np.linspace(t0, tmax, steps))

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class StepDiagnostics:
    krylov_dim: int
    step: float
    residual: float


@dataclass
class PropagationResult:
    grid: TimeGrid
    overlaps: np.ndarray | None
    vectors: list[FockVector] | None
    diagnostics: list[StepDiagnostics] = field(default_factory=list)

    @property
    def step_count(self) -> int:
        return len(self.diagnostics)


class _KrylovExp:
    """One Krylov pass (Arnoldi or Lanczos): basis, projection, step choice.

    Arnoldi with full Gram-Schmidt handles the non-Hermitian ladder-gauge
    generator; with ``hermitian=True`` the projection is symmetrized
    (Lanczos with full reorthogonalization).
    """

    def __init__(self, matvec, v: np.ndarray, m_max: int, hermitian: bool = False):
        dim = v.shape[0]
        m_max = min(m_max, dim)
        self.beta0 = float(np.linalg.norm(v))
        V = np.empty((m_max, dim), dtype=np.complex128)
        H = np.zeros((m_max + 1, m_max), dtype=np.complex128)
        V[0] = v / self.beta0
        m = 0
        breakdown = False
        for j in range(m_max):
            w = matvec(V[j])
            # Classical Gram-Schmidt with a second pass keeps the basis
            # orthogonal across the many decades the spectrum spans.
            proj = V[: j + 1].conj() @ w
            w -= V[: j + 1].T @ proj
            proj2 = V[: j + 1].conj() @ w
            w -= V[: j + 1].T @ proj2
            H[: j + 1, j] += proj + proj2
            b = float(np.linalg.norm(w))
            H[j + 1, j] = b
            m = j + 1
            scale = float(np.max(np.abs(H[: j + 1, j]))) or 1.0
            if b < 1e-14 * scale:
                breakdown = True
                break
            if j + 1 < m_max:
                V[j + 1] = w / b
        self.V = V[:m]
        self.m = m
        self.breakdown = breakdown
        self.beta_next = 0.0 if breakdown else float(abs(H[m, m - 1]))
        T = H[:m, :m]
        if hermitian:
            T = (T + T.conj().T) / 2.0
        self.T = T

    def propagated(self, h: float) -> np.ndarray:
        """exp(h T) beta0 e1 in the Krylov coordinates."""
        from scipy.linalg import expm as dense_expm

        e1 = np.zeros(self.m, dtype=np.complex128)
        e1[0] = self.beta0
        return dense_expm(h * self.T) @ e1

    def error_estimate(self, h: float, y: np.ndarray) -> float:
        if self.breakdown:
            return 0.0
        return abs(self.beta_next * y[-1]) * h

    def choose_step(self, h: float, budget_per_time: float) -> tuple[float, np.ndarray, float]:
        """Largest substep (halving from h) within the local error budget."""
        for _ in range(60):
            y = self.propagated(h)
            err = self.error_estimate(h, y)
            if err <= budget_per_time * h or self.breakdown:
                return h, y, err
            h *= 0.5
        raise NonFiniteAmplitude("Krylov step control failed to find an acceptable step")


def expm_apply(
    h: EffectiveHamiltonian,
    v: FockVector,
    t: float,
    tol: float = 1e-9,
    config: Config = DEFAULT_CONFIG,
    diagnostics: list[StepDiagnostics] | None = None,
    method: str = "auto",
) -> FockVector:
    """Advance v by exp(H t) with relative 2-norm accuracy tol.

    The default integrator sums the Taylor series of each substep directly:
    every operation is a polynomial in H applied to the state, so rounding
    errors stay local to the hopping band and the steeply decaying occupation
    tail is reproduced down to the underflow floor.  This matters because the
    overlap weights against the initial product state grow combinatorially
    with occupation distance, which amplifies any noise a global method (such
    as restarted Lanczos) deposits at its Krylov reach edge.  The Lanczos
    path is kept for cross-checks and for spectra-bound steady-state runs.
    """
    if v.basis != h.sector:
        raise SectorMismatch("vector does not live in the Hamiltonian's sector")
    if t < 0:
        raise ValueError("negative evolution time")
    out = v.copy()
    if t == 0 or float(np.linalg.norm(out.amplitudes)) == 0.0:
        return out
    if method == "auto":
        method = "taylor"
    if method == "taylor":
        _taylor_advance(h, out, t, tol, config, diagnostics)
    elif method in ("arnoldi", "lanczos"):
        _krylov_advance(h, out, t, tol, config, diagnostics, method == "lanczos")
    else:
        raise ValueError(f"unknown propagation method {method!r}")
    return out


# Target size of h * (largest active decay rate): keeps the series short and
# per-entry intermediate terms within a few e-folds of the local amplitudes,
# so cancellation stays benign along the occupation cascade.
_TAYLOR_THETA = 3.0
_TAYLOR_MAX_TERMS = 300
# Index margin kept ahead of the occupation front before the window grows.
_WINDOW_GUARD = 16
# Hand the remaining interval to the implicit integrator once the projected
# explicit step count exceeds this: the occupation front advances at a rate
# proportional to its own position, so late times are advection-stiff.
_EXPLICIT_STEP_LIMIT = 2000
# TR-BDF2 step for the stiff era; its O(h^2) error sits far below the
# late-time acceptance tolerances, which are fit-window rather than
# pointwise quantities.
_IMPLICIT_STEP = 0.004
_TRBDF2_GAMMA = 2.0 - math.sqrt(2.0)


def _floor_for(h, config: Config) -> float:
    """Relative amplitude floor; the ladder gauge stores contribution-sized
    entries, so a far higher floor is safe there and keeps the window small."""
    return (
        config.amplitude_floor_ladder if h.gauge == "ladder" else config.amplitude_floor
    )


def _taylor_advance(h, out, t, tol, config, diagnostics):
    """Integration restricted to the active occupation window.

    Every Taylor operation is a polynomial in H applied to the state, so
    rounding stays relative to the locally cascading amplitudes; this is
    what keeps the steeply graded occupation profile accurate under the
    combinatorial overlap weights.  The substep follows the largest diagonal
    rate inside the occupied window, which grows as the front advances;
    once the projected explicit step count becomes prohibitive the remaining
    interval is finished by the L-stable TR-BDF2 rule with banded LU solves,
    whose forward-substitution locality preserves the same cascade accuracy.
    """
    mat = h._assembled
    if mat is None:
        _taylor_advance_plain(h, out, t, tol, config, diagnostics)
        return
    diag = np.real(mat.diagonal())
    amps = out.amplitudes
    nz = np.nonzero(amps)[0]
    if nz.size == 0:
        return
    dim = amps.shape[0]
    w0 = _grow_window(int(nz[0]), dim)
    sub = mat[w0:, w0:].tocsr()
    u = amps[w0:].copy()
    floor_rel = _floor_for(h, config)
    remaining = t
    implicit = None
    while remaining > 0:
        rate = max(float(np.max(np.abs(diag[w0:]))), 1e-30)
        if implicit is None and remaining * rate / _TAYLOR_THETA > _EXPLICIT_STEP_LIMIT:
            implicit = _TrBdf2(_IMPLICIT_STEP)
        if implicit is None:
            step = min(remaining, _TAYLOR_THETA / rate)
            terms = _taylor_step(sub, u, step, tol, floor_rel)
        else:
            step = min(remaining, implicit.h)
            u = implicit.advance(sub, u, step)
            terms = 0
        u, shift = _renorm_array(u)
        out.log_scale += shift
        floor = floor_rel * float(np.max(np.abs(u)))
        if floor > 0.0:
            u[np.abs(u) < floor] = 0.0
        remaining -= step
        if diagnostics is not None:
            diagnostics.append(StepDiagnostics(terms, step, 0.0))
        front = np.nonzero(u)[0]
        if front.size and front[0] < _WINDOW_GUARD and w0 > 0:
            old_w0 = w0
            w0 = _grow_window(w0 - 1, dim)
            grown = np.zeros(dim - w0, dtype=np.complex128)
            grown[old_w0 - w0 :] = u
            u = grown
            sub = mat[w0:, w0:].tocsr()
            if implicit is not None:
                implicit.invalidate()
    amps[:] = 0.0
    amps[w0:] = u


class _TrBdf2:
    """One-step L-stable TR-BDF2 with the shared-matrix gamma = 2 - sqrt(2).

    Both stages solve with (I - beta h H), beta = gamma / 2, so a single
    banded LU (natural ordering keeps the cascade locality) serves per step
    size and window.
    """

    def __init__(self, h: float):
        self.h = h
        self._lu = None
        self._key = None

    def invalidate(self) -> None:
        self._lu = None

    def advance(self, mat, u, step):
        from scipy.sparse import identity as sp_identity
        from scipy.sparse.linalg import splu

        g = _TRBDF2_GAMMA
        beta = g / 2.0
        if self._lu is None or self._key != (step, mat.shape[0]):
            a = (sp_identity(mat.shape[0], dtype=np.complex128, format="csc")
                 - (beta * step) * mat.tocsc())
            self._lu = splu(a, permc_spec="NATURAL")
            self._key = (step, mat.shape[0])
        rhs = u + (beta * step) * (mat @ u)
        ustar = self._lu.solve(rhs)
        d = g * (2.0 - g)
        rhs2 = (1.0 / d) * ustar - ((1.0 - g) ** 2 / d) * u
        return self._lu.solve(rhs2)


def _grow_window(front_index: int, dim: int) -> int:
    """Window start covering the front with geometric headroom."""
    span = dim - front_index
    return max(0, dim - 2 * span - 4 * _WINDOW_GUARD)


def _renorm_array(u: np.ndarray) -> tuple[np.ndarray, float]:
    m = float(np.max(np.abs(u))) if u.size else 0.0
    if m == 0.0 or not math.isfinite(m):
        if not math.isfinite(m):
            raise NonFiniteAmplitude("non-finite amplitudes during evolution")
        return u, 0.0
    _, e = math.frexp(m)
    if e == 0:
        return u, 0.0
    u *= 2.0 ** (-e)
    return u, e * math.log(2.0)


def _taylor_advance_plain(h, out, t, tol, config, diagnostics):
    """Unwindowed fallback for matrix-free representations."""
    remaining = t
    diag_rate = None
    floor_rel = _floor_for(h, config)
    while remaining > 0:
        nrm = float(np.linalg.norm(out.amplitudes))
        if not math.isfinite(nrm) or nrm == 0.0:
            raise NonFiniteAmplitude("propagation lost the state vector")
        if diag_rate is None:
            probe = h.matvec(out.amplitudes)
            diag_rate = max(float(np.linalg.norm(probe)) / nrm, 1e-30)
        step = min(remaining, _TAYLOR_THETA / diag_rate)
        terms = _taylor_step(h, out.amplitudes, step, tol, floor_rel, in_place_obj=out)
        out.renormalize()
        floor = floor_rel * float(np.max(np.abs(out.amplitudes)))
        if floor > 0.0:
            out.amplitudes[np.abs(out.amplitudes) < floor] = 0.0
        if diagnostics is not None:
            diagnostics.append(StepDiagnostics(terms, step, 0.0))
        remaining -= step
        diag_rate *= 1.2  # spread can only increase the active rate


def _taylor_step(op, u, step, tol, floor_rel, in_place_obj=None) -> int:
    """One Taylor substep in place; returns the number of terms summed.

    Termination is per entry: the series has converged once the latest term
    is a negligible relative correction everywhere it lands above the
    amplitude floor.  Entries below the floor are trimmed inside the loop
    so the reach does not chase its own leading edge; they would be zeroed
    at the end of the step anyway.
    """
    if in_place_obj is not None:
        u = in_place_obj.amplitudes

    def mv(x):
        return op.matvec(x) if hasattr(op, "matvec") else op @ x

    total = u.copy()
    term = u
    k = 0
    while True:
        k += 1
        term = mv(term)
        term *= step / k
        total += term
        peak = float(np.max(np.abs(term))) if term.size else 0.0
        if not math.isfinite(peak):
            raise NonFiniteAmplitude("Taylor series produced non-finite terms")
        if k >= _TAYLOR_MAX_TERMS:
            break
        scale = float(np.max(np.abs(total)))
        trim = 0.25 * floor_rel * scale
        if peak < trim:
            break
        if k >= 4:
            term = term.copy()
            term[np.abs(term) < trim] = 0.0
            mask = np.abs(total) >= floor_rel * scale
            if np.any(mask):
                rel = float(np.max(np.abs(term[mask]) / np.abs(total[mask])))
            else:
                rel = 0.0
            if rel < 0.1 * tol:
                break
    if in_place_obj is not None:
        in_place_obj.amplitudes = total
    else:
        u[:] = total
    return k


def _krylov_advance(h, out, t, tol, config, diagnostics, hermitian):
    if hermitian and h.gauge != "orthonormal":
        raise ValueError("the generator is Hermitian only in the orthonormal gauge")
    m_max = config.krylov_cap(h.dim)
    remaining = t
    budget = tol / t  # relative error per unit time
    while remaining > 0:
        nrm = float(np.linalg.norm(out.amplitudes))
        if not math.isfinite(nrm) or nrm == 0.0:
            raise NonFiniteAmplitude("propagation lost the state vector")
        kry = _KrylovExp(h.matvec, out.amplitudes, m_max, hermitian)
        step, y, err = kry.choose_step(remaining, budget * nrm)
        out.amplitudes = kry.V.T @ y
        if not np.all(np.isfinite(out.amplitudes)):
            raise NonFiniteAmplitude("non-finite amplitudes during evolution")
        out.renormalize()
        floor = config.amplitude_floor * float(np.max(np.abs(out.amplitudes)))
        if floor > 0.0:
            out.amplitudes[np.abs(out.amplitudes) < floor] = 0.0
        if diagnostics is not None:
            diagnostics.append(StepDiagnostics(kry.m, step, err / max(nrm, 1e-300)))
        remaining -= step


def evolve(
    h: EffectiveHamiltonian,
    v0: FockVector,
    grid: TimeGrid,
    tol: float = 1e-9,
    dual: DualWeightSpec | None = None,
    keep_vectors: bool = False,
    config: Config = DEFAULT_CONFIG,
    method: str = "auto",
) -> PropagationResult:
    """Propagate v0 across the grid, collecting overlaps against a dual state."""
    if v0.basis != h.sector:
        raise SectorMismatch("vector does not live in the Hamiltonian's sector")
    diags: list[StepDiagnostics] = []
    overlaps = np.empty(len(grid), dtype=np.complex128) if dual is not None else None
    vectors: list[FockVector] | None = [] if keep_vectors else None
    current = v0.copy()
    t_now = 0.0
    for k, t in enumerate(grid.points):
        if t > t_now:
            current = expm_apply(h, current, t - t_now, tol, config, diags, method)
            t_now = t
        if overlaps is not None:
            overlaps[k] = dual_pair(current, dual, config)
        if vectors is not None:
            vectors.append(current.copy())
    return PropagationResult(grid, overlaps, vectors, diags)


@dataclass
class KernelProjection:
    """Projection of a seed onto the kernel of H; zero vector when absent."""

    vector: FockVector
    has_kernel_component: bool
    method: str
    drift: float


def steady_state(
    h: EffectiveHamiltonian,
    seed: FockVector,
    tol: float = 1e-9,
    method: str = "auto",
    config: Config = DEFAULT_CONFIG,
) -> KernelProjection:
    """Infinite-time limit of e^{Ht} seed (the Haar asymptote of overlaps).

    The eigensolver path projects the seed onto the numerically zero
    eigenspace; the default long-time path evolves until successive overlap
    proxies stop changing.  A seed orthogonal to the kernel yields the zero
    vector, flagged.
    """
    if method == "auto":
        method = "eigen" if h.dim <= config.eigen_steady_cap else "evolve"
    seed_log_norm = seed.log_norm()

    if method == "eigen":
        dense = h.toarray()
        evals, evecs = np.linalg.eigh(dense)
        scale = max(abs(evals[0]), abs(evals[-1]), 1.0)
        kernel = evecs[:, evals > -1e-9 * scale]
        coeffs = kernel.conj().T @ seed.amplitudes
        amps = kernel @ coeffs
        drift = 0.0
        out = FockVector(seed.basis, amps, seed.log_scale)
    elif method == "evolve":
        t_half = config.steady_time / 2.0
        mid = expm_apply(h, seed, t_half, tol, config)
        out = expm_apply(h, mid, t_half, tol, config)
        drift = _relative_change(mid, out)
        extensions = 0
        while drift > max(tol, 1e-12) and extensions < 3:
            mid = out
            out = expm_apply(h, mid, config.steady_time, tol, config)
            drift = _relative_change(mid, out)
            extensions += 1
        if drift > max(tol, 1e-12):
            warnings.warn(
                f"steady_state plateau drift {drift:.2e} above tolerance after "
                f"{config.steady_time * (1 + extensions):.0f} time units"
            )
    else:
        raise ValueError(f"unknown steady-state method {method!r}")

    has_component = out.log_norm() > seed_log_norm + math.log(1e-12)
    if not has_component:
        out = FockVector.zero(seed.basis)
    return KernelProjection(out, has_component, method, drift)


def _relative_change(a: FockVector, b: FockVector) -> float:
    """|A - B| / max(|A|, |B|) for the represented (log-scaled) vectors."""
    la, lb = a.log_norm(), b.log_norm()
    ref = max(la, lb)
    if not math.isfinite(ref):
        return 0.0
    aa = a.amplitudes * math.exp(a.log_scale - ref)
    bb = b.amplitudes * math.exp(b.log_scale - ref)
    return float(np.linalg.norm(aa - bb))
