"""Conserved bosonic sectors, sparse bilinear operators, and overlaps.

Eight collective modes, numbered 1..8, pair up as (1,2), (3,4), (5,6), (7,8);
a sector fixes the four pair occupation totals.  All states are expressed in
the orthonormal number basis (creation carries sqrt(k+1)), so factorial
growth never enters operator matrix elements.  Large magnitudes live in a
separate ``log_scale`` carried by each vector, and overlaps against the
initial product state combine every multinomial factor in the log domain
before a single exponentiation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.special import gammaln

from .config import DEFAULT_CONFIG, Config
from .errors import (
    DimensionOverflow,
    InactiveMode,
    InconsistentSector,
    SectorMismatch,
)
from .frames import ModeFrame, get_frame, relative_matrix

PAIRS = ((1, 2), (3, 4), (5, 6), (7, 8))
ALL_MODES = (1, 2, 3, 4, 5, 6, 7, 8)
FOUR_MODES = (1, 2, 3, 4)

_QUARTER_PHASES = np.array([1.0 + 0j, 1j, -1.0 + 0j, -1j])


@dataclass(frozen=True, order=True)
class SectorKey:
    """Conserved pair occupation totals (n12, n34, n56, n78)."""

    n12: int
    n34: int
    n56: int
    n78: int

    def __post_init__(self) -> None:
        if min(self.n12, self.n34, self.n56, self.n78) < 0:
            raise InconsistentSector(f"negative pair total in {self}")

    @property
    def total(self) -> int:
        return self.n12 + self.n34 + self.n56 + self.n78

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.n12, self.n34, self.n56, self.n78)


class SectorBasis:
    """Occupation basis of one conserved sector (or of the full space).

    With a key, the basis is the product grid over one free coordinate per
    pair (the occupation of the pair's first mode); states are ordered
    lexicographically in the full occupation tuple, which coincides with
    C-order over those free coordinates.  With ``key=None`` the basis is the
    whole permutation-symmetric space at total number N (used only by the
    dense oracle at small N).
    """

    def __init__(
        self,
        N: int,
        key: SectorKey | None,
        active_modes: Sequence[int] = ALL_MODES,
        config: Config = DEFAULT_CONFIG,
    ):
        self.N = int(N)
        self.key = key
        self.active_modes = tuple(sorted(int(m) for m in active_modes))
        if any(m < 1 or m > 8 for m in self.active_modes):
            raise InactiveMode(f"modes must be in 1..8, got {self.active_modes}")
        active = set(self.active_modes)

        if key is not None:
            if key.total != self.N:
                raise InconsistentSector(
                    f"pair totals {key.as_tuple()} sum to {key.total}, expected N={self.N}"
                )
            # Free coordinate per pair: occupation of the pair's first mode.
            lows, highs = [], []
            for (m1, m2), n_pair in zip(PAIRS, key.as_tuple()):
                a1, a2 = m1 in active, m2 in active
                if a1 and a2:
                    lo, hi = 0, n_pair
                elif a1:
                    lo = hi = n_pair
                elif a2:
                    lo = hi = 0
                else:
                    if n_pair != 0:
                        raise InconsistentSector(
                            f"pair ({m1},{m2}) inactive but requires {n_pair} quanta"
                        )
                    lo = hi = 0
                lows.append(lo)
                highs.append(hi)
            self._lows = tuple(lows)
            self._highs = tuple(highs)
            shape = tuple(h - l + 1 for l, h in zip(lows, highs))
            self._shape = shape
            dim = 1
            for s in shape:
                dim *= s
            if dim > config.sector_cap:
                raise DimensionOverflow(
                    f"sector {key.as_tuple()} has {dim} states, cap is {config.sector_cap}"
                )
            self.dim = dim
            self._strides = tuple(
                int(np.prod(shape[i + 1 :], dtype=np.int64)) for i in range(4)
            )
            self._full_states = None
        else:
            # Full symmetric space: every composition of N over the active modes.
            states = sorted(_compositions(self.N, self.active_modes))
            if len(states) > config.sector_cap:
                raise DimensionOverflow(
                    f"full space at N={self.N} has {len(states)} states, "
                    f"cap is {config.sector_cap}"
                )
            self.dim = len(states)
            self._full_states = np.array(states, dtype=np.int64).reshape(self.dim, 8)
            self._full_index = {tuple(s): i for i, s in enumerate(states)}
            self._shape = None

    # -- indexing ---------------------------------------------------------

    def index(self, occ: Sequence[int]) -> int:
        """Position of an occupation tuple (length 8); SectorMismatch if absent."""
        occ = tuple(int(k) for k in occ)
        if len(occ) != 8 or min(occ) < 0:
            raise SectorMismatch(f"bad occupation tuple {occ}")
        if self.key is None:
            try:
                return self._full_index[occ]
            except KeyError:
                raise SectorMismatch(f"{occ} not in full space N={self.N}") from None
        idx = 0
        for p, ((m1, m2), n_pair) in enumerate(zip(PAIRS, self.key.as_tuple())):
            k1, k2 = occ[m1 - 1], occ[m2 - 1]
            if k1 + k2 != n_pair or not (self._lows[p] <= k1 <= self._highs[p]):
                raise SectorMismatch(f"{occ} not in sector {self.key.as_tuple()}")
            idx += (k1 - self._lows[p]) * self._strides[p]
        return idx

    def occupations(self, mode: int) -> np.ndarray:
        """Occupation of one mode across the whole basis (1D int64 array)."""
        if self.key is None:
            return self._full_states[:, mode - 1].copy()
        pair = (mode - 1) // 2
        first = mode % 2 == 1
        coord = self._coordinate(pair)
        if first:
            return coord
        return self.key.as_tuple()[pair] - coord

    def _coordinate(self, pair: int) -> np.ndarray:
        idx = np.arange(self.dim, dtype=np.int64)
        return (idx // self._strides[pair]) % self._shape[pair] + self._lows[pair]

    @property
    def states(self) -> np.ndarray:
        """(dim, 8) occupations; materialized on demand."""
        if self.key is None:
            return self._full_states
        out = np.zeros((self.dim, 8), dtype=np.int64)
        for mode in self.active_modes:
            out[:, mode - 1] = self.occupations(mode)
        return out

    def state_tuple(self, i: int) -> tuple[int, ...]:
        if self.key is None:
            return tuple(self._full_states[i])
        occ = [0] * 8
        for p, (m1, m2) in enumerate(PAIRS):
            k1 = (i // self._strides[p]) % self._shape[p] + self._lows[p]
            occ[m1 - 1] = int(k1)
            occ[m2 - 1] = int(self.key.as_tuple()[p] - k1)
        return tuple(occ)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SectorBasis)
            and self.N == other.N
            and self.key == other.key
            and self.active_modes == other.active_modes
        )

    def __hash__(self):
        return hash((self.N, self.key, self.active_modes))

    def __repr__(self) -> str:
        k = None if self.key is None else self.key.as_tuple()
        return f"SectorBasis(N={self.N}, key={k}, dim={self.dim})"


def _compositions(n: int, modes: Sequence[int]) -> list[tuple[int, ...]]:
    """All occupation 8-tuples with total n supported on the given modes."""
    modes = list(modes)

    def rec(pos: int, remaining: int):
        if pos == len(modes) - 1:
            occ = [0] * 8
            occ[modes[pos] - 1] = remaining
            yield occ
            return
        for k in range(remaining + 1):
            for tail in rec(pos + 1, remaining - k):
                tail = list(tail)
                tail[modes[pos] - 1] = k
                yield tail

    if not modes:
        return [tuple([0] * 8)] if n == 0 else []
    return [tuple(occ) for occ in rec(0, n)]


def enumerate_sector(
    N: int,
    key: SectorKey,
    active_modes: Sequence[int] = FOUR_MODES,
    config: Config = DEFAULT_CONFIG,
) -> SectorBasis:
    """Basis of the sector with fixed pair totals, deterministic lex order."""
    return SectorBasis(N, key, active_modes, config)


def enumerate_full_space(
    N: int, config: Config = DEFAULT_CONFIG
) -> SectorBasis:
    """Full permutation-symmetric space at total number N (small N only)."""
    return SectorBasis(N, None, ALL_MODES, config)


# -- vectors --------------------------------------------------------------


class FockVector:
    """Complex amplitudes over a SectorBasis with a separate log magnitude.

    The represented vector is ``exp(log_scale) * amplitudes``; renormalization
    moves powers of two between the two parts, so it is exact.

    ``gauge`` names the ladder normalization of the basis: ``orthonormal``
    (creation carries sqrt(k+1)) or ``ladder`` (creation carries 1,
    annihilation carries k).  In the ladder gauge the stored entries are the
    orthonormal amplitudes times sqrt(N! / prod k_j!), which keeps every
    entry comparable to its eventual overlap contribution; this is what makes
    initial-state overlaps well conditioned at large N.
    """

    __slots__ = ("basis", "amplitudes", "log_scale", "gauge")

    def __init__(
        self,
        basis: SectorBasis,
        amplitudes: np.ndarray,
        log_scale: float = 0.0,
        gauge: str = "orthonormal",
    ):
        amplitudes = np.asarray(amplitudes, dtype=np.complex128)
        if amplitudes.shape != (basis.dim,):
            raise SectorMismatch(
                f"amplitude array of shape {amplitudes.shape} for basis dim {basis.dim}"
            )
        if gauge not in ("orthonormal", "ladder"):
            raise ValueError(f"unknown gauge {gauge!r}")
        self.basis = basis
        self.amplitudes = amplitudes
        self.log_scale = float(log_scale)
        self.gauge = gauge

    @classmethod
    def zero(cls, basis: SectorBasis, gauge: str = "orthonormal") -> "FockVector":
        return cls(basis, np.zeros(basis.dim, dtype=np.complex128), 0.0, gauge)

    def copy(self) -> "FockVector":
        return FockVector(self.basis, self.amplitudes.copy(), self.log_scale, self.gauge)

    def renormalize(self) -> "FockVector":
        """Scale amplitudes by a power of two so max |amplitude| is in [0.5, 1)."""
        m = float(np.max(np.abs(self.amplitudes))) if self.basis.dim else 0.0
        if m == 0.0 or not math.isfinite(m):
            return self
        _, exp = math.frexp(m)
        if exp != 0:
            self.amplitudes *= 2.0 ** (-exp)
            self.log_scale += exp * math.log(2.0)
        return self

    @property
    def norm(self) -> float:
        """2-norm of the represented vector, as log-scaled float."""
        return float(np.linalg.norm(self.amplitudes)) * math.exp(self.log_scale)

    def log_norm(self) -> float:
        n = float(np.linalg.norm(self.amplitudes))
        if n == 0.0:
            return -math.inf
        return math.log(n) + self.log_scale


@dataclass(frozen=True)
class DualWeightSpec:
    """Expansion weights of the initial product state, (sum_j alpha_j d_j+)^N."""

    alpha: np.ndarray
    N: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=complex))
        if self.alpha.shape != (8,):
            raise ValueError("alpha must have 8 entries (one per mode)")


def initial_dual(N: int, frame: str | ModeFrame = "b") -> DualWeightSpec:
    """Dual weights of the initial product state in the given frame."""
    return DualWeightSpec(get_frame(frame).initial_alpha(), N)


def _quarter_phase(z: complex) -> tuple[float, int]:
    """Split z into (log magnitude, quarter-turn count); z must lie on an axis."""
    mag = abs(z)
    if mag == 0.0:
        return -math.inf, 0
    q = math.atan2(z.imag, z.real) / (math.pi / 2.0)
    qi = round(q)
    if abs(q - qi) > 1e-9:
        raise ValueError(
            f"dual weight {z} is not axis-aligned; phases would lose precision"
        )
    return math.log(mag), qi % 4


def compensated_sum(values: np.ndarray, extended: bool = False) -> complex:
    """Deterministic compensated sum of a complex array.

    Chunked pairwise partial sums combined with Kahan compensation; the
    extended path uses exact ``math.fsum`` on both components.
    """
    values = np.asarray(values, dtype=np.complex128)
    if extended:
        return complex(math.fsum(values.real), math.fsum(values.imag))
    n = values.size
    if n == 0:
        return 0.0 + 0.0j
    chunk = 4096
    partials = [np.sum(values[i : i + chunk]) for i in range(0, n, chunk)]
    total = 0.0 + 0.0j
    comp = 0.0 + 0.0j
    for p in partials:
        y = complex(p) - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


def dual_pair(
    v: FockVector, dual: DualWeightSpec, config: Config = DEFAULT_CONFIG
) -> complex:
    """Overlap <initial product state | v>, all large factors in the log domain.

    Per basis state k the weight is
    ``sqrt(N! / prod k_j!) * prod conj(alpha_j)^{k_j}``; its log magnitude is
    combined with ``v.log_scale`` before exponentiation and the sum over the
    basis is compensated.
    """
    basis = v.basis
    N = dual.N
    if basis.N != N:
        raise SectorMismatch(f"dual is for N={N}, vector basis has N={basis.N}")

    table = log_factorial_table(N)
    log_mag = np.full(basis.dim, v.log_scale, dtype=np.longdouble)
    if v.gauge == "orthonormal":
        log_mag += 0.5 * table[N]
    quarter = np.zeros(basis.dim, dtype=np.int64)
    for mode in basis.active_modes:
        k = basis.occupations(mode)
        if v.gauge == "orthonormal":
            log_mag -= 0.5 * table[k]
        la, qa = _quarter_phase(complex(dual.alpha[mode - 1]))
        # Bra side: conjugated weights.
        qa = (-qa) % 4
        if math.isinf(la):
            log_mag = np.where(k > 0, -np.inf, log_mag)
        else:
            log_mag += k * la
            quarter += k * qa
    # Weights far outside a vector's support can be astronomically large
    # (the witness scale is ~ 8^{N/2}); contributions are therefore formed
    # fully in the log domain on the vector's support only.
    support = np.nonzero(v.amplitudes)[0]
    if support.size == 0:
        return 0.0 + 0.0j
    amps = v.amplitudes[support]
    contrib_log = log_mag[support] + np.log(np.abs(amps).astype(np.longdouble))
    cref = np.longdouble(np.max(contrib_log))
    if not math.isfinite(float(cref)):
        return 0.0 + 0.0j
    phases = _QUARTER_PHASES[quarter[support] % 4] * (amps / np.abs(amps))
    s = compensated_sum(
        np.exp((contrib_log - cref).astype(np.float64)) * phases,
        config.extended_accumulator,
    )
    mag = abs(s)
    if mag == 0.0:
        return 0.0 + 0.0j
    total_log = float(cref + np.log(np.longdouble(mag)))
    if total_log > 700.0:
        raise SectorMismatch(
            "overlap magnitude overflows double precision; check witness scaling"
        )
    if total_log < -745.0:
        return 0.0 + 0.0j
    return complex((s / mag) * math.exp(total_log))


_LOG_FACTORIAL_CACHE: dict[int, np.ndarray] = {}


def log_factorial_table(n: int) -> np.ndarray:
    """ln(k!) for k = 0..n in longdouble (cached); differences of these
    reach ~N ln N and enter overlap exponents, where float64 lgamma noise
    would already cost ~1e-11."""
    for cap in _LOG_FACTORIAL_CACHE:
        if cap >= n:
            return _LOG_FACTORIAL_CACHE[cap][: n + 1]
    table = np.zeros(n + 1, dtype=np.longdouble)
    if n >= 1:
        table[1:] = np.cumsum(np.log(np.arange(1, n + 1, dtype=np.longdouble)))
    _LOG_FACTORIAL_CACHE.clear()
    _LOG_FACTORIAL_CACHE[n] = table
    return table


def half_log_factorial_sums(basis: SectorBasis) -> np.ndarray:
    """0.5 * sum_m ln(k_m!) per basis state, accumulated in extended precision.

    The absolute values reach ~N ln N while gauge ratios need their small
    differences; longdouble keeps the cancellation error below ~1e-11.
    """
    cum = log_factorial_table(basis.N)
    total = np.zeros(basis.dim, dtype=np.longdouble)
    for mode in basis.active_modes:
        total += cum[basis.occupations(mode)]
    return 0.5 * total


def to_ladder_gauge(v: FockVector) -> FockVector:
    """Rescale an orthonormal-gauge vector into the ladder gauge.

    Meaningful only while the support is narrow (witness construction); the
    per-entry factors sqrt(N!/prod k_j!) span the full combinatorial range.
    """
    if v.gauge == "ladder":
        return v.copy()
    basis = v.basis
    lg = -half_log_factorial_sums(basis)
    support = np.nonzero(v.amplitudes)[0]
    if support.size == 0:
        return FockVector.zero(basis, "ladder")
    ref = np.longdouble(np.max(lg[support]))
    amps = np.zeros(basis.dim, dtype=np.complex128)
    amps[support] = v.amplitudes[support] * np.exp(
        (lg[support] - ref).astype(np.float64)
    )
    half_lgn = 0.5 * log_factorial_table(basis.N)[basis.N]
    out = FockVector(
        basis,
        amps,
        float(np.longdouble(v.log_scale) + half_lgn + ref),
        "ladder",
    )
    out.renormalize()
    return out


# -- operators ------------------------------------------------------------


class SectorOperator:
    """Sparse operator between sector bases (usually an endomorphism)."""

    __slots__ = ("basis_from", "basis_to", "matrix", "gauge")

    def __init__(
        self,
        basis_from: SectorBasis,
        basis_to: SectorBasis,
        matrix: csr_matrix,
        gauge: str = "orthonormal",
    ):
        self.basis_from = basis_from
        self.basis_to = basis_to
        self.matrix = matrix
        self.gauge = gauge

    @property
    def basis(self) -> SectorBasis:
        return self.basis_to

    def apply(self, v: FockVector) -> FockVector:
        if v.basis != self.basis_from:
            raise SectorMismatch("operator applied to vector from a different basis")
        if v.gauge != self.gauge:
            raise SectorMismatch("operator and vector use different gauges")
        return FockVector(self.basis_to, self.matrix @ v.amplitudes, v.log_scale, v.gauge)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def dagger(self) -> "SectorOperator":
        return SectorOperator(
            self.basis_to, self.basis_from, self.matrix.conj().T.tocsr(), self.gauge
        )

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def build_bilinear(
    basis: SectorBasis,
    terms: Iterable[tuple[int, int, complex]],
    gauge: str = "orthonormal",
) -> SectorOperator:
    """Sector operator sum_t coeff_t * b_i+ b_j for the given (i, j, coeff) terms.

    In the orthonormal gauge off-diagonal elements are sqrt((k_i + 1) k_j)
    between tuples differing by one quantum moved j -> i; in the ladder gauge
    they are k_j.  Diagonal terms give k_i in both.  Every term must stay
    inside the sector (same pair for keyed bases).
    """
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    data: list[np.ndarray] = []
    active = set(basis.active_modes)
    idx = np.arange(basis.dim, dtype=np.int64)

    def hop_weight(ki: np.ndarray, kj: np.ndarray) -> np.ndarray:
        if gauge == "ladder":
            return kj.astype(np.float64)
        return np.sqrt((ki + 1.0) * kj)

    for i, j, coeff in terms:
        if i not in active or j not in active:
            raise InactiveMode(f"term ({i},{j}) uses a mode outside {basis.active_modes}")
        coeff = complex(coeff)
        if coeff == 0:
            continue
        ki = basis.occupations(i)
        if i == j:
            rows.append(idx)
            cols.append(idx)
            data.append(coeff * ki.astype(np.complex128))
            continue
        kj = basis.occupations(j)
        if basis.key is not None:
            if (i - 1) // 2 != (j - 1) // 2:
                raise SectorMismatch(
                    f"term ({i},{j}) moves quanta between pairs and leaves the sector"
                )
            pair = (i - 1) // 2
            stride = basis._strides[pair]
            mask = kj >= 1
            # Moving toward the pair's first mode increases the free coordinate.
            delta = stride if i % 2 == 1 else -stride
            rows.append(idx[mask] + delta)
            cols.append(idx[mask])
            data.append(coeff * hop_weight(ki[mask], kj[mask]))
        else:
            mask = kj >= 1
            src = idx[mask]
            occ = basis.states[src].copy()
            occ[:, i - 1] += 1
            occ[:, j - 1] -= 1
            tgt = np.fromiter(
                (basis._full_index[tuple(o)] for o in occ), dtype=np.int64, count=len(src)
            )
            rows.append(tgt)
            cols.append(src)
            data.append(coeff * hop_weight(ki[mask], kj[mask]))

    if rows:
        mat = csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(basis.dim, basis.dim),
        )
        mat.sum_duplicates()
    else:
        mat = csr_matrix((basis.dim, basis.dim), dtype=np.complex128)
    return SectorOperator(basis, basis, mat, gauge)


def build_monomial(
    basis_from: SectorBasis,
    basis_to: SectorBasis,
    creators: Sequence[int],
    annihilators: Sequence[int],
    coeff: complex,
    gauge: str = "orthonormal",
) -> SectorOperator:
    """Normal-ordered monomial coeff * prod b_i+ prod b_j between two bases."""
    active = set(basis_from.active_modes) & set(basis_to.active_modes)
    for m in tuple(creators) + tuple(annihilators):
        if m not in active:
            raise InactiveMode(f"mode {m} outside {sorted(active)}")

    ann_counts: dict[int, int] = {}
    for m in annihilators:
        ann_counts[m] = ann_counts.get(m, 0) + 1
    cre_counts: dict[int, int] = {}
    for m in creators:
        cre_counts[m] = cre_counts.get(m, 0) + 1

    amp = np.full(basis_from.dim, complex(coeff), dtype=np.complex128)
    mask = np.ones(basis_from.dim, dtype=bool)
    occ = basis_from.states.copy()
    for m, c in ann_counts.items():
        k = occ[:, m - 1]
        mask &= k >= c
        for step in range(c):
            factor = np.maximum(k - step, 0).astype(np.float64)
            amp *= factor if gauge == "ladder" else np.sqrt(factor)
        occ[:, m - 1] = k - c
    for m, c in cre_counts.items():
        k = occ[:, m - 1]
        if gauge != "ladder":
            for step in range(c):
                amp *= np.sqrt(k + step + 1.0)
        occ[:, m - 1] = k + c

    src = np.nonzero(mask)[0]
    tgt = np.empty(len(src), dtype=np.int64)
    for pos, s in enumerate(src):
        tgt[pos] = basis_to.index(occ[s])
    mat = csr_matrix(
        (amp[src], (tgt, src)), shape=(basis_to.dim, basis_from.dim)
    )
    return SectorOperator(basis_from, basis_to, mat, gauge)


# -- polynomial-of-creation states ----------------------------------------


def build_polynomial_state(
    basis: SectorBasis,
    factors: Sequence[tuple[Sequence[complex], int]],
    gauge: str = "orthonormal",
) -> FockVector:
    """State prod_i (sum_j alpha_ij b_j+)^{p_i} |vacuum> over the given basis.

    Construction is by iterated application of each creation polynomial on a
    sparse occupation dictionary, renormalizing between factors; a factor
    supported on a single mode is applied in closed form so that, e.g., the
    (b1+)^N tail of a witness costs O(1).  In the ladder gauge creation
    carries no sqrt factors, so witness amplitudes are plain multinomial
    coefficients and no large logs arise at all.  Raises SectorMismatch when
    the resulting state does not lie in the basis.
    """
    ladder = gauge == "ladder"
    support: dict[tuple[int, ...], complex] = {(0,) * 8: 1.0 + 0.0j}
    log_scale = 0.0
    active = set(basis.active_modes)
    pair_caps = None if basis.key is None else basis.key.as_tuple()

    for alpha, power in factors:
        alpha = np.asarray(alpha, dtype=complex)
        if alpha.shape != (8,):
            raise ValueError("factor coefficients must have 8 entries")
        power = int(power)
        if power < 0:
            raise ValueError("factor power must be nonnegative")
        if power == 0:
            continue
        nz = [m for m in range(1, 9) if alpha[m - 1] != 0]
        if any(m not in active for m in nz):
            raise SectorMismatch(
                f"factor touches inactive modes {sorted(set(nz) - active)}"
            )
        if not nz:
            raise SectorMismatch("zero factor raised to a positive power")

        if len(nz) == 1:
            # (alpha_m b_m+)^p: occupation jump; in the orthonormal gauge it
            # carries sqrt((k+1)...(k+p)), in the ladder gauge weight one.
            m = nz[0]
            la, qa = _quarter_phase(complex(alpha[m - 1]))
            phase = _QUARTER_PHASES[(qa * power) % 4]
            entries = []
            table = log_factorial_table(basis.N) if not ladder else None
            for occ, amp in support.items():
                k = occ[m - 1]
                lg = 0.0 if ladder else 0.5 * float(table[k + power] - table[k])
                t = list(occ)
                t[m - 1] = k + power
                entries.append((tuple(t), amp * phase, lg))
            lg_ref = max(lg for _, _, lg in entries)
            support = {t: amp * math.exp(lg - lg_ref) for t, amp, lg in entries}
            support = _prune(support, pair_caps)
            log_scale += power * la + lg_ref
        else:
            for _ in range(power):
                new: dict[tuple[int, ...], complex] = {}
                for occ, amp in support.items():
                    for m in nz:
                        k = occ[m - 1]
                        t = list(occ)
                        t[m - 1] = k + 1
                        t = tuple(t)
                        contrib = amp * alpha[m - 1]
                        if not ladder:
                            contrib *= math.sqrt(k + 1.0)
                        if t in new:
                            new[t] += contrib
                        else:
                            new[t] = contrib
                support = _prune(new, pair_caps)
                if not support:
                    raise SectorMismatch(
                        "polynomial state left the sector during construction"
                    )
                m_abs = max(abs(a) for a in support.values())
                _, e = math.frexp(m_abs)
                if e:
                    scale = 2.0 ** (-e)
                    support = {k_: v * scale for k_, v in support.items()}
                    log_scale += e * math.log(2.0)

        if not support:
            raise SectorMismatch("polynomial state left the sector during construction")

    amps = np.zeros(basis.dim, dtype=np.complex128)
    for occ, amp in support.items():
        try:
            amps[basis.index(occ)] = amp
        except SectorMismatch:
            raise SectorMismatch(
                f"constructed state has support on {occ}, outside {basis!r}"
            ) from None
    vec = FockVector(basis, amps, log_scale, gauge)
    vec.renormalize()
    return vec


def _prune(
    support: dict[tuple[int, ...], complex],
    pair_caps: tuple[int, int, int, int] | None,
) -> dict[tuple[int, ...], complex]:
    """Drop intermediate states that can no longer reach the target sector.

    Creation only adds quanta, so exceeding a pair total is irrecoverable.
    """
    if pair_caps is None:
        return support
    out = {}
    for occ, amp in support.items():
        ok = True
        for p, (m1, m2) in enumerate(PAIRS):
            if occ[m1 - 1] + occ[m2 - 1] > pair_caps[p]:
                ok = False
                break
        if ok:
            out[occ] = amp
    return out


# -- frame changes ----------------------------------------------------------


def change_frame(
    v: FockVector,
    frame_from: str | ModeFrame,
    frame_to: str | ModeFrame,
    config: Config = DEFAULT_CONFIG,
) -> FockVector:
    """Re-express a vector in another mode frame.

    Pair-local relative rotations preserve the sector key; anything else
    (the a <-> b change) spans multiple pair-number labels and is returned
    over the full symmetric space, which caps this path to small N.
    """
    frame_from = get_frame(frame_from)
    frame_to = get_frame(frame_to)
    rel = relative_matrix(frame_from, frame_to)
    if np.max(np.abs(rel - np.eye(8))) < 1e-15:
        return v.copy()

    pair_local = all(
        np.max(np.abs(np.delete(rel[lo : lo + 2], [lo, lo + 1], axis=1))) < 1e-14
        for lo in range(0, 8, 2)
    )
    src = v.basis
    if pair_local and src.key is not None:
        active = set(src.active_modes)
        for m1, m2 in PAIRS:
            block = rel[m1 - 1 : m2, m1 - 1 : m2]
            if np.max(np.abs(block - np.eye(2))) > 1e-14 and (
                m1 in active or m2 in active
            ):
                active |= {m1, m2}
        target = SectorBasis(src.N, src.key, sorted(active), config)
    else:
        target = enumerate_full_space(src.N, config)

    pieces: list[tuple[float, np.ndarray]] = []
    for s in np.nonzero(v.amplitudes)[0]:
        occ = src.state_tuple(int(s))
        factors = [(rel[:, m - 1], occ[m - 1]) for m in src.active_modes if occ[m - 1]]
        if factors:
            w = build_polynomial_state(target, factors)
        else:
            w = FockVector.zero(target)
            w.amplitudes[target.index((0,) * 8)] = 1.0
        state_norm = 0.5 * sum(math.lgamma(k + 1) for k in occ)
        amp = v.amplitudes[int(s)]
        pieces.append(
            (w.log_scale - state_norm + math.log(abs(amp)), w.amplitudes * (amp / abs(amp)))
        )
    if not pieces:
        return FockVector.zero(target)
    lref = max(l for l, _ in pieces)
    out = np.zeros(target.dim, dtype=np.complex128)
    for l, amps in pieces:
        out += math.exp(l - lref) * amps
    result = FockVector(target, out, v.log_scale + lref)
    result.renormalize()
    if not np.all(np.isfinite(result.amplitudes)):
        raise SectorMismatch("frame change produced non-finite amplitudes")
    return result
