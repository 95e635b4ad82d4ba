"""Mode frames for the eight collective bosons.

A frame is a unitary recombination ``d_i = sum_j M[i, j] b_j`` of the eight
modes, stored through its matrix ``M`` relative to the reference frame ``b``
(so the b-frame matrix is the identity).  Supported frames:

* ``b``    -- the frame in which the four pair numbers are conserved,
* ``a``    -- the original collective modes (matrix ``C / sqrt(8)``),
* ``c``    -- pair-local +/-45 degree rotations of pairs (1,2) and (3,4),
* ``hybrid_b12_c34`` -- b-modes on pair (1,2), c-modes on pair (3,4).

The c and hybrid rotations act within mode pairs, so they preserve the pair
occupation totals; the a-frame does not.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UnsupportedFrame

SQRT8 = np.sqrt(8.0)

# Unitary relating a-modes to b-modes, a_n = (1/sqrt(8)) * C[n, m] b_m.
BOGOLIUBOV_C = np.array(
    [
        [1, -1, -1, -1, 1, 1, 1, -1],
        [1j, -1j, 1j, 1j, 1j, -1j, -1j, -1j],
        [1, 1, -1, 1, -1, 1, -1, -1],
        [1j, 1j, 1j, -1j, -1j, -1j, 1j, -1j],
        [1j, 1j, 1j, -1j, 1j, 1j, -1j, 1j],
        [-1, -1, 1, -1, -1, 1, -1, -1],
        [1j, -1j, 1j, 1j, -1j, 1j, 1j, 1j],
        [-1, 1, 1, 1, 1, 1, 1, -1],
    ],
    dtype=complex,
)

# Expansion weights of the initial product state over b-mode creation
# operators: (b1+ - b2+ - b3+ - b4+ + b5+ + b6+ + b7+ - b8+) / sqrt(8).
INITIAL_ALPHA_B = BOGOLIUBOV_C[0].conj() / SQRT8


def _pair_rotation_matrix() -> np.ndarray:
    """c-frame matrix: c1=(b1-b2)/r2, c2=(b1+b2)/r2, c3=(b3+b4)/r2, c4=(b4-b3)/r2."""
    m = np.eye(8, dtype=complex)
    r2 = np.sqrt(2.0)
    m[0, 0], m[0, 1] = 1 / r2, -1 / r2
    m[1, 0], m[1, 1] = 1 / r2, 1 / r2
    m[2, 2], m[2, 3] = 1 / r2, 1 / r2
    m[3, 2], m[3, 3] = -1 / r2, 1 / r2
    return m


def _hybrid_matrix() -> np.ndarray:
    m = np.eye(8, dtype=complex)
    m[2:4, 2:4] = _pair_rotation_matrix()[2:4, 2:4]
    return m


@dataclass(frozen=True)
class ModeFrame:
    """A named unitary frame of the eight collective modes."""

    name: str
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.matrix.setflags(write=False)

    @property
    def pair_local(self) -> bool:
        """True when the frame mixes modes only within the four pairs."""
        m = np.asarray(self.matrix)
        for lo in range(0, 8, 2):
            block = m[lo : lo + 2].copy()
            block[:, lo : lo + 2] = 0.0
            if np.any(np.abs(block) > 1e-14):
                return False
        return True

    def to_b(self, coeffs: np.ndarray) -> np.ndarray:
        """Map a creation-operator coefficient vector from this frame to b."""
        return np.asarray(self.matrix).T @ np.asarray(coeffs, dtype=complex)

    def from_b(self, coeffs: np.ndarray) -> np.ndarray:
        """Map a creation-operator coefficient vector from b to this frame.

        A linear form sum_j alpha_j b_j+ equals sum_i (M alpha)_i d_i+.
        """
        return np.asarray(self.matrix) @ np.asarray(coeffs, dtype=complex)

    def initial_alpha(self, modes: tuple[int, ...] | None = None) -> np.ndarray:
        """Initial-state expansion weights in this frame, optionally restricted.

        Restricting to a mode subset drops the weight carried by the other
        modes; this is exactly the projection used when an observable's
        witness occupies those modes only.
        """
        alpha = self.from_b(INITIAL_ALPHA_B)
        if modes is None:
            return alpha
        out = np.zeros(len(modes), dtype=complex)
        for pos, mode in enumerate(modes):
            out[pos] = alpha[mode - 1]
        return out


_FRAMES = {
    "b": ModeFrame("b", np.eye(8, dtype=complex)),
    "a": ModeFrame("a", BOGOLIUBOV_C / SQRT8),
    "c": ModeFrame("c", _pair_rotation_matrix()),
    "hybrid_b12_c34": ModeFrame("hybrid_b12_c34", _hybrid_matrix()),
}

FRAME_NAMES = tuple(_FRAMES)


def get_frame(name: str | ModeFrame) -> ModeFrame:
    if isinstance(name, ModeFrame):
        return name
    try:
        return _FRAMES[name]
    except KeyError:
        raise UnsupportedFrame(
            f"unknown frame {name!r}; supported: {', '.join(_FRAMES)}"
        ) from None


def relative_matrix(frame_from: ModeFrame, frame_to: ModeFrame) -> np.ndarray:
    """Unitary R with d_to = R d_from."""
    return np.asarray(frame_to.matrix) @ np.asarray(frame_from.matrix).conj().T
