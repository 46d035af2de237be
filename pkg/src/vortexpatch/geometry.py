"""Patch-boundary geometry: R, the two-point kernels A_r, B_r, and their
smooth factorizations across the diagonal singularity.

A patch state is the pair (b, r) with boundary radius R(theta) =
sqrt(b^2 + 2 r(theta)).  The kernels

    A_r(theta, eta) = |R(theta) e^{i theta} - R(eta) e^{i eta}|
    B_r(theta, eta) = |1 - R(theta) R(eta) e^{i (eta - theta)}|

are evaluated through cancellation-free algebraic forms, and the log-singular
kernel A_r is factorized as

    A_r = 2 b |sin((eta - theta)/2)| * v1(theta, eta)

with the smooth factor v1 carried across the diagonal by the difference
quotient g(theta, eta) = (f(eta) - f(theta)) / sin((eta - theta)/2),
g(theta, theta) = 2 f'(theta).
"""

from __future__ import annotations

import functools

import numpy as np

from .spectral import PeriodicField, spectral_derivative, theta_grid

__all__ = [
    "DegeneratePatchError",
    "BoundaryContactError",
    "PatchState",
    "KernelTable",
    "kernel_A",
    "kernel_B",
    "kernel_P",
    "smooth_factor_v1",
    "diagonal_difference_quotient",
    "log_v1",
    "log_one_plus_P_half",
]

#: patches must stay strictly inside the unit disc by this margin
DISC_MARGIN = 1e-6
#: relative safety margin below the positivity bound |r| < b^2/2
RADIUS_MARGIN = 1e-9


class DegeneratePatchError(ValueError):
    """The deformation r violates b^2 + 2r > 0 (R would not be real)."""


class BoundaryContactError(ValueError):
    """The patch touches the unit circle (log B_r would blow up)."""


class PatchState:
    """Radius parameter b plus deformation field r(theta)."""

    def __init__(self, b: float, r: PeriodicField):
        if not 0.0 < b < 1.0:
            raise ValueError("b must lie in (0, 1)")
        if r.dims != 1:
            raise ValueError("patch deformation must be a theta-only field")
        self.b = float(b)
        self.r = r
        rmax = float(np.max(np.abs(r.values.real)))
        bound = 0.5 * b * b
        if rmax >= bound * (1.0 - RADIUS_MARGIN):
            raise DegeneratePatchError(
                f"sup|r| = {rmax:.3e} reaches the positivity bound b^2/2 = {bound:.3e}"
            )
        self.R = np.sqrt(b * b + 2.0 * r.values)
        if not np.all(self.R > 0.0):
            raise DegeneratePatchError("boundary radius R fails positivity on the grid")

    @property
    def M(self) -> int:
        return self.r.grid_sizes[0]

    @property
    def theta(self) -> np.ndarray:
        return theta_grid(self.M)

    def dR(self) -> np.ndarray:
        """d_theta R by spectral differentiation of r: R' = r'/R."""
        return spectral_derivative(self.r.values) / self.R

    def require_inside_disc(self):
        if float(np.max(self.R)) > 1.0 - DISC_MARGIN:
            raise BoundaryContactError("patch touches the unit circle: max R > 1 - 1e-6")


class KernelTable:
    """Dense M x M samples of a two-point kernel k(theta, eta)."""

    def __init__(self, values: np.ndarray, symmetric: bool = False):
        self.values = np.asarray(values)
        self.symmetric = symmetric

    @property
    def M(self) -> int:
        return self.values.shape[0]


@functools.lru_cache(maxsize=32)
def pair_trig(M: int):
    """Cached (delta, sin delta, cos delta, sin(delta/2)) tables with
    delta[i, k] = theta_k - theta_i (eta minus theta). Treat as read-only."""
    th = theta_grid(M)
    delta = th[None, :] - th[:, None]
    return delta, np.sin(delta), np.cos(delta), np.sin(0.5 * delta)


def _pair_grids(state: PatchState):
    R = state.R
    Rt = R[:, None]
    Re = R[None, :]
    delta = pair_trig(state.M)[0]
    return Rt, Re, delta


def kernel_A(state: PatchState) -> KernelTable:
    """A_r via the stable form ((R(theta)-R(eta))^2 + 4 R R sin^2((eta-theta)/2))^{1/2}."""
    Rt, Re, _ = _pair_grids(state)
    sh = pair_trig(state.M)[3]
    diff2 = (Rt - Re) ** 2
    vals = np.sqrt(diff2 + 4.0 * Rt * Re * sh * sh)
    np.fill_diagonal(vals, 0.0)
    return KernelTable(vals, symmetric=True)


def kernel_B(state: PatchState) -> KernelTable:
    """B_r = |1 - R(theta) R(eta) e^{i(eta-theta)}| (smooth, bounded below)."""
    state.require_inside_disc()
    Rt, Re, _ = _pair_grids(state)
    cs = pair_trig(state.M)[2]
    prod = Rt * Re
    vals = np.sqrt(prod * prod - 2.0 * prod * cs + 1.0)
    return KernelTable(vals, symmetric=True)


def kernel_P(state: PatchState) -> KernelTable:
    """P_r with B_r^2 = B_0^2 (1 + P_r); P_0 = 0.

    P_r = ((R R)^2 - b^4 - 2 (R R - b^2) cos) / (1 + b^4 - 2 b^2 cos).
    """
    state.require_inside_disc()
    b2 = state.b ** 2
    Rt, Re, _ = _pair_grids(state)
    prod = Rt * Re
    cs = pair_trig(state.M)[2]
    B0sq = 1.0 + b2 * b2 - 2.0 * b2 * cs
    num = (prod * prod - b2 * b2) - 2.0 * (prod - b2) * cs
    return KernelTable(num / B0sq, symmetric=True)


def diagonal_difference_quotient(f: PeriodicField) -> KernelTable:
    """g(theta, eta) = (f(eta) - f(theta))/sin((eta-theta)/2), g(theta,theta) = 2 f'(theta)."""
    vals = f.values
    M = len(vals)
    s = pair_trig(M)[3].copy()
    np.fill_diagonal(s, 1.0)  # placeholder, diagonal overwritten below
    g = (vals[None, :] - vals[:, None]) / s
    np.fill_diagonal(g, 2.0 * spectral_derivative(vals))
    # (f(eta)-f(theta)) and sin((eta-theta)/2) both flip sign under swap
    return KernelTable(g, symmetric=True)


def smooth_factor_v1(state: PatchState) -> KernelTable:
    """The smooth factor v1 with A_r = 2 b |sin((eta-theta)/2)| v1.

    v1 = sqrt((g/(2b))^2 + R(theta) R(eta)/b^2) where g is the difference
    quotient of R; on the diagonal this is sqrt(R'^2 + R^2)/b.
    """
    Rfield = PeriodicField(state.R)
    g = diagonal_difference_quotient(Rfield).values
    Rt, Re, _ = _pair_grids(state)
    b = state.b
    vals = np.sqrt((g / (2.0 * b)) ** 2 + Rt * Re / (b * b))
    return KernelTable(vals, symmetric=True)


def log_v1(state: PatchState) -> KernelTable:
    """log v1: the smooth part of log A_r = log(2b) + K1(eta-theta) + log v1."""
    v = smooth_factor_v1(state).values
    return KernelTable(np.log(v), symmetric=True)


def log_one_plus_P_half(state: PatchState) -> KernelTable:
    """(1/2) log(1 + P_r): the smooth part of log B_r = K2(eta-theta) + (1/2)log(1+P_r)."""
    P = kernel_P(state).values
    return KernelTable(0.5 * np.log1p(P), symmetric=True)
