"""Discrete periodic fields, Fourier calculus, and truncated operator matrices.

Conventions used throughout the package:

* the torus integral is normalized, ``int_T f = (1/2pi) int_0^{2pi} f``, and
  every quadrature is the plain average of uniform grid samples (trapezoid
  rule, spectrally accurate for smooth periodic integrands);
* Fourier coefficients are taken with ``norm="forward"`` so that
  ``coeffs[0] = mean(f)`` and Parseval reads ``sum |c|^2 = mean |f|^2``;
* fields live on grids ``(phi_1, ..., phi_d, theta)`` with theta on the last
  axis; grid sizes are powers of two.
"""

from __future__ import annotations

import functools

import numpy as np

__all__ = [
    "PeriodicField",
    "LinearOperatorMatrix",
    "theta_grid",
    "e_mode",
    "project",
    "sobolev_norm",
    "antiderivative",
    "symplectic_pairing",
    "offdiag_norm",
    "apply_operator",
    "k1_multiplier_coeffs",
    "k2_multiplier_coeffs",
    "convolve_multiplier",
    "shifted_kernel_integral",
    "spectral_derivative",
]


@functools.lru_cache(maxsize=64)
def theta_grid(M: int) -> np.ndarray:
    """Uniform grid of M points on [0, 2pi). Cached; treat as read-only."""
    return 2.0 * np.pi * np.arange(M) / M


@functools.lru_cache(maxsize=64)
def _mode_numbers(n: int) -> np.ndarray:
    """Integer Fourier mode numbers in FFT storage order. Cached; read-only."""
    return np.fft.fftfreq(n, 1.0 / n).astype(int)


class PeriodicField:
    """A function on the torus, held as real samples on a uniform grid.

    The last axis is theta; any leading axes are the phi angles. Complex
    values are tolerated (needed when operators are applied to the complex
    exponential basis during matrix assembly); ``is_real`` reports which
    case we are in.
    """

    def __init__(self, values, zero_mean: bool = False):
        values = np.asarray(values)
        if values.dtype.kind not in "fc":
            values = values.astype(float)
        for n in values.shape:
            if n < 2 or (n & (n - 1)) != 0:
                raise ValueError(f"grid sizes must be powers of two, got {values.shape}")
        if zero_mean:
            values = values - values.mean()
        self.values = values
        self.zero_mean = zero_mean
        self._coeffs = None

    # -- constructors -------------------------------------------------

    @classmethod
    def from_coeffs(cls, coeffs, real: bool = True) -> "PeriodicField":
        vals = np.fft.ifftn(np.asarray(coeffs, dtype=complex), norm="forward")
        if real:
            vals = vals.real
        f = cls(vals)
        return f

    @classmethod
    def zeros(cls, *shape) -> "PeriodicField":
        return cls(np.zeros(shape))

    # -- basic structure ----------------------------------------------

    @property
    def dims(self) -> int:
        return self.values.ndim

    @property
    def grid_sizes(self):
        return self.values.shape

    @property
    def is_real(self) -> bool:
        return self.values.dtype.kind == "f"

    @property
    def coeffs(self) -> np.ndarray:
        if self._coeffs is None:
            self._coeffs = np.fft.fftn(self.values, norm="forward")
            if self.zero_mean:
                self._coeffs[(0,) * self.values.ndim] = 0.0
        return self._coeffs

    def mean(self) -> float:
        return self.values.mean()

    def mode_weights(self) -> np.ndarray:
        """The lattice weight <l, j> = max(1, |l|_1, |j|) on the coeff grid."""
        shape = self.values.shape
        mats = np.meshgrid(*[np.abs(_mode_numbers(n)) for n in shape], indexing="ij")
        lsum = sum(mats[:-1]) if len(mats) > 1 else np.zeros(shape, dtype=int)
        return np.maximum(1, np.maximum(lsum, mats[-1]))

    def __add__(self, other):
        if isinstance(other, PeriodicField):
            return PeriodicField(self.values + other.values)
        return PeriodicField(self.values + other)

    def __sub__(self, other):
        if isinstance(other, PeriodicField):
            return PeriodicField(self.values - other.values)
        return PeriodicField(self.values - other)

    def __mul__(self, c):
        return PeriodicField(self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return PeriodicField(-self.values)


def e_mode(shape, l, j) -> PeriodicField:
    """The complex exponential e_{l,j}(phi, theta) = exp(i(l.phi + j theta))."""
    shape = tuple(shape)
    l = np.atleast_1d(np.asarray(l, dtype=int)) if l is not None else np.array([], dtype=int)
    grids = np.meshgrid(*[theta_grid(n) for n in shape], indexing="ij")
    phase = j * grids[-1]
    for li, g in zip(l, grids[:-1]):
        phase = phase + li * g
    return PeriodicField(np.exp(1j * phase))


def project(field: PeriodicField, N: int) -> PeriodicField:
    """Cut-off projector Pi_N: zero all coefficients with <l,j> > N."""
    if N < 1:
        raise ValueError("projection cutoff must be >= 1")
    limit = max(n // 2 for n in field.grid_sizes)
    if N > limit:
        raise ValueError(f"cutoff N={N} exceeds grid truncation {limit}")
    keep = field.mode_weights() <= N
    return PeriodicField.from_coeffs(field.coeffs * keep, real=field.is_real)


def sobolev_norm(field: PeriodicField, s: float) -> float:
    """H^s norm: (sum <l,j>^{2s} |c_{l,j}|^2)^{1/2}."""
    w = field.mode_weights().astype(float)
    return float(np.sqrt(np.sum(w ** (2.0 * s) * np.abs(field.coeffs) ** 2)))


def spectral_derivative(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """d/dtheta (or d/dphi_i) by exact Fourier differentiation."""
    n = values.shape[axis]
    k = _mode_numbers(n)
    shape = [1] * values.ndim
    shape[axis] = n
    hat = np.fft.fft(values, axis=axis) * (1j * k.reshape(shape))
    out = np.fft.ifft(hat, axis=axis)
    return out.real if np.isrealobj(values) else out


def antiderivative(field: PeriodicField) -> PeriodicField:
    """The zero-mean theta-antiderivative: coefficient rule c_j -> c_j/(ij)."""
    if abs(field.mean()) > 1e-12:
        raise ValueError("antiderivative requires a zero-mean field")
    c = field.coeffs.copy()
    j = _mode_numbers(field.grid_sizes[-1])
    denom = 1j * j
    denom[0] = 1.0  # mean channel removed below
    shape = [1] * field.dims
    shape[-1] = len(j)
    c = c / denom.reshape(shape)
    sl = [slice(None)] * field.dims
    sl[-1] = 0
    c[tuple(sl)] = 0.0
    return PeriodicField.from_coeffs(c, real=field.is_real)


def symplectic_pairing(r: PeriodicField, h: PeriodicField) -> float:
    """W(r, h) = int_T (d_theta^{-1} r) h dtheta (normalized measure)."""
    pr = antiderivative(r)
    if abs(h.mean()) > 1e-12:
        raise ValueError("symplectic pairing requires zero-mean fields")
    val = np.mean(pr.values * h.values)
    return float(np.real(val))


# ---------------------------------------------------------------------------
# Fourier multipliers of the two singular/smoothing kernels
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=64)
def k1_multiplier_coeffs(M: int) -> np.ndarray:
    """Fourier coefficients of K1(u) = (1/2) log(sin^2(u/2)).

    Mode m != 0 carries -1/(2|m|); the mean is -log 2.
    """
    m = _mode_numbers(M)
    out = np.empty(M)
    out[0] = -np.log(2.0)
    out[1:] = -0.5 / np.abs(m[1:])
    return out


@functools.lru_cache(maxsize=256)
def k2_multiplier_coeffs(M: int, b: float) -> np.ndarray:
    """Fourier coefficients of K2(u) = log|1 - b^2 e^{iu}|: zero mean, -b^{2|m|}/(2|m|)."""
    m = _mode_numbers(M)
    out = np.empty(M)
    out[0] = 0.0
    am = np.abs(m[1:])
    out[1:] = -(b ** (2.0 * am)) / (2.0 * am)
    return out


def convolve_multiplier(values: np.ndarray, khat: np.ndarray) -> np.ndarray:
    """(K * rho)(theta) where K has the given Fourier coefficients."""
    hat = np.fft.fft(values, norm="forward") * khat
    out = np.fft.ifft(hat, norm="forward")
    return out.real if np.isrealobj(values) else out


@functools.lru_cache(maxsize=64)
def _shift_index(M: int):
    rows = np.arange(M)[:, None]
    idx = (rows + np.arange(M)[None, :]) % M
    return rows, idx


def shifted_kernel_integral(table: np.ndarray, khat: np.ndarray) -> np.ndarray:
    """Per-theta integrals int_T K(eta - theta_i) w(theta_i, eta) deta.

    ``table[i, k] = w(theta_i, theta_k)`` with theta_k the eta node. The
    integral is computed exactly on band-limited factors by shifting to
    u = eta - theta_i and contracting the u-Fourier coefficients of
    w(theta_i, theta_i + u) against the known multiplier coefficients.
    """
    M = table.shape[0]
    rows, idx = _shift_index(M)
    shifted = table[rows, idx]
    what = np.fft.fft(shifted, axis=1, norm="forward")
    out = np.sum(what * khat[None, :], axis=1)
    return out.real if np.isrealobj(table) else out


# ---------------------------------------------------------------------------
# Truncated operator matrices
# ---------------------------------------------------------------------------

class LinearOperatorMatrix:
    """Finite Fourier truncation of an operator on zero-mean fields.

    Entries are stored band-wise in the time (phi) indices — the operator is
    Toeplitz in time — and densely in the space (theta) indices:

        entries[b, a, c] = T^{l0 + bands[b], jmodes[a]}_{l0, jmodes[c]}

    with ``jmodes = [-N, ..., -1, 1, ..., N]``. ``d = 0`` (no phi angle,
    a single zero band) covers the operators of the linearized-patch module.
    """

    def __init__(self, N: int, entries: np.ndarray, bands=None, toeplitz_in_time: bool = True):
        entries = np.asarray(entries, dtype=complex)
        if entries.ndim == 2:
            entries = entries[None, :, :]
        self.N = int(N)
        self.jmodes = np.concatenate([np.arange(-N, 0), np.arange(1, N + 1)])
        if entries.shape[1:] != (2 * N, 2 * N):
            raise ValueError("entry block shape does not match truncation")
        if bands is None:
            bands = np.zeros((entries.shape[0], 0), dtype=int)
        bands = np.asarray(bands, dtype=int)
        if bands.ndim == 1:
            bands = bands[:, None]
        if bands.shape[0] != entries.shape[0]:
            raise ValueError("band list does not match entry blocks")
        self.bands = bands
        self.d = bands.shape[1]
        self.entries = entries
        self.toeplitz_in_time = toeplitz_in_time
        self._jpos = {int(j): a for a, j in enumerate(self.jmodes)}
        self._bpos = {tuple(int(x) for x in m): i for i, m in enumerate(bands)}

    # -- constructors ---------------------------------------------------

    @classmethod
    def identity(cls, N: int) -> "LinearOperatorMatrix":
        return cls(N, np.eye(2 * N, dtype=complex))

    @classmethod
    def from_multiplier(cls, N: int, values) -> "LinearOperatorMatrix":
        """Diagonal operator e_j -> a_j e_j; ``values`` maps j to a_j."""
        diag = np.array([values(int(j)) for j in np.concatenate([np.arange(-N, 0), np.arange(1, N + 1)])],
                        dtype=complex)
        return cls(N, np.diag(diag))

    # -- structure ------------------------------------------------------

    def entry(self, m, j: int, j0: int) -> complex:
        """T^{l0+m, j}_{l0, j0}; zero if the band or mode is absent."""
        key = tuple(int(x) for x in np.atleast_1d(m)) if self.d else ()
        bi = self._bpos.get(key)
        if bi is None or j not in self._jpos or j0 not in self._jpos:
            return 0.0
        return complex(self.entries[bi, self._jpos[j], self._jpos[j0]])

    def _mirror_deviation(self, sign: float, conjugate: bool) -> float:
        """sup |T^{-l,-j}_{-l0,-j0} - sign * (conj)T^{l,j}_{l0,j0}|."""
        rev = self.entries[:, ::-1, ::-1]  # jmodes list is symmetric under j -> -j reversal
        dev = 0.0
        for bi, m in enumerate(self.bands):
            mi = self._bpos.get(tuple(int(-x) for x in m))
            mirrored = rev[mi] if mi is not None else np.zeros_like(rev[0])
            ref = np.conj(self.entries[bi]) if conjugate else self.entries[bi]
            dev = max(dev, float(np.max(np.abs(mirrored - sign * ref))))
        return dev

    def real_deviation(self) -> float:
        return self._mirror_deviation(1.0, conjugate=True)

    def reversible_deviation(self) -> float:
        return self._mirror_deviation(-1.0, conjugate=False)

    def reversibility_preserving_deviation(self) -> float:
        return self._mirror_deviation(1.0, conjugate=False)

    def is_real(self, tol: float = 1e-10) -> bool:
        return self.real_deviation() <= tol

    def is_reversible(self, tol: float = 1e-10) -> bool:
        return self.reversible_deviation() <= tol

    def is_reversibility_preserving(self, tol: float = 1e-10) -> bool:
        return self.reversibility_preserving_deviation() <= tol

    # -- algebra ----------------------------------------------------------

    def __matmul__(self, other: "LinearOperatorMatrix") -> "LinearOperatorMatrix":
        if self.N != other.N or self.d != other.d:
            raise ValueError("operator truncations do not match")
        b1 = self.bands.reshape(len(self.bands), self.d)
        b2 = other.bands.reshape(len(other.bands), self.d)
        allk = (b1[:, None, :] + b2[None, :, :]).reshape(-1, self.d)
        bands, inv = np.unique(allk, axis=0, return_inverse=True)
        inv = inv.reshape(len(b1), len(b2))
        entries = np.zeros((len(bands), 2 * self.N, 2 * self.N), dtype=complex)
        for bi in range(len(b1)):
            # within a fixed left band the output keys are distinct, so a
            # fancy-indexed += is a safe scatter
            entries[inv[bi]] += self.entries[bi] @ other.entries
        return LinearOperatorMatrix(self.N, entries, bands)

    def __add__(self, other: "LinearOperatorMatrix") -> "LinearOperatorMatrix":
        if self.N != other.N or self.d != other.d:
            raise ValueError("operator truncations do not match")
        sums = {tuple(int(x) for x in m): self.entries[i].copy() for i, m in enumerate(self.bands)}
        for i, m in enumerate(other.bands):
            key = tuple(int(x) for x in m)
            if key in sums:
                sums[key] += other.entries[i]
            else:
                sums[key] = other.entries[i].copy()
        keys = sorted(sums)
        bands = np.array(keys, dtype=int).reshape(len(keys), self.d)
        return LinearOperatorMatrix(self.N, np.stack([sums[k] for k in keys]), bands)

    def __sub__(self, other: "LinearOperatorMatrix") -> "LinearOperatorMatrix":
        return self + (-other)

    def __mul__(self, c):
        return LinearOperatorMatrix(self.N, self.entries * c, self.bands)

    __rmul__ = __mul__

    def __neg__(self):
        return LinearOperatorMatrix(self.N, -self.entries, self.bands)


def offdiag_norm(op: LinearOperatorMatrix, s: float) -> float:
    """Off-diagonal (Toeplitz) norm: (sum_{l,m} <l,m>^{2s} sup_{j-k=m} |T^j_k(l)|^2)^{1/2}."""
    if not op.toeplitz_in_time:
        raise ValueError("off-diagonal norm requires a Toeplitz-in-time operator")
    total = 0.0
    n = 2 * op.N
    jm = op.jmodes
    diff = jm[:, None] - jm[None, :]
    for bi, m in enumerate(op.bands):
        labs = int(np.sum(np.abs(m)))
        block = np.abs(op.entries[bi])
        for band in range(-2 * op.N, 2 * op.N + 1):
            mask = diff == band
            if not mask.any():
                continue
            sup = block[mask].max()
            if sup == 0.0:
                continue
            w = max(1, labs, abs(band))
            total += float(w) ** (2.0 * s) * sup ** 2
    return float(np.sqrt(total))


def apply_operator(op: LinearOperatorMatrix, field: PeriodicField) -> PeriodicField:
    """Matrix-vector product in coefficient space (modes outside the truncation drop)."""
    shape = field.grid_sizes
    if field.dims != op.d + 1:
        raise ValueError("field dimensionality does not match operator")
    if op.N > shape[-1] // 2 - 1:
        raise ValueError("operator truncation exceeds field grid")
    c = field.coeffs
    jnums = _mode_numbers(shape[-1])
    jsel = [np.where(jnums == j)[0][0] for j in op.jmodes]
    out = np.zeros_like(c)
    if op.d == 0:
        vec = c[jsel]
        res = op.entries[0] @ vec
        out[jsel] = res
    else:
        cin = c[..., jsel]
        for bi, m in enumerate(op.bands):
            contrib = np.tensordot(cin, op.entries[bi].T, axes=([cin.ndim - 1], [0]))
            for ax, shift in enumerate(m):
                contrib = _shift_no_wrap(contrib, int(shift), ax, _mode_numbers(shape[ax]))
            out[..., jsel] += contrib
    return PeriodicField.from_coeffs(out, real=field.is_real)


def _shift_no_wrap(arr: np.ndarray, shift: int, axis: int, modes: np.ndarray) -> np.ndarray:
    """Shift coefficients l -> l + shift along an fft-ordered axis, dropping overflow."""
    if shift == 0:
        return arr
    order = np.argsort(modes)
    sorted_arr = np.take(arr, order, axis=axis)
    rolled = np.roll(sorted_arr, shift, axis=axis)
    idx = [slice(None)] * arr.ndim
    if shift > 0:
        idx[axis] = slice(0, shift)
    else:
        idx[axis] = slice(len(modes) + shift, len(modes))
    rolled[tuple(idx)] = 0.0
    inv = np.argsort(order)
    return np.take(rolled, inv, axis=axis)
