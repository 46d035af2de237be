"""Fourier core: fields, projectors, norms, pairings, operator matrices."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from vortexpatch.spectral import (
    LinearOperatorMatrix,
    PeriodicField,
    antiderivative,
    apply_operator,
    convolve_multiplier,
    e_mode,
    k1_multiplier_coeffs,
    k2_multiplier_coeffs,
    offdiag_norm,
    project,
    shifted_kernel_integral,
    sobolev_norm,
    spectral_derivative,
    symplectic_pairing,
    theta_grid,
)

RNG = np.random.default_rng(7)


def random_field(M=64, decay=2.0, rng=RNG, zero_mean=False):
    j = np.abs(np.fft.fftfreq(M, 1.0 / M).astype(int))
    c = (rng.standard_normal(M) + 1j * rng.standard_normal(M)) / np.maximum(1, j) ** decay
    c[M // 2] = 0.0  # drop the Nyquist mode (not derivative-invertible on a real grid)
    vals = np.fft.ifft(c, norm="forward").real
    return PeriodicField(vals, zero_mean=zero_mean)


# ---------------------------------------------------------------------------
# PeriodicField structure
# ---------------------------------------------------------------------------

class TestPeriodicField:
    def test_round_trip(self):
        for M in (32, 64, 128, 256):
            f = random_field(M)
            back = np.fft.ifft(f.coeffs, norm="forward").real
            assert np.max(np.abs(back - f.values)) <= 1e-13 * max(1.0, np.max(np.abs(f.values)))

    def test_hermitian_symmetry(self):
        f = random_field(64)
        c = f.coeffs
        assert np.max(np.abs(c - np.conj(np.roll(c[::-1], 1)))) < 1e-12

    def test_zero_mean_flag(self):
        vals = RNG.standard_normal(64) + 3.0
        f = PeriodicField(vals, zero_mean=True)
        assert f.coeffs[0] == 0.0
        assert abs(f.values.mean()) < 1e-14

    def test_power_of_two_enforced(self):
        with pytest.raises(ValueError):
            PeriodicField(np.zeros(48))

    @given(hst.integers(min_value=0, max_value=10 ** 6))
    @settings(max_examples=20, deadline=None)
    def test_parseval(self, seed):
        f = random_field(64, rng=np.random.default_rng(seed))
        lhs = np.sum(np.abs(f.coeffs) ** 2)
        rhs = np.mean(np.abs(f.values) ** 2)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, rhs)

    def test_two_dimensional_field(self):
        f = e_mode((32, 64), l=[2], j=-3)
        c = f.coeffs
        idx = np.unravel_index(np.argmax(np.abs(c)), c.shape)
        assert idx == (2, 64 - 3)
        assert abs(c[idx] - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# project
# ---------------------------------------------------------------------------

class TestProject:
    def test_mode_below_cutoff_kept(self):
        f = e_mode((64,), l=None, j=3)
        g = project(f, 5)
        assert np.max(np.abs(g.values - f.values)) < 1e-13

    def test_mode_above_cutoff_dropped(self):
        f = e_mode((64,), l=None, j=7)
        g = project(f, 5)
        assert np.max(np.abs(g.values)) < 1e-13

    def test_invalid_cutoffs(self):
        f = random_field(64)
        with pytest.raises(ValueError):
            project(f, 0)
        with pytest.raises(ValueError):
            project(f, 33)

    def test_complement_projector(self):
        f = random_field(64)
        g = project(f, 5)
        comp = f - g
        assert np.max(np.abs(project(comp, 5).values)) < 1e-12

    def test_smoothing_bound(self):
        # |Pi_N rho|_{s+t} <= N^t |rho|_s
        for seed in range(5):
            f = random_field(64, rng=np.random.default_rng(seed))
            for N, s, t in ((4, 1.0, 2.0), (8, 0.0, 1.5), (16, 2.0, 0.5)):
                lhs = sobolev_norm(project(f, N), s + t)
                rhs = N ** t * sobolev_norm(f, s)
                assert lhs <= rhs * (1.0 + 1e-12)


# ---------------------------------------------------------------------------
# sobolev_norm
# ---------------------------------------------------------------------------

class TestSobolevNorm:
    def test_constant(self):
        f = PeriodicField(np.full(64, -2.5))
        for s in (0.0, 1.0, 3.5):
            assert abs(sobolev_norm(f, s) - 2.5) < 1e-12

    def test_single_mode(self):
        for j in (1, 3, 7):
            f = e_mode((64,), l=None, j=j)
            for s in (0.0, 1.0, 2.5):
                assert abs(sobolev_norm(f, s) - abs(j) ** s) < 1e-10

    def test_interpolation_inequality(self):
        # |rho|_{s3} <= |rho|_{s1}^theta |rho|_{s2}^(1-theta), s3 = theta s1 + (1-theta) s2
        for seed in range(10):
            f = random_field(64, rng=np.random.default_rng(seed + 100))
            for s1, s2, th in ((0.0, 3.0, 0.5), (1.0, 2.0, 0.25), (0.5, 4.0, 0.8)):
                s3 = th * s1 + (1 - th) * s2
                lhs = sobolev_norm(f, s3)
                rhs = sobolev_norm(f, s1) ** th * sobolev_norm(f, s2) ** (1 - th)
                assert lhs <= rhs * (1.0 + 1e-10)


# ---------------------------------------------------------------------------
# antiderivative / symplectic pairing
# ---------------------------------------------------------------------------

class TestAntiderivative:
    def test_sin_rule(self):
        th = theta_grid(64)
        for j in (1, 2, 5):
            f = PeriodicField(np.sin(j * th))
            g = antiderivative(f)
            assert np.max(np.abs(g.values + np.cos(j * th) / j)) < 1e-13

    def test_cos_rule(self):
        th = theta_grid(64)
        g = antiderivative(PeriodicField(np.cos(th)))
        assert np.max(np.abs(g.values - np.sin(th))) < 1e-13

    def test_inverse_pair(self):
        f = random_field(64, zero_mean=True)
        g = antiderivative(f)
        back = spectral_derivative(g.values)
        assert np.max(np.abs(back - f.values)) < 1e-13 * max(1.0, np.max(np.abs(f.values)))
        assert abs(g.values.mean()) < 1e-14

    def test_nonzero_mean_rejected(self):
        with pytest.raises(ValueError):
            antiderivative(PeriodicField(np.ones(64)))


class TestSymplecticPairing:
    def test_self_pairing_zero(self):
        f = random_field(64, zero_mean=True)
        assert abs(symplectic_pairing(f, f)) < 1e-13

    def test_cos_sin_value(self):
        # W(cos j theta, sin j theta) = +1/(2j): the antiderivative of cos is
        # sin(j theta)/j and the normalized mean of sin^2 is 1/2.
        th = theta_grid(64)
        for j in (1, 2, 4):
            val = symplectic_pairing(
                PeriodicField(np.cos(j * th)), PeriodicField(np.sin(j * th))
            )
            assert abs(val - 1.0 / (2 * j)) < 1e-13

    def test_antisymmetry(self):
        for seed in range(5):
            rng = np.random.default_rng(seed + 11)
            f = random_field(64, rng=rng, zero_mean=True)
            g = random_field(64, rng=rng, zero_mean=True)
            assert abs(symplectic_pairing(f, g) + symplectic_pairing(g, f)) < 1e-12

    def test_nonzero_mean_rejected(self):
        f = random_field(64, zero_mean=True)
        with pytest.raises(ValueError):
            symplectic_pairing(f, PeriodicField(np.ones(64)))


# ---------------------------------------------------------------------------
# multiplier kernels and shifted integrals
# ---------------------------------------------------------------------------

class TestMultiplierKernels:
    def test_k1_action_on_cosine(self):
        # K1 * cos(m theta) = -cos(m theta)/(2m)
        M = 128
        th = theta_grid(M)
        khat = k1_multiplier_coeffs(M)
        for m in (1, 3, 10):
            out = convolve_multiplier(np.cos(m * th), khat)
            assert np.max(np.abs(out + np.cos(m * th) / (2 * m))) < 1e-13

    def test_k2_matches_direct_fft(self):
        # K2(u) = log|1 - b^2 e^{iu}| is smooth: compare exact coefficients
        # against the FFT of pointwise samples.
        M = 256
        b = 0.6
        u = theta_grid(M)
        direct = np.fft.fft(np.log(np.abs(1.0 - b * b * np.exp(1j * u))), norm="forward").real
        exact = k2_multiplier_coeffs(M, b)
        assert np.max(np.abs(direct - exact)) < 1e-12

    def test_shifted_kernel_integral_separable_oracle(self):
        # table(i, k) = g(theta_k) gives int K(eta - theta) g(eta) deta = (K*g)(theta)
        M = 64
        g = random_field(M).values
        khat = k2_multiplier_coeffs(M, 0.5)
        table = np.broadcast_to(g[None, :], (M, M)).copy()
        out = shifted_kernel_integral(table, khat)
        ref = convolve_multiplier(g, khat)
        assert np.max(np.abs(out - ref)) < 1e-13

    def test_shifted_kernel_integral_difference_kernel(self):
        # table(i, k) = cos(theta_k - theta_i): the integral is the constant
        # mean_u K(u) cos(u) = khat at modes +-1 averaged.
        M = 64
        th = theta_grid(M)
        table = np.cos(th[None, :] - th[:, None])
        khat = k1_multiplier_coeffs(M)
        out = shifted_kernel_integral(table, khat)
        expected = khat[1]  # (khat_1 + khat_{-1})/2 with symmetric khat
        assert np.max(np.abs(out - expected)) < 1e-13


# ---------------------------------------------------------------------------
# LinearOperatorMatrix
# ---------------------------------------------------------------------------

def random_toeplitz_operator(N, nbands=2, rng=RNG, decay=1.5):
    """Random Toeplitz-in-time operator; nbands=0 gives a theta-only (d=0) one."""
    if nbands == 0:
        jm = np.concatenate([np.arange(-N, 0), np.arange(1, N + 1)])
        diff = jm[:, None] - jm[None, :]
        block = rng.standard_normal((2 * N, 2 * N)) + 1j * rng.standard_normal((2 * N, 2 * N))
        block /= np.maximum(1, np.abs(diff)) ** decay
        return LinearOperatorMatrix(N, block)
    bands = np.arange(-nbands, nbands + 1)
    entries = []
    jm = np.concatenate([np.arange(-N, 0), np.arange(1, N + 1)])
    diff = jm[:, None] - jm[None, :]
    for m in bands:
        block = (rng.standard_normal((2 * N, 2 * N)) + 1j * rng.standard_normal((2 * N, 2 * N)))
        block /= np.maximum(1, np.abs(diff)) ** decay * max(1, abs(m)) ** decay
        entries.append(block)
    return LinearOperatorMatrix(N, np.stack(entries), bands)


def reflect_values(values):
    """(S rho)(theta) = rho(-theta) on the uniform grid."""
    M = len(values)
    idx = (-np.arange(M)) % M
    return values[idx]


class TestOperatorMatrix:
    def test_identity_norm(self):
        I = LinearOperatorMatrix.identity(6)
        for s in (0.0, 1.0, 2.5):
            assert abs(offdiag_norm(I, s) - 1.0) < 1e-13

    def test_multiplier_norm(self):
        a = {j: 1.0 / (abs(j) + 1) for j in range(-6, 7) if j != 0}
        op = LinearOperatorMatrix.from_multiplier(6, lambda j: a[j])
        sup = max(abs(v) for v in a.values())
        for s in (0.0, 2.0):
            assert abs(offdiag_norm(op, s) - sup) < 1e-13

    def test_non_toeplitz_rejected(self):
        op = LinearOperatorMatrix.identity(4)
        op.toeplitz_in_time = False
        with pytest.raises(ValueError):
            offdiag_norm(op, 1.0)

    def test_composition_law(self):
        # |T1 T2|_{s0} <= C |T1|_{s0} |T2|_{s0}; at finite truncation the
        # crude constant C = 2^{s0} sqrt(#bands of the product) is rigorous:
        # <m> <= 2 <m1><m2> plus Cauchy-Schwarz over the band count.
        s0 = 1.0
        rng = np.random.default_rng(2024)
        N = 6
        for _ in range(50):
            t1 = random_toeplitz_operator(N, rng=rng)
            t2 = random_toeplitz_operator(N, rng=rng)
            prod = t1 @ t2
            C = 2.0 ** s0 * np.sqrt(len(prod.bands))
            lhs = offdiag_norm(prod, s0)
            rhs = C * offdiag_norm(t1, s0) * offdiag_norm(t2, s0)
            assert lhs <= rhs * (1.0 + 1e-10)

    def test_apply_identity(self):
        f = random_field(64, zero_mean=True)
        g = apply_operator(LinearOperatorMatrix.identity(16), project(f, 16))
        assert np.max(np.abs(g.values - project(f, 16).values)) < 1e-12

    def test_apply_equilibrium_multiplier(self):
        # multiplier -i Omega_j(b) acting on e_{0,j}
        b = 0.5

        def omega(j):
            aj = abs(j)
            return np.sign(j) * 0.5 * (aj - 1 + b ** (2 * aj))

        op = LinearOperatorMatrix.from_multiplier(8, lambda j: -1j * omega(j))
        for j in (2, -3, 5):
            f = e_mode((64,), l=None, j=j)
            g = apply_operator(op, PeriodicField(f.values))
            assert np.max(np.abs(g.values - (-1j * omega(j)) * f.values)) < 1e-12

    def test_apply_operator_link_bound(self):
        # |T rho|_s <= C(|T|_{s0}|rho|_s + |T|_s |rho|_{s0})
        s0, s = 1.0, 2.5
        rng = np.random.default_rng(5)
        N = 8
        for _ in range(10):
            op = random_toeplitz_operator(N, nbands=0, rng=rng)
            f = project(random_field(64, rng=rng, zero_mean=True), N)
            lhs = sobolev_norm(apply_operator(op, f), s)
            C = 2.0 ** s * np.sqrt(4 * N + 1)
            rhs = C * (
                offdiag_norm(op, s0) * sobolev_norm(f, s)
                + offdiag_norm(op, s) * sobolev_norm(f, s0)
            )
            assert lhs <= rhs * (1.0 + 1e-10)

    def test_truncation_mismatch_rejected(self):
        op = LinearOperatorMatrix.identity(40)
        with pytest.raises(ValueError):
            apply_operator(op, random_field(64))

    def test_entry_accessor(self):
        op = LinearOperatorMatrix.from_multiplier(4, lambda j: 2.0 * j)
        assert op.entry((), 3, 3) == pytest.approx(6.0)
        assert op.entry((), 3, 2) == 0.0
        assert op.entry((), 5, 5) == 0.0  # outside truncation


class TestReversibilityStructure:
    def make_structured(self, N, kind, rng):
        A = rng.standard_normal((2 * N, 2 * N)) + 1j * rng.standard_normal((2 * N, 2 * N))
        flip = np.conj(A[::-1, ::-1]) if kind == "real" else A[::-1, ::-1]
        sign = -1.0 if kind == "reversible" else 1.0
        B = 0.5 * (A + sign * flip)
        return LinearOperatorMatrix(N, B)

    def test_predicates(self):
        rng = np.random.default_rng(3)
        N = 6
        real_op = self.make_structured(N, "real", rng)
        rev_op = self.make_structured(N, "reversible", rng)
        pres_op = self.make_structured(N, "preserving", rng)
        assert real_op.is_real() and not rev_op.is_real()
        assert rev_op.is_reversible() and not pres_op.is_reversible()
        assert pres_op.is_reversibility_preserving() and not rev_op.is_reversibility_preserving()

    def test_reversible_matches_action_test(self):
        # T reversible <=> T o S = -S o T on random fields, (S rho)(theta) = rho(-theta)
        rng = np.random.default_rng(9)
        N = 6
        rev_op = self.make_structured(N, "reversible", rng)
        non_rev = self.make_structured(N, "preserving", rng)
        for op, expect in ((rev_op, True), (non_rev, False)):
            devs = []
            for _ in range(20):
                f = PeriodicField(random_field(64, rng=rng).values)
                lhs = apply_operator(op, PeriodicField(reflect_values(f.values))).values
                rhs = -reflect_values(apply_operator(op, f).values)
                devs.append(np.max(np.abs(lhs - rhs)))
            if expect:
                assert max(devs) < 1e-10
            else:
                assert max(devs) > 1e-6

    def test_algebra_preserves_truncation(self):
        rng = np.random.default_rng(4)
        a = random_toeplitz_operator(4, rng=rng)
        b = random_toeplitz_operator(4, rng=rng)
        c = (a + b) @ (2.0 * a - b)
        assert c.N == 4
        # distributivity spot-check against dense arithmetic on the zero band
        direct = (a @ (2.0 * a)) + (b @ (2.0 * a)) + (a @ (-1.0 * b)) + (b @ (-1.0 * b))
        for m in range(-4, 5):
            lhs = c.entry((m,), 2, 1)
            rhs = direct.entry((m,), 2, 1)
            assert abs(lhs - rhs) < 1e-10
