"""Equilibrium frequencies Omega_j(b): exact derivatives, non-degeneracy,
and the transversality scan."""

import numpy as np
import pytest
import sympy

from vortexpatch.spectrum import (
    FrequencySystem,
    check_monotonicity,
    nondegeneracy_test,
    omega,
    omega_derivative,
    perturbed_transversality,
    scan_report_csv,
    scan_report_json,
    transversality_scan,
)

SYS = FrequencySystem((1, 2), 0.1, 0.9)


class TestOmega:
    def test_hand_values(self):
        assert abs(omega(0.3, 1) - 0.045) < 1e-15
        assert abs(omega(0.5, 2) - 0.53125) < 1e-15

    def test_odd_in_j(self):
        for j in (1, 2, 5):
            assert omega(0.4, -j) == -omega(0.4, j)

    def test_j_zero_rejected(self):
        with pytest.raises(ValueError):
            omega(0.5, 0)

    def test_vectorized_over_b(self):
        bs = np.linspace(0.1, 0.9, 7)
        vals = omega(bs, 3)
        assert np.allclose(vals, [(3 - 1 + b ** 6) / 2 for b in bs])


class TestOmegaDerivative:
    def test_against_sympy(self):
        b = sympy.Symbol("b")
        for j in (1, 2, 4, 7):
            expr = sympy.Rational(1, 2) * (j - 1 + b ** (2 * j))
            for q in range(0, 2 * j + 3):
                exact = float(sympy.diff(expr, b, q).subs(b, sympy.Rational(17, 25)))
                assert abs(float(omega_derivative(0.68, j, q)) - exact) < 1e-9 * max(1, abs(exact))

    def test_against_finite_differences(self):
        # exact vs central finite differences, q <= 4, relative 1e-6
        h = 1e-2
        for j in (2, 3, 6):
            for q in range(1, 5):
                lower = np.array([float(omega_derivative(0.5 - h, j, q - 1))])
                upper = np.array([float(omega_derivative(0.5 + h, j, q - 1))])
                fd = (upper - lower) / (2 * h)
                exact = float(omega_derivative(0.5, j, q))
                # central FD has O(h^2) error; compare with the third derivative scale
                scale = abs(float(omega_derivative(0.5, j, q + 2))) * h * h / 6 + 1e-12
                assert abs(fd[0] - exact) < max(1e-6, 2 * scale)

    def test_vanishes_beyond_polynomial_degree(self):
        assert float(omega_derivative(0.7, 2, 5)) == 0.0
        assert float(omega_derivative(0.7, 1, 3)) == 0.0

    def test_q_zero_is_omega(self):
        assert float(omega_derivative(0.35, 4, 0)) == float(omega(0.35, 4))

    def test_negative_j_sign(self):
        assert float(omega_derivative(0.5, -3, 2)) == -float(omega_derivative(0.5, 3, 2))


class TestFrequencySystem:
    def test_q0(self):
        assert SYS.q0 == 6
        assert FrequencySystem((1, 3), 0.1, 0.9).q0 == 8

    def test_validation(self):
        with pytest.raises(ValueError):
            FrequencySystem((2, 1), 0.1, 0.9)
        with pytest.raises(ValueError):
            FrequencySystem((1, 2), 0.9, 0.1)
        with pytest.raises(ValueError):
            FrequencySystem((0, 1), 0.1, 0.9)

    def test_omega_sup(self):
        assert abs(SYS.omega_sup() - float(omega(0.9, 2))) < 1e-15


class TestMonotonicity:
    def test_report(self):
        rep = check_monotonicity(0.5)
        assert rep["monotone"]
        assert rep["min_gap"] > 0
        assert rep["lower_bound_ok"]
        assert rep["pair_bound_ok"]

    def test_uniform_pair_derivative_bound(self):
        # max_q sup_b |d^q (Omega_j - Omega_j')| <= C0_hat |j - j'| with a
        # j-independent C0_hat: the b1^(2j) decay beats the polynomial growth.
        bs = np.linspace(0.1, 0.9, 400)
        ratios = []
        for j in range(2, 120, 7):
            jp = j - 1
            worst = max(
                float(np.max(np.abs(omega_derivative(bs, j, q) - omega_derivative(bs, jp, q))))
                for q in range(7)
            )
            ratios.append(worst / (j - jp))
        ratios = np.array(ratios)
        # finite, and decaying again for large j (no unbounded growth)
        assert np.all(np.isfinite(ratios))
        assert ratios[-1] < np.max(ratios)
        assert np.max(ratios) < 1e9


class TestNondegeneracy:
    def test_default_sets(self):
        assert nondegeneracy_test(SYS)
        assert nondegeneracy_test(FrequencySystem((1, 3), 0.1, 0.9))
        assert nondegeneracy_test(FrequencySystem((2,), 0.1, 0.9))

    def test_duplicated_column_degenerate(self):
        polys = [{0: 0, 2: 1}, {0: 0, 2: 1}, {0: 2}]
        assert not nondegeneracy_test(SYS, polys=polys)

    def test_constant_dependence_degenerate(self):
        # a column proportional to the constant column
        polys = [{0: 4}, {0: 1, 4: 1}, {0: 2}]
        assert not nondegeneracy_test(SYS, polys=polys)


class TestTransversalityScan:
    def test_positive_and_complete(self):
        rep = transversality_scan(SYS, Lmax=3, grid_size=800)
        assert rep.rho0_hat > 0
        assert set(rep.per_case) == {"i", "ii", "iii", "iv"}
        for c in rep.per_case.values():
            assert c["rho0_hat"] > 0
        w = rep.witness
        assert set(w) == {"b", "l", "j", "j0", "q", "sigma"}
        assert SYS.b0 <= w["b"] <= SYS.b1

    def test_deterministic(self):
        r1 = transversality_scan(SYS, Lmax=2, grid_size=500)
        r2 = transversality_scan(SYS, Lmax=2, grid_size=500)
        assert r1.rho0_hat == r2.rho0_hat
        assert r1.witness == r2.witness

    def test_grid_refinement_stable(self):
        vals = [transversality_scan(SYS, Lmax=3, grid_size=g).rho0_hat
                for g in (1000, 2000, 4000)]
        assert abs(vals[-1] - vals[-2]) < 5e-3 * vals[-1]

    def test_small_offset_moves_little(self):
        base = transversality_scan(SYS, Lmax=2, grid_size=500)
        shifted = transversality_scan(SYS, Lmax=2, grid_size=500,
                                      delta=np.array([1e-5, -1e-5]), delta_prime=1e-5)
        assert abs(shifted.rho0_hat - base.rho0_hat) < 1e-3

    def test_invalid_lmax(self):
        with pytest.raises(ValueError):
            transversality_scan(SYS, Lmax=0, grid_size=100)

    def test_perturbed_retains_half(self):
        out = perturbed_transversality(SYS, eps_hat=1e-4, Lmax=2, grid_size=500,
                                       n_samples=1, seed=3)
        assert out["retains_half"]
        assert out["rho0_hat_perturbed"] > 0

    def test_report_exports(self):
        rep = transversality_scan(SYS, Lmax=2, grid_size=500)
        js = scan_report_json(rep)
        assert js["rho0_hat"] == rep.rho0_hat
        csv = scan_report_csv(rep)
        lines = csv.strip().split("\n")
        assert lines[0] == "l,min_score"
        # one row per lattice site |l|_1 <= Lmax (including l = 0)
        assert len(lines) - 1 == 13
