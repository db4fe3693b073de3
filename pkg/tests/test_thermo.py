"""Thermodynamic limit: densities, Fredholm toolkit, and multiple integrals."""

import cmath
import math

import numpy as np
import pytest

from csoslab.elliptic import ModelParams, PoleError, theta
from csoslab.lattice import LatticeConfig, homogeneous_config
from csoslab import bethe as B
from csoslab import matel as M
from csoslab import thermo as T


@pytest.fixture(scope="module")
def params_c():
    """eta_tilde = 0.4i working point for the kernel family."""
    L, r = 3, 1
    return ModelParams(tau=2.5j * r / L, r=r, L=L, s0=0.37 + 0.21j)


@pytest.fixture(scope="module")
def config8():
    return homogeneous_config(8)


class TestDensity:
    def test_fourier_coefficient(self, params_c, config8):
        for m in (0, 1, 3):
            pred = 1.0 / (2.0 * np.cosh(1j * math.pi * m
                                        * params_c.eta_tilde))
            assert abs(T.density_fourier(m, config8, params_c) - pred) < 1e-14

    def test_normalization_by_trapezoid(self, params_c, config8):
        z = -0.5 + np.arange(4096) / 4096
        val = np.mean(T.density(z, config8, params_c))
        assert abs(val - 0.5) < 1e-12

    def test_lieb_residual(self, params_c, config8):
        z = np.linspace(-0.5, 0.5, 50)
        assert np.max(T.lieb_residual(z, config8, params_c, modes=400)) < 1e-10

    def test_closed_form_vs_series(self, params_c):
        z = np.linspace(-0.45, 0.45, 7)
        ser = sum(np.exp(2j * math.pi * m * z)
                  / (2 * np.cosh(1j * math.pi * m * params_c.eta_tilde))
                  for m in range(-80, 81))
        assert np.max(np.abs(T.rho_homogeneous(z, params_c) - ser)) < 1e-13


class TestKernelFourier:
    def test_zero_modes(self, params_c):
        assert abs(T.kernel_fourier("K", 0, params_c) - 1.0) < 1e-15
        assert abs(T.kernel_fourier("p0prime", 0, params_c)
                   - 2 * math.pi) < 1e-15

    def test_quadrature_oracle(self, params_c):
        nodes = -0.5 + np.arange(2048) / 2048
        cases = [("K", {}), ("p0prime", {}),
                 ("theta0", dict(t=0.2 + 0.3j)),
                 ("theta_Xt", dict(t=0.2 + 0.3j, X=0.21 + 0.13j)),
                 ("K_XY", dict(X=0.21 + 0.13j, Y=0.4 - 0.27j)),
                 ("t_XY", dict(X=0.21 + 0.13j, Y=0.4 - 0.27j,
                               zeta=0.03 + 0.2j))]
        for kid, kw in cases:
            for m in (0, 3, -2):
                quad = np.mean(T.kernel_direct(kid, nodes, params_c, **kw)
                               * np.exp(-2j * math.pi * m * nodes))
                closed = T.kernel_fourier(kid, m, params_c, **kw)
                assert abs(quad - closed) < 1e-12

    def test_large_mode_stability(self, params_c):
        val = T.kernel_fourier("K_XY", -300, params_c,
                               X=0.21 + 0.13j, Y=0.4 - 0.27j)
        assert np.isfinite(val) and abs(val) < 1.0

    def test_strip_validation(self, params_c):
        from csoslab.elliptic import EllipticDomainError
        with pytest.raises(EllipticDomainError):
            T.kernel_fourier("theta0", 1, params_c, t=-0.3j)


class TestFredholm:
    def test_base_truncated_vs_closed(self, params_c):
        t = T.fredholm_det("base", "truncated", params_c, modes=200)
        c = T.fredholm_det("base", "closed", params_c, modes=200)
        assert abs(t - c) / abs(c) < 1e-10

    def test_xy_truncated_vs_closed(self, params_c):
        X, Y = 0.21 + 0.13j, 0.4 - 0.27j
        t = T.fredholm_det("XY", "truncated", params_c, X=X, Y=Y, modes=200)
        c = T.fredholm_det("XY", "closed", params_c, X=X, Y=Y, modes=200)
        assert abs(t - c) / abs(c) < 1e-10

    def test_ratio_consistency(self, params_c):
        X, Y = 0.21 + 0.13j, 0.4 - 0.27j
        ratio = T.fredholm_det("ratio", "closed", params_c, X=X, Y=Y)
        quot = (T.fredholm_det("XY", "closed", params_c, X=X, Y=Y, modes=300)
                / T.fredholm_det("base", "closed", params_c, modes=300))
        assert abs(ratio - quot) / abs(ratio) < 1e-10

    def test_vanishing_tail_prefactor(self, params_c):
        # the m-sum tail switched off leaves the bare eigenvalue 2(1 - eta)
        val = T.fredholm_det("base", "closed", params_c, modes=0)
        assert abs(val - 2 * (1 - params_c.eta)) < 1e-14

    def test_tail_bound(self, params_c):
        b200 = T.fredholm_tail_bound("base", params_c, modes=200)
        t = T.fredholm_det("base", "truncated", params_c, modes=200)
        t2 = T.fredholm_det("base", "truncated", params_c, modes=400)
        assert abs(t - t2) <= b200 * abs(t2)


class TestResolvent:
    def test_residue(self, params_c):
        Y = 0.4 - 0.27j
        circle = 0.013 * np.exp(2j * math.pi * np.arange(64) / 64)
        res = 2j * math.pi * np.mean(T.resolvent_S(Y, circle, params_c)
                                     * circle)
        assert abs(res - 1.0) < 1e-10

    def test_integral_equation(self, params_c):
        res = T.resolvent_equation_residual(0.4 - 0.27j, 0.21 + 0.13j,
                                            0.03 + 0.2j, params_c, modes=300)
        assert res < 1e-9

    def test_quasi_periodicity(self, params_c):
        # shifting z by -eta_tilde multiplies S by the exact theta factors
        et = params_c.eta_tilde
        Y = 0.4 - 0.27j
        z = 0.23 + 0.11j
        lhs = T.resolvent_S(Y, z - et, params_c)
        fac2 = theta(2, z + Y - et, et) / theta(2, z + Y, et)
        fac1 = theta(1, z - et, et) / theta(1, z, et)
        assert abs(lhs - T.resolvent_S(Y, z, params_c) * fac2 / fac1) < 1e-12

    def test_pole_error(self, params_c):
        with pytest.raises(PoleError):
            T.resolvent_S(0.4 - 0.27j, 0.0, params_c)


class TestOnePoint:
    @pytest.mark.parametrize("Lr", [(3, 1), (4, 1)])
    def test_mode_agreement(self, Lr, rng):
        L, r = Lr
        params = ModelParams(tau=2.5j * r / L, r=r, L=L, s0=0.37 + 0.21j)
        Z = complex(rng.uniform(-0.2, 0.2), rng.uniform(-0.1, 0.1))
        for eps in (0, 1):
            for t in range(L - r):
                for a in range(L):
                    ref = T.one_point_barP(a, Z, eps, t, params,
                                           mode="nu_sum")
                    for mode in ("nu_sum_fred", "alt", "closed",
                                 "closed_tilde"):
                        val = T.one_point_barP(a, Z, eps, t, params,
                                               mode=mode)
                        assert abs(val - ref) < 1e-9 * max(1.0, abs(ref))

    def test_parity_forbidden_exact_zero(self):
        params = ModelParams(tau=2.5j / 4, r=1, L=4, s0=0.37 + 0.21j)
        val = T.one_point_barP(1, 0.17 - 0.08j, 0, 0, params, mode="closed")
        assert val == 0.0

    def test_normalization(self, params_c):
        for eps in (0, 1):
            for t in range(2):
                tot = sum(T.one_point_barP(a, 0.0, eps, t, params_c,
                                           mode="nu_sum") for a in range(3))
                assert abs(tot - 1.0) < 1e-9

    def test_gamma_independence(self, params_c):
        v1 = T.one_point_barP(1, 0.1j, 0, 1, params_c, mode="nu_sum",
                              gamma=0.21 + 0.4j)
        v2 = T.one_point_barP(1, 0.1j, 0, 1, params_c, mode="nu_sum",
                              gamma=0.33 + 0.52j)
        assert abs(v1 - v2) < 1e-9 * max(1.0, abs(v1))

    def test_low_temperature_flat_pattern(self):
        # generic real phase angle: each flat label picks a single height,
        # monotonically in the ordered limit
        L, r = 3, 1
        target = {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 2}
        prev_gap = {key: 1.0 for key in target}
        for tau_im in (0.05, 0.02, 0.01):
            tau = 1j * tau_im
            params = ModelParams(tau=tau, r=r, L=L,
                                 s0=0.3 + tau / (2 * r / L), validate=False)
            for (eps, t), a_star in target.items():
                vals = np.array([T.one_point_barP(a, 0.0, eps, t, params,
                                                  mode="closed")
                                 for a in range(L)])
                assert np.all(np.abs(vals.imag) < 1e-10)
                assert np.all(vals.real > -1e-12)
                gap = abs(vals[a_star] - 1.0) + sum(
                    abs(vals[a]) for a in range(L) if a != a_star)
                # monotone until the double-precision floor
                assert gap < prev_gap[(eps, t)] or gap < 1e-11
                prev_gap[(eps, t)] = gap


class TestGroundProducts:
    @pytest.fixture(scope="class")
    @staticmethod
    def two_states():
        params = ModelParams(tau=0.2j, r=1, L=3, s0=0.41 + 0.13j)
        config = homogeneous_config(8)
        return (B.solve_ground_state(0, 1, config, params),
                B.solve_ground_state(1, 0, config, params))

    def test_phi_t_identical_sets(self, two_states):
        x, _ = two_states
        fin, _ = T.ground_products("phi_t", x, x, t=0.21 + 0.35j)
        assert abs(fin - 1.0) < 1e-12

    def test_phi_t_convergence(self, two_states):
        x, y = two_states
        fin, thermo = T.ground_products("phi_t", x, y, t=0.21 + 0.35j)
        assert abs(fin - thermo) < 1e-3

    def test_id_om(self, two_states):
        x, y = two_states
        fin, thermo = T.ground_products("id_om", x, y)
        assert abs(fin - thermo) < 1e-4

    def test_phi_zero(self, two_states):
        x, y = two_states
        fin, thermo = T.ground_products("phi_zero", x, y)
        rel = np.abs(fin - thermo) / np.abs(thermo)
        assert np.max(rel) < 1e-2


class TestMultiPoint:
    @pytest.fixture(scope="class")
    @staticmethod
    def setup():
        tau = 0.45j
        params = ModelParams(tau=tau, r=1, L=3, s0=tau / (2.0 / 3.0))
        ys = (0.04, -0.03, 0.02, -0.05, 0.035, -0.02, 0.05, -0.04)
        config = LatticeConfig(N=8, xi=tuple(0.5 + 1j * y for y in ys))
        return params, config

    def test_m0_reduces_to_one_point(self, setup):
        params, config = setup
        path0 = M.AdjacentPath(vertices=((1, 1),), heights=(1,))
        val, err = T.multipoint_lhp(path0, 0, 0, config, params)
        ref = T.one_point_barP(1, 0.0, 0, 0, params, mode="closed")
        assert val == ref and err == 0.0

    def test_marginalization_m1(self, setup):
        params, config = setup
        tot = 0.0j
        est = 0.0
        for a2 in (1, -1):
            v, e = T.multipoint_lhp(M.vertical_path((0, a2)), 0, 0, config,
                                    params, resolution=256)
            tot += v
            est += e
        ref = T.one_point_barP(0, 0.0, 0, 0, params, mode="closed")
        assert abs(tot - ref) <= max(est, 1e-12)

    def test_marginalization_m2(self, setup):
        params, config = setup
        v1, e1 = T.multipoint_lhp(M.vertical_path((0, 1)), 0, 0, config,
                                  params, resolution=128)
        tot = 0.0j
        est = 0.0
        for a3 in (2, 0):
            v, e = T.multipoint_lhp(M.vertical_path((0, 1, a3)), 0, 0,
                                    config, params, resolution=128)
            tot += v
            est += e
        assert abs(tot - v1) <= max(est + e1, 1e-10)

    def test_quadrature_doubling(self, setup):
        params, config = setup
        path = M.vertical_path((0, 1))
        v256, est256 = T.multipoint_lhp(path, 0, 0, config, params,
                                        resolution=256)
        v512, _ = T.multipoint_lhp(path, 0, 0, config, params,
                                   resolution=512)
        assert abs(v512 - v256) <= max(est256, 1e-14)

    def test_accuracy_tolerance(self, setup):
        from csoslab.elliptic import AccuracyError
        params, config = setup
        path = M.vertical_path((0, 1))
        with pytest.raises(AccuracyError):
            T.multipoint_lhp(path, 0, 0, config, params, resolution=8,
                             tolerance=1e-30)

    def test_degenerate_pair_refused_and_perturbed(self, setup):
        params, config = setup
        # down then up through the same bond gives {xi~, xi~ - eta~}
        path = M.AdjacentPath(vertices=((1, 1), (2, 1), (1, 1)),
                              heights=(0, 1, 0))
        with pytest.raises(PoleError):
            T.multipoint_lhp(path, 0, 0, config, params, resolution=64)
        val, est = T.multipoint_lhp(path, 0, 0, config, params,
                                    resolution=64, perturb_degenerate=True)
        assert np.isfinite(val)

    def test_degenerate_pair_vs_dense_oracle(self, setup):
        # the perturbation fallback reproduces the finite-size limit: the
        # dense route (which needs no determinant formulas) approaches it
        params, _ = setup
        path = M.AdjacentPath(vertices=((1, 1), (2, 1), (1, 1)),
                              heights=(0, 1, 0))
        ys = (0.04, -0.03, 0.02, -0.05, 0.035, -0.02, 0.05, -0.04)
        cfg = LatticeConfig(N=8, xi=tuple(0.5 + 1j * y for y in ys))
        ref, _ = T.multipoint_lhp(path, 0, 0, cfg, params, resolution=128,
                                  perturb_degenerate=True)
        devs = []
        for N in (4, 6):
            cfgN = LatticeConfig(N=N, xi=tuple(0.5 + 1j * y for y in ys[:N]))
            gs = B.all_ground_states(cfgN, params)
            fin = M.finite_lhp(path, ("flat", 0, 0), gs, method="brute")
            devs.append(abs(fin - ref))
        assert devs[0] > devs[1]
        assert devs[1] < 2e-4

    def test_finite_size_convergence_m1(self, setup):
        params, _ = setup
        path = M.vertical_path((1, 2))
        ref, _ = T.multipoint_lhp(path, 0, 0, homogeneous_config(4), params,
                                  resolution=256)
        devs = []
        for N in (4, 6, 8):
            gs = B.all_ground_states(homogeneous_config(N), params)
            fin = M.finite_lhp(path, ("flat", 0, 0), gs)
            devs.append(abs(fin - ref))
        assert devs[0] > devs[1] > devs[2]
