"""Spectral operator tests on the torus: trivial identities, finite-difference
oracles, projection calculus, and the curl*/potential round trip."""

import numpy as np
import pytest

from wideflow.errors import BadExponent, DivergenceTooLarge, NonzeroMean, NotSkew
from wideflow.grid import (
    TorusGrid,
    VectorField,
    TensorField,
    convect,
    curl_star,
    divergence,
    fftn,
    gradient,
    l2_inner,
    leray_project,
    lp_norm,
    poincare_constant,
    potential_T,
    sym_gradient,
    sobolev_seminorm,
)

G2 = TorusGrid(d=2, n=64)
G2S = TorusGrid(d=2, n=32)


def resample(grid, values, factor):
    """Exact spectral resampling of band-limited data onto a finer grid."""
    n, nf = grid.n, grid.n * factor
    hat = np.fft.fftn(values, axes=tuple(range(values.ndim - grid.d, values.ndim)))
    pad = np.zeros(values.shape[: -grid.d] + (nf,) * grid.d, dtype=complex)
    half = n // 2
    sl = np.r_[0:half, nf - half : nf]
    idx = np.ix_(*[range(s) for s in values.shape[: -grid.d]], *([sl] * grid.d))
    pad[idx] = hat * factor**grid.d
    return np.real(np.fft.ifftn(pad, axes=tuple(range(values.ndim - grid.d, values.ndim))))


def finite_difference_gradient(grid, values, axis, factor=8):
    """4th-order centred stencil on a spectrally refined sampling.

    Independent derivative oracle: the stencil never touches the spectral
    differentiation path, and the refinement is exact for band-limited data.
    """
    fine = resample(grid, values, factor)
    h = grid.h / factor
    ax = values.ndim - grid.d + axis
    dfine = (
        -np.roll(fine, -2, axis=ax)
        + 8 * np.roll(fine, -1, axis=ax)
        - 8 * np.roll(fine, 1, axis=ax)
        + np.roll(fine, 2, axis=ax)
    ) / (12 * h)
    take = (np.s_[:],) * (values.ndim - grid.d) + (np.s_[::factor],) * grid.d
    return dfine[take]


def band_limited(grid, rng, kmax=4):
    return VectorField.random(grid, rng, kmax=kmax)


class TestSymGradient:
    def test_zero_field(self):
        eps = sym_gradient(VectorField.zero(G2))
        assert np.all(eps.values == 0.0)

    def test_shear_mode(self):
        u = VectorField.from_callable(G2, lambda x, y: (np.sin(y), np.zeros_like(x)))
        eps = sym_gradient(u)
        _, y = G2.meshgrid()
        assert np.allclose(eps.values[0, 0], 0.0, atol=1e-12)
        assert np.allclose(eps.values[0, 1], np.cos(y) / 2, atol=1e-12)
        assert np.allclose(eps.values[1, 0], np.cos(y) / 2, atol=1e-12)
        assert np.allclose(eps.values[1, 1], 0.0, atol=1e-12)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        u = band_limited(G2, rng)
        eps = sym_gradient(u).values
        g = np.stack([finite_difference_gradient(G2, u.values, j) for j in range(2)])
        g = np.swapaxes(g, 0, 1)  # g[i, j] = d_j u_i
        eps_fd = 0.5 * (g + np.swapaxes(g, 0, 1))
        rel = np.max(np.abs(eps - eps_fd)) / np.max(np.abs(eps))
        assert rel <= 1e-6

    def test_trace_equals_divergence(self):
        rng = np.random.default_rng(1)
        u = band_limited(G2, rng)
        tr = np.trace(sym_gradient(u).values, axis1=0, axis2=1)
        dv = divergence(u).values
        assert np.max(np.abs(tr - dv)) <= 1e-12 * max(np.max(np.abs(dv)), 1.0)


class TestDivergence:
    def test_single_mode(self):
        u = VectorField.from_callable(G2, lambda x, y: (np.sin(x), np.zeros_like(x)))
        x, _ = G2.meshgrid()
        assert np.allclose(divergence(u).values, np.cos(x), atol=1e-12)

    def test_solenoidal_by_inspection(self):
        u = VectorField.from_callable(G2, lambda x, y: (-np.sin(y), np.sin(x)))
        assert np.max(np.abs(divergence(u).values)) <= 1e-12

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        u = band_limited(G2, rng)
        dv = divergence(u).values
        fd = sum(finite_difference_gradient(G2, u.values[j], j) for j in range(2))
        assert np.max(np.abs(dv - fd)) / np.max(np.abs(dv)) <= 1e-6

    def test_linearity(self):
        rng = np.random.default_rng(3)
        u, v = band_limited(G2, rng), band_limited(G2, rng)
        left = divergence(VectorField(G2, 2.5 * u.values + v.values)).values
        right = 2.5 * divergence(u).values + divergence(v).values
        assert np.max(np.abs(left - right)) <= 1e-13 * np.max(np.abs(right))


class TestLerayProjection:
    def test_annihilates_gradients(self):
        phi = np.sin(G2.meshgrid()[0]) * np.cos(2 * G2.meshgrid()[1])
        gp = gradient(G2, phi)
        out = leray_project(VectorField(G2, gp))
        assert np.max(np.abs(out.values)) <= 1e-12 * np.max(np.abs(gp))

    def test_identity_on_solenoidal(self):
        u = VectorField.from_callable(G2, lambda x, y: (np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)))
        pu = leray_project(u)
        assert np.max(np.abs(pu.values - u.values)) <= 1e-12

    def test_idempotent_and_orthogonal(self):
        rng = np.random.default_rng(4)
        u = band_limited(G2, rng)
        pu = leray_project(u)
        ppu = leray_project(pu)
        assert np.max(np.abs(ppu.values - pu.values)) <= 1e-14 * max(np.max(np.abs(pu.values)), 1.0)
        inner = l2_inner(G2, u.values - pu.values, pu.values)
        assert abs(inner) <= 1e-10

    def test_divergence_and_mean_killed(self):
        rng = np.random.default_rng(5)
        u = band_limited(G2, rng)
        pu = leray_project(u)
        assert np.max(np.abs(divergence(pu).values)) <= 1e-12 * lp_norm(pu, np.inf)
        assert np.max(np.abs(pu.mean())) <= 1e-14


class TestConvect:
    def test_advection_of_x_independent_field(self):
        u = VectorField.from_callable(G2, lambda x, y: (np.cos(y), np.zeros_like(x)))
        c = convect(u)
        assert np.max(np.abs(c.values)) <= 1e-12

    def test_taylor_green_is_pure_gradient(self):
        u = VectorField.from_callable(G2, lambda x, y: (np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)))
        c = convect(u)
        proj = leray_project(c)
        assert np.max(np.abs(proj.values)) <= 1e-10

    def test_energy_neutral_pairing(self):
        rng = np.random.default_rng(6)
        u = VectorField.random_solenoidal(G2, rng)
        c = convect(u)
        pairing = l2_inner(G2, c.values, u.values)
        assert abs(pairing) <= 1e-10 * lp_norm(u, 2) ** 3

    def test_rejects_divergent_input(self):
        u = VectorField.from_callable(G2, lambda x, y: (np.sin(x), np.zeros_like(x)))
        with pytest.raises(DivergenceTooLarge):
            convect(u)


class TestCurlStarAndPotential:
    def test_stream_function_form(self):
        x, _ = G2.meshgrid()
        vals = np.zeros((2, 2) + G2.shape)
        vals[0, 1] = np.sin(x)
        vals[1, 0] = -np.sin(x)
        v = TensorField(G2, vals, skew=True)
        w = curl_star(v)
        assert np.allclose(w.values[0], 0.0, atol=1e-12)
        assert np.allclose(w.values[1], -np.cos(x), atol=1e-12)

    def test_zero(self):
        v = TensorField(G2, np.zeros((2, 2) + G2.shape), skew=True)
        assert np.max(np.abs(curl_star(v).values)) == 0.0

    def test_divergence_free_range(self):
        rng = np.random.default_rng(7)
        a = VectorField.random(G2, rng).values
        vals = np.zeros((2, 2) + G2.shape)
        vals[0, 1] = a[0]
        vals[1, 0] = -a[0]
        v = TensorField(G2, vals, skew=True)
        w = curl_star(v)
        assert np.max(np.abs(divergence(w).values)) <= 1e-12 * lp_norm(v, np.inf)

    def test_rejects_non_skew(self):
        vals = np.zeros((2, 2) + G2.shape)
        vals[0, 0] = 1.0
        with pytest.raises(NotSkew):
            curl_star(TensorField(G2, vals))

    def test_potential_inverts_stream_example(self):
        x, _ = G2.meshgrid()
        w = VectorField(G2, np.stack([np.zeros_like(x), -np.cos(x)]))
        v = potential_T(w)
        assert np.allclose(v.values[0, 1], np.sin(x), atol=1e-10)

    def test_round_trip_on_solenoidal(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            w = VectorField.random_solenoidal(G2, rng)
            back = curl_star(potential_T(w))
            rel = np.max(np.abs(back.values - w.values)) / np.max(np.abs(w.values))
            assert rel <= 1e-10

    def test_potential_rejects_nonzero_mean(self):
        u = VectorField(G2, np.ones((2,) + G2.shape))
        with pytest.raises(NonzeroMean):
            potential_T(u)

    def test_potential_gains_one_derivative(self):
        rng = np.random.default_rng(9)
        ratios = []
        for kmax in (2, 4, 8):
            w = VectorField.random_solenoidal(G2, rng, kmax=kmax)
            v = potential_T(w)
            ratios.append(sobolev_seminorm(v, 1, 2) / lp_norm(w, 2))
        assert max(ratios) <= 3.0  # bounded map into one derivative higher

    def test_projection_calculus(self):
        # leray_project(curl_star(v)) = curl_star(v) on skew inputs
        rng = np.random.default_rng(10)
        a = VectorField.random(G2, rng).values
        vals = np.zeros((2, 2) + G2.shape)
        vals[0, 1] = a[0]
        vals[1, 0] = -a[0]
        w = curl_star(TensorField(G2, vals, skew=True))
        pw = leray_project(w)
        assert np.max(np.abs(pw.values - w.values)) <= 1e-12 * max(np.max(np.abs(w.values)), 1.0)


class TestNorms:
    def test_constant_l2(self):
        f = VectorField(G2, np.stack([3.0 * np.ones(G2.shape), np.zeros(G2.shape)]))
        assert abs(lp_norm(f, 2) - 3.0 * 2 * np.pi) <= 1e-12

    def test_cosine_l2(self):
        u = VectorField.from_callable(G2, lambda x, y: (np.cos(y), np.zeros_like(x)))
        assert abs(lp_norm(u, 2) - np.pi * np.sqrt(2)) <= 1e-12

    def test_grid_refinement(self):
        rng = np.random.default_rng(11)
        coarse = VectorField.random(G2S, rng, kmax=5)
        # same Fourier content on the fine grid
        fine_vals = np.zeros((2,) + G2.shape, dtype=complex)
        c_hat = fftn(G2S, coarse.values)
        ks = G2S.n // 2
        sl = np.r_[0:ks, G2.n - ks : G2.n]
        fine_vals[np.ix_(range(2), sl, sl)] = c_hat * (G2.n / G2S.n) ** 2
        fine = VectorField(G2, np.real(np.fft.ifftn(fine_vals, axes=(1, 2))))
        n_c = lp_norm(coarse, 4)
        n_f = lp_norm(fine, 4)
        assert abs(n_c - n_f) / n_f <= 1e-8

    def test_bad_exponent(self):
        with pytest.raises(BadExponent):
            lp_norm(VectorField.zero(G2S), 0.5)

    def test_parseval(self):
        rng = np.random.default_rng(12)
        u = VectorField.random(G2S, rng)
        hat = fftn(G2S, u.values)
        spectral = np.sum(np.abs(hat) ** 2) / G2S.n**2 * G2S.cell_volume
        assert abs(lp_norm(u, 2) ** 2 - spectral) <= 1e-12 * spectral

    def test_linearity_of_operators(self):
        rng = np.random.default_rng(13)
        u, v = band_limited(G2S, rng), band_limited(G2S, rng)
        for op in (lambda w: sym_gradient(w).values, lambda w: divergence(w).values, lambda w: leray_project(w).values):
            left = op(VectorField(G2S, 1.7 * u.values + v.values))
            right = 1.7 * op(u) + op(v)
            assert np.max(np.abs(left - right)) <= 1e-13 * max(np.max(np.abs(right)), 1.0)


class TestPoincare:
    def test_p2_first_mode(self):
        cp = poincare_constant(G2S, 2.0)
        assert abs(cp - 1.0) <= 1e-6

    def test_refinement_stability_p4(self):
        c32 = poincare_constant(G2S, 4.0)
        c64 = poincare_constant(G2, 4.0)
        assert abs(c32 - c64) / c64 <= 0.02

    def test_rejects_bad_exponent(self):
        with pytest.raises(BadExponent):
            poincare_constant(G2S, 1.0)


class TestTensorFlags:
    def test_symmetric_flag_validated(self):
        vals = np.zeros((2, 2) + G2S.shape)
        vals[0, 1] = 1.0
        with pytest.raises(ValueError):
            TensorField(G2S, vals, symmetric=True)

    def test_three_dimensional_grid(self):
        g3 = TorusGrid(d=3, n=8)
        u = VectorField.from_callable(
            g3, lambda x, y, z: (np.sin(y), np.sin(z), np.sin(x))
        )
        assert np.max(np.abs(divergence(u).values)) <= 1e-12
        pu = leray_project(u)
        assert np.max(np.abs(pu.values - u.values)) <= 1e-12
        w = curl_star(potential_T(pu))
        assert np.max(np.abs(w.values - pu.values)) <= 1e-10
