import copy

import numpy as np
import pytest

from fluopat.direct import (
    DIVISOR_FLOOR,
    PreconditionError,
    reconstruct_dsigma_linearized,
    reconstruct_dsigma_zero_background,
    reconstruct_eta_direct,
)
from fluopat.forward import OpticalMedium, compute_datum, linearized_datum, solve_forward
from fluopat.grid import l2_norm
from fluopat.rte import ScatteringKernel, uniform_inflow


def _pure_scattering_medium(nc, g=0.0, eta=0.5):
    """Excitation medium with negligible absorption: under uniform unit
    illumination the excitation field is the constant 1, hence isotropic."""
    return OpticalMedium(
        sigma_a_xi=np.full(nc, 1e-10),
        sigma_a_m=np.full(nc, 0.15),
        sigma_s_x=np.full(nc, 1.0),
        sigma_s_m=np.full(nc, 0.8),
        grueneisen=np.full(nc, 1.0),
        kernel=ScatteringKernel("henyey-greenstein", g),
        eta=np.full(nc, eta),
        sigma_a_xf=np.full(nc, 1e-10),
    )


class TestEtaDirect:
    def test_round_trip_is_discretely_exact(self, setup_8x8):
        disc, medium = setup_8x8.disc, setup_8x8.medium
        g = uniform_inflow(disc)
        fs = solve_forward(disc, medium, g, tol=1e-12)
        H = compute_datum(medium, fs)
        res = reconstruct_eta_direct(
            disc, medium, g, H, truth=setup_8x8.eta_true, tol=1e-12
        )
        assert res.error_percent["eta"] < 1e-6
        assert not res.flagged.any()

    def test_constant_truth_recovered_constant(self, disc_8x8):
        nc = disc_8x8.mesh.n_cells
        medium = _pure_scattering_medium(nc, eta=0.7)
        medium.sigma_a_xi = np.full(nc, 0.1)
        medium.sigma_a_xf = np.full(nc, 0.2)
        g = uniform_inflow(disc_8x8)
        fs = solve_forward(disc_8x8, medium, g, tol=1e-12)
        H = compute_datum(medium, fs)
        res = reconstruct_eta_direct(disc_8x8, medium, g, H, tol=1e-12)
        assert np.allclose(res.fields["eta"], 0.7, atol=1e-8)

    def test_affine_in_datum(self, setup_8x8):
        # the reconstruction map H -> eta is affine: convex combinations of
        # data give the same combination of reconstructions
        disc, medium = setup_8x8.disc, setup_8x8.medium
        g = uniform_inflow(disc)
        rng = np.random.default_rng(5)
        fs = solve_forward(disc, medium, g, tol=1e-12)
        H = compute_datum(medium, fs)
        H1 = H * (1.0 + 0.05 * rng.random(H.size))
        H2 = H * (1.0 - 0.05 * rng.random(H.size))
        t = 0.3

        def rec(Hv):
            return reconstruct_eta_direct(disc, medium, g, Hv, tol=1e-12).fields["eta"]

        combo = rec((1 - t) * H1 + t * H2)
        ref = (1 - t) * rec(H1) + t * rec(H2)
        assert np.max(np.abs(combo - ref)) < 1e-8 * np.max(np.abs(ref))

    def test_stability_ratio_bracket(self, setup_8x8):
        # two-sided stability of the inversion observed on random consistent
        # data pairs: both the weighted difference (eta1-eta2)*sigma*K_I(u_x)
        # and the raw efficiency difference stay within fixed multiples of
        # the datum difference; bands frozen from measurement
        disc = setup_8x8.disc
        g = uniform_inflow(disc)
        rng = np.random.default_rng(42)
        nc = disc.mesh.n_cells

        def solve_for(eta):
            m = copy.copy(setup_8x8.medium)
            m.eta = eta
            fs = solve_forward(disc, m, g, tol=1e-12)
            return compute_datum(m, fs), fs.ki_ux

        for _ in range(5):
            e1 = 0.2 + 0.6 * rng.random(nc)
            e2 = 0.2 + 0.6 * rng.random(nc)
            (H1, ki), (H2, _) = solve_for(e1), solve_for(e2)
            dH = l2_norm(disc.mesh, H1 - H2)
            weighted = l2_norm(
                disc.mesh, (e1 - e2) * setup_8x8.medium.sigma_a_xf * ki
            )
            assert 0.9 < weighted / dH < 1.15
            assert 8.0 < l2_norm(disc.mesh, e1 - e2) / dH < 13.0

    def test_conservative_kernel_rows_normalized(self, disc_8x8):
        # the conservative-medium step redistributes all attenuation:
        # (sigma_iso + sigma_s * Theta-rows) / sigma_t sums to 1 per cell
        nc = disc_8x8.mesh.n_cells
        medium = _pure_scattering_medium(nc, g=0.4)
        kernel_rows = (
            ScatteringKernel("henyey-greenstein", 0.4)
            .matrix(disc_8x8.ordinates)
            @ disc_8x8.ordinates.weights
        )
        row_sums = (
            medium.sigma_a_m[:, None] + medium.sigma_s_m[:, None] * kernel_rows[None, :]
        ) / medium.sigma_t_m[:, None]
        assert np.allclose(row_sums, 1.0, atol=1e-13)

    def test_flagged_cells_excluded(self, setup_8x8):
        disc = setup_8x8.disc
        medium = copy.copy(setup_8x8.medium)
        medium.sigma_a_xf = setup_8x8.medium.sigma_a_xf.copy()
        medium.sigma_a_xf[0] = 0.1 * DIVISOR_FLOOR
        g = uniform_inflow(disc)
        fs = solve_forward(disc, medium, g, tol=1e-10)
        H = compute_datum(medium, fs)
        res = reconstruct_eta_direct(disc, medium, g, H, tol=1e-10)
        assert res.flagged[0]
        assert res.fields["eta"][0] == 0.0


class TestDsigmaLinearized:
    def test_round_trip(self, disc_8x8):
        nc = disc_8x8.mesh.n_cells
        medium = _pure_scattering_medium(nc, g=0.3)
        g = uniform_inflow(disc_8x8)
        rng = np.random.default_rng(7)
        d_sigma = 0.05 + 0.1 * rng.random(nc)
        Hp = linearized_datum(
            disc_8x8, medium, g, np.zeros(nc), d_sigma, tol=1e-12
        )
        res = reconstruct_dsigma_linearized(
            disc_8x8, medium, g, Hp, truth=d_sigma, tol=1e-12
        )
        assert res.error_percent["dsigma"] < 1.0

    def test_zero_data_gives_zero(self, disc_8x8):
        nc = disc_8x8.mesh.n_cells
        medium = _pure_scattering_medium(nc)
        g = uniform_inflow(disc_8x8)
        res = reconstruct_dsigma_linearized(
            disc_8x8, medium, g, np.zeros(nc), tol=1e-12
        )
        assert np.max(np.abs(res.fields["dsigma"])) < 1e-10

    def test_vanishing_efficiency_decouples_to_one_solve(self, disc_8x8):
        # as eta -> 0 the coupled transformed system decouples and the
        # reconstruction coincides with the zero-background inversion
        nc = disc_8x8.mesh.n_cells
        medium = _pure_scattering_medium(nc, eta=1e-10)
        g = uniform_inflow(disc_8x8)
        rng = np.random.default_rng(13)
        d_sigma = 0.05 + 0.1 * rng.random(nc)
        Hp = linearized_datum(disc_8x8, medium, g, np.zeros(nc), d_sigma, tol=1e-12)
        full = reconstruct_dsigma_linearized(disc_8x8, medium, g, Hp, tol=1e-12)
        zero_bg = reconstruct_dsigma_zero_background(disc_8x8, medium, g, Hp, tol=1e-12)
        diff = np.max(np.abs(full.fields["dsigma"] - zero_bg.fields["dsigma"]))
        assert diff < 1e-8 * np.max(np.abs(d_sigma))

    def test_rejects_anisotropic_excitation(self, setup_8x8):
        # substantial absorption makes u_x visibly anisotropic
        disc, medium = setup_8x8.disc, setup_8x8.medium
        g = uniform_inflow(disc)
        with pytest.raises(PreconditionError):
            reconstruct_dsigma_linearized(
                disc, medium, g, np.zeros(disc.mesh.n_cells), tol=1e-10
            )


class TestDsigmaZeroBackground:
    def test_round_trip(self, disc_8x8):
        nc = disc_8x8.mesh.n_cells
        medium = _pure_scattering_medium(nc, eta=1e-10)
        g = uniform_inflow(disc_8x8)
        rng = np.random.default_rng(9)
        d_sigma = 0.05 + 0.1 * rng.random(nc)
        Hp = linearized_datum(
            disc_8x8, medium, g, np.zeros(nc), d_sigma, tol=1e-12
        )
        res = reconstruct_dsigma_zero_background(
            disc_8x8, medium, g, Hp, truth=d_sigma, tol=1e-12
        )
        assert res.error_percent["dsigma"] < 1e-4

    def test_datum_independent_of_efficiency_perturbation(self, disc_8x8):
        # around the zero fluorophore background the efficiency perturbation
        # never reaches the datum
        nc = disc_8x8.mesh.n_cells
        medium = _pure_scattering_medium(nc, eta=1e-10)
        g = uniform_inflow(disc_8x8)
        rng = np.random.default_rng(11)
        d_sigma = 0.1 * rng.random(nc)
        d_eta_a = np.zeros(nc)
        d_eta_b = rng.random(nc)
        Ha = linearized_datum(disc_8x8, medium, g, d_eta_a, d_sigma, tol=1e-12)
        Hb = linearized_datum(disc_8x8, medium, g, d_eta_b, d_sigma, tol=1e-12)
        assert np.max(np.abs(Ha - Hb)) < 1e-9 * np.max(np.abs(Ha))

        res = reconstruct_dsigma_zero_background(
            disc_8x8, medium, g, Hb, truth=d_sigma, tol=1e-12
        )
        assert res.error_percent["dsigma"] < 1e-4
