import numpy as np
import pytest

from fluopat.forward import OpticalMedium, linearized_datum, solve_forward
from fluopat.grid import build_mesh, build_ordinates, l2_inner
from fluopat.landweber import (
    BlockOperatorSpec,
    apply_Lambda_m,
    apply_Lambda_x,
    apply_Pi,
    apply_Pi_adjoint,
    assemble_operator,
    back_substitute,
    build_spec,
    estimate_step_size,
    landweber_solve,
    save_history_csv,
)
from fluopat.rte import Discretization, ScatteringKernel, side_inflow


def _medium(nc, g=0.3):
    return OpticalMedium(
        sigma_a_xi=np.full(nc, 0.1),
        sigma_a_m=np.full(nc, 0.15),
        sigma_s_x=np.full(nc, 1.0),
        sigma_s_m=np.full(nc, 0.8),
        grueneisen=np.full(nc, 1.0),
        kernel=ScatteringKernel("henyey-greenstein", g),
        eta=np.full(nc, 0.5),
        sigma_a_xf=np.full(nc, 0.2),
    )


@pytest.fixture(scope="module")
def small():
    disc = Discretization(build_mesh(4), build_ordinates(8))
    medium = _medium(disc.mesh.n_cells)
    sources = [side_inflow(disc, "left"), side_inflow(disc, "right")]
    return disc, medium, sources


@pytest.fixture(scope="module")
def spec_general(small):
    disc, medium, sources = small
    return build_spec(disc, medium, sources, model="general", solver_tol=1e-12)


@pytest.fixture(scope="module")
def spec_partial(small):
    disc, medium, sources = small
    return build_spec(disc, medium, sources, model="partial", solver_tol=1e-12)


class TestSpecValidation:
    def test_needs_two_sources(self, small):
        disc, medium, sources = small
        with pytest.raises(ValueError):
            build_spec(disc, medium, sources[:1])

    def test_unknown_model(self, small):
        disc, medium, sources = small
        with pytest.raises(ValueError):
            build_spec(disc, medium, sources, model="full")

    def test_negative_alpha(self, small):
        disc, medium, sources = small
        with pytest.raises(ValueError):
            build_spec(disc, medium, sources, alpha=-1.0)


class TestBlockRows:
    def test_zero_input_zero_output(self, spec_general, spec_partial):
        nc = spec_general.disc.mesh.n_cells
        z = np.zeros(nc)
        for spec in (spec_general, spec_partial):
            rows = apply_Pi(spec, z, z)
            assert all(np.max(np.abs(r)) < 1e-14 for r in rows)
            assert np.max(np.abs(apply_Lambda_x(spec, 0, z))) < 1e-14
            assert np.max(np.abs(apply_Lambda_m(spec, 0, z))) < 1e-14

    def test_rows_linear(self, spec_partial):
        nc = spec_partial.disc.mesh.n_cells
        rng = np.random.default_rng(0)
        p1 = rng.standard_normal((2, nc))
        p2 = rng.standard_normal((2, nc))
        a, b = 0.6, -1.1
        r1 = apply_Pi(spec_partial, *p1)
        r2 = apply_Pi(spec_partial, *p2)
        rc = apply_Pi(spec_partial, a * p1[0] + b * p2[0], a * p1[1] + b * p2[1])
        for rr, ra, rb in zip(rc, r1, r2):
            assert np.max(np.abs(rr - a * ra - b * rb)) < 1e-10

    def test_solution_operators_smooth(self, spec_general):
        # transport solution followed by angular averaging damps oscillation:
        # the checkerboard's normalized gradient energy drops
        disc = spec_general.disc
        mesh = disc.mesh
        rng = np.random.default_rng(12)
        f = rng.choice([-1.0, 1.0], size=mesh.n_cells)

        def roughness(v):
            # mean absolute jump across interior edges per unit amplitude
            jumps = [
                abs(v[i] - v[j])
                for i in range(mesh.n_cells)
                for j in mesh.neighbors[i]
                if j > i
            ]
            return np.mean(jumps) / np.max(np.abs(v))

        for op in (apply_Lambda_x, apply_Lambda_m):
            out = op(spec_general, 0, f)
            assert roughness(out) < 0.5 * roughness(f)

    def test_matches_forward_linearization(self, small):
        # general-model row j equals H'_j / (Xi * K_I(u_x^j)) for the pair
        # zeta = d_eta*sigma_a_xf + eta*d_sigma, xi = d_sigma
        disc, medium, sources = small
        spec = build_spec(disc, medium, sources, model="general", solver_tol=1e-13)
        nc = disc.mesh.n_cells
        rng = np.random.default_rng(3)
        d_eta = rng.standard_normal(nc)
        d_sigma = rng.standard_normal(nc)
        zeta = d_eta * medium.sigma_a_xf + medium.eta * d_sigma
        rows = apply_Pi(spec, zeta, d_sigma)
        for j, g in enumerate(sources):
            fs = solve_forward(disc, medium, g, tol=1e-13)
            Hp = linearized_datum(disc, medium, g, d_eta, d_sigma, fs=fs, tol=1e-13)
            ref = Hp / (medium.grueneisen * fs.ki_ux)
            assert np.max(np.abs(rows[j] - ref)) < 1e-8 * np.max(np.abs(ref))


class TestAdjoint:
    @pytest.mark.parametrize("which", ["general", "partial"])
    @pytest.mark.parametrize("alpha", [0.0, 0.05])
    def test_inner_product_identity(self, small, which, alpha):
        disc, medium, sources = small
        spec = build_spec(
            disc, medium, sources, model=which, alpha=alpha, solver_tol=1e-13
        )
        mesh = disc.mesh
        nc = mesh.n_cells
        rng = np.random.default_rng(17)
        zeta, xi = rng.standard_normal((2, nc))
        rs = list(rng.standard_normal((2, nc)))
        rows = apply_Pi(spec, zeta, xi)
        lhs = sum(l2_inner(mesh, r, row) for r, row in zip(rs, rows))
        az, ax = apply_Pi_adjoint(spec, rs)
        rhs = l2_inner(mesh, zeta, az) + l2_inner(mesh, xi, ax)
        assert abs(lhs - rhs) < 1e-10 * max(abs(lhs), 1.0)


class TestBackSubstitute:
    def test_partial_recovers_efficiency(self, spec_partial):
        nc = spec_partial.disc.mesh.n_cells
        xi = np.full(nc, 0.2)
        eta, sigma, flagged = back_substitute(spec_partial, 0.5 * xi, xi)
        assert np.allclose(eta, 0.5)
        assert np.allclose(sigma, 0.2)
        assert not flagged.any()

    def test_partial_flags_small_divisor(self, spec_partial):
        nc = spec_partial.disc.mesh.n_cells
        xi = np.full(nc, 0.2)
        xi[3] = 0.0
        eta, _, flagged = back_substitute(spec_partial, 0.5 * xi, xi)
        assert flagged[3]
        assert eta[3] == 0.0

    def test_general_round_trip(self, spec_general):
        m = spec_general.medium
        nc = spec_general.disc.mesh.n_cells
        rng = np.random.default_rng(4)
        d_eta = rng.standard_normal(nc)
        d_sigma = rng.standard_normal(nc)
        zeta = d_eta * m.sigma_a_xf + m.eta * d_sigma
        out_eta, out_sigma, flagged = back_substitute(spec_general, zeta, d_sigma)
        assert np.allclose(out_eta, d_eta)
        assert np.allclose(out_sigma, d_sigma)
        assert not flagged.any()


class TestIteration:
    def test_fixed_point_stops_immediately(self, spec_partial):
        import dataclasses

        nc = spec_partial.disc.mesh.n_cells
        rng = np.random.default_rng(8)
        target = rng.standard_normal((2, nc))
        z = apply_Pi(spec_partial, *target)
        spec = dataclasses.replace(spec_partial, max_iters=50, tol=1e-10)
        (zeta, xi), history = landweber_solve(
            spec, z, initial=(target[0], target[1])
        )
        assert history[-1]["iteration"] <= 2
        assert np.max(np.abs(zeta - target[0])) < 1e-8

    def test_residual_monotone_matrix_free(self, spec_general):
        import dataclasses

        nc = spec_general.disc.mesh.n_cells
        rng = np.random.default_rng(9)
        z = list(0.1 * rng.standard_normal((2, nc)))
        spec = dataclasses.replace(spec_general, max_iters=30, tol=0.0)
        _, history = landweber_solve(spec, z)
        res = [h["residual"] for h in history]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(res, res[1:]))

    def test_dense_path_matches_matrix_free(self, spec_partial):
        import dataclasses

        nc = spec_partial.disc.mesh.n_cells
        rng = np.random.default_rng(10)
        z = list(0.1 * rng.standard_normal((2, nc)))
        A = assemble_operator(spec_partial)
        tau = 0.9 * estimate_step_size(spec_partial, matrix=A)
        spec = dataclasses.replace(spec_partial, max_iters=10, tol=0.0, tau=tau)
        (z1, x1), _ = landweber_solve(spec, z)
        (z2, x2), _ = landweber_solve(spec, z, matrix=A)
        assert np.max(np.abs(z1 - z2)) < 1e-9
        assert np.max(np.abs(x1 - x2)) < 1e-9

    def test_step_size_estimates_agree(self, spec_partial):
        A = assemble_operator(spec_partial)
        t_free = estimate_step_size(spec_partial, n_power_iters=40)
        t_dense = estimate_step_size(spec_partial, n_power_iters=40, matrix=A)
        assert t_free > 0 and t_dense > 0
        assert abs(t_free - t_dense) < 1e-6 * t_dense

    def test_history_csv(self, spec_partial, tmp_path):
        import dataclasses

        nc = spec_partial.disc.mesh.n_cells
        z = list(np.ones((2, nc)) * 0.01)
        spec = dataclasses.replace(spec_partial, max_iters=5, tol=0.0)
        _, history = landweber_solve(spec, z)
        path = tmp_path / "h.csv"
        save_history_csv(path, history)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "iteration,residual,update_norm"
        assert len(lines) == 1 + len(history)
