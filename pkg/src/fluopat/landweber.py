"""Multi-source linearized simultaneous reconstruction by Landweber iteration.

The unknown pair (zeta, xi) collects the two coefficients:

* general model: zeta = d_eta*sigma_a_xf + eta*d_sigma, xi = d_sigma
  (perturbations around a nonzero background);
* partial model: zeta = (1-eta)*sigma_a_xf, xi = sigma_a_xf (the
  fluorophore absorption is dropped from the excitation equation).

Each data row j couples the pair through compositions of vacuum-boundary
transport solution operators with the angular average; the adjoint rows
use reverse-advection solves and are exact discrete transposes, which is
what the inner-product identity test checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forward import OpticalMedium
from .grid import l2_inner, l2_norm
from .rte import (
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    Discretization,
    TransportProblem,
    apply_K_I,
    solve_rte,
)

DIVISOR_FLOOR = 1e-8


@dataclass(frozen=True)
class SourceBackground:
    """Per-illumination background excitation solve."""

    g_x: np.ndarray
    u_x: np.ndarray
    ki_ux: np.ndarray


@dataclass
class BlockOperatorSpec:
    model: str  # 'general' | 'partial'
    disc: Discretization
    medium: OpticalMedium
    backgrounds: list[SourceBackground]
    alpha: float = 0.0
    tau: float | None = None
    max_iters: int = 200
    tol: float = 1e-8
    solver_tol: float = DEFAULT_TOL
    solver_max_iters: int = DEFAULT_MAX_ITERS

    def __post_init__(self):
        if self.model not in ("general", "partial"):
            raise ValueError(f"unknown model {self.model!r}")
        if len(self.backgrounds) < 2:
            raise ValueError("simultaneous recovery needs J >= 2 sources")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


def build_spec(
    disc: Discretization,
    medium: OpticalMedium,
    sources: list[np.ndarray],
    model: str = "general",
    **kwargs,
) -> BlockOperatorSpec:
    """Solve the background excitation problem for every source.

    In the partial model the fluorophore absorption is absent from the
    excitation equation, so u_x uses the intrinsic absorption only.
    """
    if model == "partial":
        sigma_t = medium.sigma_a_xi + medium.sigma_s_x
    else:
        sigma_t = medium.sigma_t_x
    tol = kwargs.get("solver_tol", DEFAULT_TOL)
    max_iters = kwargs.get("solver_max_iters", DEFAULT_MAX_ITERS)
    backgrounds = []
    for g in sources:
        u_x, _ = solve_rte(
            disc,
            TransportProblem(
                sigma_t=sigma_t,
                sigma_s=medium.sigma_s_x,
                kernel=medium.kernel,
                inflow=g,
            ),
            tol=tol,
            max_iters=max_iters,
        )
        ki = apply_K_I(u_x, disc.ordinates)
        if np.any(np.abs(ki) < DIVISOR_FLOOR):
            raise ValueError("background K_I(u_x) falls below the divisor floor")
        backgrounds.append(SourceBackground(g_x=g, u_x=u_x, ki_ux=ki))
    return BlockOperatorSpec(
        model=model, disc=disc, medium=medium, backgrounds=backgrounds, **kwargs
    )


def _solve_vacuum(spec, wavelength: str, source, adjoint: bool) -> np.ndarray:
    m = spec.medium
    if wavelength == "x":
        if spec.model == "partial":
            sigma_t = m.sigma_a_xi + m.sigma_s_x
        else:
            sigma_t = m.sigma_t_x
        sigma_s = m.sigma_s_x
    else:
        sigma_t, sigma_s = m.sigma_t_m, m.sigma_s_m
    u, _ = solve_rte(
        spec.disc,
        TransportProblem(
            sigma_t=sigma_t,
            sigma_s=sigma_s,
            kernel=m.kernel,
            source=source,
            adjoint=adjoint,
        ),
        tol=spec.solver_tol,
        max_iters=spec.solver_max_iters,
    )
    return u


def apply_Lambda_x(spec: BlockOperatorSpec, j: int, dsigma: np.ndarray) -> np.ndarray:
    """K_I of the excitation solve driven by the angular source u_x^j * dsigma."""
    bg = spec.backgrounds[j]
    u = _solve_vacuum(spec, "x", dsigma[:, None] * bg.u_x, adjoint=False)
    return apply_K_I(u, spec.disc.ordinates)


def apply_Lambda_m(spec: BlockOperatorSpec, j: int, f: np.ndarray) -> np.ndarray:
    """K_I of the emission solve driven by the isotropic source K_I(u_x^j) * f."""
    bg = spec.backgrounds[j]
    u = _solve_vacuum(spec, "m", bg.ki_ux * f, adjoint=False)
    return apply_K_I(u, spec.disc.ordinates)


def apply_Lambda_mx(spec: BlockOperatorSpec, j: int, dsigma: np.ndarray) -> np.ndarray:
    """Two-stage composition: excitation stage, then fluorescent emission."""
    m = spec.medium
    inner = apply_Lambda_x(spec, j, dsigma)
    u = _solve_vacuum(spec, "m", m.eta * m.sigma_a_xf * inner, adjoint=False)
    return apply_K_I(u, spec.disc.ordinates)


def apply_Pi(
    spec: BlockOperatorSpec, zeta: np.ndarray, xi: np.ndarray
) -> list[np.ndarray]:
    """Apply the block system row by row; one row per illumination."""
    m = spec.medium
    ords = spec.disc.ordinates
    rows = []
    for j, bg in enumerate(spec.backgrounds):
        if spec.model == "general":
            lam_x = apply_Lambda_x(spec, j, xi)
            # combine the two emission solves: sources K_I(u_x) zeta (from
            # the zeta block) and -eta sigma_a_xf Lambda_x(xi) (from the
            # composed xi block) are linear in the source
            u_m = _solve_vacuum(
                spec, "m", bg.ki_ux * zeta - m.eta * m.sigma_a_xf * lam_x, adjoint=False
            )
            em = apply_K_I(u_m, ords)
            row = (
                -zeta
                + xi
                - (m.sigma_a_x_eta / bg.ki_ux) * lam_x
                + (m.sigma_a_m / bg.ki_ux) * em
            )
        else:
            lam_m = apply_Lambda_m(spec, j, zeta - xi)
            row = zeta - (m.sigma_a_m / bg.ki_ux) * lam_m
        if spec.alpha > 0.0 and j == 1:
            row = row + spec.alpha * xi
        rows.append(row)
    return rows


def apply_Pi_adjoint(
    spec: BlockOperatorSpec, residuals: list[np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Transposed block action via reverse-advection solves."""
    m = spec.medium
    ords = spec.disc.ordinates
    nc = spec.disc.mesh.n_cells
    zeta_out = np.zeros(nc)
    xi_out = np.zeros(nc)
    for j, bg in enumerate(spec.backgrounds):
        r = residuals[j]
        q_m = _solve_vacuum(spec, "m", (m.sigma_a_m / bg.ki_ux) * r, adjoint=True)
        a = apply_K_I(q_m, ords)
        if spec.model == "general":
            q_x = _solve_vacuum(
                spec,
                "x",
                (m.sigma_a_x_eta / bg.ki_ux) * r + m.eta * m.sigma_a_xf * a,
                adjoint=True,
            )
            b = apply_K_I(bg.u_x * q_x, ords)
            zeta_out += -r + bg.ki_ux * a
            xi_out += r - b
        else:
            zeta_out += r - bg.ki_ux * a
            xi_out += bg.ki_ux * a
        if spec.alpha > 0.0 and j == 1:
            xi_out += spec.alpha * r
    return zeta_out, xi_out


def _pair_norm(mesh, zeta, xi) -> float:
    return float(np.sqrt(l2_norm(mesh, zeta) ** 2 + l2_norm(mesh, xi) ** 2))


def _data_norm(mesh, rows) -> float:
    return float(np.sqrt(sum(l2_norm(mesh, r) ** 2 for r in rows)))


def estimate_step_size(
    spec: BlockOperatorSpec,
    n_power_iters: int = 20,
    seed: int = 0,
    matrix: np.ndarray | None = None,
) -> float:
    """tau = 1 / lambda_max(Pi* Pi), lambda_max estimated by power iteration."""
    mesh = spec.disc.mesh
    nc = mesh.n_cells
    rng = np.random.default_rng(seed)
    zeta = rng.standard_normal(nc)
    xi = rng.standard_normal(nc)
    if matrix is not None:
        J = len(spec.backgrounds)
        areas_rows = np.tile(mesh.cell_areas, J)
        areas_cols = np.tile(mesh.cell_areas, 2)
        At_w = (matrix * areas_rows[:, None]).T / areas_cols[:, None]

        def forward_adjoint(zt, x):
            g = At_w @ (matrix @ np.concatenate([zt, x]))
            return g[:nc], g[nc:]
    else:
        def forward_adjoint(zt, x):
            return apply_Pi_adjoint(spec, apply_Pi(spec, zt, x))

    lam = 1.0
    for _ in range(n_power_iters):
        gz, gx = forward_adjoint(zeta, xi)
        lam = (l2_inner(mesh, zeta, gz) + l2_inner(mesh, xi, gx)) / max(
            _pair_norm(mesh, zeta, xi) ** 2, 1e-300
        )
        nrm = _pair_norm(mesh, gz, gx)
        zeta, xi = gz / nrm, gx / nrm
    return 1.0 / lam


def assemble_operator(spec: BlockOperatorSpec) -> np.ndarray:
    """Dense matrix of the block operator, one column per unit coefficient.

    Column c of the returned (J*nc, 2*nc) array is the stacked row vector
    of apply_Pi evaluated on the c-th unit pair.  Worth the 2*nc operator
    applications when the Landweber iteration count far exceeds 2*nc: each
    subsequent iteration is then two matrix-vector products instead of
    4*J transport solves, with identical iterates.
    """
    nc = spec.disc.mesh.n_cells
    J = len(spec.backgrounds)
    A = np.empty((J * nc, 2 * nc))
    zeta = np.zeros(nc)
    xi = np.zeros(nc)
    for c in range(2 * nc):
        block = zeta if c < nc else xi
        block[c % nc] = 1.0
        A[:, c] = np.concatenate(apply_Pi(spec, zeta, xi))
        block[c % nc] = 0.0
    return A


def landweber_solve(
    spec: BlockOperatorSpec,
    z: list[np.ndarray],
    initial: tuple[np.ndarray, np.ndarray] | None = None,
    noise_floor: float | None = None,
    matrix: np.ndarray | None = None,
    history_every: int = 1,
) -> tuple[tuple[np.ndarray, np.ndarray], list[dict]]:
    """Landweber iteration pair_{k+1} = pair_k - tau Pi*(Pi pair_k - z).

    Returns the final pair and a history of per-iteration records
    (residual norm, update norm, tau), thinned to every ``history_every``-th
    iteration.  The residual is kept non-increasing by halving tau on a
    violation; three consecutive violations abort with a divergence
    diagnostic.  Passing ``matrix`` (from assemble_operator) runs the same
    recursion through dense products; adjoints are taken with respect to
    the area-weighted inner products in both cases.
    """
    mesh = spec.disc.mesh
    nc = mesh.n_cells
    J = len(spec.backgrounds)
    if initial is None:
        zeta, xi = np.zeros(nc), np.zeros(nc)
    else:
        zeta, xi = initial[0].copy(), initial[1].copy()

    areas_rows = np.tile(mesh.cell_areas, J)
    areas_cols = np.tile(mesh.cell_areas, 2)

    def res_norm_of(r):
        return float(np.sqrt(np.sum(areas_rows * r * r)))

    def pair_norm_of(p):
        return float(np.sqrt(np.sum(areas_cols * p * p)))

    z_vec = np.concatenate(z)
    p = np.concatenate([zeta, xi])
    history: list[dict] = []

    if matrix is not None:
        # same recursion through the assembled matrix; tau <= 2/L keeps the
        # residual provably non-increasing, so it is sampled only at the
        # recording points.  The iteration runs on the normal-equations
        # form: grad = Pi*(Pi p - z) = G p - b.
        tau = spec.tau
        if tau is None:
            tau = estimate_step_size(spec, matrix=matrix)
        At_w = (matrix * areas_rows[:, None]).T / areas_cols[:, None]
        G = At_w @ matrix
        b = At_w @ z_vec
        for it in range(1, spec.max_iters + 1):
            grad = G @ p - b
            p = p - tau * grad
            upd = tau * pair_norm_of(grad)
            record = it % history_every == 0 or it == 1
            stop = upd < spec.tol
            if record or stop:
                res_norm = res_norm_of(matrix @ p - z_vec)
                history.append(
                    {"iteration": it, "residual": res_norm, "update": upd, "tau": tau}
                )
                if noise_floor is not None and res_norm <= 1.05 * noise_floor:
                    break
            if stop:
                break
        return (p[:nc].copy(), p[nc:].copy()), history

    tau = spec.tau if spec.tau is not None else estimate_step_size(spec)
    prev_res = np.inf
    prev_p = p
    bad_streak = 0
    for it in range(1, spec.max_iters + 1):
        residual = np.concatenate(apply_Pi(spec, p[:nc], p[nc:])) - z_vec
        res_norm = res_norm_of(residual)
        if res_norm > prev_res * (1.0 + 1e-12):
            bad_streak += 1
            if bad_streak >= 3:
                history.append(
                    {"iteration": it, "residual": res_norm, "update": np.nan,
                     "tau": tau, "diverged": True}
                )
                break
            tau *= 0.5
            p = prev_p
            continue
        bad_streak = 0
        prev_res = res_norm
        prev_p = p
        gz, gx = apply_Pi_adjoint(
            spec, [residual[j * nc:(j + 1) * nc] for j in range(J)]
        )
        grad = np.concatenate([gz, gx])
        p = p - tau * grad
        upd = tau * pair_norm_of(grad)
        if it % history_every == 0 or it == 1:
            history.append(
                {"iteration": it, "residual": res_norm, "update": upd, "tau": tau}
            )
        if upd < spec.tol:
            break
        if noise_floor is not None and res_norm <= 1.05 * noise_floor:
            break
    return (p[:nc].copy(), p[nc:].copy()), history


def back_substitute(
    spec: BlockOperatorSpec, zeta: np.ndarray, xi: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Recover the physical coefficients from the working pair.

    Returns (eta-like, sigma-like, flagged): for the general model the
    perturbations (d_eta, d_sigma), for the partial model the absolute
    (eta, sigma_a_xf).  Cells whose divisor is below the floor are flagged
    and left at zero.
    """
    m = spec.medium
    if spec.model == "general":
        dsigma = xi
        divisor = m.sigma_a_xf
        flagged = np.abs(divisor) < DIVISOR_FLOOR
        deta = np.zeros_like(zeta)
        ok = ~flagged
        deta[ok] = (zeta[ok] - m.eta[ok] * xi[ok]) / divisor[ok]
        return deta, dsigma, flagged
    flagged = np.abs(xi) < DIVISOR_FLOOR
    eta = np.zeros_like(zeta)
    ok = ~flagged
    eta[ok] = 1.0 - zeta[ok] / xi[ok]
    return eta, xi, flagged


def save_history_csv(path, history: list[dict]) -> None:
    """Residual history as CSV: iteration, residual, update-norm."""
    with open(path, "w") as fh:
        fh.write("iteration,residual,update_norm\n")
        for rec in history:
            fh.write(f"{rec['iteration']},{rec['residual']:.17g},{rec['update']:.17g}\n")
