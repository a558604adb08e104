"""Steady radiative transport solves by upwind discrete-ordinates sweeps.

The unknown is cellwise constant per ordinate.  One source iteration lags
the scattering term and performs, for every ordinate, an upwind sweep of
the pure advection-removal equation in topological order of the upwind
dependency graph.  The adjoint solve reverses the advection direction and
takes its boundary data on the outflow set; because the ordinate set is
symmetric under v -> -v it reuses the same sweep geometry, and the discrete
adjoint is the exact transpose of the discrete forward operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit, prange

from .grid import GRAZE_TOL, Mesh, OrdinateSet, classify_boundary

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERS = 5000


class SolverError(RuntimeError):
    """Raised when a transport solve fails to converge and the caller opted in."""


@dataclass(frozen=True)
class ScatteringKernel:
    """Angular scattering kernel, isotropic or Henyey-Greenstein.

    The discrete kernel matrix is row-renormalized so that the discrete
    normalization sum_k w_k Theta(v_j, v_k) = 1 holds exactly; under the
    normalized angular measure the isotropic kernel is Theta == 1.
    """

    kind: str = "henyey-greenstein"  # or "isotropic"
    g: float = 0.0

    def __post_init__(self):
        if self.kind not in ("henyey-greenstein", "isotropic"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not -1.0 < self.g < 1.0:
            raise ValueError(f"anisotropy factor must be in (-1, 1), got {self.g}")

    def matrix(self, ords: OrdinateSet) -> np.ndarray:
        """Discrete kernel M[j, k] = Theta(v_j, v_k), row-normalized."""
        nk = ords.n_dirs
        if self.kind == "isotropic" or self.g == 0.0:
            return np.ones((nk, nk))
        cos = np.clip(ords.directions @ ords.directions.T, -1.0, 1.0)
        g = self.g
        theta = (1.0 - g * g) / (2.0 * np.pi * (1.0 + g * g - 2.0 * g * cos))
        rows = theta @ ords.weights
        return theta / rows[:, None]


@dataclass(frozen=True)
class TransportProblem:
    """One steady RTE instance.

    v.grad(u) + sigma_t u = sigma_s K_Theta(u) + sigma_iso K_I(u) + source,
    with inflow data on Gamma- (or, for ``adjoint=True``, advection -v.grad
    and data on Gamma+).  ``source`` is either a scalar field (isotropic) or
    an angular field; ``sigma_iso`` is the optional isotropic redistribution
    coefficient used by the conservative-medium reconstructions.
    """

    sigma_t: np.ndarray
    sigma_s: np.ndarray
    kernel: ScatteringKernel | None = None
    sigma_iso: np.ndarray | None = None
    source: np.ndarray | None = None
    inflow: np.ndarray | None = None
    adjoint: bool = False

    def validate(self) -> None:
        if np.any(self.sigma_s < -1e-14):
            raise ValueError("sigma_s must be nonnegative")
        if np.any(self.sigma_t - self.sigma_s < -1e-12):
            raise ValueError("sigma_t must dominate sigma_s cellwise")
        if np.any(self.sigma_s > 1e-14) and self.kernel is None:
            raise ValueError("scattering requires a kernel")


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool
    residual_history: tuple = field(default=(), repr=False)


class Discretization:
    """Mesh + ordinates bundle with precomputed sweep tables.

    Per ordinate the tables hold signed edge fluxes (v.n)|e| and a
    topological ordering of the cells along the upwind dependency graph.
    Construction is the only mutating phase; instances are then shared
    read-only by all solves.
    """

    def __init__(self, mesh: Mesh, ordinates: OrdinateSet):
        self.mesh = mesh
        self.ordinates = ordinates
        self.inflow_mask = classify_boundary(mesh, ordinates)
        fluxes = np.einsum("kd,ced->kce", ordinates.directions, mesh.edge_normals)
        fluxes *= mesh.edge_lengths[None, :, :]
        fluxes[np.abs(fluxes) <= GRAZE_TOL] = 0.0
        self.fluxes = np.ascontiguousarray(fluxes)
        self.sweep_orders = self._topological_orders()

    def _topological_orders(self) -> np.ndarray:
        mesh, nk = self.mesh, self.ordinates.n_dirs
        nc = mesh.n_cells
        orders = np.empty((nk, nc), dtype=np.int64)
        interior = mesh.neighbors >= 0
        for k in range(nk):
            flux = self.fluxes[k]
            dep = interior & (flux < 0.0)      # i depends on neighbors[i, e]
            down = interior & (flux > 0.0)     # neighbors[i, e] depends on i
            indeg = dep.sum(axis=1).astype(np.int64)
            queue = list(np.nonzero(indeg == 0)[0])
            pos = 0
            while queue:
                i = queue.pop()
                orders[k, pos] = i
                pos += 1
                for e in range(3):
                    if down[i, e]:
                        j = mesh.neighbors[i, e]
                        indeg[j] -= 1
                        if indeg[j] == 0:
                            queue.append(j)
            if pos != nc:
                raise RuntimeError(
                    f"upwind dependency graph has a cycle for ordinate {k}"
                )
        return orders


@njit(parallel=True, cache=True)
def _sweep(u, source, sigma_t, areas, fluxes, neighbors, b_index, orders, bc, geom_of):
    nc, nk = u.shape
    for k in prange(nk):
        g = geom_of[k]
        for pos in range(nc):
            i = orders[g, pos]
            num = areas[i] * source[i, k]
            den = areas[i] * sigma_t[i]
            for e in range(3):
                f = fluxes[g, i, e]
                if f > 0.0:
                    den += f
                elif f < 0.0:
                    n = neighbors[i, e]
                    if n >= 0:
                        num -= f * u[n, k]
                    else:
                        num -= f * bc[b_index[i, e], k]
            u[i, k] = num / den


def apply_K_I(u: np.ndarray, ords: OrdinateSet) -> np.ndarray:
    """Angular average sum_k w_k u[:, k] (normalized measure)."""
    if u.ndim != 2 or u.shape[1] != ords.n_dirs:
        raise ValueError(f"angular field shape {u.shape} does not match ordinates")
    return u @ ords.weights


def apply_K_Theta(u: np.ndarray, kernel: ScatteringKernel, ords: OrdinateSet) -> np.ndarray:
    """Scattering integral out[:, j] = sum_k w_k Theta(v_j, v_k) u[:, k]."""
    if u.ndim != 2 or u.shape[1] != ords.n_dirs:
        raise ValueError(f"angular field shape {u.shape} does not match ordinates")
    M = kernel.matrix(ords)
    return u @ (M * ords.weights[None, :]).T


def solve_rte(
    disc: Discretization,
    problem: TransportProblem,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> tuple[np.ndarray, SolveReport]:
    """Source iteration on the scattering fixed point.

    Returns the angular solution and a report; non-convergence is reported,
    not raised, so callers decide.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    problem.validate()
    mesh, ords = disc.mesh, disc.ordinates
    nc, nk = mesh.n_cells, ords.n_dirs

    q = np.zeros((nc, nk))
    if problem.source is not None:
        src = np.asarray(problem.source)
        if src.ndim == 1:
            q += src[:, None]
        else:
            if src.shape != (nc, nk):
                raise ValueError(f"source shape {src.shape} does not match grid")
            q += src

    bc = problem.inflow
    if bc is None:
        bc = np.zeros((max(mesh.n_boundary_edges, 1), nk))
    bc = np.ascontiguousarray(bc, dtype=np.float64)

    if problem.adjoint:
        geom_of = np.ascontiguousarray(ords.opposite.astype(np.int64))
    else:
        geom_of = np.arange(nk, dtype=np.int64)

    scattering = np.any(problem.sigma_s > 0.0) and problem.kernel is not None
    if scattering:
        Mw = (problem.kernel.matrix(ords) * ords.weights[None, :]).T
    iso = problem.sigma_iso is not None and np.any(problem.sigma_iso != 0.0)

    sigma_t = np.ascontiguousarray(problem.sigma_t, dtype=np.float64)
    u = np.zeros((nc, nk))
    history = []
    converged = False
    res = np.inf
    for it in range(1, max_iters + 1):
        s = q.copy()
        if scattering:
            s += problem.sigma_s[:, None] * (u @ Mw)
        if iso:
            s += (problem.sigma_iso * (u @ ords.weights))[:, None]
        u_new = np.empty_like(u)
        _sweep(
            u_new, s, sigma_t, mesh.cell_areas, disc.fluxes,
            mesh.neighbors, mesh.boundary_index, disc.sweep_orders, bc, geom_of,
        )
        res = float(np.max(np.abs(u_new - u)))
        history.append(res)
        u = u_new
        if res < tol:
            converged = True
            break
    report = SolveReport(
        iterations=len(history),
        final_residual=res,
        converged=converged,
        residual_history=tuple(history),
    )
    return u, report


def solve_adjoint_rte(
    disc: Discretization,
    problem: TransportProblem,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> tuple[np.ndarray, SolveReport]:
    """Adjoint solve: advection -v.grad with data prescribed on Gamma+."""
    return solve_rte(disc, replace(problem, adjoint=True), tol=tol, max_iters=max_iters)


def angular_inner(disc: Discretization, u: np.ndarray, w: np.ndarray) -> float:
    """Discrete L2(X) inner product (area- and weight-weighted)."""
    return float(np.sum(disc.mesh.cell_areas[:, None] * disc.ordinates.weights[None, :] * u * w))


def uniform_inflow(disc: Discretization, value: float = 1.0) -> np.ndarray:
    """Boundary source with a constant value on every inflow pair."""
    g = np.zeros_like(disc.inflow_mask, dtype=np.float64)
    g[disc.inflow_mask] = value
    return g


def side_inflow(disc: Discretization, side: str, value: float = 1.0) -> np.ndarray:
    """Unit inflow supported on one side of the square, pointing inward.

    ``side`` is one of 'left', 'right', 'bottom', 'top'.
    """
    mids = disc.mesh.boundary_midpoints
    sel = {
        "left": mids[:, 0] < -1.0 + 1e-12,
        "right": mids[:, 0] > 1.0 - 1e-12,
        "bottom": mids[:, 1] < -1.0 + 1e-12,
        "top": mids[:, 1] > 1.0 - 1e-12,
    }
    if side not in sel:
        raise ValueError(f"unknown side {side!r}")
    g = np.zeros_like(disc.inflow_mask, dtype=np.float64)
    g[sel[side][:, None] & disc.inflow_mask] = value
    return g
