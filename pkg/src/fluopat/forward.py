"""Coupled excitation/emission forward model and its linearization.

The excitation density u_x solves a transport equation driven by boundary
illumination; the emission density u_m solves a second transport equation
whose isotropic volume source is the fluorescence eta * sigma_a_xf * K_I(u_x).
The coupling is one-directional, so the system is solved sequentially.
The photoacoustic datum is

    H = Xi * (sigma_a_x_eta * K_I(u_x) + sigma_a_m * K_I(u_m)),

with sigma_a_x_eta = sigma_a_xi + (1 - eta) * sigma_a_xf: the fraction of
absorbed excitation energy converted to fluorescence does not heat the medium.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rte import (
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    Discretization,
    ScatteringKernel,
    TransportProblem,
    apply_K_I,
    solve_rte,
)


@dataclass
class OpticalMedium:
    """Coefficient bundle at both wavelengths plus the scattering kernel.

    ``eta`` and ``sigma_a_xf`` are the unknowns of the inverse problems;
    they may be None in contexts where only the known background is needed.
    """

    sigma_a_xi: np.ndarray   # intrinsic absorption, excitation wavelength
    sigma_a_m: np.ndarray    # absorption, emission wavelength
    sigma_s_x: np.ndarray    # scattering, excitation wavelength
    sigma_s_m: np.ndarray    # scattering, emission wavelength
    grueneisen: np.ndarray   # photoacoustic efficiency Xi
    kernel: ScatteringKernel
    eta: np.ndarray | None = None         # quantum efficiency
    sigma_a_xf: np.ndarray | None = None  # fluorophore absorption

    @property
    def sigma_a_x(self) -> np.ndarray:
        return self.sigma_a_xi + self.sigma_a_xf

    @property
    def sigma_a_x_eta(self) -> np.ndarray:
        return self.sigma_a_xi + (1.0 - self.eta) * self.sigma_a_xf

    @property
    def sigma_t_x(self) -> np.ndarray:
        return self.sigma_a_x + self.sigma_s_x

    @property
    def sigma_t_m(self) -> np.ndarray:
        return self.sigma_a_m + self.sigma_s_m

    def validate(self) -> None:
        """Check the admissible-class bounds: positive knowns, 0 < eta < 1."""
        for name in ("sigma_a_xi", "sigma_a_m", "sigma_s_x", "sigma_s_m", "grueneisen"):
            v = getattr(self, name)
            if np.any(v <= 0.0) and name != "sigma_s_x":
                raise ValueError(f"{name} must be strictly positive cellwise")
            if name == "sigma_s_x" and np.any(v < 0.0):
                raise ValueError("sigma_s_x must be nonnegative cellwise")
        if self.eta is not None and (np.any(self.eta <= 0.0) or np.any(self.eta >= 1.0)):
            raise ValueError("eta must satisfy 0 < eta < 1 cellwise")
        if self.sigma_a_xf is not None and np.any(self.sigma_a_xf <= 0.0):
            raise ValueError("sigma_a_xf must be strictly positive cellwise")


@dataclass(frozen=True)
class ForwardSolution:
    u_x: np.ndarray
    u_m: np.ndarray
    ki_ux: np.ndarray  # cached K_I(u_x)
    ki_um: np.ndarray  # cached K_I(u_m)
    reports: dict = field(default_factory=dict, repr=False)


def solve_forward(
    disc: Discretization,
    medium: OpticalMedium,
    g_x: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> ForwardSolution:
    """Solve the coupled system: excitation first, then emission."""
    u_x, rep_x = solve_rte(
        disc,
        TransportProblem(
            sigma_t=medium.sigma_t_x,
            sigma_s=medium.sigma_s_x,
            kernel=medium.kernel,
            inflow=g_x,
        ),
        tol=tol,
        max_iters=max_iters,
    )
    ki_ux = apply_K_I(u_x, disc.ordinates)
    u_m, rep_m = solve_rte(
        disc,
        TransportProblem(
            sigma_t=medium.sigma_t_m,
            sigma_s=medium.sigma_s_m,
            kernel=medium.kernel,
            source=medium.eta * medium.sigma_a_xf * ki_ux,
        ),
        tol=tol,
        max_iters=max_iters,
    )
    ki_um = apply_K_I(u_m, disc.ordinates)
    return ForwardSolution(
        u_x=u_x, u_m=u_m, ki_ux=ki_ux, ki_um=ki_um,
        reports={"excitation": rep_x, "emission": rep_m},
    )


def compute_datum(medium: OpticalMedium, fs: ForwardSolution) -> np.ndarray:
    """Internal photoacoustic datum H from a forward solution."""
    return medium.grueneisen * (
        medium.sigma_a_x_eta * fs.ki_ux + medium.sigma_a_m * fs.ki_um
    )


def solve_linearized(
    disc: Discretization,
    medium: OpticalMedium,
    g_x: np.ndarray,
    d_eta: np.ndarray,
    d_sigma: np.ndarray,
    fs: ForwardSolution | None = None,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve the linearized coupled system for perturbations (d_eta, d_sigma).

    v_x carries the angular source -d_sigma * u_x (it inherits the
    anisotropy of the background excitation field); v_m is driven by
    eta*sigma_a_xf*K_I(v_x) + (eta*d_sigma + d_eta*sigma_a_xf)*K_I(u_x).
    """
    if fs is None:
        fs = solve_forward(disc, medium, g_x, tol=tol, max_iters=max_iters)
    v_x, _ = solve_rte(
        disc,
        TransportProblem(
            sigma_t=medium.sigma_t_x,
            sigma_s=medium.sigma_s_x,
            kernel=medium.kernel,
            source=-d_sigma[:, None] * fs.u_x,
        ),
        tol=tol,
        max_iters=max_iters,
    )
    ki_vx = apply_K_I(v_x, disc.ordinates)
    v_m, _ = solve_rte(
        disc,
        TransportProblem(
            sigma_t=medium.sigma_t_m,
            sigma_s=medium.sigma_s_m,
            kernel=medium.kernel,
            source=medium.eta * medium.sigma_a_xf * ki_vx
            + (medium.eta * d_sigma + d_eta * medium.sigma_a_xf) * fs.ki_ux,
        ),
        tol=tol,
        max_iters=max_iters,
    )
    return v_x, v_m


def compute_linearized_datum(
    disc: Discretization,
    medium: OpticalMedium,
    fs: ForwardSolution,
    d_eta: np.ndarray,
    d_sigma: np.ndarray,
    v_x: np.ndarray,
    v_m: np.ndarray,
) -> np.ndarray:
    """Frechet derivative of the datum in the direction (d_eta, d_sigma)."""
    ords = disc.ordinates
    return medium.grueneisen * (
        (-d_eta * medium.sigma_a_xf + (1.0 - medium.eta) * d_sigma) * fs.ki_ux
        + medium.sigma_a_x_eta * apply_K_I(v_x, ords)
        + medium.sigma_a_m * apply_K_I(v_m, ords)
    )


def linearized_datum(
    disc: Discretization,
    medium: OpticalMedium,
    g_x: np.ndarray,
    d_eta: np.ndarray,
    d_sigma: np.ndarray,
    fs: ForwardSolution | None = None,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> np.ndarray:
    """Convenience wrapper: solve the linearized system and form H'."""
    if fs is None:
        fs = solve_forward(disc, medium, g_x, tol=tol, max_iters=max_iters)
    v_x, v_m = solve_linearized(
        disc, medium, g_x, d_eta, d_sigma, fs=fs, tol=tol, max_iters=max_iters
    )
    return compute_linearized_datum(disc, medium, fs, d_eta, d_sigma, v_x, v_m)
