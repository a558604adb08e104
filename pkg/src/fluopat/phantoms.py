"""Coefficient phantoms, the multiplicative noise model, and the error metric."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Mesh, l2_norm


@dataclass(frozen=True)
class NoiseSpec:
    """Multiplicative Gaussian noise: each datum times (1 + gamma/100 * N(0,1))."""

    gamma: float = 0.0  # noise level in percent
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")


@dataclass(frozen=True)
class Inclusion:
    """One piecewise-constant inclusion: a disk or an axis-aligned rectangle.

    ``size`` is the radius for a disk, or (half width, half height) for a
    rectangle.  Membership is decided at cell centroids.
    """

    shape: str           # 'disk' | 'rect'
    center: tuple[float, float]
    size: float | tuple[float, float]
    value: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        dx = points[:, 0] - self.center[0]
        dy = points[:, 1] - self.center[1]
        if self.shape == "disk":
            return dx * dx + dy * dy <= float(self.size) ** 2
        if self.shape == "rect":
            hw, hh = self.size
            return (np.abs(dx) <= hw) & (np.abs(dy) <= hh)
        raise ValueError(f"unknown inclusion shape {self.shape!r}")


@dataclass(frozen=True)
class PhantomSpec:
    """Background values plus inclusion lists for eta and sigma_a_xf."""

    eta_background: float = 0.5
    sigma_background: float = 0.1
    eta_inclusions: tuple[Inclusion, ...] = ()
    sigma_inclusions: tuple[Inclusion, ...] = ()


def default_phantom_spec() -> PhantomSpec:
    """Two-disk phantoms for each unknown, inside the admissible bounds."""
    return PhantomSpec(
        eta_background=0.5,
        sigma_background=0.1,
        eta_inclusions=(
            Inclusion("disk", (-0.45, -0.35), 0.3, 0.8),
            Inclusion("disk", (0.4, 0.45), 0.25, 0.8),
        ),
        sigma_inclusions=(
            Inclusion("disk", (-0.4, 0.4), 0.3, 0.3),
            Inclusion("disk", (0.45, -0.4), 0.25, 0.3),
        ),
    )


def checkerboard_absorption(mesh: Mesh, base: float) -> np.ndarray:
    """Absorption checkerboard base * (2 - (floor(2x) + floor(2y) mod 2))."""
    if base <= 0:
        raise ValueError("base absorption must be positive")
    c = mesh.cell_centroids
    parity = (np.floor(2 * c[:, 0]) + np.floor(2 * c[:, 1])).astype(np.int64) % 2
    return base * (2.0 - parity)


def checkerboard_scattering(mesh: Mesh, base: float) -> np.ndarray:
    """Scattering checkerboard base * (1 + (floor(2x) + floor(2y) mod 2))."""
    if base <= 0:
        raise ValueError("base scattering must be positive")
    c = mesh.cell_centroids
    parity = (np.floor(2 * c[:, 0]) + np.floor(2 * c[:, 1])).astype(np.int64) % 2
    return base * (1.0 + parity)


def build_phantom_fields(spec: PhantomSpec, mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-constant (eta, sigma_a_xf) phantom fields.

    Raises if the resulting fields violate the admissible bounds
    (0 < eta < 1, sigma_a_xf > 0).
    """
    pts = mesh.cell_centroids
    eta = np.full(mesh.n_cells, spec.eta_background)
    for inc in spec.eta_inclusions:
        eta[inc.contains(pts)] = inc.value
    sigma = np.full(mesh.n_cells, spec.sigma_background)
    for inc in spec.sigma_inclusions:
        sigma[inc.contains(pts)] = inc.value
    if np.any(eta <= 0.0) or np.any(eta >= 1.0):
        raise ValueError("phantom eta leaves the admissible range (0, 1)")
    if np.any(sigma <= 0.0):
        raise ValueError("phantom sigma_a_xf must be strictly positive")
    return eta, sigma


def add_noise(H: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Corrupt a datum with independent multiplicative Gaussian noise."""
    if spec.gamma == 0.0:
        return H.copy()
    rng = np.random.default_rng(spec.seed)
    return H * (1.0 + spec.gamma * 1e-2 * rng.standard_normal(H.shape))


def relative_l2_error(
    recon: np.ndarray,
    truth: np.ndarray,
    mesh: Mesh,
    mask: np.ndarray | None = None,
) -> float:
    """Relative L2(Omega) error in percent, area-weighted.

    ``mask`` selects the cells included in the metric (used to exclude
    flagged cells); default is all cells.
    """
    if mask is None:
        diff, ref = recon - truth, truth
        denom = l2_norm(mesh, ref)
        if denom == 0.0:
            raise ValueError("truth has zero norm")
        return 100.0 * l2_norm(mesh, diff) / denom
    areas = mesh.cell_areas[mask]
    denom = np.sqrt(np.sum(areas * truth[mask] ** 2))
    if denom == 0.0:
        raise ValueError("truth has zero norm on the unmasked cells")
    num = np.sqrt(np.sum(areas * (recon[mask] - truth[mask]) ** 2))
    return 100.0 * num / denom
