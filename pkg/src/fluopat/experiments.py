"""Config-driven experiment drivers.

Reproduces the four study layouts on the checkerboard background media:

1. direct efficiency recovery over a noise ladder at two scattering strengths;
2. nonlinear recovery of the fluorophore absorption only (efficiency known);
3. Landweber recovery of the coefficient pair from multi-source linearized data;
4. nonlinear simultaneous recovery of the pair at low noise.

All outputs are plain files: CSV for fields/histories, JSON for metrics,
``meta.json`` for provenance (config hash, solver reports, wall time).
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import direct, landweber, varrecon
from .forward import OpticalMedium, compute_datum, linearized_datum, solve_forward
from .grid import build_mesh, build_ordinates, save_fields_csv
from .phantoms import (
    NoiseSpec,
    add_noise,
    build_phantom_fields,
    checkerboard_absorption,
    checkerboard_scattering,
    default_phantom_spec,
    relative_l2_error,
)
from .rte import (
    Discretization,
    ScatteringKernel,
    SolverError,
    side_inflow,
    uniform_inflow,
)


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    mesh: int = 32
    ordinates: int = 64
    anisotropy: float = 0.0
    sigma_a_base: float = 0.1
    sigma_s_base: float = 1.0
    grueneisen: float = 1.0
    gammas: list[float] = field(default_factory=lambda: [0.0, 2.0, 5.0, 10.0])
    seed: int = 0
    solver_tol: float = 1e-10
    solver_max_iters: int = 20000
    # algorithm parameters
    beta: float | None = None
    tau: float | None = None
    alpha: float = 0.0
    recon_max_iters: int = 500
    landweber_max_iters: int = 300000
    recon_tol: float = 1e-8
    out: str = "out"

    _FLOATS = (
        "anisotropy", "sigma_a_base", "sigma_s_base", "grueneisen",
        "solver_tol", "alpha", "recon_tol",
    )
    _INTS = (
        "mesh", "ordinates", "seed", "solver_max_iters",
        "recon_max_iters", "landweber_max_iters",
    )

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def validate(self) -> None:
        for name in self._INTS:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"{name} must be an integer, got {v!r}")
        for name in self._FLOATS:
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"{name} must be a number, got {v!r}")
        if self.mesh < 2:
            raise ConfigError("mesh must be >= 2 cells per side")
        if self.ordinates < 4 or self.ordinates % 2:
            raise ConfigError("ordinates must be even and >= 4")
        if not -1.0 < self.anisotropy < 1.0:
            raise ConfigError("anisotropy must lie in (-1, 1)")
        for name in ("sigma_a_base", "sigma_s_base", "grueneisen"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.solver_tol <= 0 or self.recon_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if not isinstance(self.gammas, list) or not all(
            isinstance(g, (int, float)) and not isinstance(g, bool) and g >= 0
            for g in self.gammas
        ):
            raise ConfigError("gammas must be a list of nonnegative numbers")
        if self.beta is not None and self.beta < 0:
            raise ConfigError("beta must be nonnegative")
        if self.tau is not None and self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative")

    def config_hash(self) -> str:
        canon = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class Setup:
    config: RunConfig
    disc: Discretization
    medium: OpticalMedium       # includes the truth (eta, sigma_a_xf)
    eta_true: np.ndarray
    sigma_true: np.ndarray


def build_setup(config: RunConfig, sigma_s_base: float | None = None) -> Setup:
    mesh = build_mesh(config.mesh)
    ords = build_ordinates(config.ordinates)
    disc = Discretization(mesh, ords)
    sa = checkerboard_absorption(mesh, config.sigma_a_base)
    ss = checkerboard_scattering(
        mesh, config.sigma_s_base if sigma_s_base is None else sigma_s_base
    )
    eta_true, sigma_true = build_phantom_fields(default_phantom_spec(), mesh)
    medium = OpticalMedium(
        sigma_a_xi=sa,
        sigma_a_m=sa.copy(),
        sigma_s_x=ss,
        sigma_s_m=ss.copy(),
        grueneisen=np.full(mesh.n_cells, config.grueneisen),
        kernel=ScatteringKernel("henyey-greenstein", config.anisotropy),
        eta=eta_true,
        sigma_a_xf=sigma_true,
    )
    medium.validate()
    return Setup(config, disc, medium, eta_true, sigma_true)


def _area_average(mesh, f: np.ndarray) -> float:
    return float(np.sum(mesh.cell_areas * f) / np.sum(mesh.cell_areas))


def _write_meta(out: Path, config: RunConfig, t0: float, extra: dict | None = None) -> None:
    meta = {
        "config": asdict(config),
        "config_hash": config.config_hash(),
        "wall_time_seconds": time.time() - t0,
    }
    if extra:
        meta.update(extra)
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)


def _write_metrics(out: Path, metrics: dict) -> None:
    with open(out / "metrics.json", "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)


def run_forward(config: RunConfig, out_dir) -> dict:
    """Forward solve on the truth phantom; writes u_x, K_I(u_m), and H."""
    t0 = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    setup = build_setup(config)
    g_x = uniform_inflow(setup.disc)
    fs = solve_forward(
        setup.disc, setup.medium, g_x,
        tol=config.solver_tol, max_iters=config.solver_max_iters,
    )
    H = compute_datum(setup.medium, fs)
    gamma = config.gammas[0] if config.gammas else 0.0
    H_noisy = add_noise(H, NoiseSpec(gamma=gamma, seed=config.seed))
    save_fields_csv(out / "u_x.csv", setup.disc.mesh, {"KI_ux": fs.ki_ux})
    save_fields_csv(out / "u_m_KI.csv", setup.disc.mesh, {"KI_um": fs.ki_um})
    save_fields_csv(out / "H.csv", setup.disc.mesh, {"H": H_noisy})
    reports = {
        k: {"iterations": r.iterations, "converged": r.converged,
            "final_residual": r.final_residual}
        for k, r in fs.reports.items()
    }
    _write_meta(out, config, t0, {"solver_reports": reports})
    if not all(r.converged for r in fs.reports.values()):
        raise SolverError("forward transport solve did not converge")
    return {"out": str(out)}


def run_experiment_1(config: RunConfig, out_dir) -> dict:
    """Direct efficiency recovery over the noise ladder at two scattering bases."""
    t0 = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics: dict = {}
    for ss_base in (config.sigma_s_base, 9.0 * config.sigma_s_base):
        setup = build_setup(config, sigma_s_base=ss_base)
        g_x = uniform_inflow(setup.disc)
        fs = solve_forward(
            setup.disc, setup.medium, g_x,
            tol=config.solver_tol, max_iters=config.solver_max_iters,
        )
        H = compute_datum(setup.medium, fs)
        key = f"sigma_s_base_{ss_base:g}"
        metrics[key] = {}
        for i, gamma in enumerate(config.gammas):
            H_noisy = add_noise(H, NoiseSpec(gamma=gamma, seed=config.seed + i))
            res = direct.reconstruct_eta_direct(
                setup.disc, setup.medium, g_x, H_noisy, truth=setup.eta_true,
                tol=config.solver_tol, max_iters=config.solver_max_iters,
            )
            metrics[key][f"gamma_{gamma:g}"] = res.error_percent["eta"]
            save_fields_csv(
                out / f"eta_{key}_gamma_{gamma:g}.csv",
                setup.disc.mesh,
                {"eta": res.fields["eta"], "eta_true": setup.eta_true},
            )
    _write_metrics(out, metrics)
    _write_meta(out, config, t0)
    return metrics


def run_experiment_2(config: RunConfig, out_dir) -> dict:
    """Nonlinear recovery of the fluorophore absorption, efficiency known."""
    t0 = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    setup = build_setup(config)
    g_x = uniform_inflow(setup.disc)
    fs = solve_forward(
        setup.disc, setup.medium, g_x,
        tol=config.solver_tol, max_iters=config.solver_max_iters,
    )
    H = compute_datum(setup.medium, fs)
    mesh = setup.disc.mesh
    sigma0 = np.full(mesh.n_cells, _area_average(mesh, setup.sigma_true))
    metrics: dict = {}
    for i, gamma in enumerate(config.gammas):
        H_noisy = add_noise(H, NoiseSpec(gamma=gamma, seed=config.seed + i))
        spec = varrecon.ObjectiveSpec(
            disc=setup.disc,
            medium=setup.medium,
            sources=[g_x],
            data=[H_noisy],
            variables="sigma",
            fixed_eta=setup.eta_true,
            solver_tol=config.solver_tol,
            solver_max_iters=config.solver_max_iters,
        )
        beta = config.beta
        if beta is None:
            beta = varrecon.default_beta(spec, setup.eta_true, sigma0) * min(1.0, gamma)
        spec.beta = beta
        if beta > 0 and spec.penalty is None:
            spec.penalty = varrecon.gradient_penalty_matrix(mesh)
        result = varrecon.minimize(
            spec, setup.eta_true, sigma0, max_iters=config.recon_max_iters,
            tol_g=config.recon_tol,
        )
        err = relative_l2_error(result.sigma, setup.sigma_true, mesh)
        metrics[f"gamma_{gamma:g}"] = err
        save_fields_csv(
            out / f"sigma_gamma_{gamma:g}.csv", mesh,
            {"sigma_a_xf": result.sigma, "sigma_true": setup.sigma_true},
        )
        varrecon.save_history_csv(out / f"history_gamma_{gamma:g}.csv", result.history)
    _write_metrics(out, metrics)
    _write_meta(out, config, t0)
    return metrics


def _four_side_sources(disc: Discretization) -> list[np.ndarray]:
    return [side_inflow(disc, s) for s in ("left", "right", "bottom", "top")]


def run_experiment_3(config: RunConfig, out_dir) -> dict:
    """Landweber recovery of the pair from multi-source linearized data.

    Backgrounds are the area averages of the true coefficients; data are
    generated with the linearized model so linearization error is excluded.
    """
    t0 = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = config
    if cfg.anisotropy == 0.0:
        cfg = replace(cfg, anisotropy=0.5)
    setup = build_setup(cfg)
    mesh = setup.disc.mesh
    eta0 = np.full(mesh.n_cells, _area_average(mesh, setup.eta_true))
    sigma0 = np.full(mesh.n_cells, _area_average(mesh, setup.sigma_true))
    d_eta = setup.eta_true - eta0
    d_sigma = setup.sigma_true - sigma0
    background = replace(setup.medium, eta=eta0, sigma_a_xf=sigma0)
    sources = _four_side_sources(setup.disc)
    spec = landweber.build_spec(
        setup.disc, background, sources, model="general",
        alpha=cfg.alpha, tau=cfg.tau,
        max_iters=cfg.landweber_max_iters, tol=cfg.recon_tol,
        solver_tol=cfg.solver_tol, solver_max_iters=cfg.solver_max_iters,
    )
    # clean rescaled data rows, one per source
    rows_clean = []
    for bg, g in zip(spec.backgrounds, sources):
        fs_bg = solve_forward(
            setup.disc, background, g, tol=cfg.solver_tol,
            max_iters=cfg.solver_max_iters,
        )
        Hp = linearized_datum(
            setup.disc, background, g, d_eta, d_sigma, fs=fs_bg,
            tol=cfg.solver_tol, max_iters=cfg.solver_max_iters,
        )
        rows_clean.append((Hp, bg.ki_ux))
    # on small meshes, assembling the dense operator once makes the many
    # Landweber iterations two matrix-vector products each
    matrix = None
    if 2 * mesh.n_cells <= 1024:
        matrix = landweber.assemble_operator(spec)
        if cfg.tau is None:
            spec.tau = 1.9 * landweber.estimate_step_size(spec, matrix=matrix)
    else:
        # matrix-free iterations are ~100x costlier; cap the count
        spec.max_iters = min(spec.max_iters, cfg.recon_max_iters)
    metrics: dict = {}
    for i, gamma in enumerate(cfg.gammas):
        z = []
        noise_floor_sq = 0.0
        for j, (Hp, ki) in enumerate(rows_clean):
            Hp_noisy = add_noise(
                Hp, NoiseSpec(gamma=gamma, seed=cfg.seed + 101 * i + j)
            )
            zj = Hp_noisy / (background.grueneisen * ki)
            zj_clean = Hp / (background.grueneisen * ki)
            noise_floor_sq += landweber.l2_norm(mesh, zj - zj_clean) ** 2
            z.append(zj)
        noise_floor = float(np.sqrt(noise_floor_sq)) if gamma > 0 else None
        (zeta, xi), history = landweber.landweber_solve(
            spec, z, noise_floor=noise_floor, matrix=matrix,
            history_every=max(1, spec.max_iters // 1000),
        )
        deta, dsigma, flagged = landweber.back_substitute(spec, zeta, xi)
        eta_rec = eta0 + deta
        sigma_rec = sigma0 + dsigma
        mask = ~flagged
        e_eta = relative_l2_error(eta_rec, setup.eta_true, mesh, mask=mask)
        e_sigma = relative_l2_error(sigma_rec, setup.sigma_true, mesh, mask=mask)
        metrics[f"gamma_{gamma:g}"] = {"eta": e_eta, "sigma": e_sigma}
        save_fields_csv(
            out / f"pair_gamma_{gamma:g}.csv", mesh,
            {"eta": eta_rec, "sigma_a_xf": sigma_rec,
             "eta_true": setup.eta_true, "sigma_true": setup.sigma_true},
        )
        landweber.save_history_csv(out / f"history_gamma_{gamma:g}.csv", history)
    _write_metrics(out, metrics)
    _write_meta(out, cfg, t0)
    return metrics


def run_experiment_4(config: RunConfig, out_dir) -> dict:
    """Nonlinear simultaneous recovery of the pair at low noise."""
    t0 = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = config
    if cfg.anisotropy == 0.0:
        cfg = replace(cfg, anisotropy=0.5)
    if cfg.gammas == [0.0, 2.0, 5.0, 10.0]:
        cfg = replace(cfg, gammas=[0.0, 1.0, 2.0])
    setup = build_setup(cfg)
    mesh = setup.disc.mesh
    sources = _four_side_sources(setup.disc)
    data_clean = []
    for g in sources:
        fs = solve_forward(
            setup.disc, setup.medium, g,
            tol=cfg.solver_tol, max_iters=cfg.solver_max_iters,
        )
        data_clean.append(compute_datum(setup.medium, fs))
    eta0 = np.full(mesh.n_cells, _area_average(mesh, setup.eta_true))
    sigma0 = np.full(mesh.n_cells, _area_average(mesh, setup.sigma_true))
    metrics: dict = {}
    for i, gamma in enumerate(cfg.gammas):
        data = [
            add_noise(H, NoiseSpec(gamma=gamma, seed=cfg.seed + 101 * i + j))
            for j, H in enumerate(data_clean)
        ]
        spec = varrecon.ObjectiveSpec(
            disc=setup.disc,
            medium=setup.medium,
            sources=sources,
            data=data,
            variables="both",
            solver_tol=cfg.solver_tol,
            solver_max_iters=cfg.solver_max_iters,
        )
        beta = cfg.beta
        if beta is None:
            beta = varrecon.default_beta(spec, eta0, sigma0) * min(1.0, gamma)
        spec.beta = beta
        if beta > 0 and spec.penalty is None:
            spec.penalty = varrecon.gradient_penalty_matrix(mesh)
        result = varrecon.minimize(
            spec, eta0, sigma0, max_iters=cfg.recon_max_iters, tol_g=cfg.recon_tol
        )
        e_eta = relative_l2_error(result.eta, setup.eta_true, mesh)
        e_sigma = relative_l2_error(result.sigma, setup.sigma_true, mesh)
        metrics[f"gamma_{gamma:g}"] = {"eta": e_eta, "sigma": e_sigma}
        save_fields_csv(
            out / f"pair_gamma_{gamma:g}.csv", mesh,
            {"eta": result.eta, "sigma_a_xf": result.sigma,
             "eta_true": setup.eta_true, "sigma_true": setup.sigma_true},
        )
        varrecon.save_history_csv(out / f"history_gamma_{gamma:g}.csv", result.history)
    _write_metrics(out, metrics)
    _write_meta(out, cfg, t0)
    return metrics


EXPERIMENTS = {
    1: run_experiment_1,
    2: run_experiment_2,
    3: run_experiment_3,
    4: run_experiment_4,
}


def run_experiment(config: RunConfig, which: int, out_dir) -> dict:
    if which not in EXPERIMENTS:
        raise ConfigError(f"experiment must be 1..4, got {which}")
    return EXPERIMENTS[which](config, out_dir)
