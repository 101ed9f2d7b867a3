"""Constrained space-time minimisation of the weighted functional.

The divergence-free, zero-mean, fixed-initial-node constraints are
eliminated by the choice of optimisation variables: in 2-d each interior
time node is parameterised by a scalar spectral stream potential scaled so
the map to velocity is an L2 isometry; in 3-d the variables are raw fields
passed through the Leray projector.  Either way the functional's exact
gradient pulls back through the parameterisation, so feasibility is exact
at every iterate and descent is monotone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import LineSearchFailure
from .functional import DiscreteFunctional, Trajectory, WideConfig
from .grid import (
    TorusGrid,
    VectorField,
    _nyquist_free_mask,
    fftn,
    gradient,
    ifftn,
    leray_project_raw,
    lp_norm,
)
from .laws import ConstitutiveLaw


@dataclass
class SolverConfig:
    method: str = "lbfgs"  # "lbfgs" | "gd"
    grad_tol: float = 1e-7
    max_iters: int = 2000
    memory: int = 20
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60
    seed: int = 0
    init: str = "constant"  # "constant" | "random"

    def __post_init__(self):
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.method not in ("lbfgs", "gd"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class ModeSolution:
    """Closed-form decaying solution of the per-mode second-order equation.

    In Stokes mode a single Fourier amplitude a(t) satisfies
    eta a'' - a' - nu |k|^2 a = 0 (after dividing the stationarity
    condition by the exponential weight); the decaying root is
    lambda_minus = (1 - sqrt(1 + 4 nu eta |k|^2)) / (2 eta).
    """

    k: tuple
    eta: float
    nu: float
    lambda_minus: float

    def amplitude(self, times: np.ndarray, a0: float = 1.0) -> np.ndarray:
        return a0 * np.exp(self.lambda_minus * np.asarray(times))


def stokes_mode_oracle(k, eta: float, nu: float) -> ModeSolution:
    k = tuple(np.atleast_1d(k).astype(int))
    ksq = float(sum(ki * ki for ki in k))
    if eta <= 0 or nu <= 0 or ksq == 0:
        raise ValueError("need eta > 0, nu > 0 and k != 0")
    lam = (1.0 - math.sqrt(1.0 + 4.0 * nu * eta * ksq)) / (2.0 * eta)
    return ModeSolution(k=k, eta=eta, nu=nu, lambda_minus=lam)


# ---------------------------------------------------------------------------
# dof maps


class StreamDofMap:
    """2-d: isometric scalar potential per interior node."""

    def __init__(self, grid: TorusGrid, m_nodes: int):
        self.grid = grid
        self.m_nodes = m_nodes  # number of free nodes (M)
        k = grid.k_deriv()
        ksq = np.sum(k * k, axis=0)
        mask = _nyquist_free_mask(grid.d, grid.n) & (ksq > 0)
        self.scale = np.where(mask, 1.0 / np.sqrt(np.where(ksq == 0, 1.0, ksq)), 0.0)
        self.kx, self.ky = k[0], k[1]
        self.n_dofs = m_nodes * grid.n**2

    def to_velocity(self, x: np.ndarray) -> np.ndarray:
        z = x.reshape((self.m_nodes,) + self.grid.shape)
        z_hat = np.fft.fftn(z, axes=(-2, -1))
        psi_hat = z_hat * self.scale
        ux = np.real(np.fft.ifftn(1j * self.ky * psi_hat, axes=(-2, -1)))
        uy = np.real(np.fft.ifftn(-1j * self.kx * psi_hat, axes=(-2, -1)))
        return np.stack([ux, uy], axis=1)  # (M, d, n, n)

    def gradient_to_x(self, grad_u: np.ndarray) -> np.ndarray:
        # adjoint of psi -> (d_y psi, -d_x psi) is g -> d_x g_y - d_y g_x
        g_hat = np.fft.fftn(grad_u, axes=(-2, -1))
        curl = 1j * self.kx * g_hat[:, 1] - 1j * self.ky * g_hat[:, 0]
        return np.real(np.fft.ifftn(curl * self.scale, axes=(-2, -1))).ravel()

    def from_velocity(self, fields: np.ndarray) -> np.ndarray:
        u_hat = np.fft.fftn(fields, axes=(-2, -1))
        omega = 1j * self.kx * u_hat[:, 1] - 1j * self.ky * u_hat[:, 0]
        z_hat = omega * self.scale
        return np.real(np.fft.ifftn(z_hat, axes=(-2, -1))).ravel()


class ProjectedDofMap:
    """3-d (or generic): raw fields with the Leray projector applied."""

    def __init__(self, grid: TorusGrid, m_nodes: int):
        self.grid = grid
        self.m_nodes = m_nodes
        self.n_dofs = m_nodes * grid.d * grid.n**grid.d

    def to_velocity(self, x: np.ndarray) -> np.ndarray:
        u = x.reshape((self.m_nodes, self.grid.d) + self.grid.shape)
        return np.swapaxes(leray_project_raw(self.grid, np.swapaxes(u, 0, 1)), 0, 1)

    def gradient_to_x(self, grad_u: np.ndarray) -> np.ndarray:
        return np.swapaxes(
            leray_project_raw(self.grid, np.swapaxes(grad_u, 0, 1)), 0, 1
        ).ravel()

    def from_velocity(self, fields: np.ndarray) -> np.ndarray:
        return self.to_velocity(fields.ravel()).ravel()


def make_dof_map(grid: TorusGrid, m_nodes: int):
    return StreamDofMap(grid, m_nodes) if grid.d == 2 else ProjectedDofMap(grid, m_nodes)


# ---------------------------------------------------------------------------
# minimisation


@dataclass
class MinimizeResult:
    trajectory: Trajectory
    value: float
    value_constant: float
    grad_norm: float
    iterations: int
    converged: bool
    flag: str = "converged"
    history: list = field(default_factory=list)

    @property
    def eta_times_value(self) -> float:
        """Recorded constant in the value <= C / eta bound."""
        return self.trajectory.config.eta * self.value


def minimize(
    config: WideConfig,
    solver: SolverConfig,
    u0: VectorField,
    law: ConstitutiveLaw,
) -> MinimizeResult:
    """Minimise the discrete functional from the constant-extension guess."""
    grid = u0.grid
    times = config.times()
    m = len(times) - 1
    func = DiscreteFunctional(grid, times, config, law)
    dof = make_dof_map(grid, m)

    u0_vals = u0.values

    def assemble(x):
        fields = np.empty((m + 1, grid.d) + grid.shape)
        fields[0] = u0_vals
        fields[1:] = dof.to_velocity(x)
        return fields

    def f_and_g(x):
        fields = assemble(x)
        val, grad = func.value_and_gradient(fields)
        return val, dof.gradient_to_x(grad[1:])

    vol = grid.cell_volume

    def gnorm(gx):
        return math.sqrt(float(np.dot(gx, gx)) / vol)

    x = dof.from_velocity(np.broadcast_to(u0_vals, (m, grid.d) + grid.shape).copy())
    if solver.init == "random":
        rng = np.random.default_rng(solver.seed)
        x = x + 0.01 * rng.standard_normal(x.shape)

    value_constant = func.value(Trajectory.constant(u0, config).fields)

    val, gx = f_and_g(x)
    history = [val]
    if np.max(np.abs(u0_vals)) == 0.0 and gnorm(gx) <= solver.grad_tol:
        traj = Trajectory(grid, times, assemble(x), config)
        return MinimizeResult(traj, val, value_constant, gnorm(gx), 0, True, history=history)

    mem_s, mem_y = [], []
    flag = "max_iters"
    converged = False
    iterations = 0
    g_prev = None
    x_prev = None
    for it in range(1, solver.max_iters + 1):
        iterations = it
        gn = gnorm(gx)
        if gn <= solver.grad_tol:
            converged, flag = True, "converged"
            iterations = it - 1
            break
        # direction
        if solver.method == "lbfgs" and mem_s:
            q = gx.copy()
            alphas = []
            for s, y, rho in reversed(mem_s):
                a = rho * np.dot(s, q)
                alphas.append(a)
                q -= a * y
            s, y, rho = mem_s[-1]
            q *= np.dot(s, y) / np.dot(y, y)
            for (s, y, rho), a in zip(mem_s, reversed(alphas)):
                q += (a - rho * np.dot(y, q)) * s
            direction = -q
            if np.dot(direction, gx) >= 0.0:
                direction = -gx
        else:
            direction = -gx
        slope = float(np.dot(direction, gx))
        step = 1.0 if (solver.method == "lbfgs" and mem_s) else 1.0 / max(gn * math.sqrt(vol), 1.0)
        accepted = False
        for _ in range(solver.max_backtracks):
            x_new = x + step * direction
            val_new, gx_new = f_and_g(x_new)
            if val_new <= val + solver.armijo_c1 * step * slope:
                accepted = True
                break
            step *= solver.backtrack
        if not accepted:
            if gn > 1e3 * solver.grad_tol:
                raise LineSearchFailure(f"no descent step at gradient norm {gn:.3e}")
            flag, converged = "line_search_stalled", False
            break
        if solver.method == "lbfgs":
            s_vec = x_new - x
            y_vec = gx_new - gx
            sy = float(np.dot(s_vec, y_vec))
            if sy > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
                mem_s.append((s_vec, y_vec, 1.0 / sy))
                if len(mem_s) > solver.memory:
                    mem_s.pop(0)
        x, val, gx = x_new, val_new, gx_new
        history.append(val)

    traj = Trajectory(grid, times, assemble(x), config)
    traj.validate()
    return MinimizeResult(
        traj, val, value_constant, gnorm(gx), iterations, converged, flag, history
    )


# ---------------------------------------------------------------------------
# eta sweep


@dataclass
class SweepRow:
    eta: float
    value: float
    value_constant: float
    grad_norm: float
    converged: bool
    distance_to_reference: float
    min_residual_inequality: float
    final_residual_equality: float
    max_abs_residual_equality: float
    weighted_dissipation: float
    error: Optional[str] = None


@dataclass
class SweepReport:
    rows: list
    slope_log_value_vs_log_inv_eta: float

    def to_csv(self) -> str:
        cols = [
            "eta", "I_value", "I_constant", "grad_norm", "converged",
            "dist_ref", "r_ineq_min", "r_eq_final", "r_eq_max_abs",
            "weighted_dissipation", "error",
        ]
        lines = [",".join(cols)]
        for r in self.rows:
            vals = [
                f"{r.eta:.17g}", f"{r.value:.17g}", f"{r.value_constant:.17g}",
                f"{r.grad_norm:.17g}", str(int(r.converged)),
                f"{r.distance_to_reference:.17g}", f"{r.min_residual_inequality:.17g}",
                f"{r.final_residual_equality:.17g}", f"{r.max_abs_residual_equality:.17g}",
                f"{r.weighted_dissipation:.17g}", r.error or "",
            ]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {
            "etas": [r.eta for r in self.rows],
            "values": [r.value for r in self.rows],
            "slope_log_value_vs_log_inv_eta": self.slope_log_value_vs_log_inv_eta,
            "distances": [r.distance_to_reference for r in self.rows],
            "equality_residuals": [r.final_residual_equality for r in self.rows],
        }


def trajectory_distance(a: Trajectory, b: Trajectory, p: float, t_end: Optional[float] = None) -> float:
    """L_p-in-time W^{1,p}-in-space distance over the common window."""
    t_common = min(a.times[-1], b.times[-1], t_end if t_end is not None else np.inf)
    n_nodes = max(len(a.times), len(b.times))
    times = np.linspace(0.0, t_common, n_nodes)
    ra, rb = a.resample(times), b.resample(times)
    diff = ra.fields - rb.fields
    grid = a.grid
    norms = np.empty(len(times))
    g = gradient(grid, np.swapaxes(diff, 0, 1))
    for j in range(len(times)):
        norms[j] = lp_norm(diff[j], p, grid) ** p + lp_norm(g[:, :, j], p, grid) ** p
    return float(np.trapz(norms, times) ** (1.0 / p))


def eta_sweep(
    etas,
    u0: VectorField,
    law: ConstitutiveLaw,
    reference: Optional[Trajectory],
    solver: Optional[SolverConfig] = None,
    t_study: Optional[float] = None,
    **config_kwargs,
) -> SweepReport:
    """Minimise at each eta (strictly decreasing) and report convergence
    diagnostics against a reference trajectory."""
    etas = list(etas)
    if any(b >= a for a, b in zip(etas, etas[1:])):
        raise ValueError("etas must be strictly decreasing")
    solver = solver or SolverConfig()
    from .functional import energy_report

    rows = []
    for eta in etas:
        t_max = max(10.0 * eta, t_study or 0.0)
        cfg = WideConfig(eta=eta, t_max=t_max, **config_kwargs)
        try:
            res = minimize(cfg, solver, u0, law)
            rep = energy_report(res.trajectory, law)
            dist = (
                trajectory_distance(res.trajectory, reference, law.p, t_end=t_study)
                if reference is not None
                else float("nan")
            )
            rows.append(
                SweepRow(
                    eta=eta,
                    value=res.value,
                    value_constant=res.value_constant,
                    grad_norm=res.grad_norm,
                    converged=res.converged,
                    distance_to_reference=dist,
                    min_residual_inequality=float(np.min(rep.residual_inequality)),
                    final_residual_equality=_residual_at(rep, t_study),
                    max_abs_residual_equality=float(np.max(np.abs(rep.residual_equality))),
                    weighted_dissipation=float(rep.weighted_dissipation[-1]),
                )
            )
        except Exception as exc:  # keep sweeping, record the failure
            rows.append(
                SweepRow(
                    eta=eta, value=float("nan"), value_constant=float("nan"),
                    grad_norm=float("nan"), converged=False,
                    distance_to_reference=float("nan"),
                    min_residual_inequality=float("nan"),
                    final_residual_equality=float("nan"),
                    max_abs_residual_equality=float("nan"),
                    weighted_dissipation=float("nan"),
                    error=f"{type(exc).__name__}: {exc}",
                )
            )
    good = [(r.eta, r.value) for r in rows if np.isfinite(r.value) and r.value > 0]
    slope = float("nan")
    if len(good) >= 2:
        x = np.log(1.0 / np.array([g[0] for g in good]))
        y = np.log(np.array([g[1] for g in good]))
        slope = float(np.polyfit(x, y, 1)[0])
    return SweepReport(rows=rows, slope_log_value_vs_log_inv_eta=slope)


def _residual_at(rep, t_study):
    if t_study is None:
        return float(rep.residual_equality[-1])
    j = int(np.searchsorted(rep.times, min(t_study, rep.times[-1])))
    j = min(j, len(rep.times) - 1)
    return float(rep.residual_equality[j])
