"""The weighted inertia-dissipation-energy functional on discrete trajectories.

A trajectory is a time-indexed family of solenoidal zero-mean velocity
fields u(t_m).  The functional integrates

    e^(-t/eta) * ( |du/dt + div(u x u)|^2 / 2
                   + W(eps(u)) / eta
                   + c4 |grad u|^4 / 4 )

over space and time.  Time derivatives use three-point second-order
stencils (one-sided at the ends); the exponential weight is integrated
exactly against piecewise-linear interpolants, with the analytic tail
beyond the horizon lumped into the last node so constants integrate
exactly.  The gradient returned by ``first_variation`` is the exact
derivative of this discrete functional, Leray-projected onto the
constraint manifold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import CannotSatisfyIV, ExponentOutOfRange, NonzeroMean, DivergenceTooLarge
from .grid import (
    TorusGrid,
    VectorField,
    convect_jacobian_adjoint_raw,
    convect_raw,
    divergence_raw,
    fftn,
    gradient,
    ifftn,
    leray_project_raw,
    lp_norm,
    poincare_constant,
)
from .laws import ConstitutiveLaw


# ---------------------------------------------------------------------------
# exponents


@dataclass(frozen=True)
class ExponentTable:
    p: float
    d: int
    q: float
    beta: float
    gamma: float
    s_tilde: float
    s: float


def exponent_table(p: float, d: int, margin: float = 0.05) -> ExponentTable:
    """Derived integrability exponents for growth exponent p in dimension d."""
    denom = d * p + 2.0 * p - 2.0 * d
    if denom <= 0 or not p > 2.0 * d / (d + 2.0):
        raise ExponentOutOfRange(f"p={p} must exceed 2d/(d+2) = {2.0 * d / (d + 2.0):.6g}")
    beta = max(p, d * p / denom)
    gamma = max(p, 4.0)
    s_tilde = max(gamma, 2.0 * d * p / denom)
    return ExponentTable(
        p=p, d=d, q=p / (p - 1.0), beta=beta, gamma=gamma,
        s_tilde=s_tilde, s=(1.0 + margin) * s_tilde,
    )


# ---------------------------------------------------------------------------
# time grid and weighted quadrature


def make_times(t_max: float, m_steps: int, ratio: float = 1.0) -> np.ndarray:
    """Geometrically graded time nodes 0 = t_0 < ... < t_M = t_max.

    ratio is the growth factor between consecutive steps; 1.0 gives a
    uniform grid.
    """
    if m_steps < 2:
        raise ValueError("need at least 2 steps")
    if ratio < 1.0 or ratio > 1.5:
        raise ValueError("ratio must lie in [1, 1.5]")
    if ratio == 1.0:
        return np.linspace(0.0, t_max, m_steps + 1)
    dt0 = t_max * (ratio - 1.0) / (ratio**m_steps - 1.0)
    steps = dt0 * ratio ** np.arange(m_steps)
    times = np.concatenate([[0.0], np.cumsum(steps)])
    times[-1] = t_max
    return times


def exp_weights(times: np.ndarray, eta: float) -> np.ndarray:
    """Exact integrals of e^(-t/eta) against the hat basis on ``times``.

    The tail integral over (t_M, infinity) is added to the last node, so
    the weights of a constant sum to exactly eta.
    """
    m = len(times) - 1
    w = np.zeros(m + 1)

    def f_tail(x):
        # 1 - e^(-x)(1+x), stable for small x
        if x < 1e-4:
            return x * x / 2.0 - x**3 / 3.0 + x**4 / 8.0
        return 1.0 - math.exp(-x) * (1.0 + x)

    for j in range(m):
        a, b = times[j], times[j + 1]
        h = b - a
        x = h / eta
        e_a = math.exp(-a / eta)
        e0 = eta * e_a * (-math.expm1(-x))
        e1 = eta * eta * e_a * f_tail(x)
        w[j + 1] += e1 / h
        w[j] += e0 - e1 / h
    w[m] += eta * math.exp(-times[m] / eta)
    return w


def diff_matrix(times: np.ndarray) -> sp.csr_matrix:
    """Second-order differentiation matrix, one-sided at both ends."""
    m = len(times) - 1
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    h1 = times[1] - times[0]
    h2 = times[2] - times[1]
    add(0, 0, -(2 * h1 + h2) / (h1 * (h1 + h2)))
    add(0, 1, (h1 + h2) / (h1 * h2))
    add(0, 2, -h1 / (h2 * (h1 + h2)))
    for j in range(1, m):
        h1 = times[j] - times[j - 1]
        h2 = times[j + 1] - times[j]
        add(j, j - 1, -h2 / (h1 * (h1 + h2)))
        add(j, j, (h2 - h1) / (h1 * h2))
        add(j, j + 1, h1 / (h2 * (h1 + h2)))
    h1 = times[m - 1] - times[m - 2]
    h2 = times[m] - times[m - 1]
    add(m, m - 2, h2 / (h1 * (h1 + h2)))
    add(m, m - 1, -(h1 + h2) / (h1 * h2))
    add(m, m, (2 * h2 + h1) / (h2 * (h1 + h2)))
    return sp.csr_matrix((vals, (rows, cols)), shape=(m + 1, m + 1))


# ---------------------------------------------------------------------------
# configuration and trajectories


@dataclass
class WideConfig:
    eta: float
    t_max: Optional[float] = None  # defaults to 10 * eta
    m_steps: int = 64
    ratio: float = 1.0
    c4: Optional[float] = None  # defaults to (9 cp^2 + 1)/2 with safety
    c_p: Optional[float] = None
    convection: bool = True
    stabiliser: bool = True
    delta: Optional[float] = None  # strain smoothing; resolved per law
    div_tol: float = 1e-10
    mean_tol: float = 1e-10
    poincare_safety: float = 1.05

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.t_max is None:
            self.t_max = 10.0 * self.eta
        if self.t_max < 10.0 * self.eta - 1e-12:
            raise ValueError(f"t_max={self.t_max} must be >= 10*eta = {10 * self.eta}")

    def resolve_c4(self, grid: TorusGrid) -> float:
        if self.c4 is None:
            if self.c_p is None:
                self.c_p = self.poincare_safety * poincare_constant(grid, 4.0)
            self.c4 = 0.5 * (9.0 * self.c_p**2 + 1.0)
        elif self.stabiliser and self.c_p is not None:
            floor = 0.5 * (9.0 * self.c_p**2 + 1.0)
            if self.c4 < floor - 1e-12:
                raise ValueError(f"c4={self.c4} below stabiliser floor {floor}")
        return self.c4

    def resolve_delta(self, law: ConstitutiveLaw) -> float:
        if self.delta is not None:
            return self.delta
        return 1e-8 if law.p < 2.0 else 0.0

    def times(self) -> np.ndarray:
        return make_times(self.t_max, self.m_steps, self.ratio)


@dataclass
class Trajectory:
    """Time-discretised velocity: fields[m] is the sampled field at times[m]."""

    grid: TorusGrid
    times: np.ndarray
    fields: np.ndarray  # (M+1, d, n, ..., n)
    config: WideConfig

    def __post_init__(self):
        expected = (len(self.times), self.grid.d) + self.grid.shape
        if self.fields.shape != expected:
            raise ValueError(f"fields shape {self.fields.shape} != {expected}")

    @property
    def m_steps(self) -> int:
        return len(self.times) - 1

    def node(self, m: int) -> VectorField:
        return VectorField(self.grid, self.fields[m])

    def validate(self, u0: Optional[VectorField] = None) -> None:
        scale = max(float(np.max(np.abs(self.fields))), 1e-30)
        div = divergence_raw(self.grid, np.swapaxes(self.fields, 0, 1))
        if np.max(np.abs(div)) > self.config.div_tol * scale:
            raise DivergenceTooLarge(f"node divergence {np.max(np.abs(div)):.3e} above tolerance")
        means = self.fields.mean(axis=tuple(range(2, 2 + self.grid.d)))
        if np.max(np.abs(means)) > self.config.mean_tol * scale:
            raise NonzeroMean(f"node mean {np.max(np.abs(means)):.3e} above tolerance")
        if u0 is not None and not np.array_equal(self.fields[0], u0.values):
            raise ValueError("node 0 differs from the prepared initial datum")

    @classmethod
    def constant(cls, u0: VectorField, config: WideConfig) -> "Trajectory":
        times = config.times()
        fields = np.broadcast_to(u0.values, (len(times),) + u0.values.shape).copy()
        return cls(u0.grid, times, fields, config)

    def resample(self, new_times: np.ndarray) -> "Trajectory":
        """Linear-in-time resampling onto a new node set."""
        flat = self.fields.reshape(len(self.times), -1)
        out = np.empty((len(new_times), flat.shape[1]))
        for j, t in enumerate(new_times):
            t = min(max(t, self.times[0]), self.times[-1])
            i = np.searchsorted(self.times, t)
            if i == 0:
                out[j] = flat[0]
            else:
                i = min(i, len(self.times) - 1)
                t0, t1 = self.times[i - 1], self.times[i]
                lam = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
                out[j] = (1 - lam) * flat[i - 1] + lam * flat[i]
        cfg = replace(self.config, t_max=float(new_times[-1]), m_steps=len(new_times) - 1)
        return Trajectory(self.grid, np.asarray(new_times, dtype=float),
                          out.reshape((len(new_times),) + self.fields.shape[1:]), cfg)


# ---------------------------------------------------------------------------
# initial data


def prepare_initial_data(u0: VectorField, eta: float, law: ConstitutiveLaw, c0: Optional[float] = None):
    """Spectral cutoff of the initial datum adapted to eta.

    Returns ``(field, info)`` where the cutoff K is the largest dyadic
    wavenumber whose truncation satisfies the three structural bounds
    |grad u|_p^p <= c0/eta, |div(u x u)|_2^2 <= c0/eta, |grad u|_4^4 <= c0/eta.
    """
    grid = u0.grid
    scale = max(float(np.sqrt(np.mean(u0.values**2))), 1e-30)
    if np.max(np.abs(u0.mean())) > 1e-12 * scale:
        raise NonzeroMean("initial datum must have zero mean")
    div = divergence_raw(grid, u0.values)
    if np.max(np.abs(div)) > 1e-8 * np.max(np.abs(u0.values)):
        raise DivergenceTooLarge("initial datum must be divergence-free")

    k = grid.k_vectors()
    kmag = np.sqrt(np.sum(k * k, axis=0))
    u_hat = fftn(grid, u0.values)
    ladder = [2.0**j for j in range(0, int(np.log2(grid.n)) + 1)]

    def truncate(kc):
        mask = kmag <= kc
        return ifftn(grid, u_hat * mask)

    def norms(vals):
        v = VectorField(grid, vals)
        g = gradient(grid, vals)
        np1 = lp_norm(g, law.p, grid) ** law.p
        np2 = lp_norm(convect_raw(grid, vals), 2.0, grid) ** 2
        np3 = lp_norm(g, 4.0, grid) ** 4
        return np1, np2, np3

    if c0 is None:
        c0 = max(1.0, *norms(truncate(ladder[0])))
    chosen = None
    chosen_norms = None
    for kc in ladder:
        vals = truncate(kc)
        n1, n2, n3 = norms(vals)
        if max(n1, n2, n3) <= c0 / eta:
            chosen, chosen_norms, chosen_k = vals, (n1, n2, n3), kc
    if chosen is None:
        raise CannotSatisfyIV(f"no cutoff satisfies the bounds with c0={c0:.3g}, eta={eta:.3g}")
    out = VectorField(grid, chosen)
    info = {
        "cutoff": chosen_k,
        "c0": c0,
        "grad_p_norm_p": chosen_norms[0],
        "convect_l2_sq": chosen_norms[1],
        "grad_4_norm_4": chosen_norms[2],
        "l2_distance": float(lp_norm(VectorField(grid, u0.values - chosen), 2.0)),
    }
    return out, info


# ---------------------------------------------------------------------------
# the discrete functional


class DiscreteFunctional:
    """Value and exact gradient of the discrete weighted functional."""

    def __init__(self, grid: TorusGrid, times: np.ndarray, config: WideConfig, law: ConstitutiveLaw):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.config = config
        self.law = law
        self.weights = exp_weights(self.times, config.eta)
        self.dmat = diff_matrix(self.times)
        self.dmat_t = sp.csr_matrix(self.dmat.T)
        self.c4 = config.resolve_c4(grid)
        self.delta = config.resolve_delta(law)
        self.vol = grid.cell_volume

    def _apply_time(self, mat, fields):
        m1 = fields.shape[0]
        return (mat @ fields.reshape(m1, -1)).reshape(fields.shape)

    def _batched(self, fields):
        # component-first view (d, M+1, space) for the raw grid operators
        return np.swapaxes(fields, 0, 1)

    def value(self, fields: np.ndarray) -> float:
        return self._evaluate(fields, want_gradient=False)[0]

    def value_and_gradient(self, fields: np.ndarray):
        return self._evaluate(fields, want_gradient=True)

    def _evaluate(self, fields, want_gradient):
        cfg = self.config
        w = self.weights
        vol = self.vol
        dudt = self._apply_time(self.dmat, fields)
        r = dudt.copy()
        if cfg.convection:
            conv = np.swapaxes(convect_raw(self.grid, self._batched(fields)), 0, 1)
            r += conv
        wcol = w.reshape((-1,) + (1,) * (fields.ndim - 1))
        i1 = 0.5 * vol * float(np.sum(wcol * r * r))

        # strain and potential
        g = gradient(self.grid, self._batched(fields))  # (j, d, M+1, space)
        g = np.moveaxis(g, 0, 1)  # (i=d, j, M+1, space) -> actually (d, j, ...)
        eps = 0.5 * (g + np.swapaxes(g, 0, 1))
        wvals = self.law.w_array(eps, delta=self.delta)  # (M+1, space)
        i2 = (vol / cfg.eta) * float(np.sum(w.reshape((-1,) + (1,) * self.grid.d) * wvals))

        i3 = 0.0
        if cfg.stabiliser:
            gradsq = np.einsum("ij...,ij...->...", g, g)  # (M+1, space)
            i3 = 0.25 * self.c4 * vol * float(
                np.sum(w.reshape((-1,) + (1,) * self.grid.d) * gradsq**2)
            )
        total = i1 + i2 + i3
        if not want_gradient:
            return total, None

        grad = self._apply_time(self.dmat_t, wcol * r)
        if cfg.convection:
            adj = convect_jacobian_adjoint_raw(self.grid, self._batched(fields), self._batched(wcol * r))
            grad += np.swapaxes(adj, 0, 1)

        dw = self.law.dw_array(eps, delta=self.delta)  # (d, j, M+1, space)
        if cfg.stabiliser:
            dw = dw + self.c4 * cfg.eta * gradsq[np.newaxis, np.newaxis] * g
        # <S, grad phi> = <-div_j S_ij, phi_i>
        stress_div = divergence_raw(self.grid, np.swapaxes(dw, 0, 1))
        grad += -(1.0 / cfg.eta) * np.swapaxes(
            w.reshape((1, -1) + (1,) * self.grid.d) * stress_div, 0, 1
        )
        grad *= vol
        return total, grad

    def project_gradient(self, grad: np.ndarray) -> np.ndarray:
        out = np.swapaxes(leray_project_raw(self.grid, np.swapaxes(grad, 0, 1)), 0, 1).copy()
        out[0] = 0.0
        return out


def evaluate_functional(traj: Trajectory, law: ConstitutiveLaw) -> float:
    traj.validate()
    f = DiscreteFunctional(traj.grid, traj.times, traj.config, law)
    return f.value(traj.fields)


def first_variation(traj: Trajectory, law: ConstitutiveLaw) -> np.ndarray:
    """Gradient of the discrete functional on the constraint manifold.

    The result pairs with admissible variations through
    sum_m cell_volume * sum_x grad[m] . phi[m]; node 0 is zeroed and every
    node is Leray-projected.
    """
    traj.validate()
    f = DiscreteFunctional(traj.grid, traj.times, traj.config, law)
    _, grad = f.value_and_gradient(traj.fields)
    return f.project_gradient(grad) / f.vol


# ---------------------------------------------------------------------------
# energy diagnostics


@dataclass
class DiagnosticsReport:
    times: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    weighted_dissipation: np.ndarray  # cumulative integral of e^(-t/eta) D
    residual_inequality: np.ndarray
    residual_equality: np.ndarray
    eta: float

    def rows(self):
        for j in range(len(self.times)):
            yield (
                self.times[j],
                self.energy[j],
                self.dissipation[j],
                self.residual_inequality[j],
                self.residual_equality[j],
            )

    def to_csv(self) -> str:
        lines = ["t,E,D,r_ineq,r_eq"]
        for row in self.rows():
            lines.append(",".join(f"{x:.17g}" for x in row))
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {
            "eta": self.eta,
            "energy_initial": float(self.energy[0]),
            "energy_final": float(self.energy[-1]),
            "min_residual_inequality": float(np.min(self.residual_inequality)),
            "final_residual_equality": float(self.residual_equality[-1]),
            "max_abs_residual_equality": float(np.max(np.abs(self.residual_equality))),
            "min_dissipation": float(np.min(self.dissipation)),
        }


def _segment_exp_weights(a: float, b: float, eta: float):
    h = b - a
    x = h / eta
    e_a = math.exp(-a / eta)
    e0 = eta * e_a * (-math.expm1(-x))
    if x < 1e-4:
        f = x * x / 2.0 - x**3 / 3.0 + x**4 / 8.0
    else:
        f = 1.0 - math.exp(-x) * (1.0 + x)
    e1 = eta * eta * e_a * f
    return e0 - e1 / h, e1 / h


def energy_report(traj: Trajectory, law: ConstitutiveLaw) -> DiagnosticsReport:
    """Per-node energy, dissipation, and the two energy residuals.

    residual_inequality(T) = E(0) - E(T) - int_0^T (1 - e^(-t/eta)) D dt,
    residual_equality uses weight 1 instead.
    """
    grid, times = traj.grid, traj.times
    eta = traj.config.eta
    vol = grid.cell_volume
    m1 = len(times)
    energy = 0.5 * vol * np.sum(traj.fields**2, axis=tuple(range(1, traj.fields.ndim)))
    g = gradient(grid, np.swapaxes(traj.fields, 0, 1))
    g = np.moveaxis(g, 0, 1)
    eps = 0.5 * (g + np.swapaxes(g, 0, 1))
    dw = law.dw_array(eps)
    diss = vol * np.einsum("ij...,ij...->...", dw, eps).reshape(m1, -1).sum(axis=1)

    cum_plain = np.zeros(m1)
    cum_weighted = np.zeros(m1)
    for j in range(m1 - 1):
        a, b = times[j], times[j + 1]
        h = b - a
        cum_plain[j + 1] = cum_plain[j] + 0.5 * h * (diss[j] + diss[j + 1])
        wa, wb = _segment_exp_weights(a, b, eta)
        cum_weighted[j + 1] = cum_weighted[j] + wa * diss[j] + wb * diss[j + 1]
    r_ineq = energy[0] - energy - (cum_plain - cum_weighted)
    r_eq = energy[0] - energy - cum_plain
    return DiagnosticsReport(
        times=times.copy(),
        energy=energy,
        dissipation=diss,
        weighted_dissipation=cum_weighted,
        residual_inequality=r_ineq,
        residual_equality=r_eq,
        eta=eta,
    )
