"""Dissipation potentials for Newtonian, power-law, and Ellis rheologies.

Each law stores a scalar potential profile ``wtilde(s)`` over the strain
magnitude s = |eps| together with the shear viscosity ``mu(s)`` such that
the stress is DW(eps) = 2 mu(|eps|) eps and wtilde'(s) = 2 s mu(s).  For the
Ellis law the viscosity is only defined implicitly; it is solved per shear
rate and stored as a Chebyshev interpolant in log s whose exact
antiderivative supplies the potential, so value and derivative stay
consistent to machine precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy.optimize import brentq

from .errors import BadMatrix, ExponentOutOfRange, SolveFailure


def _check_p(p: float, d: int) -> None:
    threshold = 2.0 * d / (d + 2.0)
    if not p > threshold:
        raise ExponentOutOfRange(f"p={p} must exceed 2d/(d+2) = {threshold:.6g} for d={d}")


@dataclass
class ConstitutiveLaw:
    kind: str  # "newtonian" | "power_law" | "ellis"
    p: float
    mu0: float
    d: int = 2
    sigma_half: Optional[float] = None
    alpha: Optional[float] = None
    # Chebyshev model of g(xi) = 2 e^{2 xi} mu(e^xi), xi = log s (Ellis only)
    _cheb: Optional[cheb.Chebyshev] = field(default=None, repr=False)
    _cheb_d: Optional[cheb.Chebyshev] = field(default=None, repr=False)
    _s_range: Optional[tuple] = field(default=None, repr=False)
    growth_constants: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_p(self.p, self.d)
        if self.mu0 <= 0:
            raise ValueError("mu0 must be positive")
        if not self.growth_constants:
            self.growth_constants = self._fit_growth_constants()

    # -- scalar profile ----------------------------------------------------

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    def mu(self, s):
        """Shear viscosity at strain magnitude s (array ok)."""
        s = np.asarray(s, dtype=float)
        if self.kind == "newtonian":
            return np.full_like(s, self.mu0)
        if self.kind == "power_law":
            out = np.zeros_like(s)
            nz = s > 0
            out[nz] = self.mu0 * s[nz] ** (self.p - 2.0)
            if self.p == 2.0:
                out[~nz] = self.mu0
            elif self.p > 2.0:
                out[~nz] = 0.0
            else:
                out[~nz] = np.inf
            return out
        return self._ellis_mu(s)

    def wtilde(self, s):
        """Potential profile: integral of 2 r mu(r) over r in (0, s)."""
        s = np.asarray(s, dtype=float)
        if self.kind == "newtonian":
            return self.mu0 * s**2
        if self.kind == "power_law":
            return (2.0 * self.mu0 / self.p) * s**self.p
        return self._ellis_wtilde(s)

    def dwtilde(self, s):
        """Derivative of the profile: 2 s mu(s)."""
        s = np.asarray(s, dtype=float)
        if self.kind == "newtonian":
            return 2.0 * self.mu0 * s
        if self.kind == "power_law":
            return 2.0 * self.mu0 * s ** (self.p - 1.0)
        return 2.0 * s * self._ellis_mu(s)

    # -- Ellis internals ---------------------------------------------------

    def _ellis_dwtilde(self, s):
        """Consistent derivative of the tabulated potential: wtilde'(s)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        lo, hi = self._s_range
        out = np.empty_like(s)
        small = (s <= lo) & (s > 0)
        out[small] = self._w_lo * self._e_lo * s[small] ** (self._e_lo - 1.0) / lo**self._e_lo
        out[s == 0.0] = 0.0
        mid = (s > lo) & (s <= hi)
        if np.any(mid):
            xi = np.log(s[mid])
            # wtilde = exp(V(xi)):  wtilde' = exp(V) V' / s
            out[mid] = np.exp(self._cheb(xi)) * self._cheb_d(xi) / s[mid]
        big = s > hi
        if np.any(big):
            out[big] = self._w_hi * self._e_hi * s[big] ** (self._e_hi - 1.0) / hi**self._e_hi
        return out

    def _ellis_mu(self, s):
        if self.alpha == 1.0:
            return np.full_like(np.asarray(s, dtype=float), self.mu0)
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.empty_like(s)
        nz = s > 0
        out[nz] = self._ellis_dwtilde(s[nz]) / (2.0 * s[nz])
        out[~nz] = self.mu0
        return out if out.shape else float(out)

    def _ellis_wtilde(self, s):
        if self.alpha == 1.0:
            return self.mu0 * np.asarray(s, dtype=float) ** 2
        s = np.atleast_1d(np.asarray(s, dtype=float))
        lo, hi = self._s_range
        out = np.empty_like(s)
        small = s <= lo
        out[small] = self._w_lo * (s[small] / lo) ** self._e_lo
        mid = (s > lo) & (s <= hi)
        if np.any(mid):
            out[mid] = np.exp(self._cheb(np.log(s[mid])))
        big = s > hi
        if np.any(big):
            out[big] = self._w_hi * (s[big] / hi) ** self._e_hi
        return out if out.shape else float(out)

    def _solve_ellis_mu(self, s: float) -> float:
        """Implicit law 1/mu = (1/mu0)(1 + (x/sigma_half)^(alpha-1)), x = 2 mu s."""
        if s == 0.0:
            return self.mu0
        sig, al, mu0 = self.sigma_half, self.alpha, self.mu0

        def g(x):
            return x * (1.0 + (x / sig) ** (al - 1.0)) - 2.0 * mu0 * s

        hi = 2.0 * mu0 * s
        if g(hi) < 0:
            raise SolveFailure("upper bracket failed for the Ellis solve")
        x = brentq(g, 0.0, hi, xtol=1e-300, rtol=8.9e-16, maxiter=200)
        return x / (2.0 * s)

    def _build_ellis_table(self, s_lo: float, s_hi: float, degree: int) -> None:
        from scipy.integrate import quad

        ximin, ximax = np.log(s_lo), np.log(s_hi)
        # Chebyshev model of V(xi) = log wtilde(e^xi); the potential and its
        # derivative are both read off V so they stay consistent.
        nodes = np.cos(np.pi * (2 * np.arange(degree + 1) + 1) / (2 * (degree + 1)))
        xi_nodes = np.sort(0.5 * (nodes + 1.0) * (ximax - ximin) + ximin)
        s_nodes = np.exp(xi_nodes)

        def integrand(r):
            return 2.0 * r * self._solve_ellis_mu(r)

        w_vals = np.empty_like(s_nodes)
        acc, prev = 0.0, 0.0
        for i, sv in enumerate(s_nodes):
            seg, _ = quad(integrand, prev, sv, epsabs=0.0, epsrel=1e-13, limit=400)
            acc += seg
            w_vals[i] = acc
            prev = sv
        self._cheb = cheb.Chebyshev.fit(xi_nodes, np.log(w_vals), degree, domain=[ximin, ximax])
        self._cheb_d = self._cheb.deriv()  # V'(xi)
        self._s_range = (s_lo, s_hi)
        # power-law continuations matched to the model keep W and DW
        # globally consistent across the seams
        self._w_lo = float(np.exp(self._cheb(ximin)))
        self._e_lo = float(self._cheb_d(ximin))
        self._w_hi = float(np.exp(self._cheb(ximax)))
        self._e_hi = float(self._cheb_d(ximax))

    # -- measured growth constants ------------------------------------------

    def _fit_growth_constants(self, s_max: float = 1e3, margin: float = 1.05) -> dict:
        s = np.logspace(-3, np.log10(s_max), 400)
        w = np.asarray(self.wtilde(s))
        dws = np.asarray(self.dwtilde(s)) * s  # DW(eps):eps at |eps| = s
        dwmag = np.asarray(self.dwtilde(s))
        c_w_upper = float(np.max(w / (1.0 + s**self.p)))
        c_w_lower = float(np.max((-w + np.sqrt(w**2 + 4.0 * s**self.p)) / 2.0))
        c_dw_upper = float(np.max(dwmag / (1.0 + s ** (self.p - 1.0))))
        above = s**self.p > 1.0
        c_dw_coercive = float(np.min(dws[above] / (s[above] ** self.p - 1.0)))
        return {
            "w_upper": margin * c_w_upper,
            "w_lower": margin * c_w_lower,
            "dw_upper": margin * c_dw_upper,
            "dw_coercive": c_dw_coercive / margin,
        }

    # -- field evaluation ----------------------------------------------------

    def w_array(self, eps: np.ndarray, delta: float = 0.0) -> np.ndarray:
        """Pointwise potential; ``eps`` has leading (d, d) tensor axes."""
        mag = np.sqrt(np.einsum("ij...,ij...->...", eps, eps))
        s = np.sqrt(mag**2 + delta**2) if delta > 0.0 else mag
        return np.asarray(self.wtilde(s))

    def dw_array(self, eps: np.ndarray, delta: float = 0.0) -> np.ndarray:
        """Pointwise stress DW(eps) = 2 mu(s_eff) eps; zero at eps = 0."""
        mag = np.sqrt(np.einsum("ij...,ij...->...", eps, eps))
        s = np.sqrt(mag**2 + delta**2) if delta > 0.0 else mag
        twomu = np.zeros_like(s)
        nz = s > 0
        twomu[nz] = np.asarray(self.dwtilde(s[nz])) / s[nz]
        return twomu[np.newaxis, np.newaxis] * eps

    # -- serialisation -------------------------------------------------------

    def to_json(self) -> str:
        doc = {"kind": self.kind, "p": self.p, "mu0": self.mu0, "d": self.d}
        if self.kind == "ellis":
            doc["sigma_half"] = self.sigma_half
            doc["alpha"] = self.alpha
            if self._cheb is not None:
                doc["table"] = {
                    "coef": list(self._cheb.coef),
                    "domain": list(self._cheb.domain),
                    "s_range": list(self._s_range),
                }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "ConstitutiveLaw":
        doc = json.loads(text)
        if doc["kind"] == "ellis":
            return build_ellis(doc["mu0"], doc["sigma_half"], doc["alpha"], d=doc.get("d", 2))
        if doc["kind"] == "newtonian":
            return newtonian(doc["mu0"], d=doc.get("d", 2))
        return power_law(doc["p"], doc["mu0"], d=doc.get("d", 2))


def newtonian(mu0: float = 0.5, d: int = 2) -> ConstitutiveLaw:
    return ConstitutiveLaw(kind="newtonian", p=2.0, mu0=mu0, d=d)


def power_law(p: float, mu0: float = 0.5, d: int = 2) -> ConstitutiveLaw:
    return ConstitutiveLaw(kind="power_law", p=p, mu0=mu0, d=d)


def build_ellis(
    mu0: float,
    sigma_half: float,
    alpha: float,
    d: int = 2,
    s_range: tuple = (1e-8, 1e5),
    degree: int = 160,
) -> ConstitutiveLaw:
    """Ellis law with viscosity solved from its implicit characterisation.

    The growth exponent is p = (alpha + 1)/alpha.  alpha = 1 degenerates to
    a constant viscosity mu0.
    """
    if mu0 <= 0 or sigma_half <= 0:
        raise SolveFailure("mu0 and sigma_half must be positive")
    if alpha < 1:
        raise SolveFailure(f"alpha must be >= 1, got {alpha}")
    p = (alpha + 1.0) / alpha
    law = ConstitutiveLaw.__new__(ConstitutiveLaw)
    law.kind = "ellis"
    law.p = p
    law.mu0 = mu0
    law.d = d
    law.sigma_half = sigma_half
    law.alpha = alpha
    law._cheb = None
    law._cheb_d = None
    law._s_range = None
    law.growth_constants = {}
    _check_p(p, d)
    if alpha > 1.0:
        law._build_ellis_table(*s_range, degree)
    law.growth_constants = law._fit_growth_constants()
    return law


# ---------------------------------------------------------------------------
# single-matrix entry points with validation


def _check_matrix(eps: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    eps = np.asarray(eps, dtype=float)
    if eps.ndim != 2 or eps.shape[0] != eps.shape[1]:
        raise BadMatrix(f"expected a square matrix, got shape {eps.shape}")
    scale = max(np.max(np.abs(eps)), 1.0)
    if np.max(np.abs(eps - eps.T)) > tol * scale:
        raise BadMatrix("matrix is not symmetric")
    if abs(np.trace(eps)) > tol * scale:
        raise BadMatrix("matrix is not trace-free")
    return eps


def w_value(law: ConstitutiveLaw, eps) -> float:
    """Potential W at a single symmetric trace-free matrix."""
    eps = _check_matrix(eps)
    return float(np.squeeze(law.wtilde(float(np.linalg.norm(eps)))))


def dw_value(law: ConstitutiveLaw, eps) -> np.ndarray:
    """Stress DW at a single symmetric trace-free matrix; DW(0) = 0."""
    eps = _check_matrix(eps)
    s = float(np.linalg.norm(eps))
    if s == 0.0:
        return np.zeros_like(eps)
    return (float(np.squeeze(law.dwtilde(s))) / s) * eps
