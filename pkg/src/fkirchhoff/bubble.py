"""The explicit bubble Q(x) = C (mu / (mu^2 + |x - xi|^2))^{(N-2s)/2} and its normalization."""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import gamma

from .grids import BoxGrid, RadialGrid, integrate_radial, make_radial_grid, sphere_area
from .spectral import SpectralField, apply_frac_laplacian_box, seminorm_sq, seminorm_sq_radial

# Minimum mu/h.  The Fourier coefficients of the bubble decay like exp(-|k| mu),
# so aliasing error is about exp(-2 pi mu/h): 3e-6 at mu/h = 2.
MIN_POINTS_PER_MU = 2.0


@dataclass(frozen=True)
class CriticalExponents:
    N: int
    s: float

    def __post_init__(self):
        if not 2 * self.s < self.N < 4 * self.s:
            raise ValueError(f"(N, s) = ({self.N}, {self.s}) violates 2s < N < 4s")

    @property
    def two_star(self) -> float:
        return 2.0 * self.N / (self.N - 2 * self.s)

    @property
    def p(self) -> float:
        """Power of the nonlinearity, 2*_s - 1."""
        return self.two_star - 1.0

    @property
    def p_lin(self) -> float:
        """Power of U in the linearized potential, 2*_s - 2."""
        return self.two_star - 2.0

    @property
    def theta(self) -> float:
        return (self.N - 2 * self.s) / (2 * self.s)

    @property
    def alpha(self) -> float:
        """Decay exponent (N - 2s)/2 of the bubble."""
        return (self.N - 2 * self.s) / 2.0


@dataclass(frozen=True)
class BubbleProfile:
    C: float
    N: int
    s: float
    mu: float = 1.0
    center: Optional[tuple] = None

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")
        CriticalExponents(self.N, self.s)
        if self.center is None:
            object.__setattr__(self, "center", (0.0,) * self.N)
        elif len(self.center) != self.N:
            raise ValueError("center has wrong dimension")

    @property
    def exponents(self) -> CriticalExponents:
        return CriticalExponents(self.N, self.s)

    @property
    def peak(self) -> float:
        return self.C * self.mu ** (-self.exponents.alpha)


def _as_points(N: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if N == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        return x[..., None]
    if x.shape[-1] != N:
        raise ValueError(f"points must have last axis of length {N}")
    return x


def eval_bubble(b: BubbleProfile, x) -> np.ndarray:
    """Q at points x (array with trailing axis N; bare scalars allowed for N=1)."""
    pts = _as_points(b.N, x)
    d2 = np.sum((pts - np.asarray(b.center)) ** 2, axis=-1)
    return b.C * (b.mu / (b.mu**2 + d2)) ** b.exponents.alpha


# The samplers below evaluate x -> Q(x/scale) and its derivatives on coordinate
# arrays, which is how the rescaled ground state U(x) = Q(E0^{-1/(2s)} x) is built.

def _shifted(b: BubbleProfile, coords: Sequence[np.ndarray], scale: float):
    y = [np.asarray(c, dtype=float) / scale for c in coords]
    d = [yi - ci for yi, ci in zip(y, b.center)]
    rho2 = sum(di**2 for di in d)
    return y, d, rho2


def bubble_samples(b: BubbleProfile, coords: Sequence[np.ndarray], scale: float = 1.0) -> np.ndarray:
    _, _, rho2 = _shifted(b, coords, scale)
    return b.C * (b.mu / (b.mu**2 + rho2)) ** b.exponents.alpha


def bubble_gradient(b: BubbleProfile, coords, scale: float = 1.0) -> list:
    """Analytic partial derivatives of x -> Q(x/scale)."""
    al = b.exponents.alpha
    _, d, rho2 = _shifted(b, coords, scale)
    common = -2.0 * al * b.C * b.mu**al * (b.mu**2 + rho2) ** (-al - 1) / scale
    return [common * di for di in d]


def bubble_radial_derivative(b: BubbleProfile, coords, scale: float = 1.0) -> np.ndarray:
    """x . grad of x -> Q(x/scale)."""
    al = b.exponents.alpha
    y, d, rho2 = _shifted(b, coords, scale)
    dot = sum(yi * di for yi, di in zip(y, d))
    return -2.0 * al * b.C * b.mu**al * (b.mu**2 + rho2) ** (-al - 1) * dot


def dilation_mode(b: BubbleProfile, coords, scale: float = 1.0) -> np.ndarray:
    """e0 = (N-2s)/2 * U + x . grad U for U(x) = Q(x/scale)."""
    return b.exponents.alpha * bubble_samples(b, coords, scale) + bubble_radial_derivative(b, coords, scale)


def closed_form_C(N: int, s: float) -> float:
    """Gamma-function value of the normalization (cross-check only)."""
    CriticalExponents(N, s)
    lam = 2 ** (2 * s) * gamma((N + 2 * s) / 2) / gamma((N - 2 * s) / 2)
    return float(lam ** ((N - 2 * s) / (4 * s)))


def closed_form_kappa(N: int, s: float, C: Optional[float] = None) -> float:
    """||(-Delta)^{s/2} Q||^2 = int Q^{2*} for the exact solution (mu = 1)."""
    C = closed_form_C(N, s) if C is None else C
    ex = CriticalExponents(N, s)
    # int_0^inf (1+r^2)^{-N} r^{N-1} dr = B(N/2, N/2)/2
    radial = 0.5 * gamma(N / 2) ** 2 / gamma(N)
    return float(C**ex.two_star * sphere_area(N) * radial)


@dataclass(frozen=True)
class Calibration:
    N: int
    s: float
    C: float
    residual: float
    resolution: str


def default_calibration_grid(N: int, budget: int = 2**24) -> BoxGrid:
    """Spacing 1/2 in bubble units; the box is as large as the point budget allows."""
    m = {1: 2**24, 2: 4096, 3: 256}[N]
    return BoxGrid(N, m / 4.0, m, max(budget, m**N))


def bubble_residual(g: BoxGrid, s: float, C: float) -> float:
    """Relative periodic residual ||(-Delta)^s Q_C - Q_C^p|| / ||Q_C^p||."""
    ex = CriticalExponents(g.N, s)
    Q = C * (1.0 + g.radius_sq()) ** (-ex.alpha)
    P = Q**ex.p
    return float(np.linalg.norm(apply_frac_laplacian_box(g, s, Q) - P) / np.linalg.norm(P))


def calibrate_normalization(N: int, s: float, g: Optional[BoxGrid] = None,
                            min_points_per_mu: float = MIN_POINTS_PER_MU) -> Calibration:
    """C minimizing ||C A - C^p B|| / ||C^p B||, A = (-Delta)^s w, B = w^p, w = (1+r^2)^{-alpha}.

    With y = C^{1-p} the squared relative residual is the quadratic
    (AA y^2 - 2 AB y + BB)/BB, so the minimizer is y = AB/AA in closed form
    and no bracketing search is needed.
    """
    ex = CriticalExponents(N, s)
    g = default_calibration_grid(N) if g is None else g
    if g.N != N:
        raise ValueError(f"grid dimension {g.N} differs from N={N}")
    if 1.0 / g.h < min_points_per_mu:
        raise ValueError(f"grid too coarse: mu/h = {1.0 / g.h:.3g} < {min_points_per_mu}")
    w = (1.0 + g.radius_sq()) ** (-ex.alpha)
    A = apply_frac_laplacian_box(g, s, w)
    B = w**ex.p
    AA, AB, BB = float(np.sum(A * A)), float(np.sum(A * B)), float(np.sum(B * B))
    if not (AB > 0 and AA > 0):
        raise ValueError("no positive minimizer: box too small or grid too coarse")
    C = (AA / AB) ** (1.0 / (ex.p - 1.0))
    res = float(np.sqrt(max(1.0 - AB * AB / (AA * BB), 0.0)))
    return Calibration(N, s, C, res, f"{g.L:g}:{g.m}")


class CalibrationCache:
    """Plain-text store, one line per (N, s): `N s C residual L:m`."""

    def __init__(self, path):
        self.path = path
        self.entries: dict = {}
        if path and os.path.exists(path):
            with open(path) as fh:
                for ln, line in enumerate(fh, 1):
                    line = line.split("#", 1)[0].strip()
                    if not line:
                        continue
                    parts = line.split()
                    if len(parts) != 5:
                        raise ValueError(f"{path}:{ln}: expected 5 fields, got {len(parts)}")
                    N, s = int(parts[0]), float(parts[1])
                    self.entries[(N, round(s, 12))] = Calibration(N, s, float(parts[2]),
                                                                   float(parts[3]), parts[4])

    def get(self, N: int, s: float, resolution: Optional[str] = None):
        cal = self.entries.get((N, round(s, 12)))
        if cal is not None and resolution is not None and cal.resolution != resolution:
            return None
        return cal

    def put(self, cal: Calibration) -> None:
        self.entries[(cal.N, round(cal.s, 12))] = cal
        if self.path:
            with open(self.path, "w") as fh:
                for key in sorted(self.entries):
                    c = self.entries[key]
                    fh.write(f"{c.N} {c.s!r} {c.C!r} {c.residual:.6e} {c.resolution}\n")


def calibrated(N: int, s: float, g: Optional[BoxGrid] = None, cache: Optional[CalibrationCache] = None):
    g = default_calibration_grid(N) if g is None else g
    res_tag = f"{g.L:g}:{g.m}"
    if cache is not None:
        hit = cache.get(N, s, res_tag)
        if hit is not None:
            return hit
    cal = calibrate_normalization(N, s, g)
    if cache is not None:
        cache.put(cal)
    return cal


def sobolev_quotient(g, s: float, u) -> float:
    """Critical quotient seminorm_sq(u)^{2*/2} / int |u|^{2*}.

    At p = 2*-1 the L^2 factor of the Gagliardo-Nirenberg quotient has
    exponent zero, which leaves this scale- and amplitude-invariant ratio.
    """
    vals = np.asarray(u.values if isinstance(u, SpectralField) else u, dtype=float)
    if not np.any(vals):
        raise ValueError("quotient undefined for the zero field")
    ex = CriticalExponents(g.N, s)
    semi = seminorm_sq(g, s, vals)
    if isinstance(g, BoxGrid):
        denom = g.integrate(np.abs(vals) ** ex.two_star)
    elif isinstance(g, RadialGrid):
        denom = integrate_radial(g, np.abs(vals) ** ex.two_star, full_space=True)
    else:
        raise TypeError(f"unsupported grid {type(g).__name__}")
    return float(semi ** (ex.two_star / 2) / denom)


def radial_seminorm_extrapolated(g: RadialGrid, s: float, u_of_r, shrink: float = 100.0) -> float:
    """Full-space seminorm of a radial field with an algebraic tail ~ r^{-(N-2s)}.

    The tapered radial seminorm carries a truncation error A R^{-(N-2s)}; it
    is evaluated at R and at R/shrink (same M and stretch) and the known power
    is eliminated.  u_of_r maps radii to samples.
    """
    q = shrink ** (-(g.N - 2 * s))
    k1 = seminorm_sq_radial(g, s, u_of_r(g.nodes))
    g2 = make_radial_grid(g.N, g.M, g.R_max / shrink, g.stretch, g.ell)
    k2 = seminorm_sq_radial(g2, s, u_of_r(g2.nodes))
    return float((k1 - q * k2) / (1.0 - q))


def default_kappa_grid(N: int) -> RadialGrid:
    return make_radial_grid(N, 2048, 1e10)


def bubble_kappa(Q: BubbleProfile, g: Optional[RadialGrid] = None, scale: float = 1.0) -> float:
    """kappa = ||(-Delta)^{s/2} Q(./scale)||^2 from the radial realization, tail-extrapolated.

    g is given in bubble units and is stretched by scale with the field, so
    the value for U = Q(./E0^{1/(2s)}) is exactly E0^theta times that for Q
    up to round-off.
    """
    g = default_kappa_grid(Q.N) if g is None else g
    g = g.scaled(scale) if scale != 1.0 else g

    def profile(r):
        return bubble_samples(Q, [r] + [np.zeros_like(r)] * (Q.N - 1), scale)

    return radial_seminorm_extrapolated(g, Q.s, profile)
