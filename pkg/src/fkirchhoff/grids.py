"""Discrete geometries: a stretched radial half-line and a periodic box."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma

DEFAULT_BUDGET = 2**24


def sphere_area(N: int) -> float:
    """Surface measure of the unit sphere S^{N-1} (2 for N=1)."""
    return 2.0 * np.pi ** (N / 2) / gamma(N / 2)


@dataclass(frozen=True)
class RadialGrid:
    """Midpoint nodes on (0, R_max] with weights for the measure r^{N-1} dr.

    ``faces`` holds the M+1 cell boundaries (faces[0] = 0, faces[-1] = R_max);
    they are used by the finite-volume radial Laplacian.
    """

    nodes: np.ndarray
    weights: np.ndarray
    faces: np.ndarray
    R_max: float
    N: int
    stretch: str
    ell: float = 1.0

    @property
    def M(self) -> int:
        return self.nodes.shape[0]

    def describe(self) -> str:
        return f"radial(N={self.N},M={self.M},R={self.R_max:.6g},{self.stretch},ell={self.ell:.6g})"

    def scaled(self, lam: float) -> "RadialGrid":
        """The same grid with every length multiplied by lam."""
        return RadialGrid(self.nodes * lam, self.weights * lam**self.N, self.faces * lam,
                          self.R_max * lam, self.N, self.stretch, self.ell * lam)


def make_radial_grid(N: int, M: int, R_max: float, stretch: str = "algebraic",
                     ell: float = 1.0) -> RadialGrid:
    """Build a radial grid.

    ``uniform`` places midpoints r_i = (i - 1/2) R/M.  ``algebraic`` maps
    midpoints t_i = (i - 1/2)/M of (0, 1] through a parity-adapted hyperbolic
    stretch: r = ell*sinh(g t) for odd N and r = ell*(cosh(g t) - 1) for N = 2.
    Nodes are then geometrically spaced beyond ell, which matches the
    algebraic tails of the bubble, and the integrand in t keeps the parity
    that makes the midpoint rule high order near the origin.
    """
    if N not in (1, 2, 3):
        raise ValueError(f"invalid dimension N={N}; expected 1, 2 or 3")
    if not R_max > 0:
        raise ValueError(f"non-positive R_max={R_max}")
    if M < 32:
        raise ValueError(f"M={M} below minimum 32")
    if not ell > 0:
        raise ValueError(f"non-positive stretch length ell={ell}")
    t = (np.arange(1, M + 1) - 0.5) / M
    tf = np.arange(M + 1) / M
    if stretch == "uniform":
        r = t * R_max
        dr = np.full(M, R_max / M)
        rf = tf * R_max
    elif stretch == "algebraic":
        if N % 2 == 1:
            g = np.arcsinh(R_max / ell)
            r = ell * np.sinh(g * t)
            dr = ell * g * np.cosh(g * t) / M
            rf = ell * np.sinh(g * tf)
        else:
            g = np.arccosh(R_max / ell + 1.0)
            r = ell * (np.cosh(g * t) - 1.0)
            dr = ell * g * np.sinh(g * t) / M
            rf = ell * (np.cosh(g * tf) - 1.0)
        rf[-1] = R_max
    else:
        raise ValueError(f"unknown stretch {stretch!r}")
    w = dr * r ** (N - 1)
    return RadialGrid(r, w, rf, float(R_max), N, stretch, float(ell))


def integrate_radial(g: RadialGrid, f, full_space: bool = False) -> float:
    """Sum w_i f(r_i); with full_space the angular measure |S^{N-1}| is included."""
    f = np.asarray(f, dtype=float)
    if f.shape != g.nodes.shape:
        raise ValueError(f"length mismatch: {f.shape} vs grid {g.nodes.shape}")
    val = float(np.dot(g.weights, f))
    if full_space:
        val *= sphere_area(g.N)
    return val


@dataclass(frozen=True)
class BoxGrid:
    """Periodic box [-L, L)^N with m points per axis."""

    N: int
    L: float
    m: int
    budget: int = field(default=DEFAULT_BUDGET, compare=False)

    def __post_init__(self):
        if self.N not in (1, 2, 3):
            raise ValueError(f"invalid dimension N={self.N}")
        if not self.L > 0:
            raise ValueError(f"non-positive half-width L={self.L}")
        if self.m < 16 or (self.m & (self.m - 1)) != 0:
            raise ValueError(f"m={self.m} must be a power of two and at least 16")
        if self.m**self.N > self.budget:
            raise ValueError(f"point count {self.m}^{self.N} exceeds budget {self.budget}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.m

    @property
    def cell_volume(self) -> float:
        return self.h**self.N

    @property
    def shape(self) -> tuple:
        return (self.m,) * self.N

    @property
    def size(self) -> int:
        return self.m**self.N

    def describe(self) -> str:
        return f"box(N={self.N},L={self.L:.6g},m={self.m})"

    def axis(self) -> np.ndarray:
        return (np.arange(self.m) - self.m // 2) * self.h

    def coords(self) -> list:
        """Coordinate arrays X_1..X_N, each of shape (m,)*N."""
        x = self.axis()
        return np.meshgrid(*([x] * self.N), indexing="ij")

    def radius_sq(self) -> np.ndarray:
        x = self.axis()
        r2 = np.zeros(self.shape)
        for ax in range(self.N):
            sh = [1] * self.N
            sh[ax] = self.m
            r2 = r2 + (x**2).reshape(sh)
        return r2

    def scaled(self, lam: float) -> "BoxGrid":
        return BoxGrid(self.N, self.L * lam, self.m, self.budget)

    def refined(self) -> "BoxGrid":
        """Double both L and m (same spacing, bigger box)."""
        return BoxGrid(self.N, 2 * self.L, 2 * self.m, self.budget)

    def integrate(self, f) -> float:
        return float(np.sum(f) * self.cell_volume)

    def wavenumber_sq(self) -> np.ndarray:
        """|xi|^2 on the half spectrum used by rfftn (last axis halved)."""
        k = 2 * np.pi * np.fft.fftfreq(self.m, d=self.h)
        kr = 2 * np.pi * np.fft.rfftfreq(self.m, d=self.h)
        if self.N == 1:
            return kr**2
        shape = (self.m,) * (self.N - 1) + (kr.size,)
        k2 = np.zeros(shape)
        for ax in range(self.N):
            kk = kr if ax == self.N - 1 else k
            sh = [1] * self.N
            sh[ax] = kk.size
            k2 = k2 + (kk**2).reshape(sh)
        return k2

    def rfft_weights(self) -> np.ndarray:
        """Multiplicity of each half-spectrum coefficient in a Parseval sum."""
        nr = self.m // 2 + 1
        wt = np.full(nr, 2.0)
        wt[0] = 1.0
        wt[-1] = 1.0
        shape = [1] * (self.N - 1) + [nr]
        return wt.reshape(shape)


def make_box_grid(N: int, L: float, m: int, budget: int = DEFAULT_BUDGET) -> BoxGrid:
    return BoxGrid(N, float(L), int(m), int(budget))
