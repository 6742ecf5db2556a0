"""Fractional Laplacian in both geometries.

Box: periodic Fourier multiplier |xi|^{2s}.  Radial: finite-volume -Delta_l on a
RadialGrid (Dirichlet at R_max) raised to the power s by spectral calculus.
Also provides the free-space Riesz potential (-Delta)^{-s} for fields supported
in a box, which the kernel certification uses.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft as sfft
from numpy.polynomial.legendre import leggauss
from scipy.linalg import eigh_tridiagonal
from scipy.special import gamma, jv

from . import _accel
from .grids import BoxGrid, RadialGrid, sphere_area

# FFT worker threads; results do not depend on the count.
WORKERS = max(1, int(os.environ.get("FKIRCHHOFF_THREADS", "1") or 1))

KIND_CODES = {"frac_laplacian": 1, "sector_laplacian": 2, "base_A": 3, "L_plus": 4,
              "L_plus_sector": 5, "generic": 6}
MEANINGS = ("function", "frac_half_laplacian_of", "frac_laplacian_of")


@dataclass(frozen=True)
class SpectralField:
    """Samples on a grid together with what they represent."""

    values: np.ndarray
    grid_ref: str
    meaning: str = "function"

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite samples in field")
        if self.meaning not in MEANINGS:
            raise ValueError(f"unknown field meaning {self.meaning!r}")


def _vals(u) -> np.ndarray:
    return np.asarray(u.values if isinstance(u, SpectralField) else u, dtype=float)


def _check_s(s: float):
    if not 0.0 < s < 1.0:
        raise ValueError(f"order s={s} outside (0, 1)")


@dataclass(eq=False)
class DiscreteOperator:
    """Dense symmetric matrix acting on samples of a grid."""

    matrix: np.ndarray
    grid_ref: str
    kind: str
    s: float
    l: int = 0
    eigvals: Optional[np.ndarray] = field(default=None, repr=False)
    eigvecs: Optional[np.ndarray] = field(default=None, repr=False)

    def symmetry_gap(self) -> float:
        A = self.matrix
        return float(np.linalg.norm(A - A.T) / max(np.linalg.norm(A), 1e-300))

    def dump(self, path) -> None:
        """Write a 16-byte header (dimension, kind tag) and row-major float64 data."""
        A = np.ascontiguousarray(self.matrix, dtype="<f8")
        tag = KIND_CODES[self.kind] | (int(self.l) << 8)
        with open(path, "wb") as fh:
            fh.write(struct.pack("<qq", A.shape[0], tag))
            fh.write(A.tobytes(order="C"))


def load_matrix(path):
    """Read a matrix file written by DiscreteOperator.dump -> (matrix, kind, l)."""
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise ValueError(f"{path}: too short for a matrix header")
        n, tag = struct.unpack("<qq", head)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if n < 0 or data.size != n * n:
        raise ValueError(f"matrix file holds {data.size} values, header says {n}x{n}")
    code = tag & 0xFF
    kind = {v: k for k, v in KIND_CODES.items()}.get(code, "unknown")
    return data.reshape(n, n).copy(), kind, tag >> 8


# ---------------------------------------------------------------- box

def _symbol(g: BoxGrid, s: float) -> np.ndarray:
    return g.wavenumber_sq() ** s


def _rfft(g: BoxGrid, u):
    return sfft.rfftn(u, axes=tuple(range(g.N)), workers=WORKERS)


def _irfft(g: BoxGrid, uh):
    return sfft.irfftn(uh, s=g.shape, axes=tuple(range(g.N)), workers=WORKERS)


def apply_frac_laplacian_box(g: BoxGrid, s: float, u) -> np.ndarray:
    """(-Delta)^s u on the periodic box; the zero mode maps to zero."""
    _check_s(s)
    arr = _vals(u)
    if arr.shape != g.shape:
        raise ValueError(f"grid mismatch: field {arr.shape} vs {g.describe()}")
    out = _irfft(g, _symbol(g, s) * _rfft(g, arr))
    if isinstance(u, SpectralField):
        return SpectralField(out, u.grid_ref, "frac_laplacian_of")
    return out


def seminorm_sq_box(g: BoxGrid, s: float, u) -> float:
    u = _vals(u)
    if u.shape != g.shape:
        raise ValueError(f"grid mismatch: field {u.shape} vs {g.describe()}")
    uh = _rfft(g, u)
    tot = np.sum(g.rfft_weights() * _symbol(g, s) * np.abs(uh) ** 2)
    return float(tot * g.cell_volume / g.size)


def bilinear_box(g: BoxGrid, s: float, u, v) -> float:
    """Integral of (-Delta)^{s/2}u (-Delta)^{s/2}v computed in Fourier space."""
    uh = _rfft(g, _vals(u))
    vh = _rfft(g, _vals(v))
    tot = np.sum(g.rfft_weights() * _symbol(g, s) * np.real(uh * np.conj(vh)))
    return float(tot * g.cell_volume / g.size)


def frac_laplacian_box_matrix(g: BoxGrid, s: float) -> DiscreteOperator:
    """Dense periodic (-Delta)^s; only for small grids."""
    _check_s(s)
    n = g.size
    if n > 4096:
        raise ValueError(f"dense box operator limited to 4096 unknowns, got {n}")
    delta = np.zeros(g.shape)
    delta[(0,) * g.N] = 1.0
    col = apply_frac_laplacian_box(g, s, delta)
    idx = np.indices(g.shape).reshape(g.N, -1)
    diff = (idx[:, :, None] - idx[:, None, :]) % g.m
    A = col[tuple(diff)]
    return DiscreteOperator(0.5 * (A + A.T), g.describe(), "frac_laplacian", s)


# ---------------------------------------------------------------- radial

def sector_stiffness(g: RadialGrid, l: int):
    """Finite-volume pieces of -Delta_l in the weighted form.

    Returns (kap, k0, ex): couplings between neighbouring nodes, the flux
    coefficient to a zero ghost value at the origin, and the nonnegative
    diagonal excess (centrifugal term plus the Dirichlet face at R_max).  The
    quadratic form is sum kap (f_{i+1}-f_i)^2 + k0 f_1^2 + sum ex f_i^2.
    """
    if l < 0 or int(l) != l:
        raise ValueError(f"invalid angular index l={l}")
    N, r, w, rf = g.N, g.nodes, g.weights, g.faces
    kap = rf[1:-1] ** (N - 1) / (r[1:] - r[:-1])
    # Regularity at the origin: nothing crosses r=0 for N>=2; for N=1 the odd
    # sector sees the ghost value f(0)=0 at distance r_1.
    k0 = 1.0 / r[0] if (N == 1 and l % 2 == 1) else 0.0
    cent = l * (l + N - 2) if N >= 2 else 0
    ex = cent * w / r**2
    ex[-1] += g.R_max ** (N - 1) / (g.R_max - r[-1])
    return kap, k0, ex


def sector_tridiagonal(g: RadialGrid, l: int):
    """Diagonal and off-diagonal of W^{-1/2} S W^{-1/2}."""
    kap, k0, ex = sector_stiffness(g, l)
    w = g.weights
    d = ex.copy()
    d[:-1] += kap
    d[1:] += kap
    d[0] += k0
    return d / w, -kap / np.sqrt(w[:-1] * w[1:])


def apply_sector_stiffness(g: RadialGrid, l: int, v) -> np.ndarray:
    kap, k0, ex = sector_stiffness(g, l)
    Sv = ex * v
    Sv[0] += k0 * v[0]
    dv = np.diff(v)
    Sv[:-1] -= kap * dv
    Sv[1:] += kap * dv
    return Sv


def assemble_sector_laplacian(g: RadialGrid, N: int, l: int, s: float) -> DiscreteOperator:
    """(-Delta_l)^s by dense diagonalization, in symmetric weighted coordinates.

    The matrix acts on W^{1/2} f, so it is symmetric in the Euclidean sense
    and represents a self-adjoint operator for <f, g> = sum w f g.
    """
    if N != g.N:
        raise ValueError(f"dimension {N} does not match {g.describe()}")
    if not 0.0 < s <= 1.0:
        raise ValueError(f"order s={s} outside (0, 1]")
    d, o = sector_tridiagonal(g, l)
    try:
        ev, Q = eigh_tridiagonal(d, o)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise RuntimeError(f"diagonalization failed for l={l}: {exc}") from exc
    ev = np.maximum(ev, 0.0)
    A = (Q * ev**s) @ Q.T
    return DiscreteOperator(0.5 * (A + A.T), g.describe(), "sector_laplacian", s, l, ev, Q)


def sector_laplacian_direct(g: RadialGrid, l: int) -> np.ndarray:
    """The assembled -Delta_l (power one) as a dense symmetric matrix."""
    d, o = sector_tridiagonal(g, l)
    return np.diag(d) + np.diag(o, 1) + np.diag(o, -1)


def smooth_cutoff(g: RadialGrid) -> np.ndarray:
    """C-infinity window: 1 for r < R/8, 0 for r > R/2, smooth in log r between."""
    t = (np.log(g.R_max / 2) - np.log(g.nodes)) / np.log(4.0)
    t = np.clip(t, 0.0, 1.0)
    def bump(u):
        out = np.zeros_like(u)
        pos = u > 0
        out[pos] = np.exp(-1.0 / u[pos])
        return out
    a, b = bump(t), bump(1.0 - t)
    return a / (a + b)


def radial_frac_form(g: RadialGrid, s: float, u, v, l: int = 0, taper: bool = True,
                     hy: float = 0.25, backend=None) -> float:
    """<u, (-Delta_l)^s v> = sum w u ((-Delta_l)^s v) on the radial grid.

    Evaluated through the resolvent integral
        A^s = sin(pi s)/pi * int_0^inf t^{s-1} A (A + t)^{-1} dt
    with the trapezoid rule in log t.  Each node costs one tridiagonal solve
    with the subtraction-free elimination in _accel.shifted_solve, so fields
    whose spectral mass sits in the lowest Dirichlet modes (the algebraic
    bubble tails) are handled without the cancellation a dense
    eigendecomposition suffers.  With taper=True both fields are multiplied by
    smooth_cutoff first, so a nonzero tail never meets the Dirichlet wall.
    """
    _check_s(s)
    u = np.asarray(_vals(u), dtype=float)
    v = np.asarray(_vals(v), dtype=float)
    if u.shape != g.nodes.shape or v.shape != g.nodes.shape:
        raise ValueError("grid mismatch in radial_frac_form")
    if taper:
        chi = smooth_cutoff(g)
        u = u * chi
        v = v * chi
    kap, k0, ex = sector_stiffness(g, l)
    w = g.weights
    Sv = apply_sector_stiffness(g, l, v)
    lam_hi = float(np.max((np.r_[kap, 0.0] + np.r_[0.0, kap] + ex + k0) / w))
    lam_lo = 1e-3 / g.R_max**2
    y = np.arange(np.log(lam_lo) - 36.0 / s, np.log(lam_hi) + 36.0 / (1.0 - s), hy)
    t = np.exp(y)
    X = _accel.shifted_solve(kap, k0, ex, w, t, np.repeat(Sv[:, None], t.size, axis=1),
                             backend=backend)
    vals = (w * u) @ X
    return float(np.sum(t**s * vals) * hy * np.sin(np.pi * s) / np.pi)


def seminorm_sq_radial(g: RadialGrid, s: float, u, l: int = 0, taper: bool = True) -> float:
    """Full-space seminorm of the field u(r) Y with |Y|^2 averaging to one."""
    return sphere_area(g.N) * radial_frac_form(g, s, u, u, l=l, taper=taper)


def seminorm_sq(g, s: float, u) -> float:
    """Integral of |(-Delta)^{s/2} u|^2 on a box or (radial field) on a radial grid."""
    if isinstance(g, BoxGrid):
        return seminorm_sq_box(g, s, u)
    if isinstance(g, RadialGrid):
        return seminorm_sq_radial(g, s, u)
    raise TypeError(f"unsupported grid {type(g).__name__}")


def apply_frac_laplacian(g, s: float, u, l: int = 0):
    if isinstance(g, BoxGrid):
        return apply_frac_laplacian_box(g, s, u)
    op = assemble_sector_laplacian(g, g.N, l, s)
    sw = np.sqrt(g.weights)
    return (op.matrix @ (sw * _vals(u))) / sw


# ------------------------------------------------------- free space Riesz potential

def riesz_constant(N: int, s: float) -> float:
    """c' in (-Delta)^{-s} f = c' * int |x-y|^{2s-N} f(y) dy (requires N > 2s)."""
    return gamma(N / 2 - s) / (4**s * np.pi ** (N / 2) * gamma(s))


def _omega(N: int, t: np.ndarray) -> np.ndarray:
    """Spherical average of exp(i k.x) at |k||x| = t."""
    if N == 1:
        return np.cos(t)
    if N == 3:
        return np.sinc(t / np.pi)
    out = jv(0, t)
    return out


def riesz_cutoff_profile(N: int, s: float, z: np.ndarray, panel: float = 0.5,
                         order: int = 20) -> np.ndarray:
    """Phi(z) = c'|S^{N-1}| int_0^z t^{2s-1} Omega_N(t) dt, with Phi(inf) = 1.

    The Fourier transform of the kernel truncated at radius R is
    |xi|^{-2s} Phi(|xi| R).  Gauss-Legendre panels run over the sorted
    distinct z values; the first panel uses t = u^{1/(2s)} to remove the
    endpoint singularity.
    """
    z = np.asarray(z, dtype=float)
    flat = z.ravel()
    zs, inv = np.unique(flat, return_inverse=True)
    pref = riesz_constant(N, s) * sphere_area(N)
    zmax = zs[-1] if zs.size else 0.0
    bp = np.unique(np.concatenate([[0.0], zs, np.arange(0.0, zmax + panel, panel)]))
    bp = bp[bp <= zmax] if zmax > 0 else np.array([0.0])
    if bp.size < 2:
        return np.zeros_like(z)
    x, wg = leggauss(order)
    a, b = bp[:-1], bp[1:]
    half = 0.5 * (b - a)
    T = 0.5 * (a + b)[:, None] + half[:, None] * x[None, :]
    vals = (T ** (2 * s - 1) * _omega(N, T)) @ wg * half
    ub = b[0] ** (2 * s)
    U = 0.5 * ub * (x + 1.0)
    vals[0] = np.dot(wg, _omega(N, U ** (1.0 / (2 * s)))) * 0.5 * ub / (2 * s)
    cum = np.concatenate([[0.0], np.cumsum(vals)])
    pos = np.searchsorted(bp, zs)
    return (pref * cum[pos])[inv].reshape(z.shape)


class RieszPotential:
    """Free-space (-Delta)^{-s} for fields supported in a BoxGrid.

    Uses the truncated-kernel method: the kernel is cut at R = 2 sqrt(N) L
    (the box diameter), whose Fourier transform is smooth, and the convolution
    runs on a zero-padded grid large enough to avoid wrap-around.  The result
    is spectrally accurate for smooth data; no periodic images enter.
    """

    def __init__(self, g: BoxGrid, s: float):
        _check_s(s)
        if not g.N > 2 * s:
            raise ValueError("Riesz potential needs N > 2s")
        self.g, self.s = g, s
        P = 2 if g.N == 1 else 3
        self.M = P * g.m
        R = 2.0 * np.sqrt(g.N) * g.L
        h = g.h
        k = 2 * np.pi * np.fft.fftfreq(self.M, d=h)
        kr = 2 * np.pi * np.fft.rfftfreq(self.M, d=h)
        if g.N == 1:
            K = np.abs(kr)
        else:
            grids = np.meshgrid(*([k] * (g.N - 1) + [kr]), indexing="ij")
            K = np.sqrt(sum(q**2 for q in grids))
        phi = riesz_cutoff_profile(g.N, s, K * R)
        ghat = np.empty_like(K)
        nz = K > 0
        ghat[nz] = K[nz] ** (-2 * s) * phi[nz]
        ghat[~nz] = riesz_constant(g.N, s) * sphere_area(g.N) * R ** (2 * s) / (2 * s)
        self.ghat = ghat
        self._axes = tuple(range(g.N))

    def apply(self, f: np.ndarray) -> np.ndarray:
        g = self.g
        f = np.asarray(f, dtype=float).reshape(g.shape)
        sl = tuple(slice(0, g.m) for _ in range(g.N))
        F = np.zeros((self.M,) * g.N)
        F[sl] = f
        out = sfft.irfftn(self.ghat * sfft.rfftn(F, axes=self._axes, workers=WORKERS),
                          s=(self.M,) * g.N, axes=self._axes, workers=WORKERS)
        return out[sl]
