"""The linearized operator L+ around U and the certification of its kernel.

    L+ phi = c (-Delta)^s phi - p U^{p-1} phi + 2b <(-Delta)^s U, phi> (-Delta)^s U,

with c = a + b ||(-Delta)^{s/2} U||^2 and p = 2*_s - 1.  Two realizations are
provided: the periodic box (LinearizedOperator, cheap to apply and dense for
small grids) and a free-space pencil (KernelPencil) used to certify the kernel,
because the slowly decaying kernel fields do not fit in a periodic box.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft as sfft
from scipy.linalg import eigh
from scipy.sparse.linalg import LinearOperator, eigsh
from scipy.special import sph_harm_y

from .bubble import BubbleProfile, bubble_gradient, bubble_radial_derivative, bubble_samples, dilation_mode
from .grids import BoxGrid, RadialGrid
from .scaling import ProblemParams, ScalingCertificate
from .spectral import (DiscreteOperator, RieszPotential, SpectralField, apply_frac_laplacian_box,
                       bilinear_box, frac_laplacian_box_matrix, radial_frac_form, seminorm_sq_box,
                       smooth_cutoff)

DENSE_LIMIT = 4096


def _vals(u):
    return np.asarray(u.values if isinstance(u, SpectralField) else u, dtype=float)


@dataclass(eq=False)
class LinearizedOperator:
    """L+ on a periodic box, acting on samples; symmetric in the Euclidean product."""

    g: BoxGrid
    params: ProblemParams
    U: np.ndarray
    c: float
    V: np.ndarray
    w: np.ndarray
    rank_one: bool = True

    @property
    def b_coeff(self) -> float:
        return self.params.b

    def apply_A(self, phi) -> np.ndarray:
        phi = _vals(phi).reshape(self.g.shape)
        return self.c * apply_frac_laplacian_box(self.g, self.params.s, phi) - self.V * phi

    def coupling(self, phi) -> float:
        """sigma = int (-Delta)^{s/2} U (-Delta)^{s/2} phi = int w phi."""
        return self.g.integrate(self.w * _vals(phi).reshape(self.g.shape))

    def apply(self, phi) -> np.ndarray:
        out = self.apply_A(phi)
        if self.rank_one:
            out = out + 2.0 * self.params.b * self.coupling(phi) * self.w
        return out

    def to_dense(self):
        """(base_A, L_plus) as DiscreteOperators; small grids only."""
        if self.g.size > DENSE_LIMIT:
            raise ValueError(f"dense assembly limited to {DENSE_LIMIT} unknowns, grid has {self.g.size}")
        F = frac_laplacian_box_matrix(self.g, self.params.s).matrix
        A = self.c * F - np.diag(self.V.ravel())
        wv = self.w.ravel()
        L = A + (2.0 * self.params.b * self.g.cell_volume if self.rank_one else 0.0) * np.outer(wv, wv)
        ref = self.g.describe()
        return (DiscreteOperator(0.5 * (A + A.T), ref, "base_A", self.params.s),
                DiscreteOperator(0.5 * (L + L.T), ref, "L_plus", self.params.s))


def assemble_L_plus(p: ProblemParams, U, g: BoxGrid, c: Optional[float] = None,
                    potential_exponent: Optional[float] = None,
                    rank_one: bool = True) -> LinearizedOperator:
    """Build L+ on the periodic box.  c defaults to a + b seminorm_sq(U).

    potential_exponent replaces 2*_s - 2 in the potential (negative controls only).
    """
    u = _vals(U)
    if u.shape != g.shape:
        raise ValueError(f"grid mismatch: field {u.shape} vs {g.describe()}")
    if np.any(u <= 0):
        raise ValueError("U must be positive pointwise")
    ex = p.exponents
    q = ex.p_lin if potential_exponent is None else float(potential_exponent)
    if c is None:
        c = p.a + p.b * seminorm_sq_box(g, p.s, u)
    w = apply_frac_laplacian_box(g, p.s, u)
    return LinearizedOperator(g, p, u, float(c), ex.p * u**q, w, rank_one)


@dataclass
class KernelCandidates:
    translations: list
    dilation: np.ndarray

    def all(self) -> list:
        return list(self.translations) + [self.dilation]


def kernel_candidates(Q: BubbleProfile, coords, scale: float) -> KernelCandidates:
    """Analytic d_i U and e0 = (N-2s)/2 U + x.grad U for U(x) = Q(x/scale)."""
    return KernelCandidates(bubble_gradient(Q, coords, scale), dilation_mode(Q, coords, scale))


def box_kernel_residuals(Lp: LinearizedOperator, cands: KernelCandidates) -> list:
    """||L+ phi|| / (c ||(-Delta)^s phi|| + ||V phi||) for each candidate."""
    out = []
    for phi in cands.all():
        num = np.linalg.norm(Lp.apply(phi))
        den = Lp.c * np.linalg.norm(apply_frac_laplacian_box(Lp.g, Lp.params.s, phi)) + np.linalg.norm(Lp.V * phi)
        out.append(float(num / den))
    return out


class KernelPencil:
    """Free-space certification of ker L+ through a symmetric compact operator.

    On R^N, L+ phi = 0 is equivalent to V phi = B phi with
    B = c(-Delta)^s + 2b r r^T, r = U^p / c = (-Delta)^s U (the profile
    equation E0 (-Delta)^s U = U^p and c = E0).  With psi = V^{1/2} phi this
    reads K psi = psi for

        K = V^{1/2} B^{-1} V^{1/2},
        B^{-1} = G/c - 2b/(c^2 (1 + 2t)) U U^T,   t = (c - a)/c,

    where G = (-Delta)^{-s} and the rank-one update is the Sherman-Morrison
    formula using G r = U.  K is positive semidefinite with eigenvalues kappa
    <= 1 up to discretization, and eigenvalue lambda = 1 - kappa of the pencil
    vanishes exactly on the kernel.  U itself gives kappa = p/(1 + 2t), a
    closed-form value used as a check of the rank-one part.
    G is applied with the truncated-kernel Riesz potential, so no periodic
    images enter; V decays like |x|^{-2s}, which makes K compact.
    """

    def __init__(self, p: ProblemParams, Q: BubbleProfile, cert: ScalingCertificate, g_q: BoxGrid,
                 c: Optional[float] = None, potential_exponent: Optional[float] = None,
                 rank_one: bool = True):
        self.params, self.Q = p, Q
        ex = p.exponents
        self.lam = cert.length_scale(p.s)
        self.g = g_q.scaled(self.lam)
        self.c = cert.E0 if c is None else float(c)
        coords = self.g.coords()
        self.U = bubble_samples(Q, coords, self.lam)
        q = ex.p_lin if potential_exponent is None else float(potential_exponent)
        self.V = ex.p * self.U**q
        self.sv = np.sqrt(self.V).ravel()
        self.wU = self.sv * self.U.ravel()
        t = (self.c - p.a) / self.c
        self.t = t
        self.coef = 2.0 * p.b / (self.c**2 * (1.0 + 2.0 * t)) if rank_one else 0.0
        self.riesz = RieszPotential(self.g, p.s)
        self.candidates = kernel_candidates(Q, coords, self.lam)
        self.n = self.g.size

    @property
    def predicted_U_eigenvalue(self) -> float:
        """1 - p/(1 + 2t): pencil eigenvalue of the U direction for the exact operator."""
        return 1.0 - self.params.exponents.p / (1.0 + 2.0 * self.t)

    def apply(self, psi) -> np.ndarray:
        psi = np.asarray(psi, dtype=float).ravel()
        out = self.sv * self.riesz.apply((self.sv * psi).reshape(self.g.shape)).ravel() / self.c
        if self.coef:
            out -= self.coef * self.g.cell_volume * float(self.wU @ psi) * self.wU
        return out

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator((self.n, self.n), matvec=self.apply, dtype=float)

    def candidate_basis(self) -> np.ndarray:
        return np.column_stack([self.sv * c.ravel() for c in self.candidates.all()])

    def residuals(self) -> list:
        """||psi - K psi|| / ||psi|| for psi = V^{1/2} times each analytic candidate."""
        out = []
        for col in self.candidate_basis().T:
            out.append(float(np.linalg.norm(col - self.apply(col)) / np.linalg.norm(col)))
        return out


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    kernel_dim: int
    expected_dim: Optional[int]
    correlation: float
    scale: float
    tol: float
    next_abs: float
    gap_ok: bool
    method: str
    negative_count: int
    extra: dict = field(default_factory=dict)
    vectors: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def inconclusive(self) -> bool:
        return not self.gap_ok

    @property
    def kernel_ok(self) -> bool:
        return self.expected_dim is None or self.kernel_dim == self.expected_dim

    def to_lines(self) -> list:
        lines = [f"method: {self.method}",
                 f"eigenvalues: {' '.join(_fmt(v) for v in self.eigenvalues)}",
                 f"kernel_dim: {self.kernel_dim}"]
        if self.expected_dim is not None:
            lines.append(f"expected_dim: {self.expected_dim}")
        lines += [f"correlation: {_fmt(self.correlation)}",
                  f"spectral_scale: {_fmt(self.scale)}",
                  f"kernel_threshold: {_fmt(self.tol)}",
                  f"next_abs_eigenvalue: {_fmt(self.next_abs)}",
                  f"gap_ok: {str(self.gap_ok).lower()}",
                  f"negative_count: {self.negative_count}"]
        for k in sorted(self.extra):
            v = self.extra[k]
            if isinstance(v, (list, tuple, np.ndarray)):
                v = " ".join(_fmt(x) for x in v)
            elif isinstance(v, (bool, np.bool_, float, np.floating)):
                v = _fmt(v)
            lines.append(f"{k}: {v}")
        return lines


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.10g}"


def canonical_correlation(A: np.ndarray, B: np.ndarray) -> float:
    """Smallest cosine of the principal angles between span(A) and span(B)
    (over the smaller of the two dimensions); 0 if either is empty."""
    if A.size == 0 or B.size == 0 or A.shape[1] == 0 or B.shape[1] == 0:
        return 0.0
    qa, _ = np.linalg.qr(A)
    qb, _ = np.linalg.qr(B)
    sv = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return float(np.clip(sv.min(), 0.0, 1.0))


def _classify(lams: np.ndarray, tol_gap: float, scale: float):
    thr = tol_gap * scale
    order = np.argsort(np.abs(lams))
    in_ker = np.abs(lams) < thr
    kdim = int(np.count_nonzero(in_ker))
    rest = np.abs(lams[~in_ker])
    nxt = float(rest.min()) if rest.size else float("nan")
    gap_ok = bool(rest.size) and nxt >= 10.0 * thr
    return order, in_ker, kdim, thr, nxt, gap_ok


def near_kernel(op, tol_gap: float = 1e-3, k: Optional[int] = None, candidates=None,
                expected_dim: Optional[int] = None, seed: int = 0,
                perron_tol: float = 1e-2) -> SpectrumReport:
    """Near-zero spectrum of L+ (or of any symmetric matrix) with a gap test.

    Eigenvalues with |lambda| < tol_gap * scale form the kernel cluster, where
    scale = max(|lambda_min|, lambda_max).  The smallest remaining |lambda|
    must exceed the threshold by a factor 10; otherwise gap_ok is false and the
    result is inconclusive rather than a pass.

    op may be a KernelPencil (iterative solve, lambda = 1 - kappa), a
    LinearizedOperator on a small box, a DiscreteOperator or a plain array.
    """
    if isinstance(op, KernelPencil):
        return _pencil_kernel(op, tol_gap, k, seed, perron_tol)
    cand_cols = None
    default_k = 10
    if isinstance(op, LinearizedOperator):
        N = op.g.N
        default_k = 2 * N + 4
        _, Lop = op.to_dense()
        A = Lop.matrix
        expected_dim = N + 1 if expected_dim is None else expected_dim
        if candidates is not None:
            cand_cols = np.column_stack([np.ravel(c) for c in candidates.all()])
    else:
        A = np.asarray(op.matrix if isinstance(op, DiscreteOperator) else op, dtype=float)
        if candidates is not None:
            cand_cols = np.asarray(candidates, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("near_kernel needs a square matrix")
    if np.linalg.norm(A - A.T) > 1e-10 * max(np.linalg.norm(A), 1e-300):
        raise ValueError("matrix is not symmetric")
    ev, vec = eigh(0.5 * (A + A.T))
    scale = max(abs(ev[0]), abs(ev[-1]))
    n_keep = min(ev.size, k if k is not None else default_k)
    order, in_ker, kdim, thr, nxt, gap_ok = _classify(ev, tol_gap, scale)
    keep = order[:n_keep]
    kvec = vec[:, in_ker]
    corr = canonical_correlation(kvec, cand_cols) if cand_cols is not None else float("nan")
    return SpectrumReport(ev[keep], kdim, expected_dim, corr, float(scale), thr, nxt, gap_ok,
                          "dense", int(np.count_nonzero(ev < -thr)), {}, kvec)


def _pencil_kernel(P: KernelPencil, tol_gap, k, seed, perron_tol) -> SpectrumReport:
    N = P.params.N
    k = 2 * N + 5 if k is None else k
    v0 = np.random.default_rng(seed).standard_normal(P.n)
    try:
        kap, vec = eigsh(P.as_linear_operator(), k=k, which="LA", tol=1e-10, v0=v0)
    except Exception as exc:  # ArpackNoConvergence and friends
        raise RuntimeError(f"eigensolver did not converge: {exc}") from exc
    o = np.argsort(-kap)
    kap, vec = kap[o], vec[:, o]
    lams = 1.0 - kap
    # K is positive semidefinite, so every pencil eigenvalue is <= 1.
    scale = max(abs(float(lams.min())), 1.0)
    order, in_ker, kdim, thr, nxt, gap_ok = _classify(lams, tol_gap, scale)
    kvec = vec[:, in_ker]
    corr = canonical_correlation(kvec, P.candidate_basis())
    pred = P.predicted_U_eigenvalue
    low = float(lams.min())
    perron_gap = abs(low - pred) / abs(pred)
    extra = {"lambda_U_computed": low, "lambda_U_predicted": pred,
             "perron_gap": perron_gap, "perron_ok": bool(perron_gap < perron_tol),
             "candidate_residuals": P.residuals(), "grid": P.g.describe(),
             "c": P.c}
    return SpectrumReport(lams, kdim, N + 1, corr, scale, thr, nxt, gap_ok, "pencil",
                          int(np.count_nonzero(lams < -thr)), extra, kvec)


# ------------------------------------------------------------ identities

def random_bandlimited(g: BoxGrid, rng, frac: float = 0.25) -> np.ndarray:
    """Real field with random Fourier coefficients on |k| < frac * k_max."""
    k2 = g.wavenumber_sq()
    kmax = np.pi / g.h
    mask = k2 < (frac * kmax) ** 2
    coef = (rng.standard_normal(k2.shape) + 1j * rng.standard_normal(k2.shape)) * mask
    return sfft.irfftn(coef, s=g.shape, axes=tuple(range(g.N)))


@dataclass
class IdentityReport:
    self_adjoint_gap: float
    pohozaev_gap_radial: float
    pohozaev_gap_box: float
    multiplier: float
    multiplier_margin: float
    e0_orthogonality: float

    def to_lines(self) -> list:
        return [f"{k}: {_fmt(v)}" for k, v in self.__dict__.items()]


def pohozaev_sides_radial(p: ProblemParams, Q: BubbleProfile, cert: ScalingCertificate, gr: RadialGrid):
    """(int psi (-Delta)^s U, (2s-N)/2 ||U||^2) on a radial grid in U units.

    U is multiplied by the smooth cutoff before (-Delta)^s acts, so the
    Dirichlet wall never meets the algebraic tail; psi = x.grad U is exact.
    """
    lam = cert.length_scale(p.s)
    r = gr.nodes
    zeros = [np.zeros_like(r)] * (p.N - 1)
    U = bubble_samples(Q, [r] + zeros, lam) * smooth_cutoff(gr)
    psi = bubble_radial_derivative(Q, [r] + zeros, lam)
    lhs = radial_frac_form(gr, p.s, psi, U, taper=False)
    semi = radial_frac_form(gr, p.s, U, U, taper=False)
    return lhs, (2 * p.s - p.N) / 2 * semi, semi


def pohozaev_gap_box(g: BoxGrid, s: float, u, psi) -> float:
    lhs = g.integrate(_vals(psi) * apply_frac_laplacian_box(g, s, _vals(u)))
    rhs = (2 * s - g.N) / 2 * seminorm_sq_box(g, s, _vals(u))
    return abs(lhs - rhs) / abs(rhs)


def verify_kernel_identities(p: ProblemParams, Q: BubbleProfile, cert: ScalingCertificate,
                             g: BoxGrid, gr: RadialGrid, U=None, c: Optional[float] = None,
                             seed: int = 0, n_random: int = 10) -> IdentityReport:
    """Self-adjointness, Pohozaev, the sigma multiplier and e0 orthogonality.

    g is the box and gr the radial grid, both in U units.
    """
    lam = cert.length_scale(p.s)
    u = bubble_samples(Q, g.coords(), lam) if U is None else _vals(U)
    rng = np.random.default_rng(seed)
    LU = apply_frac_laplacian_box(g, p.s, u)
    semi_u = seminorm_sq_box(g, p.s, u)
    sa = 0.0
    for _ in range(n_random):
        v = random_bandlimited(g, rng)
        a1 = g.integrate(v * LU)
        a2 = bilinear_box(g, p.s, u, v)
        sa = max(sa, abs(a1 - a2) / np.sqrt(semi_u * seminorm_sq_box(g, p.s, v)))
    psi_box = bubble_radial_derivative(Q, g.coords(), lam)
    poh_box = pohozaev_gap_box(g, p.s, u, psi_box)
    lhs, rhs, semi_r = pohozaev_sides_radial(p, Q, cert, gr)
    poh_r = abs(lhs - rhs) / abs(rhs)
    c = p.a + p.b * semi_u if c is None else c
    mult = -(c - p.a) * (2 * p.s - p.N) / (2 * p.s * c)
    # <e0, (-Delta)^s U> with e0 = alpha U + psi; it vanishes by the Pohozaev identity
    alpha = p.exponents.alpha
    e0_form = alpha * semi_r + lhs
    e0_norm = abs(alpha) * semi_r + abs(lhs)
    return IdentityReport(float(sa), float(poh_r), float(poh_box), float(mult), float(1 - mult),
                          float(abs(e0_form) / e0_norm))


# ------------------------------------------------------------ rank-one confinement

def angular_harmonics(N: int, l: int, coords) -> list:
    """Real angular functions of degree l evaluated at the box points.

    N=1: l=0 even, l=1 odd (sign x).  N=2: cos(l th), sin(l th).  N=3: real
    spherical harmonics for |m| <= l.
    """
    if N == 1:
        if l not in (0, 1):
            raise ValueError("N=1 has only the even (l=0) and odd (l=1) sectors")
        return [np.ones_like(coords[0])] if l == 0 else [np.sign(coords[0])]
    if N == 2:
        th = np.arctan2(coords[1], coords[0])
        return [np.ones_like(th)] if l == 0 else [np.cos(l * th), np.sin(l * th)]
    x, y, z = coords
    r = np.sqrt(x * x + y * y + z * z)
    pol = np.arccos(np.divide(z, r, out=np.zeros_like(z), where=r > 0))
    az = np.arctan2(y, x)
    out = []
    for m in range(-l, l + 1):
        Y = sph_harm_y(l, abs(m), pol, az)
        out.append(np.real(Y) if m >= 0 else np.imag(Y))
    return out


def rank_one_confinement(g: BoxGrid, s: float, U, l: int, n_profiles: int = 5, seed: int = 0) -> float:
    """max |int (-Delta)^{s/2}U (-Delta)^{s/2}(f Y_lm)| / (||U||_s ||f Y||_s).

    Radial profiles f are random localized polynomials times Gaussians; the
    integral is evaluated spectrally on the box.  For radial U and l >= 1 it
    vanishes by angular orthogonality, which the lattice reproduces exactly
    because it inherits the reflection and permutation symmetries used.
    """
    u = _vals(U)
    rng = np.random.default_rng(seed)
    coords = g.coords()
    r = np.sqrt(g.radius_sq())
    semi_u = seminorm_sq_box(g, s, u)
    Ys = angular_harmonics(g.N, l, coords)
    worst = 0.0
    for _ in range(n_profiles):
        sig = g.L * rng.uniform(0.05, 0.15)
        c = rng.standard_normal(3)
        f = r**l * (c[0] + c[1] * r / sig + c[2] * (r / sig) ** 2) * np.exp(-((r / sig) ** 2))
        for Y in Ys:
            phi = f * Y
            sp = seminorm_sq_box(g, s, phi)
            if sp == 0:
                continue
            worst = max(worst, abs(bilinear_box(g, s, u, phi)) / np.sqrt(semi_u * sp))
    return float(worst)
