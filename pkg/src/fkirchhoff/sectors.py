"""Spherical-harmonic sectors of L+ and the reconciliation with the full grid.

On H_l = {f(r) Y_lm} the operator acts on the radial factor as

    L_l f = c (-Delta_l)^s f - p U^{p-1} f + [l = 0] 2b |S^{N-1}| <g, f> g,

with g = (-Delta_0)^s U = U^p / c.  The spectrum near zero is computed from
the sector pencil K_l = V^{1/2} B_l^{-1} V^{1/2}, B_l = c(-Delta_l)^s + rank one,
so that the reported eigenvalues lambda = 1 - kappa are directly comparable
with the full-grid pencil.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import eigh

from .bubble import BubbleProfile, bubble_gradient, bubble_samples, dilation_mode
from .grids import RadialGrid, sphere_area
from .scaling import ProblemParams
from .spectral import DiscreteOperator, assemble_sector_laplacian


def multiplicity(N: int, l: int) -> int:
    """Number of independent angular functions of degree l (parity classes for N=1)."""
    if l < 0:
        raise ValueError(f"invalid angular index l={l}")
    if N == 1:
        if l > 1:
            raise ValueError("N=1 has only the sectors l=0 (even) and l=1 (odd)")
        return 1
    if l == 0:
        return 1
    if N == 2:
        return 2
    return 2 * l + 1


@dataclass(eq=False)
class SectorOperator:
    l: int
    matrix: DiscreteOperator
    pencil: np.ndarray
    includes_rank_one: bool
    grid: RadialGrid
    c: float
    t: float
    p_exp: float
    candidate: Optional[np.ndarray] = None
    candidate_name: str = ""


def assemble_sector(p: ProblemParams, Q: BubbleProfile, scale: float, l: int, g: RadialGrid,
                    c: float, potential_exponent: Optional[float] = None,
                    rank_one: bool = True) -> SectorOperator:
    """Assemble L_{+,l} on g (a grid in U units) for U(r) = Q(r/scale).

    The l = 0 rank-one term uses (-Delta_0)^s U = U^p/c, the profile equation,
    rather than the discrete (-Delta_0)^s applied to U: the latter carries a
    boundary layer at the Dirichlet wall that the inverse in the pencil
    amplifies.  Both the direct symmetric matrix (in coordinates W^{1/2} f) and
    the pencil matrix are stored.
    """
    N = p.N
    if g.N != N:
        raise ValueError("grid dimension mismatch")
    if N == 1 and l > 1:
        raise ValueError("N=1 has only the sectors l=0 and l=1")
    ex = p.exponents
    r = g.nodes
    coords = [r] + [np.zeros_like(r)] * (N - 1)
    U = bubble_samples(Q, coords, scale)
    if np.any(U <= 0):
        raise ValueError("U must be positive")
    q = ex.p_lin if potential_exponent is None else float(potential_exponent)
    V = ex.p * U**q
    lap = assemble_sector_laplacian(g, N, l, p.s)
    ev, Qm = lap.eigvals, lap.eigvecs
    if np.any(ev <= 0):
        raise RuntimeError(f"sector Laplacian l={l} has a non-positive eigenvalue")
    sw, sv = np.sqrt(g.weights), np.sqrt(V)
    Lmat = c * lap.matrix - np.diag(V)
    Binv = (Qm * ev ** (-p.s)) @ Qm.T / c
    with_r1 = rank_one and l == 0 and p.b > 0
    if with_r1:
        beta = 2.0 * p.b * sphere_area(N)
        gw = sw * U**ex.p / c
        Lmat = Lmat + beta * np.outer(gw, gw)
        Bg = Binv @ gw
        Binv = Binv - beta * np.outer(Bg, Bg) / (1.0 + beta * gw @ Bg)
    K = sv[:, None] * Binv * sv[None, :]
    cand, name = None, ""
    if l == 1:
        cand, name = -bubble_gradient(Q, coords, scale)[0], "-U'"
    elif l == 0:
        cand, name = dilation_mode(Q, coords, scale), "e0"
    kind_op = DiscreteOperator(0.5 * (Lmat + Lmat.T), g.describe(), "L_plus_sector", p.s, l)
    return SectorOperator(l, kind_op, 0.5 * (K + K.T), with_r1, g, c, (c - p.a) / c, ex.p,
                          None if cand is None else sw * sv * cand, name)


@dataclass
class SectorSpectrum:
    l: int
    eigenvalues: np.ndarray
    sign_definite: bool
    sign_measure: float
    correlation: float
    candidate_name: str
    simple_gap: float
    extra: dict = field(default_factory=dict)
    vectors: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def lowest(self) -> float:
        return float(self.eigenvalues[0])


def sector_spectrum(op: SectorOperator, k: int = 4) -> SectorSpectrum:
    """Lowest k pencil eigenvalues lambda = 1 - kappa and the Perron diagnostics.

    The sign measure of the lowest eigenfunction is min*max/sup^2 (zero or
    positive means no sign change).  The correlation is |cos| between the
    sector's analytic candidate (-U' for l=1, e0 for l=0) and the eigenvector
    whose eigenvalue is closest to zero.
    """
    M = op.pencil.shape[0]
    k = min(k, M)
    kap, vec = eigh(op.pencil, subset_by_index=[M - k, M - 1])
    kap, vec = kap[::-1], vec[:, ::-1]
    lams = 1.0 - kap
    top = vec[:, 0]
    sup = np.max(np.abs(top))
    measure = float(top.min() * top.max() / sup**2)
    corr = float("nan")
    if op.candidate is not None:
        j = int(np.argmin(np.abs(lams)))
        cnd = op.candidate / np.linalg.norm(op.candidate)
        corr = float(abs(vec[:, j] @ cnd))
    gap = float(lams[1] - lams[0]) if k > 1 else float("nan")
    extra = {}
    if op.l == 0:
        extra["lambda_U_predicted"] = 1.0 - op.p_exp / (1.0 + 2.0 * op.t)
    return SectorSpectrum(op.l, lams, measure >= -1e-6, measure, corr, op.candidate_name, gap, extra, vec)


@dataclass
class ReconcileReport:
    N: int
    full_dim: int
    sector_counts: dict
    total: int
    checks: dict
    messages: list

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def to_lines(self) -> list:
        lines = [f"full_kernel_dim: {self.full_dim}",
                 "sector_zero_counts: " + " ".join(f"l{l}={n}" for l, n in sorted(self.sector_counts.items())),
                 f"sector_total: {self.total}",
                 f"expected: {self.N + 1}"]
        lines += [f"check_{k}: {'pass' if v else 'FAIL'}" for k, v in self.checks.items()]
        lines += [f"note: {m}" for m in self.messages]
        lines.append(f"status: {'consistent' if self.ok else 'MISMATCH'}")
        return lines


def reconcile_sectors(full, sectors: list, N: int, tol_gap: float = 1e-3,
                      perron_tol: float = 1e-2, correlation_min: float = 0.99) -> ReconcileReport:
    """Compare the sector near-zero eigenvalues, counted with dim Y_l, with the full kernel.

    A sector eigenvalue is a zero when |lambda| < tol_gap * scale, with scale
    the full-grid spectral scale (or max(|lambda_min|, 1) from the sectors).
    Checks: sector total equals the full kernel dimension and N+1; l=1 has a
    zero matching -U'; sectors l >= 2 are positive; lowest eigenfunctions are
    sign-definite; the l=0 direction of U matches its closed-form pencil
    eigenvalue (this is what detects a missing rank-one term).
    """
    scale = getattr(full, "scale", None)
    if scale is None:
        scale = max(1.0, max(abs(s.lowest) for s in sectors))
    thr = tol_gap * scale
    counts, msgs, checks = {}, [], {}
    total = 0
    for sp in sectors:
        n0 = int(np.count_nonzero(np.abs(sp.eigenvalues) < thr))
        counts[sp.l] = n0
        total += n0 * multiplicity(N, sp.l)
    full_dim = int(full.kernel_dim) if full is not None else -1
    if full is not None:
        checks["sector_total_matches_full"] = total == full_dim
        if total != full_dim:
            msgs.append(f"sector total {total} != full kernel dim {full_dim}; full eigenvalues: "
                        + " ".join(f"{v:.6g}" for v in full.eigenvalues))
        checks["full_kernel_dim"] = full_dim == N + 1
        if full_dim != N + 1:
            msgs.append(f"full kernel dim {full_dim}, expected {N + 1}")
        if "perron_ok" in full.extra:
            checks["full_U_direction"] = bool(full.extra["perron_ok"])
            if not full.extra["perron_ok"]:
                msgs.append(f"full-grid U direction {full.extra['lambda_U_computed']:.6g} vs "
                            f"predicted {full.extra['lambda_U_predicted']:.6g}")
    checks["sector_total_is_N_plus_1"] = total == N + 1
    by_l = {sp.l: sp for sp in sectors}
    for sp in sectors:
        msgs.append(f"l={sp.l} eigenvalues: " + " ".join(f"{v:.6g}" for v in sp.eigenvalues))
    if 1 in by_l:
        s1 = by_l[1]
        ok = abs(s1.lowest) < thr and s1.correlation > correlation_min
        checks["l1_zero_mode"] = bool(ok)
        if not ok:
            msgs.append(f"l=1 lowest {s1.lowest:.6g} (threshold {thr:.3g}), correlation with -U' {s1.correlation:.6f}")
    for sp in sectors:
        if sp.l >= 2:
            ok = sp.lowest > thr
            checks[f"l{sp.l}_positive"] = bool(ok)
            if not ok:
                msgs.append(f"l={sp.l} lowest {sp.lowest:.6g} not positive beyond {thr:.3g}")
    checks["sign_definite"] = all(sp.sign_definite for sp in sectors)
    if not checks["sign_definite"]:
        bad = [f"l={sp.l}:{sp.sign_measure:.3g}" for sp in sectors if not sp.sign_definite]
        msgs.append("sign change in lowest eigenfunction " + " ".join(bad))
    if 0 in by_l and "lambda_U_predicted" in by_l[0].extra:
        pred = by_l[0].extra["lambda_U_predicted"]
        gap = abs(by_l[0].lowest - pred) / abs(pred)
        checks["l0_U_direction"] = gap < perron_tol
        if gap >= perron_tol:
            msgs.append(f"l=0 U direction {by_l[0].lowest:.6g} vs predicted {pred:.6g} (rel gap {gap:.3g})")
    if 0 in by_l:
        n0 = counts[0]
        msgs.append(f"l=0 near-zero count {n0} (dilation mode e0, correlation {by_l[0].correlation:.6f})")
    checks["simple_lowest"] = all(not (sp.simple_gap <= thr) for sp in sectors)
    if not checks["simple_lowest"]:
        msgs.append("lowest eigenvalue not simple in " + " ".join(f"l={sp.l}" for sp in sectors if sp.simple_gap <= thr))
    mono = [by_l[l].lowest for l in sorted(by_l) if l >= 1]
    checks["monotone_in_l"] = all(b >= a - thr for a, b in zip(mono, mono[1:]))
    return ReconcileReport(N, full_dim, counts, total, checks, msgs)
