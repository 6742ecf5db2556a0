import numpy as np
import pytest
from scipy.integrate import quad

from fkirchhoff.bubble import BubbleProfile, bubble_kappa, closed_form_C
from fkirchhoff.grids import make_box_grid, make_radial_grid, sphere_area
from fkirchhoff.linearization import (KernelPencil, LinearizedOperator, angular_harmonics,
                                      assemble_L_plus, box_kernel_residuals, canonical_correlation,
                                      kernel_candidates, near_kernel, pohozaev_gap_box,
                                      pohozaev_sides_radial, random_bandlimited, rank_one_confinement,
                                      verify_kernel_identities)
from fkirchhoff.scaling import ProblemParams, construct_ground_state, ground_state_grid, solve_E0
from fkirchhoff.spectral import apply_frac_laplacian_box, seminorm_sq_box


def _setup(N, s, a=1.0, b=1.0):
    p = ProblemParams(N, s, a, b)
    Q = BubbleProfile(closed_form_C(N, s), N, s)
    cert = solve_E0(p, bubble_kappa(Q))
    return p, Q, cert


@pytest.fixture(scope="module")
def small_box():
    """N=2 flagship parameters on a 32x32 box (dense assembly allowed)."""
    p, Q, cert = _setup(2, 0.75)
    g = ground_state_grid(make_box_grid(2, 8.0, 32), cert, p.s)
    U = construct_ground_state(p, Q, cert, g)
    return p, Q, cert, g, U


def test_b_zero_reduces_to_base_operator(small_box):
    _, Q, _, g, U = small_box
    p0 = ProblemParams(2, 0.75, 1.0, 0.0)
    Lp = assemble_L_plus(p0, U, g)
    phi = np.random.default_rng(0).standard_normal(g.shape)
    assert np.array_equal(Lp.apply(phi), Lp.apply_A(phi))
    A, L = Lp.to_dense()
    assert np.array_equal(A.matrix, L.matrix)
    assert Lp.c == 1.0


def test_rank_one_structure(small_box):
    p, _, _, g, U = small_box
    A, L = assemble_L_plus(p, U, g).to_dense()
    sv = np.linalg.svd(L.matrix - A.matrix, compute_uv=False)
    assert sv[1] < 1e-10 * sv[0]
    assert A.kind == "base_A" and L.kind == "L_plus"


def test_dense_matches_matrix_free(small_box):
    p, _, _, g, U = small_box
    Lp = assemble_L_plus(p, U, g)
    _, L = Lp.to_dense()
    phi = np.random.default_rng(1).standard_normal(g.shape)
    assert np.allclose(L.matrix @ phi.ravel(), Lp.apply(phi).ravel(), rtol=1e-10, atol=1e-10)


def test_symmetry_on_random_pairs(small_box):
    p, _, _, g, U = small_box
    Lp = assemble_L_plus(p, U, g)
    scale = Lp.c * np.max(g.wavenumber_sq()) ** p.s + np.max(Lp.V)
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(10):
        u, v = rng.standard_normal((2,) + g.shape)
        gap = abs(np.sum(Lp.apply(u) * v) - np.sum(u * Lp.apply(v)))
        worst = max(worst, gap / (np.linalg.norm(u) * np.linalg.norm(v) * scale))
    assert worst < 1e-9
    assert assemble_L_plus(p, U, g).to_dense()[1].symmetry_gap() < 1e-10


def test_c_exceeds_a(small_box):
    p, _, _, g, U = small_box
    assert assemble_L_plus(p, U, g).c > p.a


def test_assemble_rejects_bad_input(small_box):
    p, _, _, g, U = small_box
    with pytest.raises(ValueError, match="positive"):
        assemble_L_plus(p, -U.values, g)
    with pytest.raises(ValueError, match="grid mismatch"):
        assemble_L_plus(p, np.ones(5), g)


def test_dense_limit():
    p, Q, cert = _setup(2, 0.75)
    g = ground_state_grid(make_box_grid(2, 16.0, 128), cert, p.s)
    with pytest.raises(ValueError, match="dense assembly"):
        assemble_L_plus(p, construct_ground_state(p, Q, cert, g), g).to_dense()


def test_random_spd_has_no_kernel():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((60, 60))
    rep = near_kernel(X @ X.T / 60 + np.eye(60))
    assert rep.kernel_dim == 0 and rep.gap_ok and rep.negative_count == 0


def test_near_kernel_finds_planted_kernel():
    rng = np.random.default_rng(4)
    Qm, _ = np.linalg.qr(rng.standard_normal((50, 50)))
    ev = np.r_[-2.0, 0.0, 0.0, 0.0, rng.uniform(0.5, 3, 46)]
    A = (Qm * ev) @ Qm.T
    rep = near_kernel(A, candidates=Qm[:, 1:4] @ rng.standard_normal((3, 3)))
    assert rep.kernel_dim == 3 and rep.correlation > 0.999999 and rep.negative_count == 1


def test_near_kernel_reports_ambiguous_gap():
    A = np.diag([-1.0, 1e-6, 5e-3, 1.0, 2.0])
    rep = near_kernel(A)
    assert rep.kernel_dim == 1 and not rep.gap_ok and rep.inconclusive


def test_near_kernel_rejects_asymmetric():
    with pytest.raises(ValueError, match="symmetric"):
        near_kernel(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_canonical_correlation():
    e = np.eye(4)
    assert canonical_correlation(e[:, :2], e[:, [1, 0]]) == pytest.approx(1.0)
    assert canonical_correlation(e[:, :2], e[:, 2:]) == pytest.approx(0.0)
    assert canonical_correlation(e[:, :0], e[:, :2]) == 0.0


# ---------------------------------------------------------------- kernel

@pytest.mark.parametrize("N,s,grids", [
    (1, 0.3, [(1000.0, 8192), (2000.0, 16384), (4000.0, 32768)]),
    (2, 0.75, [(12.0, 64), (24.0, 128), (48.0, 256)]),
])
def test_pencil_residuals_small_and_decreasing(N, s, grids):
    p, Q, cert = _setup(N, s)
    res = np.array([KernelPencil(p, Q, cert, make_box_grid(N, L, m)).residuals() for L, m in grids])
    assert np.all(res[-1] < 1e-2)
    assert np.all(np.diff(res, axis=0) < 0)


def _box_residuals(N, s, L, m):
    p, Q, cert = _setup(N, s)
    lam = cert.length_scale(p.s)
    g = ground_state_grid(make_box_grid(N, L, m), cert, p.s)
    U = construct_ground_state(p, Q, cert, g)
    Lp = assemble_L_plus(p, U, g, c=p.a + p.b * bubble_kappa(Q, scale=lam))
    return box_kernel_residuals(Lp, kernel_candidates(Q, g.coords(), lam))


@pytest.mark.parametrize("N,s,L,m", [(1, 0.3, 4194304.0, 2**24), (2, 0.75, 1024.0, 4096)])
def test_box_kernel_residuals_at_default_resolution(N, s, L, m):
    res = _box_residuals(N, s, L, m)
    assert len(res) == N + 1
    assert max(res) < 1e-2


def test_box_kernel_residuals_decrease():
    res = np.array([_box_residuals(2, 0.75, L, m) for L, m in [(128.0, 512), (256.0, 1024), (512.0, 2048)]])
    assert np.all(np.diff(res, axis=0) < 0)


@pytest.mark.parametrize("N,s,L,m", [(1, 0.3, 4000.0, 32768), (2, 0.75, 48.0, 256)])
def test_pencil_kernel_dimension(N, s, L, m):
    p, Q, cert = _setup(N, s)
    rep = near_kernel(KernelPencil(p, Q, cert, make_box_grid(N, L, m)), 1e-3, seed=11)
    assert rep.kernel_dim == N + 1
    assert rep.correlation > 0.99
    assert rep.gap_ok and rep.next_abs >= 10 * rep.tol
    assert rep.negative_count >= 1
    assert rep.extra["perron_ok"]


def test_pencil_eigenvalues_bounded_by_one():
    p, Q, cert = _setup(2, 0.75)
    rep = near_kernel(KernelPencil(p, Q, cert, make_box_grid(2, 24.0, 128)), seed=0)
    assert np.all(rep.eigenvalues <= 1.0 + 1e-12)


# ---------------------------------------------------------------- identities

def _gaussian_pohozaev_oracle(N, s):
    """Both sides of int psi (-Delta)^s u = (2s-N)/2 ||u||_s^2 for u = exp(-|x|^2) by 1-D quadrature.

    In Fourier variables u^ = pi^{N/2} exp(-k^2/4) and psi^ = -(N - k^2/2) u^.
    """
    c = (2 * np.pi) ** -N * np.pi**N * sphere_area(N)
    lhs = -c * quad(lambda k: k ** (2 * s + N - 1) * (N - k * k / 2) * np.exp(-k * k / 2), 0, np.inf,
                    epsabs=0, epsrel=1e-13)[0]
    semi = c * quad(lambda k: k ** (2 * s + N - 1) * np.exp(-k * k / 2), 0, np.inf, epsabs=0, epsrel=1e-13)[0]
    return lhs, (2 * s - N) / 2 * semi


@pytest.mark.parametrize("N,s,L,m", [(1, 0.3, 16384.0, 2**18), (2, 0.75, 96.0, 1024), (3, 0.8, 24.0, 128)])
def test_pohozaev_compact_field(N, s, L, m):
    g = make_box_grid(N, L, m)
    r2 = g.radius_sq()
    u = np.exp(-r2)
    psi = -2 * r2 * u
    lhs_o, rhs_o = _gaussian_pohozaev_oracle(N, s)
    assert abs(lhs_o - rhs_o) < 1e-12 * abs(rhs_o)
    assert pohozaev_gap_box(g, s, u, psi) < 1e-6
    lhs = g.integrate(psi * apply_frac_laplacian_box(g, s, u))
    rhs = (2 * s - N) / 2 * seminorm_sq_box(g, s, u)
    assert lhs == pytest.approx(lhs_o, rel=1e-6) and rhs == pytest.approx(rhs_o, rel=1e-6)


def test_pohozaev_ground_state_radial_improves():
    p, Q, cert = _setup(2, 0.75)
    lam = cert.length_scale(p.s)
    gaps = []
    for M, R in [(512, 1e6), (1024, 1e8), (2048, 1e10)]:
        lhs, rhs, _ = pohozaev_sides_radial(p, Q, cert, make_radial_grid(2, M, R).scaled(lam))
        gaps.append(abs(lhs - rhs) / abs(rhs))
    assert gaps[1] < 1e-3
    assert gaps[0] > gaps[1] > gaps[2]


def test_identity_report_flagship():
    p, Q, cert = _setup(2, 0.75)
    lam = cert.length_scale(p.s)
    g = make_box_grid(2, 48.0, 256).scaled(lam)
    gr = make_radial_grid(2, 1024, 1e8).scaled(lam)
    c = p.a + p.b * bubble_kappa(Q, scale=lam)
    rep = verify_kernel_identities(p, Q, cert, g, gr, c=c, seed=5)
    assert rep.self_adjoint_gap < 1e-9
    assert rep.pohozaev_gap_radial < 1e-3
    assert rep.e0_orthogonality < 1e-3
    # -(c-a)(2s-N)/(2sc) with c > a and N > 2s lies in (0, 1)
    assert 0 < rep.multiplier < 1 and rep.multiplier_margin == pytest.approx(1 - rep.multiplier)
    assert rep.multiplier == pytest.approx((c - 1) * 0.5 / (1.5 * c), rel=1e-12)
    assert len(rep.to_lines()) == 6


def test_multiplier_vanishes_without_kirchhoff_term():
    p, Q, cert = _setup(2, 0.75, b=0.0)
    lam = cert.length_scale(p.s)
    rep = verify_kernel_identities(p, Q, cert, make_box_grid(2, 24.0, 128).scaled(lam),
                                   make_radial_grid(2, 512, 1e6).scaled(lam), c=1.0)
    assert rep.multiplier == 0.0


def test_random_bandlimited_is_bandlimited():
    g = make_box_grid(2, 4.0, 32)
    v = random_bandlimited(g, np.random.default_rng(0))
    vh = np.fft.rfftn(v)
    assert np.all(np.abs(vh[g.wavenumber_sq() >= (0.25 * np.pi / g.h) ** 2]) < 1e-10 * np.abs(vh).max())


# ---------------------------------------------------------------- confinement

@pytest.mark.parametrize("N,s,L,m,ls", [(1, 0.3, 400.0, 4096, [1]), (2, 0.75, 24.0, 256, [1, 2, 3]),
                                        (3, 0.8, 10.0, 64, [1, 2, 3])])
def test_rank_one_confinement(N, s, L, m, ls):
    p, Q, cert = _setup(N, s)
    g = ground_state_grid(make_box_grid(N, L, m), cert, p.s)
    U = construct_ground_state(p, Q, cert, g)
    for l in ls:
        assert rank_one_confinement(g, s, U, l, n_profiles=5, seed=l) < 1e-9


def test_confinement_detects_radial_coupling():
    p, Q, cert = _setup(2, 0.75)
    g = ground_state_grid(make_box_grid(2, 24.0, 256), cert, p.s)
    U = construct_ground_state(p, Q, cert, g)
    assert rank_one_confinement(g, p.s, U, 0, n_profiles=2) > 1e-2


def test_angular_harmonics_orthogonality():
    g = make_box_grid(3, 4.0, 32)
    coords = g.coords()
    r2 = g.radius_sq()
    shell = np.exp(-((np.sqrt(r2) - 2.0) ** 2) * 4)
    Ys = angular_harmonics(3, 2, coords)
    assert len(Ys) == 5
    G = np.array([[g.integrate(shell * a * b) for b in Ys] for a in Ys])
    assert np.max(np.abs(G - np.diag(np.diag(G)))) < 1e-2 * np.max(np.diag(G))
    with pytest.raises(ValueError):
        angular_harmonics(1, 2, [coords[0]])
