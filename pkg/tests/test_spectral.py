import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import gamma, jn_zeros, zeta

from fkirchhoff import _accel
from fkirchhoff.grids import make_box_grid, make_radial_grid, sphere_area
from fkirchhoff.spectral import (DiscreteOperator, RieszPotential, SpectralField,
                                 apply_frac_laplacian_box, apply_sector_stiffness,
                                 assemble_sector_laplacian, bilinear_box, frac_laplacian_box_matrix,
                                 load_matrix, radial_frac_form, sector_laplacian_direct,
                                 sector_stiffness, seminorm_sq, seminorm_sq_box, seminorm_sq_radial)


def frac_constant(N, s):
    return 4**s * gamma(N / 2 + s) / (np.pi ** (N / 2) * abs(gamma(-s)))


def gaussian_seminorm(N, s):
    """||(-Delta)^{s/2} exp(-|x|^2)||^2 in closed form."""
    return (2 * np.pi) ** -N * np.pi**N * sphere_area(N) * 0.5 * 2 ** (s + N / 2) * gamma(s + N / 2)


def gaussian_riesz_at_origin(N, s):
    return (2 * np.pi) ** -N * np.pi ** (N / 2) * sphere_area(N) * 0.5 * 4 ** ((N - 2 * s) / 2) * gamma(N / 2 - s)


def periodic_singular_integral(u, L, s, x):
    """C(1,s) int_0^inf (2u(x) - u(x+z) - u(x-z)) z^{-1-2s} dz for 2L-periodic u.

    The sum over periods of z^{-1-2s} is a Hurwitz zeta, so one period suffices.
    """
    P = 2 * L
    num = lambda z: 2 * u(x) - u(x + z) - u(x - z)
    ker = lambda z: P ** (-1 - 2 * s) * zeta(1 + 2 * s, z / P)
    pts = sorted({abs(x + k * P) % P for k in (-1, 0, 1)} - {0.0})
    val, _ = quad(lambda z: num(z) * ker(z), 0, P, points=pts or None, limit=800, epsabs=1e-13,
                  epsrel=1e-11)
    return frac_constant(1, s) * val


def test_single_mode_is_eigenfunction():
    g = make_box_grid(1, 3.0, 64)
    x = g.axis()
    s = 0.37
    out = apply_frac_laplacian_box(g, s, np.cos(np.pi * x / g.L))
    ref = (np.pi / g.L) ** (2 * s) * np.cos(np.pi * x / g.L)
    assert np.linalg.norm(out - ref) / np.linalg.norm(ref) < 1e-10


def test_constant_maps_to_zero():
    g = make_box_grid(2, 3.0, 32)
    assert np.max(np.abs(apply_frac_laplacian_box(g, 0.6, np.ones(g.shape)))) < 1e-12


def test_single_mode_seminorm():
    g = make_box_grid(1, 3.0, 64)
    s = 0.37
    u = np.cos(np.pi * g.axis() / g.L)
    assert seminorm_sq(g, s, u) == pytest.approx((np.pi / g.L) ** (2 * s) * g.L, rel=1e-12)
    assert seminorm_sq(g, s, np.zeros(g.shape)) == 0.0


def test_periodized_gaussian_against_singular_integral():
    s, L = 0.4, 6.0
    g = make_box_grid(1, L, 512)
    u_per = lambda y: sum(np.exp(-(y + 2 * L * k) ** 2) for k in range(-3, 4))
    out = apply_frac_laplacian_box(g, s, u_per(g.axis()))
    idx = [256, 256 + 10, 256 + 25, 256 + 60, 256 + 150]
    ref = np.array([periodic_singular_integral(u_per, L, s, g.axis()[i]) for i in idx])
    assert np.max(np.abs(out[idx] - ref)) / np.max(np.abs(ref)) < 1e-4


def test_spectral_field_meaning_is_tracked():
    g = make_box_grid(1, 3.0, 32)
    f = SpectralField(np.exp(-g.axis() ** 2), g.describe(), "function")
    out = apply_frac_laplacian_box(g, 0.5, f)
    assert isinstance(out, SpectralField) and out.meaning == "frac_laplacian_of"
    with pytest.raises(ValueError):
        SpectralField(np.array([1.0, np.nan]), "x", "function")
    with pytest.raises(ValueError):
        SpectralField(np.ones(3), "x", "garbage")


def test_box_errors():
    g = make_box_grid(1, 3.0, 32)
    with pytest.raises(ValueError, match="grid mismatch"):
        apply_frac_laplacian_box(g, 0.5, np.ones(16))
    for s in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            apply_frac_laplacian_box(g, s, np.ones(32))


@pytest.mark.parametrize("N,L,m", [(1, 60.0, 2048), (2, 12.0, 128), (3, 8.0, 64)])
def test_box_gaussian_seminorm_closed_form(N, L, m):
    g = make_box_grid(N, L, m)
    s = {1: 0.3, 2: 0.75, 3: 0.8}[N]
    got = seminorm_sq_box(g, s, np.exp(-g.radius_sq()))
    # at N=1 the |k|^{2s} cusp at k=0 is sampled with spacing pi/L, which limits the box value
    assert got == pytest.approx(gaussian_seminorm(N, s), rel=2e-3 if N == 1 else 1e-4)


@pytest.mark.parametrize("N,s", [(1, 0.3), (2, 0.75), (3, 0.8)])
def test_radial_gaussian_seminorm_closed_form(N, s):
    g = make_radial_grid(N, 1024, 1e4)
    got = seminorm_sq_radial(g, s, np.exp(-g.nodes**2))
    assert got == pytest.approx(gaussian_seminorm(N, s), rel=1e-4)


@pytest.mark.parametrize("N,s,L,m", [(1, 0.3, 8.0, 256), (2, 0.75, 8.0, 128), (3, 0.8, 8.0, 64)])
def test_riesz_potential_closed_form(N, s, L, m):
    g = make_box_grid(N, L, m)
    G = RieszPotential(g, s).apply(np.exp(-g.radius_sq()))
    assert G[(m // 2,) * N] == pytest.approx(gaussian_riesz_at_origin(N, s), rel=1e-7)


def test_bubble_seminorm_matches_pairing():
    from fkirchhoff.bubble import BubbleProfile, bubble_samples
    g = make_box_grid(2, 64.0, 512)
    u = bubble_samples(BubbleProfile(1.0, 2, 0.75), g.coords())
    pair = g.integrate(u * apply_frac_laplacian_box(g, 0.75, u))
    assert seminorm_sq(g, 0.75, u) == pytest.approx(pair, rel=1e-8)


def test_box_self_adjoint_random_fields():
    rng = np.random.default_rng(1)
    g = make_box_grid(2, 5.0, 64)
    for _ in range(5):
        u, v = rng.standard_normal((2,) + g.shape)
        a = g.integrate(apply_frac_laplacian_box(g, 0.6, u) * v)
        b = g.integrate(u * apply_frac_laplacian_box(g, 0.6, v))
        assert abs(a - b) <= 1e-9 * np.sqrt(seminorm_sq_box(g, 0.6, u) * seminorm_sq_box(g, 0.6, v))
        assert bilinear_box(g, 0.6, u, v) == pytest.approx(a, rel=1e-9)


def test_radial_self_adjoint_random_fields():
    rng = np.random.default_rng(2)
    g = make_radial_grid(3, 256, 1e3)
    env = np.exp(-g.nodes / 5)
    for l in (0, 1, 2):
        u, v = rng.standard_normal((2, g.M)) * env
        a, b = radial_frac_form(g, 0.8, u, v, l=l), radial_frac_form(g, 0.8, v, u, l=l)
        assert abs(a - b) <= 1e-9 * np.sqrt(radial_frac_form(g, 0.8, u, u, l=l) *
                                            radial_frac_form(g, 0.8, v, v, l=l))
        op = assemble_sector_laplacian(g, 3, l, 0.8)
        sw = np.sqrt(g.weights)
        pu, pv = op.matrix @ (sw * u), op.matrix @ (sw * v)
        assert abs(pu @ (sw * v) - (sw * u) @ pv) <= 1e-9 * np.linalg.norm(pu) * np.linalg.norm(sw * v)


def test_composition_of_orders():
    rng = np.random.default_rng(3)
    g = make_box_grid(2, 4.0, 64)
    k2 = g.wavenumber_sq()
    coef = (rng.standard_normal(k2.shape) + 1j * rng.standard_normal(k2.shape)) * (k2 < 25.0)
    u = np.fft.irfftn(coef, s=g.shape, axes=(0, 1))
    twice = apply_frac_laplacian_box(g, 0.3, apply_frac_laplacian_box(g, 0.3, u))
    once = apply_frac_laplacian_box(g, 0.6, u)
    assert np.linalg.norm(twice - once) / np.linalg.norm(once) < 1e-8


@pytest.mark.parametrize("N", [1, 2, 3])
def test_scaling_covariance(N):
    s, lam = 0.7, 1.7
    g = make_box_grid(N, 10.0, 64)
    u = np.exp(-g.radius_sq()) * (1 + 0.3 * g.coords()[0])
    g_lam = g.scaled(1 / lam)  # same samples represent u(lam x)
    assert seminorm_sq_box(g_lam, s, u) == pytest.approx(lam ** (2 * s - N) * seminorm_sq_box(g, s, u), rel=1e-8)


def test_dense_box_matrix_psd_and_symmetric():
    g = make_box_grid(2, 3.0, 16)
    op = frac_laplacian_box_matrix(g, 0.75)
    A = op.matrix
    assert op.symmetry_gap() < 1e-10
    ev = np.linalg.eigvalsh(A)
    assert ev[0] >= -1e-8 * ev[-1]
    u = np.random.default_rng(0).standard_normal(g.shape)
    assert np.allclose(A @ u.ravel(), apply_frac_laplacian_box(g, 0.75, u).ravel())
    with pytest.raises(ValueError, match="4096"):
        frac_laplacian_box_matrix(make_box_grid(2, 3.0, 128), 0.5)


@pytest.mark.parametrize("N,l", [(1, 0), (1, 1), (2, 0), (2, 3), (3, 1)])
def test_sector_psd_and_spectral_calculus(N, l):
    g = make_radial_grid(N, 128, 100.0)
    op = assemble_sector_laplacian(g, N, l, 0.65)
    assert op.symmetry_gap() < 1e-10
    ev = np.linalg.eigvalsh(op.matrix)
    assert ev[0] >= -1e-8 * ev[-1]
    ev_lap = np.linalg.eigvalsh(sector_laplacian_direct(g, l))
    assert np.allclose(np.sort(ev), np.sort(np.maximum(ev_lap, 0)) ** 0.65, rtol=1e-8, atol=1e-10 * ev[-1])


def test_sector_power_one_is_direct_laplacian():
    g = make_radial_grid(2, 200, 50.0)
    A = assemble_sector_laplacian(g, 2, 0, 1.0).matrix
    D = sector_laplacian_direct(g, 0)
    assert np.linalg.norm(A - D) / np.linalg.norm(D) < 1e-8


@pytest.mark.parametrize("N,l", [(1, 0), (1, 1), (2, 0), (2, 1), (3, 0)])
def test_sector_dirichlet_eigenvalues_match_bessel_zeros(N, l):
    R = 10.0
    if N == 1:
        ref = ((np.arange(1, 4) - (0.5 if l == 0 else 0.0)) * np.pi / R) ** 2
    elif N == 2:
        ref = (jn_zeros(l, 3) / R) ** 2
    else:
        ref = (np.arange(1, 4) * np.pi / R) ** 2
    errs = []
    for M in (256, 512):
        g = make_radial_grid(N, M, R)
        ev = np.linalg.eigvalsh(sector_laplacian_direct(g, l))[:3]
        errs.append(np.max(np.abs(ev / ref - 1)))
    assert errs[1] < 2e-4
    assert errs[1] < errs[0] / 3  # second order


@pytest.mark.parametrize("N", [1, 2, 3])
def test_sector_stiffness_weak_form(N):
    # sum v S f = int f' v' r^{N-1} dr for f = exp(-r^2), v = exp(-r^2/2)
    g = make_radial_grid(N, 1024, 10.0)
    r = g.nodes
    got = np.exp(-r * r / 2) @ apply_sector_stiffness(g, 0, np.exp(-r * r))
    ref, _ = quad(lambda x: 2 * x * x * np.exp(-1.5 * x * x) * x ** (N - 1), 0, 10.0, limit=200)
    assert got == pytest.approx(ref, rel=1e-5)


def test_sector_errors():
    g = make_radial_grid(2, 64, 10.0)
    with pytest.raises(ValueError, match="angular"):
        assemble_sector_laplacian(g, 2, -1, 0.5)
    with pytest.raises(ValueError, match="dimension"):
        assemble_sector_laplacian(g, 3, 0, 0.5)
    with pytest.raises(ValueError, match="order"):
        assemble_sector_laplacian(g, 2, 0, 1.5)


def test_sector_monotone_in_l():
    g = make_radial_grid(3, 128, 100.0)
    lows = [assemble_sector_laplacian(g, 3, l, 0.8).eigvals[0] for l in range(4)]
    assert all(b > a for a, b in zip(lows, lows[1:]))


def test_dump_and_load_roundtrip(tmp_path):
    g = make_radial_grid(2, 64, 10.0)
    op = assemble_sector_laplacian(g, 2, 3, 0.5)
    path = tmp_path / "m.bin"
    op.dump(path)
    raw = path.read_bytes()
    assert len(raw) == 16 + 8 * 64 * 64
    A, kind, l = load_matrix(path)
    assert kind == "sector_laplacian" and l == 3
    assert np.array_equal(A, op.matrix)


def test_load_rejects_truncated(tmp_path):
    op = DiscreteOperator(np.eye(3), "x", "L_plus", 0.5)
    path = tmp_path / "m.bin"
    op.dump(path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="header"):
        load_matrix(path)


@pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba unavailable")
def test_numba_and_numpy_backends_agree():
    g = make_radial_grid(2, 256, 1e6)
    kap, k0, ex = sector_stiffness(g, 1)
    rng = np.random.default_rng(4)
    shifts = np.geomspace(1e-14, 1e4, 37)
    rhs = rng.standard_normal((g.M, shifts.size))
    a = _accel.shifted_solve(kap, k0, ex, g.weights, shifts, rhs, backend="numba")
    b = _accel.shifted_solve(kap, k0, ex, g.weights, shifts, rhs, backend="numpy")
    assert np.allclose(a, b, rtol=1e-12, atol=0)
    u = np.exp(-g.nodes)
    assert radial_frac_form(g, 0.75, u, u, backend="numba") == pytest.approx(
        radial_frac_form(g, 0.75, u, u, backend="numpy"), rel=1e-12)


def test_shifted_solve_matches_dense_solve():
    g = make_radial_grid(1, 64, 100.0)
    kap, k0, ex = sector_stiffness(g, 1)
    S = np.diag(ex + np.r_[kap, 0] + np.r_[0, kap]) - np.diag(kap, 1) - np.diag(kap, -1)
    S[0, 0] += k0
    shifts = np.array([1e-6, 1.0, 1e3])
    rhs = np.random.default_rng(5).standard_normal((64, 3))
    x = _accel.shifted_solve(kap, k0, ex, g.weights, shifts, rhs, backend="numpy")
    for j, t in enumerate(shifts):
        ref = np.linalg.solve(S + t * np.diag(g.weights), rhs[:, j])
        assert np.allclose(x[:, j], ref, rtol=1e-9)
