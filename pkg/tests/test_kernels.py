import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import curve_fit

from sglab.kernels import (F_eps_kernel, K_tables, KernelSpec, MollifierSpec, Q0_ladder, covariance_Q_eps,
                           heat_kernel_K, mollifier_tables, remainder_ratios, renorm_constant_C_eps,
                           two_sided_constants, wick_constants)
from sglab.spacetime import ParabolicPoint, ResolutionError, TorusGrid, parabolic_norm

LOG2_OVER_2PI = np.log(2) / (2 * np.pi)


def test_heat_kernel_examples(kspec):
    assert heat_kernel_K(kspec, ParabolicPoint(-0.1, 0, 0)) == 0
    assert heat_kernel_K(kspec, ParabolicPoint(0.01, 0, 0)) == pytest.approx(1 / (2 * np.pi * 0.01), abs=1e-4)
    assert heat_kernel_K(kspec, ParabolicPoint(0.01, 0, 0)) == pytest.approx(15.91549, abs=1e-5)
    assert heat_kernel_K(kspec, ParabolicPoint(0.0, 0.46, 0)) == 0
    assert heat_kernel_K(kspec, ParabolicPoint(0.21, 0, 0)) == 0


@given(st.floats(1e-4, 0.3), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_heat_kernel_support_and_sign(t, a, b):
    spec = KernelSpec()
    v = heat_kernel_K(spec, t, a, b)
    r = parabolic_norm(t, a, b)
    assert v >= 0
    if r >= spec.cutoff_outer:
        assert v == 0
    if r <= spec.cutoff_inner:
        assert v == pytest.approx(np.exp(-(a * a + b * b) / (2 * t)) / (2 * np.pi * t), rel=1e-12)


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(0.3, 0.2)
    with pytest.raises(ValueError):
        KernelSpec(0.25, 0.6)
    with pytest.raises(ValueError):
        MollifierSpec("bump", 0.0)


def test_mollifier_unit_mass_and_resolution():
    g = TorusGrid(N=32, cfl=1.0)
    rho, _, _ = mollifier_tables(MollifierSpec("quartic", 1 / 8), g)
    from sglab.kernels import lattice
    W = lattice(g).W
    assert abs((rho * W).sum() * g.cell - 1) < 1e-10
    with pytest.raises(ResolutionError):
        mollifier_tables(MollifierSpec("bump", 1 / 32), g)


def _full(q, N):
    """Quarter-grid table (..., N/2+1, N/2+1) to the full torus."""
    j = np.minimum(np.arange(N), N - np.arange(N))
    return q[..., j[:, None], j[None, :]]


def test_covariance_matches_real_space_convolution(kspec):
    # independent route: direct space-time sums of G = K * rho and Q = G * TG
    g = TorusGrid(N=16, cfl=1.0)
    m = MollifierSpec("bump", 1 / 8)
    cov = covariance_Q_eps(kspec, m, 2 * np.pi, g)
    _, Kq = K_tables(kspec, g)
    rq, _, ns = mollifier_tables(m, g)
    N = g.N
    K = _full(np.asarray(Kq), N).reshape(Kq.shape[0], -1)
    rho = _full(np.asarray(rq), N).reshape(rq.shape[0], -1)
    idx = np.arange(N * N)
    i1, i2 = idx // N, idx % N
    # circulant: C[y, x] = rho(x - y)
    d1 = (i1[None, :] - i1[:, None]) % N
    d2 = (i2[None, :] - i2[:, None]) % N
    nt, nr = K.shape[0], rho.shape[0]
    G = np.zeros((nt + nr - 1, N * N))  # time index s -> s - ns
    for a in range(nr):
        C = rho[a].reshape(N, N)[d1, d2]
        G[a: a + nt] += K @ C
    G *= g.cell
    for n, j1, j2 in [(0, 0, 0), (3, 1, 2), (7, 4, 0), (1, 8, 8), (20, 2, 3)]:
        sh = np.roll(np.roll(G.reshape(-1, N, N), -j1, 1), -j2, 2).reshape(G.shape[0], -1)
        q = (G[: G.shape[0] - n] * sh[n:]).sum() * g.cell
        assert cov.at_offsets(n, j1, j2) == pytest.approx(q, rel=1e-10, abs=1e-13)


def test_covariance_symmetric(cov32):
    rng = np.random.default_rng(0)
    n, a, b = rng.integers(-40, 40, (3, 200))
    assert np.array_equal(cov32.at_offsets(n, a, b), cov32.at_offsets(-n, -a, -b))
    z = rng.uniform(-0.2, 0.2, (3, 50))
    assert np.allclose(cov32.Q(*z), cov32.Q(*(-z)), rtol=1e-12, atol=0)


def test_J_times_Jminus_is_one(cov32):
    z = np.random.default_rng(1).uniform(-0.3, 0.3, (3, 100))
    assert np.allclose(cov32.J(*z) * cov32.Jm(*z), 1.0, rtol=1e-14)


def test_Q0_halving_increment(kspec):
    g = TorusGrid(N=64, cfl=1.0)
    Q0 = Q0_ladder(kspec, "bump", [1 / 8, 1 / 16, 1 / 32], g)
    d = np.diff(Q0)
    assert abs(d[-1] - LOG2_OVER_2PI) < 2e-3
    assert abs(d[-1] - LOG2_OVER_2PI) < abs(d[0] - LOG2_OVER_2PI)


def test_Q0_ladder_matches_tables(kspec, grid32, cov32):
    q = Q0_ladder(kspec, "bump", [1 / 8], grid32)[0]
    assert q == pytest.approx(cov32.Q0, rel=1e-12)


def test_log_remainder_bounded(kspec):
    g = TorusGrid(N=64, cfl=1.0)
    lo, hi = [], []
    for e in (1 / 8, 1 / 16, 1 / 32):
        cov = covariance_Q_eps(kspec, MollifierSpec("bump", e), 2 * np.pi, g)
        lat = cov.lat
        n = np.arange(cov.nlag)[:, None, None]
        r = parabolic_norm(n * g.dt, lat.X1[None], lat.X2[None], L=None)
        m = r <= 0.5
        s = cov.Qtab[m] + np.log(r[m] + e) / (2 * np.pi)
        lo.append(s.min())
        hi.append(s.max())
    assert max(hi) - min(lo) < 0.2
    assert np.ptp(lo) < 0.05 and np.ptp(hi) < 0.05


def test_wick_constants_contract():
    eps = [1 / 8, 1 / 16, 1 / 32]
    Q0 = [-np.log(e) / (2 * np.pi) + 0.3 for e in eps]
    wc = wick_constants(eps, Q0, beta2=0.0)
    assert wc.C_rho == 1.0
    assert wc.C_hat == pytest.approx(0.3)
    assert wc.slope == pytest.approx(-1 / (2 * np.pi))
    wc = wick_constants(eps, Q0, beta2=2.0)
    assert wc.C_rho == pytest.approx(np.exp(0.3))
    with pytest.raises(ValueError, match="insufficient"):
        wick_constants(eps[:2], Q0[:2], 1.0)


def test_remainder_ratio_formula():
    eps = np.array([1 / 4, 1 / 8, 1 / 16, 1 / 32])
    Q0 = -np.log(eps) / (2 * np.pi) + 0.2 + 3 * eps ** 2
    assert np.allclose(remainder_ratios(eps, Q0), 4.0)


@pytest.mark.xfail(strict=True, reason="lattice error at eps = 2h swamps the eps^2 remainder; "
                                       "ratios measured 3.67 then 2.32")
def test_remainder_ratio_window(kspec):
    g = TorusGrid(N=64, cfl=1.0)
    eps = [1 / 4, 1 / 8, 1 / 16, 1 / 32]
    r = remainder_ratios(eps, Q0_ladder(kspec, "bump", eps, g))
    assert 3.2 <= r[-1] <= 4.8


def test_two_sided_bound_interval(kspec):
    g = TorusGrid(N=64, cfl=1.0)
    rows = [two_sided_constants(covariance_Q_eps(kspec, MollifierSpec("bump", e), 2 * np.pi, g))
            for e in (1 / 8, 1 / 16, 1 / 32)]
    for c1, c2 in rows:
        assert 0 < c1 < c2 < np.inf
    # lower constant is eps-stable; the upper one converges like 1 + eps/r at the cutoff radius
    assert np.ptp([r[0] for r in rows]) / rows[0][0] < 0.01
    w = [rows[i + 1][1] / rows[i][1] - 1 for i in range(2)]
    assert 0 < w[1] < w[0]


def test_F_kernel_beta_zero_is_constant(kspec, grid32):
    cov = covariance_Q_eps(kspec, MollifierSpec("bump", 1 / 8), 0.0, grid32)
    F = F_eps_kernel(cov, 1, lags=3)
    _, Kq = K_tables(kspec, grid32)
    from sglab.kernels import lattice
    intK = (np.asarray(Kq) * lattice(grid32).W).sum() * grid32.cell
    assert np.allclose(F.values, intK, rtol=1e-10)
    assert renorm_constant_C_eps(cov) == pytest.approx(intK, rel=1e-12)
    with pytest.raises(ValueError):
        F_eps_kernel(cov, 0)
    with pytest.raises(ValueError):
        renorm_constant_C_eps(cov, 0)


@pytest.mark.parametrize("beta2", [4.5 * np.pi, 5 * np.pi])
def test_F_kernel_exponent(kspec, beta2):
    g = TorusGrid(N=64, cfl=1.0)
    e = 1 / 32
    cov = covariance_Q_eps(kspec, MollifierSpec("bump", e), beta2, g)
    F = F_eps_kernel(cov, 1, lags=2)
    js = np.arange(4, 17)  # r from 2 eps to 1/4
    v = F.at_offsets(0, js, 0)
    # power law plus a constant from the kernel cutoff
    (a, p, b), _ = curve_fit(lambda r, a, p, b: a * r ** p + b, js / 64, v, p0=(0.2, -0.3, 0.0), maxfev=20000)
    assert abs(p - (2 - beta2 / (2 * np.pi))) <= 0.1


def test_F_kernel_higher_mode_shrinks(kspec):
    g = TorusGrid(N=64, cfl=1.0)
    sup = []
    for e in (1 / 8, 1 / 16, 1 / 32):
        cov = covariance_Q_eps(kspec, MollifierSpec("bump", e), 2 * np.pi, g)
        F = F_eps_kernel(cov, 2, lags=2)
        n, j1, j2 = np.meshgrid([0, 1, 2], np.arange(33), np.arange(33), indexing="ij")
        r = parabolic_norm(n * g.dt, j1 / 64, j2 / 64, L=None)
        ann = (r >= 0.125) & (r <= 0.25)
        sup.append(np.abs(F.at_offsets(n, j1, j2)[ann]).max())
    assert sup[0] > sup[1] > sup[2]


def test_two_sided_interval_stabilises(cov128):
    c = [two_sided_constants(cov128(e)) for e in (1 / 32, 1 / 64)]
    # each endpoint moves by at most 5% at the finest halving
    assert 1 - c[1][0] / c[0][0] <= 0.05
    assert c[1][1] / c[0][1] - 1 <= 0.05


def test_difference_bound_constant(cov128):
    Cs = []
    for a, b in [(1 / 16, 1 / 32), (1 / 32, 1 / 64)]:
        ca, cb = cov128(a), cov128(b)
        nl = min(ca.nlag, cb.nlag)
        lat, g = ca.lat, ca.grid
        n = np.arange(nl)[:, None, None]
        r = parabolic_norm(n * g.dt, lat.X1[None], lat.X2[None], L=None)
        m = r >= a
        Cs.append((np.abs(ca.Qtab[:nl] - cb.Qtab[:nl]) * r / a)[m].max())
    assert max(Cs) < 0.1
    assert max(Cs) / min(Cs) < 1.25


@pytest.mark.parametrize("lam", [0.5, 0.25])
def test_log_remainder_scale_invariance(cov128, lam):
    c = cov128(1 / 64)
    g, inv = c.grid, int(round(1 / lam))
    n, j1, j2 = np.meshgrid(np.arange(0, c.nlag, inv * inv), np.arange(0, 65, inv), np.arange(0, 65, inv),
                            indexing="ij")
    r = parabolic_norm(n * g.dt, j1 / 128, j2 / 128, L=None)
    d = c.at_offsets(n // (inv * inv), j1 // inv, j2 // inv) - c.at_offsets(n, j1, j2) + np.log(lam) / (2 * np.pi)
    # the scaled point must stay outside the mollifier scale
    m = (r >= 0.05) & (r <= 0.2) & (lam * r >= 2 * c.eps)
    assert np.abs(d[m]).max() <= 1e-2
