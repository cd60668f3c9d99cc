import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sglab.chaos import ContractError
from sglab.kernels import MollifierSpec, mollifier_tables
from sglab.noise import NoiseRealization, heat_multiplier, sample_noise
from sglab.solver import (BLOWUP_NORM, SolveConfig, TrigPolynomial, _noise_fields, _solve_with_noise,
                          coarsen_noise, refinement_study, restrict, renorm_constant, solve, step_direct, step_split,
                          surrogate_norm, swap_study, trajectory_distance)
from sglab.spacetime import TorusGrid

B2 = 2 * np.pi
F1 = TrigPolynomial(math.sqrt(B2))
F2 = TrigPolynomial(math.sqrt(B2), ((1, 1.0, 0.0), (2, 0.5, 0.3)))


@pytest.fixture(scope="module")
def g16():
    return TorusGrid(N=16, cfl=1)


def _xy(g):
    x = g.coords()
    return np.meshgrid(x, x, indexing="ij")


def test_trig_polynomial_evaluation():
    F = TrigPolynomial(0.7, ((1, 2.0, 0.1), (3, -0.5, 1.2)))
    u = np.linspace(-2, 2, 11)
    assert np.allclose(F(u), 2 * np.sin(0.7 * u + 0.1) - 0.5 * np.sin(2.1 * u + 1.2), rtol=0, atol=1e-15)
    assert F.Z == 3 and F.without(3).Z == 1
    with pytest.raises(ValueError):
        TrigPolynomial(1.0, ((0, 1.0, 0.0),))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 3.0), st.lists(st.tuples(st.integers(1, 4), st.floats(-2, 2), st.floats(0, 6.3)),
                                     min_size=1, max_size=3))
def test_counterterm_vanishes(beta, modes):
    F = TrigPolynomial(beta, tuple(modes))
    v = np.random.default_rng(0).uniform(-5, 5, 200)
    assert np.abs(F.counterterm(v)).max() <= 1e-12


def test_config_validation(g16):
    with pytest.raises(ValueError):
        SolveConfig(g16, B2, F1, scheme="implicit")
    with pytest.raises(ValueError):
        SolveConfig(g16, B2, F1, normalization="other")
    with pytest.raises(ValueError):
        SolveConfig(g16, -1.0, None)
    with pytest.raises(ValueError):
        SolveConfig(g16, 17.0, TrigPolynomial(math.sqrt(17.0)))
    with pytest.raises(ValueError):
        SolveConfig(g16, B2, TrigPolynomial(1.0))
    with pytest.raises(ValueError):
        renorm_constant(SolveConfig(g16, B2, F1, normalization="constant"))
    with pytest.raises(ValueError):
        solve(SolveConfig(g16, B2, F1, scheme="split", noise=False))
    with pytest.raises(ValueError):
        solve(SolveConfig(g16, B2, F1, u0=np.zeros((3, 3)), noise=False))


def test_eps_tied_to_grid(g16):
    cfg = SolveConfig(g16, B2, F1, eps=1 / 64)
    assert cfg.eps_eff == 2 * g16.h
    c = SolveConfig(g16, B2, F1, eps=1 / 4, normalization="constant", C_rho=1.5)
    assert renorm_constant(c) == pytest.approx(1.5 * 4 ** 0.5)


def test_heat_semigroup_exact():
    g = TorusGrid(N=32, cfl=1)
    X, Y = _xy(g)
    u0 = np.sin(2 * np.pi * X) + 0.5 * np.cos(4 * np.pi * Y)
    tr = solve(SolveConfig(g, 0.0, None, u0=u0, noise=False, T=0.02, snap_dt=0.005))
    for t, u in zip(tr.times, tr.snapshots):
        ex = np.exp(-2 * np.pi ** 2 * t) * np.sin(2 * np.pi * X) + 0.5 * np.exp(-8 * np.pi ** 2 * t) * np.cos(4 * np.pi * Y)
        assert np.abs(u - ex).max() <= 1e-13
    assert len(tr.times) == len(tr.norms) and np.all(np.isfinite(tr.norms))


def test_constant_data_ode():
    # spatially constant data stays constant; Richardson-extrapolated Euler matches the scalar ODE
    b2, m0, T = 0.5, 0.3, 13 / 256
    beta = math.sqrt(b2)
    F = TrigPolynomial(beta)
    finals = []
    for cfl in (1.0, 0.5):
        g = TorusGrid(N=16, cfl=cfl)
        tr = solve(SolveConfig(g, b2, F, u0=np.full((16, 16), m0), noise=False, T=T,
                                  normalization="constant", C_rho=1.0))
        u = tr.final
        assert np.ptp(u) <= 1e-13
        finals.append(u.mean())
        c = tr.c
    # w = beta m solves w' = c beta sin w:  tan(w/2) = tan(w0/2) exp(c beta t)
    exact = 2 * math.atan(math.tan(beta * m0 / 2) * math.exp(c * beta * T)) / beta
    assert abs(2 * finals[1] - finals[0] - exact) <= 1e-6


def test_spatial_mean_identity(g16):
    cfg = SolveConfig(g16, 0.0, None, eps=1 / 8, T=0.02, snap_dt=g16.dt, u0=np.full((16, 16), 0.25))
    xi, _ = _noise_fields(cfg, need_phi=False)
    xi = xi - xi.mean(axis=(1, 2), keepdims=True)
    # drive the direct step by hand with zero-mean slabs
    S = heat_multiplier(g16, g16.dt)
    u = cfg.u0.copy()
    for i in range(cfg.nsteps):
        u = step_direct(u, cfg, 1.0, S, xi[i], xi[i + 1])
        assert abs(u.mean() - 0.25) <= 1e-12
    # with the sampled noise the mean moves by exactly the noise means
    tr = solve(cfg)
    xi0, _ = _noise_fields(cfg, need_phi=False)
    m = xi0.mean(axis=(1, 2))
    pred = 0.25 + np.cumsum(0.5 * g16.dt * (m[:-1] + m[1:]))
    assert np.abs(tr.snapshots[1:].mean(axis=(1, 2)) - pred[: len(tr.times) - 1]).max() <= 1e-12


def test_deterministic_dt_order():
    g = TorusGrid(N=16, cfl=1)
    X, Y = _xy(g)
    u0 = 0.3 * np.sin(2 * np.pi * X) + 0.2 * np.cos(2 * np.pi * (X + Y))
    T = 8 * g.h ** 2
    runs = [solve(SolveConfig(TorusGrid(N=16, cfl=1 / 2 ** j), B2, F1, u0=u0, noise=False, T=T,
                              normalization="constant", C_rho=1.0)).final for j in range(5)]
    d = [np.abs(runs[j] - runs[j + 1]).max() for j in range(4)]
    orders = np.log2(np.array(d[:-1]) / d[1:])
    assert orders.min() >= 1.0 - 0.05


def _coupled_run(cfl, fine_cfl, seed, N=16, T=12 / 256, eps=1 / 8):
    # coarse-step noise is the time average of consecutive fine slabs
    gf, g = TorusGrid(N=N, cfl=fine_cfl), TorusGrid(N=N, cfl=cfl)
    f = int(round(cfl / fine_cfl))
    pad = mollifier_tables(MollifierSpec("bump", eps), g)[2] + 1
    nf = int(round(T / gf.dt))
    xf = sample_noise(gf, seed, -pad * f, nf + (pad + 1) * f)
    inc = xf.increments.reshape(-1, f, N, N).mean(axis=1)
    cfg = SolveConfig(g, B2, F1, eps=eps, T=T, noise=False)
    return _solve_with_noise(cfg, NoiseRealization(seed, g, -pad, inc)).final


def test_strong_dt_order():
    orders = []
    for seed in range(2):
        ref = _coupled_run(1 / 64, 1 / 64, seed)
        dts = np.array([1, 1 / 2, 1 / 4])
        err = [np.abs(_coupled_run(c, 1 / 64, seed) - ref).max() for c in dts]
        orders.append(np.polyfit(np.log(dts), np.log(err), 1)[0])
    assert min(orders) >= 0.5


def test_split_matches_direct(g16):
    for u0 in (None, "free-field"):
        a = solve(SolveConfig(g16, B2, F2, eps=1 / 8, T=0.02, u0=u0, scheme="direct"))
        b = solve(SolveConfig(g16, B2, F2, eps=1 / 8, T=0.02, u0=u0, scheme="split"))
        assert np.abs(a.final - b.final).max() <= 1e-12


def test_split_lineage_checked(g16):
    cfg = SolveConfig(g16, B2, F1, seed=3)
    z = np.zeros((16, 16))
    with pytest.raises(ContractError):
        step_split(z, cfg, 1.0, np.ones((16, 9)), z, z, lineage=(4, 0))


def test_small_beta_reaches_heat_equation(g16):
    lin = solve(SolveConfig(g16, 0.0, None, eps=1 / 8, T=0.02))
    for b2 in (1e-4, 1e-6):
        F = TrigPolynomial(math.sqrt(b2), ((1, 1.0, 0.0),))
        for scheme in ("direct", "split"):
            tr = solve(SolveConfig(g16, b2, F, eps=1 / 8, T=0.02, scheme=scheme))
            # F ~ beta u, so the correction is O(beta T)
            assert np.abs(tr.final - lin.final).max() <= 5 * math.sqrt(b2) * 0.02 * tr.c * np.abs(lin.snapshots).max() + 1e-12


def test_reproducible(g16):
    cfg = SolveConfig(g16, B2, F2, eps=1 / 8, T=0.01, seed=7, snap_dt=0.002)
    a, b = solve(cfg), solve(cfg)
    assert np.array_equal(a.snapshots, b.snapshots) and np.array_equal(a.norms, b.norms)
    assert not np.array_equal(a.final, solve(replace(cfg, seed=8)).final)


def test_blowup_flag(g16):
    u0 = np.full((16, 16), 2 * BLOWUP_NORM)
    tr = solve(SolveConfig(g16, 0.0, None, u0=u0, noise=False, T=0.01))
    assert tr.blowup and tr.blowup_time == pytest.approx(g16.dt)
    short = solve(SolveConfig(g16, 0.0, None, noise=False, T=0.01, snap_dt=g16.dt))
    assert trajectory_distance(tr, short, -0.25) == pytest.approx(2 * BLOWUP_NORM)


# --- surrogate norm -----------------------------------------------------------------

def test_surrogate_norm_examples():
    N = 32
    x = np.arange(N) / N
    X, _ = np.meshgrid(x, x, indexing="ij")
    for eta in (-0.5, 0.0, 0.7):
        assert surrogate_norm(np.full((N, N), -1.5), eta) == pytest.approx(1.5)
        # a cos(2 pi 3 x) splits into two coefficients a/2 at |k| = 6 pi
        assert surrogate_norm(2.0 * np.cos(6 * np.pi * X), eta) == pytest.approx((1 + 6 * np.pi) ** eta, rel=1e-12)
    with pytest.raises(ValueError):
        surrogate_norm(X, 1.0)


def test_surrogate_norm_monotone_in_eta():
    w = np.random.default_rng(0).normal(size=(32, 32))
    w -= w.mean()
    vals = [surrogate_norm(w, e) for e in np.linspace(-0.9, 0.9, 10)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


# --- refinement ---------------------------------------------------------------------

def test_refinement_linear_machine_scale(g16):
    # beta^2 = 0: every eps run is the same linear solve once eps is clamped to 2h
    cfg = SolveConfig(g16, 0.0, None, T=0.02)
    tab = refinement_study(cfg, [1 / 8, 1 / 16, 1 / 32])
    assert tab.distances[1] <= 1e-12
    assert tab.rows()[0]["eps_coarse"] == 1 / 8


def test_refinement_and_swaps_run(g16):
    cfg = SolveConfig(g16, B2, F2, T=0.01, eta=0.0)
    tab = refinement_study(cfg, [1 / 4, 1 / 8])
    assert len(tab.distances) == 1 and not any(tab.blowups)
    for what in ("mollifier", "zeta2"):
        st_ = swap_study(cfg, [1 / 4, 1 / 8], what)
        assert len(st_.distances) == 2 and all(d > 0 for d in st_.distances)
    with pytest.raises(ValueError):
        swap_study(cfg, [1 / 4], "other")
    with pytest.raises(ValueError):
        refinement_study(cfg, [1 / 4], mode="other")


def test_joint_refinement_coupling():
    inc = np.random.default_rng(0).normal(size=(16, 8, 8))
    c = coarsen_noise(inc, 2)
    assert c.shape == (4, 4, 4)
    assert c[1, 2, 3] == pytest.approx(inc[4:8, 4:6, 6:8].mean())
    cfg = SolveConfig(TorusGrid(N=8, cfl=1), B2, F1, T=0.02, eta=0.0)
    tab = refinement_study(cfg, [1 / 4, 1 / 8], mode="joint")
    assert len(tab.distances) == 1 and np.isfinite(tab.distances[0])


def test_restrict_keeps_low_modes():
    N = 16
    x = np.arange(N) / N
    X, Y = np.meshgrid(x, x, indexing="ij")
    u = np.cos(2 * np.pi * X) + 0.3 * np.sin(2 * np.pi * 3 * Y) + 0.1 * np.cos(2 * np.pi * 7 * X)
    r = restrict(u, 8)
    assert np.abs(r - (u[::2, ::2] - 0.1 * np.cos(2 * np.pi * 7 * X[::2, ::2]))).max() <= 1e-12
