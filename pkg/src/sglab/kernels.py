"""Truncated heat kernel, mollified covariances, potentials and Wick constants.

Everything is tabulated on the simulation lattice.  All kernels are even in
each spatial coordinate, so spatial transforms work on the quarter grid
j in [0, N/2]^2 with a type-I DCT; ``Lattice.W`` holds the multiplicity of
each quarter node in the full torus.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.fft import dctn, irfft, next_fast_len, rfft

from .spacetime import ParabolicPoint, ResolutionError, TorusGrid, get_profile, minimal_image, parabolic_norm

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class KernelSpec:
    cutoff_inner: float = 0.25
    cutoff_outer: float = 0.45
    L: float = 1.0

    def __post_init__(self):
        if not (0 < self.cutoff_inner < self.cutoff_outer <= 1):
            raise ValueError("need 0 < cutoff_inner < cutoff_outer <= 1")
        if self.cutoff_outer >= self.L / 2:
            raise ValueError("kernel support must stay inside half the torus period")

    @property
    def time_support(self) -> float:
        return self.cutoff_outer ** 2

    def tag(self) -> str:
        return f"K[{self.cutoff_inner:g},{self.cutoff_outer:g},L={self.L:g}]"


@dataclass(frozen=True)
class MollifierSpec:
    profile: str = "bump"
    eps: float = 1.0 / 16

    def __post_init__(self):
        if not (0 < self.eps <= 1):
            raise ValueError("eps must lie in (0, 1]")
        get_profile(self.profile)


def smooth_cutoff(r, inner: float, outer: float):
    """C^infinity step: 1 for r <= inner, 0 for r >= outer."""
    r = np.asarray(r, dtype=float)
    u = np.clip((outer - r) / (outer - inner), 0.0, 1.0)

    def f(s):
        out = np.zeros_like(s)
        m = s > 0
        out[m] = np.exp(-1.0 / s[m])
        return out

    a, b = f(u), f(1.0 - u)
    return a / (a + b)


def heat_kernel_K(spec: KernelSpec, t, x1=0.0, x2=0.0):
    """Pointwise truncated heat kernel cutoff(|z|) exp(-|x|^2/2t)/(2 pi t), 0 for t <= 0."""
    if isinstance(t, ParabolicPoint):
        t, x1, x2 = t.t, t.x1, t.x2
    t = np.asarray(t, dtype=float)
    a = minimal_image(x1, spec.L)
    b = minimal_image(x2, spec.L)
    t, a, b = np.broadcast_arrays(t, a, b)
    out = np.zeros(t.shape)
    m = t > 0
    r = parabolic_norm(t[m], a[m], b[m], L=None)
    out[m] = smooth_cutoff(r, spec.cutoff_inner, spec.cutoff_outer) * np.exp(
        -(a[m] ** 2 + b[m] ** 2) / (2 * t[m])) / (TWO_PI * t[m])
    return float(out) if out.ndim == 0 else out


class Lattice:
    """Quarter-grid spectral helper bound to a TorusGrid."""

    def __init__(self, grid: TorusGrid):
        if grid.N % 2:
            raise ValueError("N must be even")
        self.grid = grid
        self.N, self.L, self.h, self.dt = grid.N, grid.L, grid.h, grid.dt
        self.M = grid.N // 2 + 1
        m = np.arange(self.M)
        self.k = TWO_PI * m / self.L
        self.K2 = self.k[:, None] ** 2 + self.k[None, :] ** 2
        w = np.where((m == 0) | (m == self.N // 2), 1.0, 2.0)
        self.W = w[:, None] * w[None, :]
        x = m * self.h
        self.X1, self.X2 = np.meshgrid(x, x, indexing="ij")

    def to_spec(self, f):
        return self.h ** 2 * dctn(f, type=1, axes=(-2, -1))

    def from_spec(self, F):
        return dctn(F, type=1, axes=(-2, -1)) / self.L ** 2

    def fold(self, j):
        """Map integer offsets to quarter-grid indices."""
        j = np.mod(np.asarray(j), self.N)
        return np.minimum(j, self.N - j)

    def full_index(self):
        """Quarter indices for the rfft2 mode layout (N, N//2+1)."""
        return self.fold(np.arange(self.N))[:, None], np.arange(self.N // 2 + 1)[None, :]

    def to_full_modes(self, Q):
        """Expand quarter-grid spectral data (..., M, M) to rfft2 layout (..., N, N//2+1)."""
        i1, i2 = self.full_index()
        return Q[..., i1, i2]

    def space_sum(self, f):
        """Full-torus sum of a quarter-grid even field times h^2."""
        return (f * self.W).sum(axis=(-2, -1)) * self.h ** 2


@lru_cache(maxsize=4)
def lattice(grid: TorusGrid) -> Lattice:
    return Lattice(grid)


@lru_cache(maxsize=2)
def K_tables(kspec: KernelSpec, grid: TorusGrid):
    """(Khat, Kreal): time slices n = 0..nt-1 of the lattice kernel.

    Slice n >= 1 is cutoff * periodic heat kernel at t = n dt; slice 0 carries
    half a delta (trapezoidal weight of the t = 0 endpoint).
    """
    lat = lattice(grid)
    if abs(kspec.L - grid.L) > 1e-14:
        raise ValueError("kernel and grid periods differ")
    nt = int(np.ceil(kspec.time_support / grid.dt)) + 1
    Khat = np.empty((nt, lat.M, lat.M))
    Kreal = np.empty((nt, lat.M, lat.M))
    Khat[0] = 0.5
    Kreal[0] = 0.0
    Kreal[0, 0, 0] = 0.5 / lat.h ** 2
    for n in range(1, nt):
        t = n * grid.dt
        P = lat.from_spec(np.exp(-lat.K2 * t / 2))
        chi = smooth_cutoff(np.sqrt(np.sqrt(t * t + lat.X1 ** 4 + lat.X2 ** 4)),
                            kspec.cutoff_inner, kspec.cutoff_outer)
        Kreal[n] = chi * P
        Khat[n] = lat.to_spec(Kreal[n])
    Khat.setflags(write=False)
    Kreal.setflags(write=False)
    return Khat, Kreal


def check_eps(grid: TorusGrid, eps: float):
    if eps < 2 * grid.h * (1 - 1e-12):
        raise ResolutionError(f"eps = {eps:.4g} < 2h = {2*grid.h:.4g}: mollifier unresolved")


@lru_cache(maxsize=8)
def mollifier_tables(mspec: MollifierSpec, grid: TorusGrid):
    """(rho_real, rho_hat, ns): slices n = -ns..ns, normalized to unit lattice mass."""
    check_eps(grid, mspec.eps)
    lat = lattice(grid)
    eps = mspec.eps
    ns = int(np.floor(eps * eps / grid.dt))
    prof = get_profile(mspec.profile)
    ts = np.arange(-ns, ns + 1) * grid.dt
    rho = np.stack([prof(t / eps ** 2, lat.X1 / eps, lat.X2 / eps) for t in ts]) / eps ** 4
    rho /= (rho * lat.W).sum() * lat.h ** 2 * grid.dt
    rhat = lat.to_spec(rho)
    rho.setflags(write=False)
    rhat.setflags(write=False)
    return rho, rhat, ns


def _conv_time(A, B, dt, chunk=16):
    """Full linear convolution along axis 0, times dt."""
    La, Lb = A.shape[0], B.shape[0]
    n = La + Lb - 1
    nf = next_fast_len(n, real=True)
    out = np.empty((n,) + A.shape[1:])
    for s in range(0, A.shape[1], chunk):
        sl = slice(s, s + chunk)
        out[:, sl] = irfft(rfft(A[:, sl], nf, axis=0) * rfft(B[:, sl], nf, axis=0), nf, axis=0)[:n]
    return out * dt


def _xcorr_time(A, B, nlag, shift, dt, chunk=16):
    """C[tau] = sum_i A[i] B[i + shift + tau] dt for tau = 0..nlag-1."""
    La, Lb = A.shape[0], B.shape[0]
    nf = next_fast_len(La + Lb + abs(shift) + nlag, real=True)
    out = np.empty((nlag,) + A.shape[1:])
    for s in range(0, A.shape[1], chunk):
        sl = slice(s, s + chunk)
        c = irfft(np.conj(rfft(A[:, sl], nf, axis=0)) * rfft(B[:, sl], nf, axis=0), nf, axis=0)
        idx = np.mod(shift + np.arange(nlag), nf)
        out[:, sl] = c[idx]
    return out * dt


def G_hat(kspec: KernelSpec, mspec: MollifierSpec, grid: TorusGrid):
    """Spectral slices of G = K * rho_eps, covering times n = -ns .. nt-1+ns."""
    Khat, _ = K_tables(kspec, grid)
    _, rhat, ns = mollifier_tables(mspec, grid)
    return _conv_time(Khat, rhat, grid.dt), ns


@dataclass
class CovarianceModel:
    """Tabulated Q_eps (or a mixed Q_{eps,eps'}) on lattice offsets.

    ``Qtab[n, j1, j2]`` holds Q at time lag n >= 0 and quarter spatial offset
    (j1, j2); Q vanishes for lags beyond the table.
    """
    grid: TorusGrid
    kspec: KernelSpec
    mspec: MollifierSpec
    beta2: float
    Qtab: np.ndarray
    mspec2: MollifierSpec | None = None
    C_hat: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def eps(self) -> float:
        return self.mspec.eps

    @property
    def Q0(self) -> float:
        return float(self.Qtab[0, 0, 0])

    @property
    def beta_bar(self) -> float:
        return self.beta2 / TWO_PI

    @property
    def lat(self) -> Lattice:
        return lattice(self.grid)

    @property
    def nlag(self) -> int:
        return self.Qtab.shape[0]

    def with_beta2(self, beta2: float) -> "CovarianceModel":
        return CovarianceModel(self.grid, self.kspec, self.mspec, beta2, self.Qtab,
                               self.mspec2, self.C_hat, dict(self.meta))

    def table(self, nlag: int) -> np.ndarray:
        """Q on lags 0..nlag-1 (zero-padded past the support)."""
        if nlag <= self.nlag:
            return self.Qtab[:nlag]
        out = np.zeros((nlag,) + self.Qtab.shape[1:])
        out[: self.nlag] = self.Qtab
        return out

    def at_offsets(self, n, j1, j2):
        """Q at integer lattice offsets (time steps, cells)."""
        n = np.abs(np.asarray(n))
        a, b = self.lat.fold(j1), self.lat.fold(j2)
        n, a, b = np.broadcast_arrays(n, a, b)
        out = np.zeros(n.shape)
        m = n < self.nlag
        out[m] = self.Qtab[n[m], a[m], b[m]]
        return out

    def Q(self, t, x1=0.0, x2=0.0):
        """Multilinear interpolation between lattice nodes."""
        if isinstance(t, ParabolicPoint):
            t, x1, x2 = t.t, t.x1, t.x2
        g = self.grid
        ft = np.abs(np.asarray(t, dtype=float)) / g.dt
        f1 = np.asarray(x1, dtype=float) / g.h
        f2 = np.asarray(x2, dtype=float) / g.h
        ft, f1, f2 = np.broadcast_arrays(ft, f1, f2)
        i0, j0, k0 = np.floor(ft).astype(int), np.floor(f1).astype(int), np.floor(f2).astype(int)
        rt, r1, r2 = ft - i0, f1 - j0, f2 - k0
        out = np.zeros(ft.shape)
        for a in (0, 1):
            wa = rt if a else 1 - rt
            for b in (0, 1):
                wb = r1 if b else 1 - r1
                for c in (0, 1):
                    wc = r2 if c else 1 - r2
                    out += wa * wb * wc * self.at_offsets(i0 + a, j0 + b, k0 + c)
        return float(out) if out.ndim == 0 else out

    def J(self, *z):
        return np.exp(-self.beta2 * self.Q(*z))

    def Jm(self, *z):
        return np.exp(self.beta2 * self.Q(*z))

    def two_point(self, k: int = 1, nlag: int | None = None, Q0: float | None = None):
        """E Psi^k(0) conj(Psi^k)(z) = exp(-beta^2 (k^2-1) Q0) J(z)^(-k^2) on lags."""
        if k < 1:
            raise ValueError("mode index k must be >= 1")
        Q0 = self.Q0 if Q0 is None else Q0
        tab = self.table(self.nlag if nlag is None else nlag)
        return np.exp(self.beta2 * (k * k * tab - (k * k - 1) * Q0))


def covariance_Q_eps(kspec: KernelSpec, mspec: MollifierSpec, beta2: float,
                     grid: TorusGrid) -> CovarianceModel:
    """Q_eps = (K * rho_eps) * T(K * rho_eps) tabulated on lattice offsets."""
    return mixed_covariance(kspec, mspec, mspec, beta2, grid)


def mixed_covariance(kspec: KernelSpec, m1: MollifierSpec, m2: MollifierSpec, beta2: float,
                     grid: TorusGrid) -> CovarianceModel:
    """Q_{eps,eps'}(z) = E Phi_eps(0) Phi_eps'(z) for fields built from one noise."""
    lat = lattice(grid)
    G1, ns1 = G_hat(kspec, m1, grid)
    G2, ns2 = (G1, ns1) if m2 == m1 else G_hat(kspec, m2, grid)
    nlag = max(G1.shape[0], G2.shape[0])
    # index i of G1 is time i - ns1; G2 index j is time j - ns2
    Qhat = _xcorr_time(G1, G2, nlag, ns2 - ns1, grid.dt)
    Qtab = lat.from_spec(Qhat) / 1.0
    # trim trailing lags that vanish identically
    nz = np.nonzero(np.abs(Qtab).reshape(nlag, -1).max(axis=1) > 0)[0]
    Qtab = np.ascontiguousarray(Qtab[: nz[-1] + 1]) if nz.size else Qtab[:1]
    return CovarianceModel(grid, kspec, m1, beta2, Qtab, mspec2=None if m2 == m1 else m2,
                           meta={"kernel": kspec.tag(), "dt": grid.dt, "N": grid.N})


def Q0_ladder(kspec: KernelSpec, profile: str, eps_list, grid: TorusGrid):
    """Q_eps(0) for each eps, computed from the spectral sum without full tables."""
    lat = lattice(grid)
    out = []
    for eps in eps_list:
        G, _ = G_hat(kspec, MollifierSpec(profile, eps), grid)
        out.append(float(((G ** 2).sum(axis=0) * lat.W).sum() * grid.dt / lat.L ** 2))
    return np.array(out)


@dataclass
class WickConstants:
    C_hat: float
    C_rho: float
    slope: float
    eps: np.ndarray
    Q0: np.ndarray
    residuals: np.ndarray


def wick_constants(eps, Q0, beta2: float, n_fit: int = 3) -> WickConstants:
    """Fit Q_eps(0) = -(1/2pi) log eps + C_hat + r(eps) on the smallest eps values.

    Returns C_hat, C_rho = exp(beta^2 C_hat / 2), the free fitted slope and the
    residuals r(eps).
    """
    eps = np.asarray(eps, dtype=float)
    Q0 = np.asarray(Q0, dtype=float)
    if eps.size < 3:
        raise ValueError("insufficient data: need Q_eps(0) for at least 3 eps values")
    order = np.argsort(eps)
    eps, Q0 = eps[order], Q0[order]
    shifted = Q0 + np.log(eps) / TWO_PI
    C_hat = float(shifted[:n_fit].mean())
    slope = float(np.polyfit(np.log(eps), Q0, 1)[0])
    return WickConstants(C_hat, float(np.exp(beta2 * C_hat / 2)), slope, eps, Q0, shifted - C_hat)


def remainder_ratios(eps, Q0):
    """Ratios d(eps)/d(eps/2) of the second differences of Q_eps(0) + log(eps)/2pi.

    With r(eps) = c eps^2, consecutive differences shrink by 4 per halving.
    """
    eps = np.asarray(eps, dtype=float)
    order = np.argsort(eps)[::-1]
    s = (np.asarray(Q0)[order] + np.log(eps[order]) / TWO_PI)
    d = np.diff(s)
    return d[:-1] / d[1:]


@dataclass
class KernelTable:
    """A tabulated even-in-space kernel on time lags lo..lo+n-1 (quarter grid)."""
    grid: TorusGrid
    lo: int
    values: np.ndarray

    def at_offsets(self, n, j1, j2):
        lat = lattice(self.grid)
        n = np.asarray(n) - self.lo
        a, b = lat.fold(j1), lat.fold(j2)
        n, a, b = np.broadcast_arrays(n, a, b)
        out = np.zeros(n.shape)
        m = (n >= 0) & (n < self.values.shape[0])
        out[m] = self.values[n[m], a[m], b[m]]
        return out


def F_eps_kernel(cov: CovarianceModel, k: int = 1, lags: int | None = None) -> KernelTable:
    """F^(k) = exp(-beta^2 (k^2-1) Q0) (TK * J^(-k^2)) on time lags -lags..lags.

    F(tau, y) = sum_{m >= 0} sum_x K(m, x) E[Psi^k conj Psi^k](tau + m, y + x) dt h^2.
    """
    if k < 1:
        raise ValueError("mode index k must be >= 1")
    grid = cov.grid
    lat = lattice(grid)
    Khat, _ = K_tables(cov.kspec, grid)
    nt = Khat.shape[0]
    lags = nt if lags is None else lags
    # two-point function on lags 0 .. lags+nt, mirrored for negative lags
    tp = cov.two_point(k, nlag=lags + nt + 1)
    That = lat.to_spec(tp)
    # need S(s) for s = -lags .. lags+nt-1; even in s
    s_idx = np.abs(np.arange(-lags, lags + nt))
    S = That[s_idx]
    # F(tau) = sum_m K(m) S(tau + m) dt ; index tau -> position tau + lags in S
    F = _xcorr_time(Khat, S, 2 * lags + 1, 0, grid.dt)
    return KernelTable(grid, -lags, lat.from_spec(F))


def renorm_constant_C_eps(cov: CovarianceModel, k: int = 1) -> float:
    """C^(k) = exp(-beta^2 (k^2-1) Q0) sum_z K(z) J(z)^(-k^2) dt h^2."""
    if k < 1:
        raise ValueError("mode index k must be >= 1")
    _, Kreal = K_tables(cov.kspec, cov.grid)
    tp = cov.two_point(k, nlag=Kreal.shape[0])
    lat = cov.lat
    return float((Kreal * tp * lat.W).sum() * lat.h ** 2 * cov.grid.dt)


def two_sided_constants(cov: CovarianceModel, rmax: float = 1.0):
    """Empirical [c1, c2] with c1 <= J(z)/(|z| + eps)^beta_bar <= c2 on lattice nodes."""
    lat, g = cov.lat, cov.grid
    n = np.arange(cov.nlag)[:, None, None]
    r = parabolic_norm(n * g.dt, lat.X1[None], lat.X2[None], L=None)
    m = r <= rmax
    ratio = np.exp(-cov.beta2 * cov.Qtab) / (r + cov.eps) ** cov.beta_bar
    return float(ratio[m].min()), float(ratio[m].max())
