"""Reproducible lattice white noise, its mollification and the free field."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .kernels import G_hat, K_tables, KernelSpec, MollifierSpec, check_eps, lattice, mollifier_tables
from .spacetime import TorusGrid

_MASK32 = 0xFFFFFFFF
_MASK64 = 0xFFFFFFFFFFFFFFFF


def slab_generator(seed: int, sample: int, n: int) -> np.random.Generator:
    """Counter-based stream keyed by (master seed, sample index, time index).

    Cells within a slab are addressed by their flat index in row-major order.
    """
    key = np.array([seed & _MASK64, ((sample & _MASK32) << 32) | ((n + 2 ** 31) & _MASK32)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def noise_slab(grid: TorusGrid, seed: int, n: int, sample: int = 0, dtype=np.float64) -> np.ndarray:
    """One time slab of N(0, 1/(dt h^2)) increments."""
    z = slab_generator(seed, sample, n).standard_normal(grid.N * grid.N, dtype=dtype)
    return z.reshape(grid.N, grid.N) / dtype(np.sqrt(grid.cell))


@dataclass
class NoiseRealization:
    seed: int
    grid: TorusGrid
    n0: int
    increments: np.ndarray
    sample: int = 0

    @property
    def n1(self) -> int:
        return self.n0 + self.increments.shape[0]


def sample_noise(grid: TorusGrid, seed: int, n0: int = 0, n1: int | None = None,
                 sample: int = 0, dtype=np.float64) -> NoiseRealization:
    """White noise on time indices n0 .. n1-1 (defaults to the grid horizon).

    ``dtype=np.float32`` draws a different (single precision) stream.
    """
    if n1 is None:
        n1 = n0 + grid.nsteps()
    inc = np.empty((n1 - n0, grid.N, grid.N), dtype=dtype)
    for i, n in enumerate(range(n0, n1)):
        inc[i] = noise_slab(grid, seed, n, sample, dtype)
    return NoiseRealization(seed, grid, n0, inc, sample)


@dataclass
class LatticeField:
    """Real or complex field on time indices n0 .. n0+T-1 of a grid."""
    grid: TorusGrid
    n0: int
    values: np.ndarray

    @property
    def n1(self) -> int:
        return self.n0 + self.values.shape[0]

    def window(self, a: int, b: int) -> np.ndarray:
        if a < self.n0 or b > self.n1:
            raise ValueError(f"field covers [{self.n0},{self.n1}), requested [{a},{b})")
        return self.values[a - self.n0: b - self.n0]


@dataclass
class FreeField(LatticeField):
    eps: float = 0.0
    source_seed: int = 0
    sample: int = 0
    mspec: MollifierSpec | None = None
    kspec: KernelSpec | None = None
    xi_eps: LatticeField | None = None

    def remainder(self, kind: str = "semigroup") -> LatticeField:
        """R_eps = d_t Phi - (1/2) Lap Phi - xi_eps on the lattice.

        ``semigroup`` matches the solver's time stepping exactly:
        R_{n+1} = (Phi_{n+1} - S Phi_n)/dt - (xi_{n+1} + S xi_n)/2 with S = exp(dt Lap/2).
        ``fd`` uses a forward difference in time and the 5-point Laplacian.
        """
        if self.xi_eps is None:
            raise ValueError("free field was built without xi_eps")
        g = self.grid
        a, b = max(self.n0, self.xi_eps.n0), min(self.n1, self.xi_eps.n1)
        P = self.window(a, b)
        X = self.xi_eps.window(a, b)
        if kind == "semigroup":
            S = heat_multiplier(g, g.dt)
            SP = sfft.irfft2(sfft.rfft2(P[:-1], axes=(-2, -1)) * S, s=(g.N, g.N), axes=(-2, -1))
            SX = sfft.irfft2(sfft.rfft2(X[:-1], axes=(-2, -1)) * S, s=(g.N, g.N), axes=(-2, -1))
            R = (P[1:] - SP) / g.dt - 0.5 * (X[1:] + SX)
            return LatticeField(g, a + 1, R)
        if kind == "fd":
            lap = (np.roll(P, 1, -1) + np.roll(P, -1, -1) + np.roll(P, 1, -2) + np.roll(P, -1, -2)
                   - 4 * P) / g.h ** 2
            R = (P[1:] - P[:-1]) / g.dt - 0.5 * lap[:-1] - X[:-1]
            return LatticeField(g, a, R)
        raise ValueError(f"unknown remainder kind {kind!r}")


def heat_multiplier(grid: TorusGrid, t: float) -> np.ndarray:
    """exp(-|k|^2 t / 2) on the rfft2 mode layout."""
    k1 = 2 * np.pi * sfft.fftfreq(grid.N, d=grid.h)
    k2 = 2 * np.pi * sfft.rfftfreq(grid.N, d=grid.h)
    return np.exp(-(k1[:, None] ** 2 + k2[None, :] ** 2) * t / 2)


class TimeConvolver:
    """Space-time convolution with a quarter-grid spectral kernel.

    The kernel occupies time offsets lo .. lo+Lk-1; spatial convolution is
    circular (spectral), temporal convolution is linear (FFT, zero padded).
    ``single=True`` runs the transforms in single precision (Monte Carlo use).
    """

    def __init__(self, grid: TorusGrid, khat, lo: int, cache_limit: float = 4e8, single: bool = False):
        self.grid = grid
        self.lat = lattice(grid)
        self.lo = lo
        self.single = single
        kf = self.lat.to_full_modes(np.asarray(khat))  # (Lk, N, N//2+1) real
        self.kfull = kf.astype(np.float32) if single else kf
        self.Lk = self.kfull.shape[0]
        self._cache: dict[int, np.ndarray] = {}
        self.cache_limit = cache_limit

    def _kernel_fft(self, nf: int):
        if nf in self._cache:
            return self._cache[nf]
        KF = sfft.fft(self.kfull, n=nf, axis=0)
        if KF.nbytes < self.cache_limit:
            self._cache = {nf: KF}
        return KF

    def history(self) -> int:
        """Number of earlier slabs an output slab depends on."""
        return self.lo + self.Lk - 1

    def _check(self, T, n0, a, b):
        if a - (self.lo + self.Lk - 1) < n0 or b - 1 - self.lo > n0 + T - 1:
            raise ValueError("input window too short for the requested output range")

    def apply_hat(self, Fhat, n0: int, a: int, b: int, chunk: int | None = None):
        """Time-convolve rfft2 data Fhat (slabs n0..) and return rfft2 data for slabs a..b-1."""
        T = Fhat.shape[0]
        self._check(T, n0, a, b)
        nf = sfft.next_fast_len(T + self.Lk - 1)
        KF = self._kernel_fft(nf)
        r0 = a - n0 - self.lo
        if chunk is None:
            per_row = nf * Fhat.shape[2] * Fhat.itemsize
            chunk = max(1, int(2e8 // per_row))
        out = np.empty((b - a,) + Fhat.shape[1:], dtype=Fhat.dtype)
        for s in range(0, Fhat.shape[1], chunk):
            sl = slice(s, s + chunk)
            c = sfft.ifft(sfft.fft(Fhat[:, sl], n=nf, axis=0) * KF[:, sl], axis=0)
            out[:, sl] = c[r0: r0 + (b - a)]
        return out * self.grid.dt

    def apply(self, F, n0: int, a: int, b: int):
        """Real input (T, N, N) on slabs n0.. -> real output on slabs a..b-1."""
        g = self.grid
        if self.single:
            F = np.asarray(F, dtype=np.float32)
        Fhat = sfft.rfft2(F, axes=(-2, -1))
        out = self.apply_hat(Fhat, n0, a, b)
        return sfft.irfft2(out, s=(g.N, g.N), axes=(-2, -1))


_CONVOLVERS: dict = {}


def convolver(kind: str, grid: TorusGrid, kspec: KernelSpec | None = None,
              mspec: MollifierSpec | None = None, single: bool = False) -> TimeConvolver:
    """Cached convolvers: 'rho' (mollifier), 'K' (kernel) and 'G' (K * rho)."""
    key = (kind, grid, kspec, mspec, single)
    if key not in _CONVOLVERS:
        if len(_CONVOLVERS) > 6:
            _CONVOLVERS.clear()
        if kind == "rho":
            _, rhat, ns = mollifier_tables(mspec, grid)
            _CONVOLVERS[key] = TimeConvolver(grid, rhat, -ns, single=single)
        elif kind == "K":
            Khat, _ = K_tables(kspec, grid)
            _CONVOLVERS[key] = TimeConvolver(grid, Khat, 0, single=single)
        elif kind == "G":
            G, ns = G_hat(kspec, mspec, grid)
            _CONVOLVERS[key] = TimeConvolver(grid, G, -ns, single=single)
        else:
            raise ValueError(kind)
    return _CONVOLVERS[key]


def field_window(grid: TorusGrid, kspec: KernelSpec, mspec: MollifierSpec, a: int, b: int):
    """Noise time range [lo, hi) needed for Phi_eps on slabs a..b-1.

    K is causal but rho is symmetric in time, so Phi at slab n needs noise on
    [n - nt + 1 - ns, n + ns].
    """
    Khat, _ = K_tables(kspec, grid)
    _, _, ns = mollifier_tables(mspec, grid)
    return a - (Khat.shape[0] - 1) - ns, b + ns


def mollify(xi: NoiseRealization, mspec: MollifierSpec, a: int | None = None,
            b: int | None = None) -> LatticeField:
    """xi_eps = rho_eps * xi on slabs a..b-1 (default: every slab fully determined)."""
    check_eps(xi.grid, mspec.eps)
    conv = convolver("rho", xi.grid, mspec=mspec)
    ns = -conv.lo
    a = xi.n0 + ns if a is None else a
    b = xi.n1 - ns if b is None else b
    return LatticeField(xi.grid, a, conv.apply(xi.increments, xi.n0, a, b))


def free_field(xi: NoiseRealization, kspec: KernelSpec, mspec: MollifierSpec,
               a: int | None = None, b: int | None = None, with_xi_eps: bool = False,
               fused: bool = True, single: bool = False) -> FreeField:
    """Phi_eps = K * xi_eps on slabs a..b-1.

    ``fused`` convolves once with G = K * rho_eps; otherwise the two
    convolutions are applied in sequence.  Both agree to rounding.
    """
    g = xi.grid
    check_eps(g, mspec.eps)
    _, _, ns = mollifier_tables(mspec, g)
    Kconv = convolver("K", g, kspec=kspec)
    hist = Kconv.history()
    a = xi.n0 + ns + hist if a is None else a
    b = xi.n1 - ns if b is None else b
    xe = None
    if with_xi_eps or not fused:
        xe = mollify(xi, mspec, a - hist - (0 if fused else 0), b)
    if fused:
        vals = convolver("G", g, kspec, mspec, single).apply(xi.increments, xi.n0, a, b)
    else:
        vals = Kconv.apply(xe.values, xe.n0, a, b)
    return FreeField(g, a, vals, eps=mspec.eps, source_seed=xi.seed, sample=xi.sample,
                     mspec=mspec, kspec=kspec, xi_eps=xe)


def sample_free_field(grid: TorusGrid, kspec: KernelSpec, mspec: MollifierSpec, seed: int,
                      a: int, b: int, sample: int = 0, with_xi_eps: bool = False) -> FreeField:
    lo, hi = field_window(grid, kspec, mspec, a, b)
    xi = sample_noise(grid, seed, lo, hi, sample)
    return free_field(xi, kspec, mspec, a, b, with_xi_eps=with_xi_eps)
