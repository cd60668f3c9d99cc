"""Spectral time stepping for the renormalised sine-Gordon equation on the torus.

Direct scheme, one step of size dt with S = exp(dt Lap / 2):

    u_{n+1} = S (u_n + dt c F(u_n)) + dt/2 (xi_eps[n+1] + S xi_eps[n])

Split scheme on v = u - Phi_eps with the same noise:

    v_{n+1} = S (v_n + dt c F(v_n + Phi_n)) - dt Rt_{n+1}
    Rt_{n+1} = (Phi_{n+1} - S Phi_n)/dt - (xi_eps[n+1] + S xi_eps[n])/2

so the two schemes agree to rounding on a shared realisation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import fft as sfft

from .chaos import ContractError
from .kernels import KernelSpec, MollifierSpec, Q0_ladder
from .noise import FreeField, LatticeField, free_field, heat_multiplier, mollify, sample_noise
from .spacetime import TorusGrid

BLOWUP_NORM = 1e6


@dataclass(frozen=True)
class TrigPolynomial:
    """F(u) = sum_k zeta_k sin(k beta u + theta_k); modes are (k, zeta_k, theta_k)."""
    beta: float
    modes: tuple = ((1, 1.0, 0.0),)

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple((int(k), float(z), float(t)) for k, z, t in self.modes))
        if any(k < 1 for k, _, _ in self.modes):
            raise ValueError("mode indices must be positive")

    @property
    def Z(self) -> int:
        return max((k for k, _, _ in self.modes), default=0)

    def __call__(self, u):
        out = np.zeros_like(np.asarray(u, dtype=float))
        for k, z, th in self.modes:
            out += z * np.sin(k * self.beta * u + th)
        return out

    def split_parts(self, v, psi_c: dict, psi_s: dict):
        """sum_k zeta_k (sin(k beta v + theta) Psi^{c,k} + cos(k beta v + theta) Psi^{s,k})."""
        out = np.zeros_like(np.asarray(v, dtype=float))
        for k, z, th in self.modes:
            a = k * self.beta * v + th
            out += z * (np.sin(a) * psi_c[k] + np.cos(a) * psi_s[k])
        return out

    def counterterm(self, v):
        """sum_k (f_c f_c' + f_s f_s') with f_c = zeta sin(k beta v + theta), f_s = zeta cos(...)."""
        out = np.zeros_like(np.asarray(v, dtype=float))
        for k, z, th in self.modes:
            a = k * self.beta * v + th
            fc, dfc = z * np.sin(a), z * k * self.beta * np.cos(a)
            fs, dfs = z * np.cos(a), -z * k * self.beta * np.sin(a)
            out += fc * dfc + fs * dfs
        return out

    def without(self, k: int) -> "TrigPolynomial":
        return TrigPolynomial(self.beta, tuple(m for m in self.modes if m[0] != k))


@dataclass(frozen=True)
class SolveConfig:
    grid: TorusGrid
    beta2: float
    F: TrigPolynomial | None = None
    eps: float = 1 / 16
    normalization: str = "wick"     # "wick": exp(beta^2 Q_eps(0)/2); "constant": C_rho eps^(-beta^2/4pi)
    C_rho: float | None = None
    u0: object = None               # None (zero), "free-field", or an (N, N) array
    seed: int = 0
    sample: int = 0
    scheme: str = "direct"
    profile: str = "bump"
    kspec: KernelSpec = field(default_factory=KernelSpec)
    T: float = 0.05
    eta: float = -0.25
    snap_dt: float = 0.0            # 0 keeps only the final state
    noise: bool = True

    def __post_init__(self):
        if self.scheme not in ("direct", "split"):
            raise ValueError("scheme must be 'direct' or 'split'")
        if self.normalization not in ("wick", "constant"):
            raise ValueError("normalization must be 'wick' or 'constant'")
        if self.beta2 < 0:
            raise ValueError("beta2 must be non-negative")
        if self.beta2 > 0 and self.F is not None and self.F.modes and self.beta2 >= 16 * np.pi / 3:
            raise ValueError("renormalised runs need beta2 < 16 pi / 3")
        if self.F is not None and self.beta2 > 0 and not math.isclose(self.F.beta ** 2, self.beta2, rel_tol=1e-12):
            raise ValueError("TrigPolynomial beta does not match beta2")

    @property
    def eps_eff(self) -> float:
        return max(self.eps, 2 * self.grid.h)

    @property
    def mspec(self) -> MollifierSpec:
        return MollifierSpec(self.profile, self.eps_eff)

    @property
    def nsteps(self) -> int:
        return int(round(self.T / self.grid.dt))


def renorm_constant(cfg: SolveConfig) -> float:
    """c multiplying F: Wick normalisation or C_rho eps^(-beta^2/4pi)."""
    if cfg.F is None or not cfg.F.modes or cfg.beta2 == 0:
        return 1.0
    if cfg.normalization == "constant":
        if cfg.C_rho is None:
            raise ValueError("constant normalization needs C_rho")
        return cfg.C_rho * cfg.eps_eff ** (-cfg.beta2 / (4 * np.pi))
    Q0 = float(Q0_ladder(cfg.kspec, cfg.profile, [cfg.eps_eff], cfg.grid)[0])
    return math.exp(cfg.beta2 * Q0 / 2)


@dataclass
class Trajectory:
    times: np.ndarray
    snapshots: np.ndarray
    norms: np.ndarray
    blowup: bool = False
    blowup_time: float | None = None
    eps_eff: float = 0.0
    c: float = 1.0

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]


def surrogate_norm(u, eta: float, L: float = 1.0) -> float:
    """max over modes of (1 + |k|)^eta |u_hat(k)|, k = 2 pi m / L, u_hat normalised by N^2."""
    if not -1 < eta < 1:
        raise ValueError("eta must lie in (-1, 1)")
    u = np.asarray(u, dtype=float)
    N = u.shape[-1]
    uh = np.abs(sfft.fft2(u, axes=(-2, -1))) / (N * N)
    m = sfft.fftfreq(N, d=1.0 / N)
    kk = 2 * np.pi / L * np.sqrt(m[:, None] ** 2 + m[None, :] ** 2)
    return float(np.max((1 + kk) ** eta * uh))


def _smooth(grid: TorusGrid, S, f):
    return sfft.irfft2(sfft.rfft2(f, axes=(-2, -1)) * S, s=(grid.N, grid.N), axes=(-2, -1))


def _noise_fields(cfg: SolveConfig, need_phi: bool):
    """Mollified noise on slabs 0..n and, for the split scheme, Phi_eps on the same slabs."""
    g = cfg.grid
    n = cfg.nsteps
    ms = cfg.mspec
    if need_phi:
        from .noise import field_window
        lo, hi = field_window(g, cfg.kspec, ms, 0, n + 1)
        xi = sample_noise(g, cfg.seed, lo, hi, cfg.sample)
        phi = free_field(xi, cfg.kspec, ms, 0, n + 1, with_xi_eps=True)
        return phi.xi_eps.window(0, n + 1), phi
    from .kernels import mollifier_tables
    _, _, ns = mollifier_tables(ms, g)
    xi = sample_noise(g, cfg.seed, -ns, n + 1 + ns, cfg.sample)
    return mollify(xi, ms, 0, n + 1).values, None


def _initial(cfg: SolveConfig, phi: FreeField | None):
    N = cfg.grid.N
    if cfg.u0 is None:
        return np.zeros((N, N))
    if isinstance(cfg.u0, str):
        if cfg.u0 != "free-field":
            raise ValueError("u0 must be None, 'free-field' or an array")
        if phi is None:
            raise ValueError("free-field initial data needs the free field")
        return phi.window(0, 1)[0].copy()
    u0 = np.asarray(cfg.u0, dtype=float)
    if u0.shape != (N, N):
        raise ValueError("initial condition has the wrong shape")
    return u0.copy()


def step_direct(u, cfg: SolveConfig, c: float, S, xi_now, xi_next):
    """One direct step; xi_now/xi_next are mollified noise slabs (or None)."""
    g = cfg.grid
    w = u if cfg.F is None or not cfg.F.modes else u + g.dt * c * cfg.F(u)
    if xi_now is not None:
        w = w + 0.5 * g.dt * xi_now
        return _smooth(g, S, w) + 0.5 * g.dt * xi_next
    return _smooth(g, S, w)


def wick_parts(phi_slab, cfg: SolveConfig, c: float):
    """Psi^{c,k}, Psi^{s,k} on one slab: c cos(k beta Phi), c sin(k beta Phi)."""
    beta = math.sqrt(cfg.beta2)
    pc, ps = {}, {}
    for k, _, _ in (cfg.F.modes if cfg.F is not None else ()):
        a = k * beta * phi_slab
        pc[k] = c * np.cos(a)
        ps[k] = c * np.sin(a)
    return pc, ps


def step_split(v, cfg: SolveConfig, c: float, S, phi_now, R_next, lineage=None):
    """One split step.  R_next is the semigroup remainder of the free field at n+1."""
    if lineage is not None and lineage != (cfg.seed, cfg.sample):
        raise ContractError("Psi fields and Phi come from different noise realisations")
    g = cfg.grid
    w = v
    if cfg.F is not None and cfg.F.modes:
        pc, ps = wick_parts(phi_now, cfg, c)
        w = v + g.dt * cfg.F.split_parts(v, pc, ps)
    return _smooth(g, S, w) - g.dt * R_next


def solve(cfg: SolveConfig) -> Trajectory:
    g = cfg.grid
    n = cfg.nsteps
    S = heat_multiplier(g, g.dt)
    c = renorm_constant(cfg)
    split = cfg.scheme == "split"
    xi = phi = None
    if cfg.noise:
        xi, phi = _noise_fields(cfg, need_phi=split or isinstance(cfg.u0, str))
    elif split:
        raise ValueError("split scheme needs noise")
    u = _initial(cfg, phi)
    if split:
        R = phi.remainder("semigroup").window(1, n + 1)
        P = phi.window(0, n + 1)
        state = u - P[0]
        lineage = (phi.source_seed, phi.sample)
    else:
        state = u
    every = max(1, int(round(cfg.snap_dt / g.dt))) if cfg.snap_dt else n
    times, snaps, norms = [0.0], [u.copy()], [surrogate_norm(u, cfg.eta, g.L)]
    blow, tb = False, None
    for i in range(n):
        if split:
            state = step_split(state, cfg, c, S, P[i], R[i], lineage)
            u = state + P[i + 1]
        else:
            xn = xi[i] if xi is not None else None
            xx = xi[i + 1] if xi is not None else None
            state = step_direct(state, cfg, c, S, xn, xx)
            u = state
        t = (i + 1) * g.dt
        if not np.all(np.isfinite(u)) or surrogate_norm(u, cfg.eta, g.L) > BLOWUP_NORM:
            blow, tb = True, t
            break
        if (i + 1) % every == 0 or i + 1 == n:
            times.append(t)
            snaps.append(u.copy())
            norms.append(surrogate_norm(u, cfg.eta, g.L))
    return Trajectory(np.array(times), np.array(snaps), np.array(norms), blow, tb, cfg.eps_eff, c)


def trajectory_distance(a: Trajectory, b: Trajectory, eta: float) -> float:
    """sup over common snapshot times of surrogate_norm(a - b); truncated at any blowup."""
    n = min(len(a.times), len(b.times))
    if n == 0:
        return math.nan
    if not np.allclose(a.times[:n], b.times[:n]):
        raise ValueError("trajectories use different snapshot times")
    return max(surrogate_norm(_common(a.snapshots[i], b.snapshots[i]), eta) for i in range(n))


def restrict(u, N: int):
    """Spectral restriction of a square field to the N x N low modes."""
    Nf = u.shape[-1]
    if Nf == N:
        return u
    m = np.round(sfft.fftfreq(N, d=1.0 / N)).astype(int) % Nf
    uh = sfft.fft2(u)[np.ix_(m, m)] * (N * N) / (Nf * Nf)
    return sfft.ifft2(uh).real


def _common(u, v):
    N = min(u.shape[-1], v.shape[-1])
    return restrict(u, N) - restrict(v, N)


@dataclass
class RefinementTable:
    eps: list
    distances: list
    blowups: list
    label: str = ""

    def strictly_decreasing(self) -> bool:
        d = self.distances
        return all(d[i + 1] < d[i] for i in range(len(d) - 1))

    def rows(self):
        return [{"eps_coarse": self.eps[i], "eps_fine": self.eps[i + 1], "distance": self.distances[i],
                 "label": self.label} for i in range(len(self.distances))]


def refinement_study(cfg: SolveConfig, eps_ladder, mode: str = "fixed-grid") -> RefinementTable:
    """Distances between consecutive eps runs on coupled noise.

    ``fixed-grid`` keeps the lattice and shrinks eps; ``joint`` halves h with eps
    (N = 2 / eps) and couples the noise by block-averaging the finest realisation.
    """
    eps_ladder = sorted(eps_ladder, reverse=True)
    if mode == "fixed-grid":
        runs = [solve(replace(cfg, eps=e)) for e in eps_ladder]
    elif mode == "joint":
        runs = _joint_runs(cfg, eps_ladder)
    else:
        raise ValueError("mode must be 'fixed-grid' or 'joint'")
    return _table(runs, eps_ladder, cfg.eta, mode)


def _table(runs, eps_ladder, eta, label):
    d = [trajectory_distance(runs[i], runs[i + 1], eta) for i in range(len(runs) - 1)]
    return RefinementTable(list(eps_ladder), d, [r.blowup for r in runs], label)


def swap_study(cfg: SolveConfig, eps_ladder, what: str) -> RefinementTable:
    """Distance between paired runs at each eps: mollifier swap or zeta_2 swap."""
    eps_ladder = sorted(eps_ladder, reverse=True)
    d, bl = [], []
    for e in eps_ladder:
        a = replace(cfg, eps=e)
        if what == "mollifier":
            b = replace(a, profile="quartic" if a.profile == "bump" else "bump")
        elif what == "zeta2":
            b = replace(a, F=a.F.without(2))
        else:
            raise ValueError("what must be 'mollifier' or 'zeta2'")
        ra, rb = solve(a), solve(b)
        d.append(trajectory_distance(ra, rb, cfg.eta))
        bl.append(ra.blowup or rb.blowup)
    return RefinementTable(eps_ladder, d, bl, what)


def coarsen_noise(inc: np.ndarray, factor: int = 2) -> np.ndarray:
    """Block-average white-noise increments: factor^2 cells in space, factor^2 slabs in time."""
    T, N, _ = inc.shape
    ft = factor * factor
    T2 = T // ft
    x = inc[: T2 * ft].reshape(T2, ft, N // factor, factor, N // factor, factor)
    return x.mean(axis=(1, 3, 5))


def _joint_runs(cfg: SolveConfig, eps_ladder):
    """Direct runs with h = eps/2, all driven by one finest-grid realisation."""
    from .kernels import mollifier_tables
    from .noise import NoiseRealization
    if cfg.scheme != "direct":
        raise ValueError("joint refinement supports the direct scheme")
    Ns = [int(round(2 * cfg.grid.L / e)) for e in eps_ladder]
    fine = TorusGrid(N=Ns[-1], L=cfg.grid.L, cfl=cfg.grid.dt / cfg.grid.h ** 2)
    grids = [TorusGrid(N=N, L=cfg.grid.L, cfl=fine.cfl) for N in Ns]
    # T is cut to a multiple of the coarsest step so all runs end together
    T = math.floor(cfg.T / grids[0].dt + 1e-9) * grids[0].dt
    pad = max(mollifier_tables(MollifierSpec(cfg.profile, e), g)[2] for e, g in zip(eps_ladder, grids)) + 1
    coarse_factor = Ns[-1] // Ns[0]
    pad_f = pad * coarse_factor ** 2
    hi = max((int(round(T / g.dt)) + 1 + pad) * (Ns[-1] // g.N) ** 2 for g in grids)
    xf = sample_noise(fine, cfg.seed, -pad_f, hi, cfg.sample)
    runs = []
    for e, g in zip(eps_ladder, grids):
        f = Ns[-1] // g.N
        inc = xf.increments if f == 1 else coarsen_noise(xf.increments, f)
        xi = NoiseRealization(cfg.seed, g, -pad_f // (f * f), inc, cfg.sample)
        sub = replace(cfg, grid=g, eps=e, noise=False, T=T)
        runs.append(_solve_with_noise(sub, xi))
    return runs


def _solve_with_noise(cfg: SolveConfig, xi) -> Trajectory:
    g = cfg.grid
    n = cfg.nsteps
    xe = mollify(xi, cfg.mspec, 0, n + 1).values
    S = heat_multiplier(g, g.dt)
    c = renorm_constant(cfg)
    u = _initial(cfg, None)
    every = max(1, int(round(cfg.snap_dt / g.dt))) if cfg.snap_dt else n
    times, snaps, norms = [0.0], [u.copy()], [surrogate_norm(u, cfg.eta, g.L)]
    blow, tb = False, None
    for i in range(n):
        u = step_direct(u, cfg, c, S, xe[i], xe[i + 1])
        t = (i + 1) * g.dt
        if not np.all(np.isfinite(u)) or surrogate_norm(u, cfg.eta, g.L) > BLOWUP_NORM:
            blow, tb = True, t
            break
        if (i + 1) % every == 0 or i + 1 == n:
            times.append(t)
            snaps.append(u.copy())
            norms.append(surrogate_norm(u, cfg.eta, g.L))
    return Trajectory(np.array(times), np.array(snaps), np.array(norms), blow, tb, cfg.eps_eff, c)
