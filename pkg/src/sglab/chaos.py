"""Wick exponentials, second-order processes, exact lattice oracles and Monte Carlo moments."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import fft as sfft

from . import _accel
from .kernels import (CovarianceModel, F_eps_kernel, K_tables, KernelSpec, MollifierSpec, _xcorr_time,
                      lattice, renorm_constant_C_eps)
from .noise import FreeField, LatticeField, convolver, field_window, free_field, sample_noise
from .spacetime import TestFunction, TorusGrid


class ContractError(RuntimeError):
    """Raised when inputs violate a coupling or renormalization contract."""


@dataclass
class WickField(LatticeField):
    k: int = 1
    beta2: float = 0.0
    eps: float = 0.0
    normalization: str = "wick"

    @property
    def cos_part(self):
        return self.values.real

    @property
    def sin_part(self):
        return self.values.imag

    def conj(self) -> "WickField":
        return WickField(self.grid, self.n0, np.conj(self.values), -self.k, self.beta2, self.eps,
                         self.normalization)


def wick_exponential(phi: FreeField, cov: CovarianceModel, k: int = 1, normalization: str = "wick",
                     C_rho: float | None = None) -> WickField:
    """Psi^k = exp(i k beta Phi + beta^2 Q0 / 2) (wick) or C_rho eps^(-beta^2/4pi) e^(i k beta Phi)."""
    if abs(phi.eps - cov.eps) > 1e-15 or (phi.mspec is not None and phi.mspec.profile != cov.mspec.profile):
        raise ContractError(f"field eps={phi.eps} does not match covariance eps={cov.eps}")
    beta = np.sqrt(cov.beta2)
    if normalization == "wick":
        amp = np.exp(cov.beta2 * cov.Q0 / 2)
    elif normalization == "constant":
        if C_rho is None:
            raise ValueError("constant normalization needs C_rho from wick_constants")
        amp = C_rho * cov.eps ** (-cov.beta2 / (4 * np.pi))
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    ph = phi.values * phi.values.dtype.type(k * beta)
    vals = np.empty(ph.shape, dtype=np.result_type(ph.dtype, np.complex64))
    vals.real = np.cos(ph)
    vals.imag = np.sin(ph)
    vals *= amp
    return WickField(phi.grid, phi.n0, vals, k, cov.beta2, cov.eps, normalization)


# --- exact lattice oracles ---------------------------------------------------

def _phi_autocorr_hat(phi_vals, grid: TorusGrid):
    """Time autocorrelation of the spatial spectra of an even test function.

    Returns C[tau] = sum_n phihat_n phihat_{n+tau} for tau = 0..nl-1.
    """
    lat = lattice(grid)
    M = lat.M
    # fold the full-grid test function (centered at 0) onto the quarter grid
    quarter = phi_vals[:, :M, :M]
    ph = lat.to_spec(quarter)
    nl = ph.shape[0]
    return _xcorr_time(ph, ph, nl, 0, 1.0)


def quadratic_form(phi_vals, table, grid: TorusGrid) -> float:
    """sum_{z,z'} phi(z) phi(z') T(z' - z) dt^2 h^4 for T even, given on lags 0..nl-1."""
    lat = lattice(grid)
    C = _phi_autocorr_hat(phi_vals, grid)
    nl = C.shape[0]
    tab = np.zeros((nl,) + table.shape[1:])
    m = min(nl, table.shape[0])
    tab[:m] = table[:m]
    if table.shape[0] < nl:
        tab[m:] = table[-1] * 0
    Th = lat.to_spec(tab)
    tot = (C[0] * Th[0] * lat.W).sum() + 2 * (C[1:] * Th[1:] * lat.W).sum()
    return float(tot * grid.dt ** 2 / lat.L ** 2)


def _centered_phi(phi: TestFunction, grid: TorusGrid, check=True):
    centered = TestFunction(phi.profile, scale=phi.scale)
    vals, n0 = centered.on_grid(grid, check=check)
    return vals, n0


def exact_second_moment_first_order(cov: CovarianceModel, phi: TestFunction, k: int = 1,
                                    check: bool = True) -> float:
    """E|<phi, Psi^k>|^2 on the lattice: sum phi(y) phi(y+z) E[Psi^k(0) conj Psi^k(z)]."""
    vals, _ = _centered_phi(phi, cov.grid, check)
    nl = vals.shape[0]
    tp = cov.two_point(k, nlag=nl)
    return quadratic_form(vals, tp, cov.grid)


def exact_cauchy_second_moment(cov1: CovarianceModel, cov2: CovarianceModel, mixed: CovarianceModel,
                               phi: TestFunction, check: bool = True) -> float:
    """E|<phi, Psi_eps - Psi_eps'>|^2 = sum phi phi (J_eps^- + J_eps'^- - 2 J_{eps,eps'}^-)."""
    vals, _ = _centered_phi(phi, cov1.grid, check)
    nl = vals.shape[0]
    b2 = cov1.beta2
    T = (np.exp(b2 * cov1.table(nl)) + np.exp(b2 * cov2.table(nl)) - 2 * np.exp(b2 * mixed.table(nl)))
    return quadratic_form(vals, T, cov1.grid)


# --- second-order processes ---------------------------------------------------

@dataclass
class SecondOrderSample:
    kind: str
    k: int
    l: int
    base: int
    n0: int
    values: np.ndarray
    counterterm: float = 0.0
    a: str | None = None
    b: str | None = None


@dataclass
class SecondOrderTables:
    """Deterministic lattice pieces: C^(k) and F^(k) on time lags -lags..lags."""
    C: float
    F: np.ndarray        # quarter grid, index tau + lags
    lags: int

    def F_full(self, grid: TorusGrid, a: int, b: int, base: int = 0):
        """F(zbar - z) on slabs a..b-1 for base slab ``base`` at spatial origin (full grid)."""
        lat = lattice(grid)
        i1 = lat.fold(np.arange(grid.N))
        idx = np.arange(a, b) - base + self.lags
        if idx.min() < 0 or idx.max() >= self.F.shape[0]:
            raise ValueError("F table too short")
        return self.F[idx][:, i1][:, :, i1]


def second_order_tables(cov: CovarianceModel, k: int, lags: int) -> SecondOrderTables:
    Ft = F_eps_kernel(cov, k, lags=lags)
    return SecondOrderTables(renorm_constant_C_eps(cov, k), Ft.values, lags)


def _K_conv(field_vals, n0, a, b, kspec, grid, single=False):
    conv = convolver("K", grid, kspec=kspec, single=single)
    re = conv.apply(np.ascontiguousarray(field_vals.real), n0, a, b)
    im = conv.apply(np.ascontiguousarray(field_vals.imag), n0, a, b)
    return re + 1j * im


def second_order_process(psi_k: WickField, psi_l: WickField, kspec: KernelSpec, cov: CovarianceModel,
                         kind: str, a: int, b: int, base: int = 0,
                         tables: SecondOrderTables | None = None, ab: tuple[str, str] | None = None,
                         require_counterterm: bool = True) -> SecondOrderSample:
    """Second-order process Psi(z, zbar) for zbar on slabs a..b-1 and z = (base, 0).

    kind 'kbarl': Psi^k(zb) [(K*conj Psi^l)(zb) - (K*conj Psi^l)(z)] - d_kl (C - F(zb - z))
    kind 'kl'  : Psi^k(zb) [(K*Psi^l)(zb) - (K*Psi^l)(z)]
    kind 'ab'  : Psi^{a,k}(zb) [(K*Psi^{b,l})(zb) - (K*Psi^{b,l})(z)] - C d_ab d_kl / 2
    """
    grid = psi_k.grid
    diag = psi_k.k == psi_l.k
    if kind == "kbarl":
        src = np.conj(psi_l.values)
    elif kind == "kl":
        src = psi_l.values
    elif kind == "ab":
        if ab is None:
            raise ValueError("kind 'ab' needs ab=(a, b) with a, b in {'c','s'}")
        src = psi_l.values.real if ab[1] == "c" else psi_l.values.imag
    else:
        raise ValueError(f"unknown kind {kind!r}")
    lo = min(a, base)
    hi = max(b, base + 1)
    conv = _K_conv(src, psi_l.n0, lo, hi, kspec, grid)
    Kz = conv[base - lo, 0, 0]
    Kzb = conv[a - lo: b - lo]
    left = psi_k.window(a, b)
    if kind == "ab":
        left = left.real if ab[0] == "c" else left.imag
    vals = left * (Kzb - Kz)
    ct = 0.0
    if (kind == "kbarl" and diag) or (kind == "ab" and diag and ab[0] == ab[1]):
        if tables is None:
            if require_counterterm:
                raise ContractError("diagonal second-order process needs the counterterm tables")
        else:
            if kind == "kbarl":
                vals = vals - (tables.C - tables.F_full(grid, a, b, base))
                ct = tables.C
            else:
                vals = vals - 0.5 * tables.C
                ct = 0.5 * tables.C
    return SecondOrderSample(kind, psi_k.k, psi_l.k, base, a, vals, ct,
                             *(ab if ab is not None else (None, None)))


def assemble_ab(psi_kl: SecondOrderSample, psi_kbarl: SecondOrderSample, F_vals, a: str, b: str):
    """Psi^{ab,kl} from Psi^{kl}, Psi^{k lbar} and F^(k) (F_vals zero when k != l)."""
    P, Q = psi_kl.values, psi_kbarl.values
    if (a, b) == ("c", "c"):
        return 0.5 * P.real + 0.5 * Q.real - 0.5 * F_vals
    if (a, b) == ("s", "s"):
        return -0.5 * P.real + 0.5 * Q.real - 0.5 * F_vals
    if (a, b) == ("c", "s"):
        return 0.5 * P.imag - 0.5 * Q.imag
    if (a, b) == ("s", "c"):
        return 0.5 * P.imag + 0.5 * Q.imag
    raise ValueError("a, b must be 'c' or 's'")


def coarse_nodes(cov: CovarianceModel, kspec: KernelSpec, phi: TestFunction):
    """Node sets of the four-point oracle: X = supp phi, Y = nodes reached by K(x - y) - K(-y)."""
    grid = cov.grid
    vals, n0 = _centered_phi(phi, grid, check=False)
    _, Kreal = K_tables(kspec, grid)
    nt = Kreal.shape[0]
    N = grid.N
    xt, x1, x2 = np.nonzero(vals)
    X = np.stack([xt + n0, x1, x2], axis=1)
    phix = vals[xt, x1, x2]
    ylo = n0 - nt + 1
    yhi = n0 + vals.shape[0]
    tt, a1, a2 = np.meshgrid(np.arange(ylo, yhi), np.arange(N), np.arange(N), indexing="ij")
    Y = np.stack([tt.ravel(), a1.ravel(), a2.ravel()], axis=1)
    lat = lattice(grid)

    def Kat(d):
        n = d[..., 0]
        out = np.zeros(n.shape)
        m = (n >= 0) & (n < nt)
        out[m] = Kreal[n[m], lat.fold(d[..., 1][m]), lat.fold(d[..., 2][m])]
        return out

    amat = phix[:, None] * (Kat(X[:, None, :] - Y[None, :, :]) - Kat(-Y)[None, :]) * grid.cell ** 2
    keep = np.abs(amat).max(axis=0) > 0
    return X, Y[keep], amat[:, keep]


def exact_second_moment_second_order(cov: CovarianceModel, kspec: KernelSpec, phi: TestFunction,
                                     k: int = 1, max_nodes: int | None = None):
    """E|<phi_0, Psi^{k kbar}(0, .)>|^2 by direct expansion of the Gaussian four-point function.

    Returns (value, node count).  Cost is O(|X|^2 |Y|^2).
    """
    X, Y, amat = coarse_nodes(cov, kspec, phi)
    G = len(np.unique(np.concatenate([X, Y]), axis=0))
    if max_nodes is not None and G > max_nodes:
        raise ValueError(f"{G} nodes exceed the coarse-oracle budget {max_nodes}")
    b2k = cov.beta2 * k * k
    pref = np.exp(-cov.beta2 * (k * k - 1) * cov.Q0)

    def Jm(P, R):
        d = P[:, None, :] - R[None, :, :]
        return np.exp(b2k * cov.at_offsets(d[..., 0], d[..., 1], d[..., 2]))

    Jxy = Jm(X, Y)
    b = amat * pref * Jxy
    val = _accel.fourpoint_sum(np.ascontiguousarray(b), np.ascontiguousarray(Jm(X, X)),
                               np.ascontiguousarray(Jm(Y, Y)), np.ascontiguousarray(Jxy))
    return float(val), G


# --- Monte Carlo ----------------------------------------------------------------

@dataclass
class MomentEstimate:
    process: str
    k: int
    l: int
    p: int
    lam: float
    eps: float
    beta2: float
    mean: float
    stderr: float
    n: int
    seed: int
    flags: list = field(default_factory=list)

    def record(self) -> dict:
        return {"process": self.process, "k": self.k, "l": self.l, "p": self.p, "lambda": self.lam,
                "eps": self.eps, "beta2": self.beta2, "mean": self.mean, "stderr": self.stderr,
                "n": self.n, "seed": self.seed}


def jackknife(samples, stat=np.mean):
    """Delete-one jackknife (estimate, stderr) of a statistic over independent samples."""
    x = np.asarray(samples)
    n = x.shape[0]
    if n < 2:
        raise ValueError("jackknife needs at least 2 samples")
    if stat is np.mean:
        full = x.mean(axis=0)
        loo = (x.sum(axis=0) - x) / (n - 1)
    else:
        full = stat(x)
        loo = np.array([stat(np.delete(x, i, axis=0)) for i in range(n)])
    err = np.sqrt((n - 1) / n * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    return full, err


PROCESSES = ("psi", "kbarl", "kl")


@dataclass
class PairingSampler:
    """Per-sample pairings <phi^lambda_0, X> for a ladder of lambda values."""
    grid: TorusGrid
    kspec: KernelSpec
    cov: CovarianceModel
    process: str = "psi"
    k: int = 1
    l: int = 1
    lams: tuple = (0.25,)
    profile: str = "bump"
    check: bool = True
    single: bool = False

    def __post_init__(self):
        if self.process not in PROCESSES:
            raise ValueError(f"process must be one of {PROCESSES}")
        g = self.grid
        self.phis = [TestFunction(self.profile, scale=lam).on_grid(g, check=self.check) for lam in self.lams]
        self.nl = max(-n0 for _, n0 in self.phis)
        Khat, _ = K_tables(self.kspec, g)
        self.nt = Khat.shape[0]
        if self.process == "psi":
            self.a, self.b = -self.nl, self.nl + 1
        else:
            self.a, self.b = -self.nl - self.nt + 1, self.nl + 1
        self.window = field_window(g, self.kspec, self.cov.mspec, self.a, self.b)
        self.det = [0.0] * len(self.lams)
        self.tables = None
        if self.process == "kbarl" and self.k == self.l:
            self.tables = second_order_tables(self.cov, self.k, self.nl)
            for i, (vals, n0) in enumerate(self.phis):
                Ff = self.tables.F_full(g, n0, -n0 + 1)
                self.det[i] = float((vals * (self.tables.C - Ff)).sum() * g.cell)

    def sample(self, seed: int, sample: int) -> np.ndarray:
        g = self.grid
        lo, hi = self.window
        xi = sample_noise(g, seed, lo, hi, sample, np.float32 if self.single else np.float64)
        phi = free_field(xi, self.kspec, self.cov.mspec, self.a, self.b, single=self.single)
        psi_k = wick_exponential(phi, self.cov, self.k)
        out = np.empty(len(self.lams), dtype=complex)
        if self.process == "psi":
            for i, (vals, n0) in enumerate(self.phis):
                out[i] = (vals * psi_k.window(n0, -n0 + 1)).sum() * g.cell
            return out
        psi_l = psi_k if self.l == self.k else wick_exponential(phi, self.cov, self.l)
        src = np.conj(psi_l.values) if self.process == "kbarl" else psi_l.values
        conv = _K_conv(src, psi_l.n0, -self.nl, self.nl + 1, self.kspec, g, self.single)
        Kz = conv[self.nl, 0, 0]
        for i, (vals, n0) in enumerate(self.phis):
            w = slice(n0 + self.nl, -n0 + 1 + self.nl)
            raw = (vals * psi_k.window(n0, -n0 + 1) * (conv[w] - Kz)).sum() * g.cell
            out[i] = raw - self.det[i]
        return out


def moment_estimate(sampler: PairingSampler, p_list=(2,), n: int = 100, master_seed: int = 0,
                    return_samples: bool = False):
    """Sample means of |<phi^lambda_0, X>|^p with jackknife standard errors."""
    if n < 2:
        raise ValueError("need n >= 2 samples")
    if any(p % 2 for p in p_list):
        raise ValueError("only even p are supported")
    X = np.array([sampler.sample(master_seed, s) for s in range(n)])  # (n, nlam)
    eps = sampler.cov.eps
    out = []
    for p in p_list:
        vals = np.abs(X) ** p
        mean, err = jackknife(vals)
        for i, lam in enumerate(sampler.lams):
            flags = ["mollifier-dominated"] if lam < 8 * eps else []
            name = {"psi": "psi", "kbarl": "psi_kbarl", "kl": "psi_kl"}[sampler.process]
            out.append(MomentEstimate(name, sampler.k, sampler.l, p, float(lam), eps, sampler.cov.beta2,
                                      float(mean[i]), float(err[i]), n, master_seed, flags))
    return (out, X) if return_samples else out


def cauchy_in_eps(grid: TorusGrid, kspec: KernelSpec, covs: list[CovarianceModel], phi: TestFunction,
                  n: int, master_seed: int, mixed: dict | None = None, coupled: bool = True):
    """E|<phi, Psi_eps - Psi_eps'>|^2 for consecutive eps on one noise realization.

    Returns rows (eps, eps', MC mean, MC stderr, exact lattice value or None).
    """
    if not coupled:
        raise ContractError("Cauchy differences require fields built from the same noise")
    vals, n0 = _centered_phi(phi, grid)
    a, b = n0, -n0 + 1
    lo = min(field_window(grid, kspec, c.mspec, a, b)[0] for c in covs)
    hi = max(field_window(grid, kspec, c.mspec, a, b)[1] for c in covs)
    diffs = np.empty((n, len(covs) - 1))
    for s in range(n):
        xi = sample_noise(grid, master_seed, lo, hi, s)
        pairs = []
        for c in covs:
            ph = free_field(xi, kspec, c.mspec, a, b)
            pairs.append((vals * wick_exponential(ph, c).values).sum() * grid.cell)
        diffs[s] = np.abs(np.diff(pairs)) ** 2
    mean, err = jackknife(diffs)
    rows = []
    for i in range(len(covs) - 1):
        ex = None
        if mixed is not None and (i, i + 1) in mixed:
            ex = exact_cauchy_second_moment(covs[i], covs[i + 1], mixed[(i, i + 1)], phi)
        rows.append((covs[i].eps, covs[i + 1].eps, float(mean[i]), float(err[i]), ex))
    return rows
