"""Charge configurations, the dyadic hierarchy, pairing bounds and the cancellation identity.

Positions live in R^3 with parabolic scaling (no torus reduction).  Labels are
integer indices into the charge list.  A pairing is a frozenset of
(plus_label, minus_label) tuples.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from itertools import combinations, product
from typing import Callable, Sequence

import mpmath
import numpy as np

from . import _accel
from .spacetime import ParabolicPoint, parabolic_norm


class DegenerateConfiguration(ValueError):
    """Coincident charges where distinct positions are required."""


class SizeError(ValueError):
    """Enumeration would exceed the supported size."""


# --- charges ---------------------------------------------------------------------

@dataclass(frozen=True)
class Charge:
    position: ParabolicPoint
    sign: int
    index: int = 1

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("charge sign must be +1 or -1")
        if int(self.index) < 1:
            raise ValueError("charge index must be a positive integer")


def _pdist(X: np.ndarray) -> np.ndarray:
    return parabolic_norm(X[:, None, :] - X[None, :, :], L=None)


@dataclass(frozen=True)
class ChargeConfiguration:
    """Signed points plus an optional set R of oriented (up, down) renormalised pairs."""
    charges: tuple
    renorm_pairs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "charges", tuple(self.charges))
        object.__setattr__(self, "renorm_pairs", tuple(tuple(p) for p in self.renorm_pairs))
        s = self.signs
        if (s > 0).sum() != (s < 0).sum():
            raise ValueError("configuration needs equal numbers of + and - charges")
        used = [i for p in self.renorm_pairs for i in p]
        if len(used) != len(set(used)):
            raise ValueError("renormalised pairs must be disjoint")
        if any(not 0 <= i < len(s) for i in used):
            raise ValueError("renormalised pair refers to an unknown label")
        ups = 0
        for up, down in self.renorm_pairs:
            if s[up] == s[down]:
                raise ValueError("a renormalised pair must join opposite charges")
            ups += s[up] > 0
        # with an odd number of pairs the split is as even as possible
        if abs(2 * ups - len(self.renorm_pairs)) > 1:
            raise ValueError("about half of the renormalised pairs must be oriented + -> -")

    @classmethod
    def from_arrays(cls, X, signs, renorm_pairs=(), index=1, jitter: float = 1e-9, seed: int = 0):
        """Build from an (n, 3) position array; coincident points are nudged apart."""
        X = np.array(X, dtype=float).reshape(-1, 3)
        rng = np.random.default_rng(seed)
        for _ in range(100):
            D = _pdist(X)
            np.fill_diagonal(D, np.inf)
            bad = np.argwhere(D == 0)
            if len(bad) == 0:
                break
            i = bad[0][1]
            X[i] += jitter * (1 + np.abs(X[i])) * rng.standard_normal(3)
        charges = [Charge(ParabolicPoint(*map(float, x)), int(sg), index) for x, sg in zip(X, signs)]
        return cls(tuple(charges), tuple(renorm_pairs))

    @property
    def n(self) -> int:
        return len(self.charges)

    @property
    def X(self) -> np.ndarray:
        return np.array([c.position.as_array() for c in self.charges]).reshape(-1, 3)

    @property
    def signs(self) -> np.ndarray:
        return np.array([c.sign for c in self.charges], dtype=int)

    @property
    def m(self) -> int:
        return len(self.renorm_pairs)

    def distances(self) -> np.ndarray:
        return _pdist(self.X)

    def plus_minus(self, pair):
        """(e+, e-) labels of a pair given in any orientation."""
        i, j = pair
        return (i, j) if self.charges[i].sign > 0 else (j, i)

    def digest(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.X).tobytes())
        h.update(self.signs.tobytes())
        h.update(repr(self.renorm_pairs).encode())
        return h.hexdigest()[:16]


def random_configuration(rng: np.random.Generator, npairs: int, multiscale: bool = True,
                         with_renorm: bool = True) -> ChargeConfiguration:
    """npairs + charges and npairs - charges.

    In multiscale mode each pair is a dipole of log-uniform size placed at a
    log-uniform distance from the origin, so configurations visit many dyadic scales.
    Charges 2j, 2j+1 form pair j; orientations alternate.
    """
    X = np.empty((2 * npairs, 3))
    for j in range(npairs):
        if multiscale:
            c = rng.uniform(-1, 1, 3) * 10.0 ** rng.uniform(-2, 0)
            r = 10.0 ** rng.uniform(-3, 0)
            d = rng.uniform(-1, 1, 3) * np.array([r * r, r, r])
        else:
            c = rng.uniform(-1, 1, 3)
            d = rng.uniform(-1, 1, 3) * 0.5
        X[2 * j] = c
        X[2 * j + 1] = c + d
    signs = np.tile([1, -1], npairs)
    pairs = ()
    if with_renorm:
        pairs = tuple((2 * j, 2 * j + 1) if j % 2 == 0 else (2 * j + 1, 2 * j) for j in range(npairs))
    return ChargeConfiguration.from_arrays(X, signs, pairs)


# --- potentials ------------------------------------------------------------------

@dataclass
class PotentialFunction:
    """Symmetric positive J(z) of a space-time difference, evaluated on (..., 3) arrays."""
    evaluator: Callable
    name: str = "custom"
    alpha: float | None = None
    doubling: dict = field(default_factory=dict)

    @classmethod
    def power(cls, alpha: float) -> "PotentialFunction":
        """J(z) = ||z||^alpha; doubling constants are c^alpha exactly."""
        f = lambda z: parabolic_norm(z, L=None) ** alpha
        return cls(f, f"power({alpha:g})", float(alpha), {c: float(c) ** max(alpha, 0.0) for c in (1, 2, 4)})

    @classmethod
    def from_covariance(cls, cov, k: int = 1) -> "PotentialFunction":
        """J = exp(-k^2 beta^2 Q_eps) from a tabulated covariance (torus offsets)."""
        b = cov.beta2 * k * k

        def f(z):
            z = np.asarray(z, dtype=float)
            return np.exp(-b * np.asarray(cov.Q(z[..., 0], z[..., 1], z[..., 2])))
        return cls(f, f"J_eps(beta2={cov.beta2:.4g},eps={cov.eps:.4g},k={k})")

    def __call__(self, z):
        return self.evaluator(np.asarray(z, dtype=float))

    def log(self, z):
        z = np.asarray(z, dtype=float)
        if self.alpha is not None:
            return self.alpha * np.log(parabolic_norm(z, L=None))
        return np.log(self(z))

    def sup_ball(self, r: float) -> float:
        """sup_{||x|| <= r} J(x)."""
        if self.alpha is not None:
            return r ** self.alpha if self.alpha >= 0 else math.inf
        pts = _ball_samples() * np.array([r * r, r, r])
        return float(np.max(self(pts)))

    def log_sup_ball(self, r: float) -> float:
        if self.alpha is not None:
            return self.alpha * math.log(r)
        return math.log(self.sup_ball(r))

    def estimate_doubling(self, rng: np.random.Generator, n: int = 20000, cs=(1, 2, 4), rmax: float = 0.5):
        """Empirical C(c) = max J(x)/J(xb) over sampled ||x|| <= c ||xb||."""
        out = {}
        for c in cs:
            xb = _random_directions(rng, n) * _as_parabolic_radius(10.0 ** rng.uniform(-3, np.log10(rmax), n))
            frac = rng.uniform(0, 1, n) ** 0.5
            x = _random_directions(rng, n) * _as_parabolic_radius(c * frac * parabolic_norm(xb, L=None))
            out[c] = float(np.max(self(x) / self(xb)))
        self.doubling.update(out)
        return out


def _random_directions(rng, n):
    """Points on the parabolic unit sphere."""
    v = rng.standard_normal((n, 3))
    return v / parabolic_norm(v, L=None)[:, None] ** np.array([2, 1, 1])


def _as_parabolic_radius(r):
    r = np.asarray(r, dtype=float)[:, None]
    return np.concatenate([r ** 2, r, r], axis=1)


def _ball_samples():
    rng = np.random.default_rng(12345)
    d = _random_directions(rng, 4000)
    rad = np.linspace(0.0, 1.0, 11)[1:]
    pts = (d[None, :, :] * np.stack([rad ** 2, rad, rad], axis=1)[:, None, :]).reshape(-1, 3)
    return pts


# --- dyadic hierarchy ------------------------------------------------------------

@dataclass(frozen=True)
class DyadicHierarchy:
    """levels[n] = (blocks, pairings); blocks are sorted tuples of labels."""
    levels: dict
    n_min: int
    n_max: int
    signs: tuple

    def blocks(self, n: int):
        return self.levels[self._clip(n)][0]

    def pairing(self, n: int, block) -> frozenset:
        return self.levels[self._clip(n)][1][tuple(block)]

    def _clip(self, n):
        return min(max(n, self.n_min), self.n_max)

    @property
    def final(self) -> frozenset:
        (blk,) = self.levels[self.n_max][0]
        return self.levels[self.n_max][1][blk]

    def unpaired(self, n: int, block):
        used = {i for p in self.pairing(n, block) for i in p}
        return [i for i in block if i not in used]

    def T(self, n: int, block) -> int:
        return len(self.unpaired(n, block))

    def Sigma(self, n: int, block) -> int:
        u = self.unpaired(n, block)
        return self.signs[u[0]] if u else 1

    def D(self, n: int, block) -> int:
        t = self.T(n, block)
        return t * (t - 1) // 2


def _extend_pairing(block, inherited, signs):
    """Keep inherited pairs, then pair lowest-label unpaired + with lowest-label unpaired -."""
    pairs = set(inherited)
    used = {i for p in pairs for i in p}
    plus = [i for i in block if i not in used and signs[i] > 0]
    minus = [i for i in block if i not in used and signs[i] < 0]
    for a, b in zip(plus, minus):
        pairs.add((a, b))
    return frozenset(pairs)


def build_hierarchy(cfg: ChargeConfiguration) -> DyadicHierarchy:
    signs = tuple(int(s) for s in cfg.signs)
    n = cfg.n
    D = cfg.distances()
    if n == 1:
        blk = (0,)
        return DyadicHierarchy({0: ((blk,), {blk: frozenset()})}, 0, 0, signs)
    off = D[~np.eye(n, dtype=bool)]
    if np.any(off == 0):
        raise DegenerateConfiguration("duplicate charge positions")
    n_min = math.floor(math.log2(off.min())) - 1
    n_max = math.ceil(math.log2(off.max())) + 1
    Dc = np.ascontiguousarray(D)
    root = np.arange(n, dtype=np.intp)
    levels = {}
    prev_pairs = {(i,): frozenset() for i in range(n)}
    for lev in range(n_min, n_max + 1):
        root = np.asarray(_accel.merge_blocks(Dc, float(2.0 ** lev), root), dtype=np.intp)
        groups: dict = {}
        for i, r in enumerate(root):
            groups.setdefault(int(r), []).append(i)
        blocks = tuple(sorted(tuple(g) for g in groups.values()))
        pairs = {}
        for blk in blocks:
            inherited = set()
            for pb, pp in prev_pairs.items():
                if set(pb) <= set(blk):
                    inherited |= pp
            pairs[blk] = _extend_pairing(blk, inherited, signs)
        levels[lev] = (blocks, pairs)
        prev_pairs = pairs
    return DyadicHierarchy(levels, n_min, n_max, signs)


def check_hierarchy(h: DyadicHierarchy) -> list:
    """Structural properties of a hierarchy; returns a list of violations (empty if fine)."""
    bad = []
    s = h.signs
    for n in range(h.n_min, h.n_max + 1):
        blocks, pairs = h.levels[n]
        for blk in blocks:
            P = pairs[blk]
            lab = [i for p in P for i in p]
            if not set(lab) <= set(blk):
                bad.append((n, blk, "pair leaves block"))
            if any(s[a] == s[b] for a, b in P):
                bad.append((n, blk, "same-sign pair"))
            if len(lab) != len(set(lab)):
                bad.append((n, blk, "overlapping pairs"))
            if len({s[i] for i in h.unpaired(n, blk)}) > 1:
                bad.append((n, blk, "mixed-sign leftovers"))
            if n < h.n_max:
                (parent,) = [b for b in h.levels[n + 1][0] if set(blk) <= set(b)]
                if not P <= h.levels[n + 1][1][parent]:
                    bad.append((n, blk, "pairing not monotone"))
    if len(h.levels[h.n_min][0]) != len(s):
        bad.append((h.n_min, None, "finest level is not all singletons"))
    if len(h.levels[h.n_max][0]) != 1:
        bad.append((h.n_max, None, "coarsest level is not a single block"))
    return bad


# --- pointwise moment bound ------------------------------------------------------

def _logJ_matrix(cfg, J: PotentialFunction):
    X = cfg.X
    d = X[:, None, :] - X[None, :, :]
    L = np.zeros((cfg.n, cfg.n))
    iu = np.triu_indices(cfg.n, 1)
    L[iu] = J.log(d[iu])
    return L + L.T


def hierarchical_bound_check(cfg: ChargeConfiguration, J: PotentialFunction,
                             hierarchy: DyadicHierarchy | None = None) -> dict:
    """Max over levels and blocks of LHS/RHS for the pointwise hierarchical bound."""
    h = hierarchy or build_hierarchy(cfg)
    L = _logJ_matrix(cfg, J)
    s = cfg.signs
    worst, where = -math.inf, None
    for n in range(h.n_min, h.n_max + 1):
        jbar = J.log_sup_ball(2.0 ** n)
        for blk in h.levels[n][0]:
            lhs = sum(s[i] * s[j] * L[i, j] for i, j in combinations(blk, 2))
            rhs = -sum(L[a, b] for a, b in h.pairing(n, blk)) + h.D(n, blk) * jbar
            r = lhs - rhs
            if r > worst:
                worst, where = r, (n, blk)
    return {"ratio": math.exp(worst), "log_ratio": worst, "where": where}


def pairing_log_product(cfg: ChargeConfiguration, pairing, J: PotentialFunction) -> float:
    """log Pi_S = sum over pairs of log J^-(x_i - x_j)."""
    X = cfg.X
    return float(-sum(J.log(X[a] - X[b]) for a, b in pairing))


def brute_force_best_pairing(cfg: ChargeConfiguration, J: PotentialFunction, nmax: int = 6):
    """Maximise Pi_S = prod J^- over all perfect + / - matchings; returns (pairing, Pi)."""
    s = cfg.signs
    plus = np.flatnonzero(s > 0)
    minus = np.flatnonzero(s < 0)
    if len(plus) > nmax:
        raise SizeError(f"brute force limited to {nmax} pairs, got {len(plus)}")
    X = cfg.X
    logw = -J.log(X[plus][:, None, :] - X[minus][None, :, :])
    perm, best = _accel.best_matching(np.ascontiguousarray(logw, dtype=float))
    pairing = frozenset((int(plus[i]), int(minus[p])) for i, p in enumerate(perm))
    return pairing, math.exp(best)


# --- cancellation identity -------------------------------------------------------

def _hat_table(cfg: ChargeConfiguration, J: PotentialFunction, dps: int | None):
    """Jhat_{ij} = J(x_i - x_j)^(s_i s_j) for all i < j, as mpf when dps is given."""
    X, s = cfg.X, cfg.signs
    tab = {}
    for i, j in combinations(range(cfg.n), 2):
        if dps is None:
            v = float(J(X[i] - X[j]))
            tab[i, j] = v if s[i] * s[j] > 0 else 1.0 / v
        else:
            with mpmath.workdps(dps):
                v = _mp_eval(J, X[i] - X[j])
                tab[i, j] = v if s[i] * s[j] > 0 else 1 / v
    return tab


def _mp_eval(J: PotentialFunction, z):
    if J.alpha is not None:
        t, a, b = (mpmath.mpf(float(c)) for c in z)
        r = mpmath.root(t * t + a ** 4 + b ** 4, 4)
        return r ** mpmath.mpf(J.alpha)
    return mpmath.mpf(float(J(z)))


def _H_P(cfg, tab, Pidx, one):
    P = [cfg.renorm_pairs[i] for i in Pidx]
    used = {c for p in P for c in p}
    val = one
    for up, down in P:
        val *= tab[min(up, down), max(up, down)]
    rest = [i for i in range(cfg.n) if i not in used]
    for i, j in combinations(rest, 2):
        val *= tab[i, j]
    return val


def H_function(cfg: ChargeConfiguration, J: PotentialFunction, P, dps: int | None = None):
    """H_P: product of Jhat over the pairs of P and over all pairs of charges outside P."""
    if not cfg.renorm_pairs:
        raise ValueError("configuration has no renormalised pairs")
    tab = _hat_table(cfg, J, dps)
    one = mpmath.mpf(1) if dps else 1.0
    with mpmath.workdps(dps or 15):
        return _H_P(cfg, tab, sorted(P), one)


def H_total(cfg: ChargeConfiguration, J: PotentialFunction, dps: int | None = None):
    """H = sum over subsets P of R of (-1)^|P| H_P."""
    if not cfg.renorm_pairs:
        raise ValueError("configuration has no renormalised pairs")
    tab = _hat_table(cfg, J, dps)
    one = mpmath.mpf(1) if dps else 1.0
    m = cfg.m
    with mpmath.workdps(dps or 15):
        tot = 0 * one
        for r in range(m + 1):
            for P in combinations(range(m), r):
                tot += (-1) ** r * _H_P(cfg, tab, P, one)
        return tot


def _nonempty_subsets(items):
    items = sorted(items)
    for r in range(1, len(items) + 1):
        yield from (frozenset(c) for c in combinations(items, r))


def _U(A, B):
    out = set(A)
    for e in A:
        out |= B[e]
    return out


def M_sets_recursive(m: int, ell: int) -> dict:
    """{A: [B, ...]} for A subset of R_ell, built level by level.

    Pairs are identified with their positions 0..m-1 in the chosen ordering, so
    e_k is k-1.  Each B is a dict e -> frozenset.
    """
    if not 0 <= ell <= m:
        raise ValueError("need 0 <= ell <= m")
    R = set(range(m))
    cur = {frozenset(): [dict()]}
    for lev in range(1, ell + 1):
        e = lev - 1
        nxt: dict = {}
        for A, Bs in cur.items():
            for B in Bs:
                if e in _U(A, B):
                    nxt.setdefault(A, []).append(B)
                else:
                    Anew = A | {e}
                    # B_e must avoid the final A; later steps only add labels > e,
                    # which the recursion checks as they appear
                    for Be in _nonempty_subsets(R - Anew):
                        B2 = dict(B)
                        B2[e] = Be
                        nxt.setdefault(Anew, []).append(B2)
        cur = nxt
    # enforce B_e subset R \ A for the final A
    out = {}
    for A, Bs in cur.items():
        keep = [B for B in Bs if all(not (B[e] & A) for e in A)]
        if keep:
            out[A] = keep
    return out


def M_sets_direct(m: int, ell: int) -> dict:
    """Same sets as M_sets_recursive, by brute-force filtering of the two defining properties."""
    if not 0 <= ell <= m:
        raise ValueError("need 0 <= ell <= m")
    R = frozenset(range(m))
    out = {}
    for r in range(ell + 1):
        for A in map(frozenset, combinations(range(ell), r)):
            keys = sorted(A)
            choices = [list(_nonempty_subsets(R)) for _ in keys]
            good = []
            for combo in product(*choices):
                B = dict(zip(keys, combo))
                ok = True
                for k in keys:  # B_{e_k} avoids A_k = A cap {e_1..e_k}
                    if B[k] & {a for a in A if a <= k}:
                        ok = False
                        break
                if ok:
                    for k in range(ell):
                        Ak1 = frozenset(a for a in A if a < k)
                        if (k in A) == (k in _U(Ak1, B)):
                            ok = False
                            break
                if ok:
                    good.append(B)
            if good:
                out[A] = good
    return out


def _canon(Msets):
    return {A: sorted(tuple(sorted((e, tuple(sorted(b))) for e, b in B.items())) for B in Bs)
            for A, Bs in Msets.items()}


def cancellation_identity_check(cfg: ChargeConfiguration, J: PotentialFunction, ell: int,
                                order: Sequence[int] | None = None, dps: int = 50,
                                method: str = "recursive", mmax: int = 4):
    """Relative error between H and its expansion at level ell.

    ``order`` permutes R (order[k] is the position in cfg.renorm_pairs of e_{k+1}).
    Returns (relative error, H, expansion).
    """
    m = cfg.m
    if m > mmax:
        raise SizeError(f"cancellation enumeration limited to m <= {mmax}")
    order = list(range(m)) if order is None else list(order)
    if sorted(order) != list(range(m)):
        raise ValueError("order must be a permutation of the renormalised pairs")
    cfg_o = ChargeConfiguration(cfg.charges, tuple(cfg.renorm_pairs[i] for i in order))
    Msets = (M_sets_recursive if method == "recursive" else M_sets_direct)(m, ell)
    tab = _hat_table(cfg_o, J, dps)
    X = cfg_o.X
    pm = [cfg_o.plus_minus(p) for p in cfg_o.renorm_pairs]
    with mpmath.workdps(dps):
        one = mpmath.mpf(1)
        Hcache = {}

        def HP(S):
            S = tuple(sorted(S))
            if S not in Hcache:
                Hcache[S] = _H_P(cfg_o, tab, S, one)
            return Hcache[S]

        def Jmp(a, b):
            return _mp_eval(J, X[a] - X[b])

        dcache = {}

        def delta(e, f):
            if (e, f) not in dcache:
                (ep, em), (fp, fm) = pm[e], pm[f]
                dcache[e, f] = Jmp(ep, fp) * Jmp(em, fm) / (Jmp(ep, fm) * Jmp(em, fp)) - 1
            return dcache[e, f]

        R = set(range(m))
        H = sum((-1) ** len(P) * HP(P) for r in range(m + 1) for P in combinations(range(m), r))
        rhs = 0 * one
        for A, Bs in Msets.items():
            for B in Bs:
                d = one
                for e in A:
                    for f in B[e]:
                        d *= delta(e, f)
                free = sorted(R - _U(A, B))
                hab = 0 * one
                for r in range(len(free) + 1):
                    for P in combinations(free, r):
                        hab += (-1) ** r * HP(tuple(A) + P)
                rhs += d * hab
        scale = max(abs(H), abs(rhs), mpmath.mpf(10) ** (-dps // 2))
        err = float(abs(H - rhs) / scale)
    return err, H, rhs


def telescoping_identity(a) -> tuple:
    """(prod a_i - 1, sum over nonempty P of prod_{i in P} (a_i - 1))."""
    a = [mpmath.mpf(float(x)) for x in a]
    lhs = mpmath.fprod(a) - 1
    rhs = mpmath.mpf(0)
    for r in range(1, len(a) + 1):
        for P in combinations(range(len(a)), r):
            rhs += mpmath.fprod(a[i] - 1 for i in P)
    return float(lhs), float(rhs)


# --- dipoles and quadrupoles -----------------------------------------------------

def delta_and_A(e, f, J: PotentialFunction):
    """(Delta_e^f, A_ef) for dipoles e = (e+, e-), f = (f+, f-) given as 3-vectors."""
    ep, em = (np.asarray(p, dtype=float).reshape(3) for p in e)
    fp, fm = (np.asarray(p, dtype=float).reshape(3) for p in f)
    nrm = lambda a, b: parabolic_norm(a - b, L=None)
    cross = [nrm(ep, fp), nrm(em, fm), nrm(ep, fm), nrm(em, fp)]
    if min(cross) == 0:
        raise DegenerateConfiguration("coincident points across the two dipoles")
    if nrm(ep, em) == 0 or nrm(fp, fm) == 0:
        return 0.0, 0.0
    lg = J.log
    delta = math.expm1(float(lg(ep - fp) + lg(em - fm) - lg(ep - fm) - lg(em - fp)))
    A = nrm(ep, em) * nrm(fp, fm) / (nrm(ep, fm) * nrm(fp, em))
    return delta, float(A)


def condition_small(e, f) -> bool:
    """min(|e+ - e-|, |f+ - f-|) <= min(|e+ - f-|, |e- - f+|)."""
    ep, em = (np.asarray(p, dtype=float) for p in e)
    fp, fm = (np.asarray(p, dtype=float) for p in f)
    nrm = lambda a, b: parabolic_norm(a - b, L=None)
    return min(nrm(ep, em), nrm(fp, fm)) <= min(nrm(ep, fm), nrm(em, fp))


def classify_pairs(cfg: ChargeConfiguration, hierarchy: DyadicHierarchy | None = None):
    """Split R cap S into good and bad pairs.

    A pair e is bad when some f in R, f != e, strictly violates condition_small.
    Pairs are returned in (plus, minus) form.
    """
    h = hierarchy or build_hierarchy(cfg)
    S = h.final
    X = cfg.X
    R = [cfg.plus_minus(p) for p in cfg.renorm_pairs]
    good, bad = [], []
    for e in R:
        if e not in S:
            continue
        ee = (X[e[0]], X[e[1]])
        if any(not condition_small(ee, (X[f[0]], X[f[1]])) for f in R if f != e):
            bad.append(e)
        else:
            good.append(e)
    return good, bad


def random_quadrupole(rng: np.random.Generator, require_condition: bool = True, tries: int = 1000):
    """Two random multiscale dipoles, optionally conditioned on condition_small."""
    for _ in range(tries):
        pts = []
        for _ in range(2):
            c = rng.uniform(-1, 1, 3)
            r = 10.0 ** rng.uniform(-3, 0.3)
            d = rng.uniform(-1, 1, 3) * np.array([r * r, r, r])
            pts.append((c, c + d))
        e, f = pts
        if not require_condition or condition_small(e, f):
            return e, f
    raise RuntimeError("could not draw a configuration satisfying the condition")


def quadrupole_ratio_batch(rng: np.random.Generator, J: PotentialFunction, n: int) -> float:
    """max |Delta_e^f| / A_ef over n random configurations satisfying the condition."""
    best = 0.0
    for _ in range(n):
        e, f = random_quadrupole(rng)
        d, A = delta_and_A(e, f, J)
        if A > 0:
            best = max(best, abs(d) / A)
    return best


# --- empirical constants ---------------------------------------------------------

def _local_scale(X):
    D = _pdist(X)
    np.fill_diagonal(D, np.inf)
    d = D.min(axis=1)
    return np.stack([d * d, d, d], axis=1)


def extremal_constant(objective: Callable, sampler: Callable, n: int, rng: np.random.Generator,
                      refine_top: int = 20, iters: int = 300, maximize: bool = True):
    """Estimate sup (or inf) of objective(cfg) over random configurations.

    Draws n configurations from sampler(rng), then hill-climbs from the refine_top
    most extreme ones with scale-aware random moves.  Returns (value, cfg, raw
    extreme before refinement).
    """
    sgn = 1.0 if maximize else -1.0
    scored = []
    for _ in range(n):
        cfg = sampler(rng)
        scored.append((sgn * objective(cfg), cfg))
    scored.sort(key=lambda t: -t[0])
    raw = scored[0][0]
    best, best_cfg = scored[0]
    for val, cfg in scored[:refine_top]:
        X, s, R = cfg.X, cfg.signs, cfg.renorm_pairs
        step = 0.1
        for _ in range(iters):
            Y = X + step * _local_scale(X) * rng.standard_normal(X.shape)
            try:
                c2 = ChargeConfiguration.from_arrays(Y, s, R)
                v2 = sgn * objective(c2)
            except DegenerateConfiguration:
                continue
            # (1+1) evolution strategy with the one-fifth success rule
            if v2 >= val:
                X, val, cfg = Y, v2, c2
                step = min(step * 1.5, 1.0)
            else:
                step = max(step * 0.9, 1e-6)
        if val > best:
            best, best_cfg = val, cfg
    return sgn * best, best_cfg, sgn * raw


def hierarchical_log_ratio(J: PotentialFunction) -> Callable:
    return lambda cfg: hierarchical_bound_check(cfg, J)["log_ratio"]


def pairing_log_deficit(J: PotentialFunction) -> Callable:
    """log(Pi_hierarchy / Pi_bruteforce), which is <= 0."""
    def f(cfg):
        h = build_hierarchy(cfg)
        return pairing_log_product(cfg, h.final, J) - math.log(brute_force_best_pairing(cfg, J)[1])
    return f
