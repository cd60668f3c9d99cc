"""Parabolic geometry on R x T^2: norms, grids, test functions and pairings."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class ResolutionError(ValueError):
    """Raised when a grid cannot resolve the requested object."""


@dataclass(frozen=True)
class ParabolicPoint:
    t: float
    x1: float = 0.0
    x2: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.t, self.x1, self.x2], dtype=float)

    def __add__(self, other: "ParabolicPoint") -> "ParabolicPoint":
        return ParabolicPoint(self.t + other.t, self.x1 + other.x1, self.x2 + other.x2)

    def __sub__(self, other: "ParabolicPoint") -> "ParabolicPoint":
        return ParabolicPoint(self.t - other.t, self.x1 - other.x1, self.x2 - other.x2)

    def __neg__(self) -> "ParabolicPoint":
        return ParabolicPoint(-self.t, -self.x1, -self.x2)


def minimal_image(x, L: float | None = 1.0):
    """Reduce spatial coordinates to their smallest torus representative."""
    x = np.asarray(x, dtype=float)
    if L is None:
        return x
    return x - L * np.round(x / L)


def parabolic_norm(p, x1=None, x2=None, L: float | None = 1.0):
    """(t^2 + x1^4 + x2^4)^(1/4).

    Accepts a ParabolicPoint, an array with trailing axis of length 3, or three
    broadcastable arrays.  ``L=None`` disables the torus reduction.
    """
    if isinstance(p, ParabolicPoint):
        t, a, b = p.t, p.x1, p.x2
    elif x1 is None:
        arr = np.asarray(p, dtype=float)
        t, a, b = arr[..., 0], arr[..., 1], arr[..., 2]
    else:
        t, a, b = p, x1, x2
    t = np.asarray(t, dtype=float)
    a = minimal_image(a, L)
    b = minimal_image(b, L)
    # rescale by the largest component so fourth powers neither underflow nor overflow
    s = np.maximum(np.sqrt(np.abs(t)), np.maximum(np.abs(a), np.abs(b)))
    safe = np.where(s > 0, s, 1.0)
    tt, aa, bb = t / safe / safe, a / safe, b / safe
    r = s * np.sqrt(np.sqrt(tt * tt + aa ** 4 + bb ** 4))
    return float(r) if np.ndim(r) == 0 else r


def scale(p: ParabolicPoint, lam: float) -> ParabolicPoint:
    return ParabolicPoint(lam * lam * p.t, lam * p.x1, lam * p.x2)


@dataclass(frozen=True)
class TorusGrid:
    """Space-time lattice: N x N periodic points of spacing h = L/N, time step dt."""
    N: int = 64
    L: float = 1.0
    cfl: float = 0.25
    dt: float | None = None
    T: float = 1.0

    def __post_init__(self):
        if self.N <= 0 or self.L <= 0:
            raise ValueError("grid needs N > 0 and L > 0")
        if self.dt is None:
            object.__setattr__(self, "dt", self.cfl * self.h ** 2)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.dt > self.cfl * self.h ** 2 * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} violates dt <= {self.cfl}*h^2")

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def cell(self) -> float:
        """Quadrature weight dt*h^2 of one space-time node."""
        return self.dt * self.h ** 2

    def coords(self):
        return np.arange(self.N) * self.h

    def nsteps(self, T: float | None = None) -> int:
        return int(round((self.T if T is None else T) / self.dt))


# --- profiles -------------------------------------------------------------

def _bump(r2):
    r2 = np.asarray(r2, dtype=float)
    out = np.zeros_like(r2)
    m = r2 < 1.0
    out[m] = np.exp(1.0 - 1.0 / (1.0 - r2[m]))
    return out


def profile_bump(t, x1, x2):
    # psi(z) = exp(1 - 1/(1 - |z|^2)), |z| the parabolic norm
    return _bump(np.sqrt(np.sqrt(t * t + x1 ** 4 + x2 ** 4)) ** 2)


def profile_quartic(t, x1, x2):
    # exp(1 - 1/(1 - |z|^4)); |z|^4 is a polynomial so this one is C^infinity
    return _bump(t * t + x1 ** 4 + x2 ** 4)


PROFILES: dict[str, Callable] = {"bump": profile_bump, "quartic": profile_quartic}


def get_profile(name: str) -> Callable:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


@dataclass(frozen=True)
class TestFunction:
    """phi_z^lambda for a named profile supported in the unit parabolic ball."""
    __test__ = False  # keep pytest from collecting this class

    profile: str = "bump"
    center: ParabolicPoint = field(default_factory=lambda: ParabolicPoint(0.0))
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"invalid scale {self.scale}: need lambda > 0")
        get_profile(self.profile)

    def __call__(self, t, x1, x2, L: float | None = 1.0):
        lam = self.scale
        c = self.center
        dt = np.asarray(t, dtype=float) - c.t
        d1 = minimal_image(np.asarray(x1, dtype=float) - c.x1, L)
        d2 = minimal_image(np.asarray(x2, dtype=float) - c.x2, L)
        return get_profile(self.profile)(dt / lam ** 2, d1 / lam, d2 / lam) / lam ** 4

    def time_halfwidth(self) -> float:
        return self.scale ** 2

    def on_grid(self, grid: TorusGrid, check: bool = True):
        """Sample on the lattice nodes around the center (which must be a node).

        Returns (values, n0) with values of shape (nt, N, N) covering time
        indices n0 .. n0+nt-1 relative to the center time.
        """
        lam = self.scale
        if check:
            check_resolution(grid, lam)
        nl = int(np.floor(lam * lam / grid.dt))
        ts = np.arange(-nl, nl + 1) * grid.dt
        x = grid.coords()
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        prof = get_profile(self.profile)
        d1 = minimal_image(X1 - self.center.x1, grid.L) / lam
        d2 = minimal_image(X2 - self.center.x2, grid.L) / lam
        vals = np.stack([prof(t / lam ** 2, d1, d2) for t in ts]) / lam ** 4
        return vals, -nl


def check_resolution(grid: TorusGrid, lam: float, cells: int = 4):
    if lam * lam < cells * grid.dt * (1 - 1e-12):
        raise ResolutionError(f"lambda^2 = {lam*lam:.3g} < {cells}*dt = {cells*grid.dt:.3g}")
    if lam < cells * grid.h * (1 - 1e-12):
        raise ResolutionError(f"lambda = {lam:.3g} < {cells}*h = {cells*grid.h:.3g}")


def rescale_test(phi: TestFunction, z: ParabolicPoint, lam: float) -> TestFunction:
    """phi_z^lambda; lambda must lie in (0, 1]."""
    if not (0 < lam <= 1):
        raise ValueError(f"invalid scale {lam}: need 0 < lambda <= 1")
    return TestFunction(phi.profile, z, lam)


def profile_integral(name: str, n: int = 400) -> float:
    """Integral of a profile over R^3 by a tensor midpoint rule on [-1,1]^3."""
    s = (np.arange(n) + 0.5) / n * 2 - 1
    h = 2.0 / n
    prof = get_profile(name)
    x1, x2 = np.meshgrid(s, s, indexing="ij")
    return float(sum(prof(t, x1, x2).sum() for t in s) * h ** 3)


def pair(field, phi: TestFunction, grid: TorusGrid, n0: int = 0):
    """Quadrature sum  sum phi(z_i) F(z_i) dt h^2  over lattice nodes.

    ``field`` has shape (nt, N, N) and its slice 0 sits at time index ``n0``.
    The test function center must be a lattice node.
    """
    check_resolution(grid, phi.scale)
    F = np.asarray(field)
    vals, m0 = phi.on_grid(grid)
    ct = int(round(phi.center.t / grid.dt))
    lo = ct + m0 - n0
    hi = lo + vals.shape[0]
    if lo < 0 or hi > F.shape[0]:
        raise ResolutionError("field does not cover the test-function support in time")
    return (vals * F[lo:hi]).sum() * grid.cell
