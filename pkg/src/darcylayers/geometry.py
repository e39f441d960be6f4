"""Layered-domain geometry, thin-layer families, conforming grids, and the
boundary-layer background profile.

The domain is the horizontally periodic strip (0, L) x (-H, 0), split into
horizontal layers by interfaces z_0 = 0 > z_1 > ... > z_l = -H.  Each layer
carries constant permeability and diffusivity (porosity is normalized to one).
A ThinFamily describes the one-parameter family of geometries in which one
layer of thickness eps shrinks to zero and merges into the layer above it.

All objects here are immutable after construction and safe to share
read-only across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

REL_TOL = 1e-12


class GeometryError(ValueError):
    """Inconsistent layer, family, grid, or profile construction."""


def _as_float_tuple(seq):
    return tuple(float(v) for v in seq)


@dataclass(frozen=True)
class LayerStack:
    """Horizontal period, interface depths, and per-layer coefficients.

    ``interfaces`` runs from z_0 = 0 down to z_l = -H.  Layer i (0-based in
    the arrays) occupies (interfaces[i+1], interfaces[i]) and carries the
    constant coefficients K[i], D[i].  Porosity b is fixed to 1.
    """

    L: float
    interfaces: tuple
    K: tuple
    D: tuple
    b: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "interfaces", _as_float_tuple(self.interfaces))
        object.__setattr__(self, "K", _as_float_tuple(self.K))
        object.__setattr__(self, "D", _as_float_tuple(self.D))
        if not self.b:
            object.__setattr__(self, "b", (1.0,) * len(self.K))
        else:
            object.__setattr__(self, "b", _as_float_tuple(self.b))
        if not self.L > 0.0:
            raise GeometryError(f"horizontal period L must be > 0, got {self.L}")
        z = self.interfaces
        if len(z) < 2:
            raise GeometryError("need at least two interfaces (top and bottom)")
        if z[0] != 0.0:
            raise GeometryError(f"first interface must be 0, got {z[0]}")
        if z[-1] >= 0.0:
            raise GeometryError(f"last interface must be -H < 0, got {z[-1]}")
        for a, c in zip(z, z[1:]):
            if not c < a:
                raise GeometryError(f"interfaces must strictly decrease, got {a} -> {c}")
        n = len(z) - 1
        for name, coeffs in (("K", self.K), ("D", self.D)):
            if len(coeffs) != n:
                raise GeometryError(f"{name} has {len(coeffs)} entries for {n} layers")
            if any(not v > 0.0 for v in coeffs):
                raise GeometryError(f"{name} entries must all be > 0, got {coeffs}")
        if len(self.b) != n or any(v != 1.0 for v in self.b):
            raise GeometryError("porosity is normalized to 1 in every layer")

    @property
    def H(self):
        return -self.interfaces[-1]

    @property
    def n_layers(self):
        return len(self.K)

    @property
    def thicknesses(self):
        z = self.interfaces
        return tuple(a - c for a, c in zip(z, z[1:]))

    @property
    def min_K(self):
        return min(self.K)

    @property
    def max_K(self):
        return max(self.K)

    @property
    def min_D(self):
        return min(self.D)

    @property
    def max_D(self):
        return max(self.D)


@dataclass(frozen=True)
class ThinFamily:
    """Family of stacks in which layer ``j`` (1-based, in the eps-geometry)
    has thickness eps and merges into layer j-1 as eps -> 0.

    ``base`` is the merged eps = 0 geometry with one fewer layer; its layer
    j-1 has thickness ``h`` and keeps its own coefficients in the limit.
    """

    base: LayerStack
    j: int
    h: float
    thin_K: float
    thin_D: float
    epsilons: tuple

    def instantiate(self, eps):
        """Stack with the thin layer at thickness ``eps``; eps = 0 is ``base``."""
        if eps == 0.0:
            return self.base
        if not 0.0 < eps < self.h:
            raise GeometryError(f"eps must lie in (0, h={self.h}), got {eps}")
        jb = self.j - 2  # 0-based index of the split base layer
        z = self.base.interfaces
        new_iface = z[jb] - (self.h - eps)
        interfaces = z[: jb + 1] + (new_iface,) + z[jb + 1 :]
        K = self.base.K[: jb + 1] + (self.thin_K,) + self.base.K[jb + 1 :]
        D = self.base.D[: jb + 1] + (self.thin_D,) + self.base.D[jb + 1 :]
        return LayerStack(self.base.L, interfaces, K, D)

    def members(self):
        """(eps, stack) pairs for the configured positive thicknesses."""
        return tuple((eps, self.instantiate(eps)) for eps in self.epsilons)


def build_family(base, j, thin_K, thin_D, epsilons):
    """Construct the thin-layer family over ``base``.

    Parameters
    ----------
    base : LayerStack
        Merged limit geometry (one fewer layer).
    j : int
        Index of the vanishing layer in the eps-geometry, 1-based; the layer
        above it (j-1) absorbs the thickness in the limit, so 2 <= j <=
        base.n_layers + 1.
    thin_K, thin_D : float
        Coefficients of the vanishing layer (held fixed along the family).
    epsilons : sequence of float
        Strictly decreasing positive thicknesses, all < h.
    """
    if not isinstance(j, int) or isinstance(j, bool):
        raise IndexError(f"layer index j must be an integer, got {j!r}")
    if not 2 <= j <= base.n_layers + 1:
        raise IndexError(
            f"layer index j={j} outside [2, {base.n_layers + 1}] for a "
            f"{base.n_layers}-layer base"
        )
    if not thin_K > 0.0 or not thin_D > 0.0:
        raise GeometryError("thin-layer coefficients must be > 0")
    eps = _as_float_tuple(epsilons)
    if not eps:
        raise GeometryError("epsilons must be nonempty")
    if any(not v > 0.0 for v in eps):
        raise GeometryError(f"epsilons must all be > 0, got {eps}")
    if any(not b < a for a, b in zip(eps, eps[1:])):
        raise GeometryError(f"epsilons must strictly decrease, got {eps}")
    h = base.thicknesses[j - 2]
    if eps[0] >= h:
        raise GeometryError(
            f"largest eps {eps[0]} must be smaller than the band thickness h={h}"
        )
    return ThinFamily(base, j, h, float(thin_K), float(thin_D), eps)


@dataclass(frozen=True)
class Grid:
    """Interface-conforming tensor grid.

    x is uniform and periodic with ``nx`` nodes; z is uniform within each
    layer with every interface coinciding with a face bit-for-bit.  Scalars
    live at (z-center, x-node); vertical fluxes at (z-face, x-node).
    """

    nx: int
    L: float
    z_faces: np.ndarray      # (n_cells + 1,), strictly decreasing from 0 to -H
    z_centers: np.ndarray    # (n_cells,)
    dz: np.ndarray           # (n_cells,) cell heights, > 0
    dzf: np.ndarray          # (n_cells + 1,) center-to-center gaps, half cells at ends
    cell_layer: np.ndarray   # (n_cells,) layer index per cell

    def __post_init__(self):
        for name in ("z_faces", "z_centers", "dz", "dzf", "cell_layer"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def H(self):
        return -float(self.z_faces[-1])

    @property
    def dx(self):
        return self.L / self.nx

    @property
    def n_cells(self):
        return self.dz.size

    @property
    def x(self):
        return np.arange(self.nx) * self.dx


def build_grid(layers, nx, target_dz, max_cells=1_000_000):
    """Interface-conforming grid with per-layer uniform spacing <= target_dz.

    Each layer gets at least 2 cells so a thin layer is resolved rather than
    smeared; the total z-cell count must stay within ``max_cells``.
    """
    if not isinstance(nx, int) or nx < 4:
        raise GeometryError(f"nx must be an integer >= 4, got {nx}")
    if not target_dz > 0.0:
        raise GeometryError(f"target_dz must be > 0, got {target_dz}")
    counts = [
        max(2, math.ceil(th / target_dz - REL_TOL)) for th in layers.thicknesses
    ]
    total = sum(counts)
    if total > max_cells:
        raise GeometryError(
            f"grid needs {total} z-cells, exceeding the cell budget {max_cells}"
        )
    faces = [np.array([0.0])]
    for i, n in enumerate(counts):
        seg = np.linspace(layers.interfaces[i], layers.interfaces[i + 1], n + 1)
        # linspace endpoints are exact, so interfaces land on faces bitwise
        faces.append(seg[1:])
    z_faces = np.concatenate(faces)
    z_centers = 0.5 * (z_faces[:-1] + z_faces[1:])
    dz = z_faces[:-1] - z_faces[1:]
    dzf = np.empty(total + 1)
    dzf[0] = 0.5 * dz[0]
    dzf[-1] = 0.5 * dz[-1]
    dzf[1:-1] = z_centers[:-1] - z_centers[1:]
    cell_layer = np.repeat(np.arange(layers.n_layers), counts)
    return Grid(nx, layers.L, z_faces, z_centers, dz, dzf, cell_layer)


# --- background profile -------------------------------------------------
#
# The profile ramps through each boundary band of width delta with the
# C^{1,1} two-piece quadratic smoothstep
#     s(t) = 2 t^2            on [0, 1/2]
#     s(t) = 1 - 2 (1 - t)^2  on [1/2, 1]
# whose extremal derivatives |s'| = 2 and |s''| = 4 translate exactly into
# the bounds c_delta/delta and 2 c_delta/delta^2.


def _smoothstep(t):
    t = np.asarray(t, dtype=float)
    lo = 2.0 * t * t
    hi = 1.0 - 2.0 * (1.0 - t) ** 2
    return np.where(t < 0.5, lo, hi)


def _smoothstep_d1(t):
    t = np.asarray(t, dtype=float)
    return np.where(t < 0.5, 4.0 * t, 4.0 * (1.0 - t))


def _smoothstep_d2(t):
    t = np.asarray(t, dtype=float)
    return np.where(t < 0.5, 4.0, -4.0)


def profile_curves(z, H, delta, c0, c_mH):
    """phi_b, phi_b', phi_b'' at depths ``z`` (vectorized, analytic)."""
    z = np.asarray(z, dtype=float)
    mid = 0.5 * (c0 + c_mH)
    phi = np.full(z.shape, mid)
    dphi = np.zeros(z.shape)
    d2phi = np.zeros(z.shape)

    top = z >= -delta
    if np.any(top):
        t = (z[top] + delta) / delta
        amp = c0 - mid
        phi[top] = mid + amp * _smoothstep(t)
        dphi[top] = amp * _smoothstep_d1(t) / delta
        d2phi[top] = amp * _smoothstep_d2(t) / delta**2

    bot = z <= -H + delta
    if np.any(bot):
        t = (z[bot] + H) / delta
        amp = mid - c_mH
        phi[bot] = c_mH + amp * _smoothstep(t)
        dphi[bot] = amp * _smoothstep_d1(t) / delta
        d2phi[bot] = amp * _smoothstep_d2(t) / delta**2
    return phi, dphi, d2phi


@dataclass(frozen=True)
class BackgroundProfile:
    """Boundary-layer profile phi_b sampled on a grid.

    Constant (c0 + c_mH)/2 in the interior, ramping to c0 at z = 0 and c_mH
    at z = -H through bands of width delta, with |phi_b'| <= c_delta/delta
    and |phi_b''| <= 2 c_delta/delta^2 attained with equality at the ramp
    midpoints.
    """

    delta: float
    c0: float
    c_mH: float
    c_delta: float
    phi_c: np.ndarray    # values at z-centers
    dphi_c: np.ndarray
    d2phi_c: np.ndarray
    phi_f: np.ndarray    # values at z-faces
    dphi_f: np.ndarray
    d2phi_f: np.ndarray

    def __post_init__(self):
        for name in ("phi_c", "dphi_c", "d2phi_c", "phi_f", "dphi_f", "d2phi_f"):
            getattr(self, name).setflags(write=False)


def build_profile(layers, grid, delta, c0, c_mH):
    """Sample the background profile and its derivatives on ``grid``."""
    H = layers.H
    if not 0.0 < delta < 0.5 * H:
        raise GeometryError(
            f"delta={delta} must lie in (0, H/2={0.5 * H}) or the bands overlap"
        )
    pc, dc, d2c = profile_curves(grid.z_centers, H, delta, c0, c_mH)
    pf, df, d2f = profile_curves(grid.z_faces, H, delta, c0, c_mH)
    return BackgroundProfile(
        float(delta), float(c0), float(c_mH), abs(float(c0) - float(c_mH)),
        pc, dc, d2c, pf, df, d2f,
    )


@dataclass(frozen=True)
class DeltaAdmissibility:
    """Whether delta satisfies the smallness condition tying the coupling
    term to the diffusion: delta <= min K * min D / (8 max K^2 * c_delta)."""

    delta: float
    delta_max: float
    admissible: bool


def check_delta(layers, profile):
    """Admissibility report for the profile width against the layer extrema."""
    if profile.c_delta == 0.0:
        return DeltaAdmissibility(profile.delta, math.inf, True)
    delta_max = (layers.min_K * layers.min_D) / (
        8.0 * layers.max_K**2 * profile.c_delta
    )
    return DeltaAdmissibility(profile.delta, delta_max, profile.delta <= delta_max)
