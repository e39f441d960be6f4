"""Grid functions on the staggered layout, horizontal Fourier transforms,
and discrete calculus (divergence, weighted gradients, diffusion operator,
norms).

Scalars (psi, p) live at (z-center, x-node); the vertical velocity lives at
(z-face, x-node) so that interface flux continuity and the discrete
divergence are exact.  x is handled pseudo-spectrally through real FFTs;
z through second-order finite differences with distance-weighted harmonic
coefficient means at faces.

Quadrature is the midpoint rule per cell in z and exact (Parseval) in x,
which makes the summation-by-parts identity (L psi, psi) = ||sqrt(D) grad
psi||^2 hold to rounding for Dirichlet-tagged fields.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

CENTER = "center"
FACE = "face"


class StaggeringError(ValueError):
    """Field staggering does not match the requested operation."""


@dataclass(frozen=True)
class ScalarField:
    """Real grid function, z-staggered at centers or faces.

    psi-type (center) fields carry an implicit Dirichlet zero at z = 0, -H;
    the boundary value never appears as a degree of freedom.
    """

    grid: object
    values: np.ndarray
    stag: str = CENTER

    def __post_init__(self):
        nz = self.grid.n_cells + (1 if self.stag == FACE else 0)
        if self.stag not in (CENTER, FACE):
            raise StaggeringError(f"unknown staggering tag {self.stag!r}")
        if self.values.shape != (nz, self.grid.nx):
            raise StaggeringError(
                f"{self.stag} field needs shape {(nz, self.grid.nx)}, "
                f"got {self.values.shape}"
            )

    def copy(self):
        return replace(self, values=self.values.copy())


@dataclass(frozen=True)
class VectorField:
    """Velocity with u_x at centers and u_z at faces (zero at z = 0, -H)."""

    grid: object
    ux: np.ndarray   # (n_cells, nx)
    uz: np.ndarray   # (n_cells + 1, nx)


@dataclass(frozen=True)
class SpectralSlice:
    """Per-wavenumber complex amplitudes, one row per z-level.

    Coefficients are normalized so a pure cosine of unit amplitude carries
    1/2 in its positive-frequency slot (and a constant carries itself at
    m = 0); Hermitian symmetry is structural through the real transform.
    """

    grid: object
    coeffs: np.ndarray   # complex, (nz_levels, nx//2 + 1)
    stag: str = CENTER


def wavenumbers(grid):
    """k_m = 2 pi m / L for m = 0 .. nx/2."""
    return 2.0 * np.pi * np.fft.rfftfreq(grid.nx, d=grid.dx)


def mode_weights(grid):
    """Quadrature weights turning sum_m w_m |f_hat|^2 into int f^2 dx."""
    w = np.full(grid.nx // 2 + 1, 2.0 * grid.L / grid.nx**2)
    w[0] = grid.L / grid.nx**2
    if grid.nx % 2 == 0:
        w[-1] = grid.L / grid.nx**2
    return w


def ft_forward(f):
    """Forward transform along x per z-level (normalized amplitudes)."""
    return SpectralSlice(f.grid, np.fft.rfft(f.values, axis=1) / f.grid.nx, f.stag)


def ft_inverse(s):
    """Inverse of :func:`ft_forward`."""
    vals = np.fft.irfft(s.coeffs * s.grid.nx, n=s.grid.nx, axis=1)
    return ScalarField(s.grid, vals, s.stag)


def x_derivative(values, grid):
    """Spectral d/dx of physical values; the Nyquist mode is zeroed so the
    operator stays skew-adjoint in the discrete inner product."""
    fh = np.fft.rfft(values, axis=1)
    ik = 1j * wavenumbers(grid)
    if grid.nx % 2 == 0:
        ik = ik.copy()
        ik[-1] = 0.0
    return np.fft.irfft(fh * ik, n=grid.nx, axis=1)


def cell_values(grid, per_layer):
    """Per-cell array from per-layer coefficients."""
    return np.asarray(per_layer, dtype=float)[grid.cell_layer]


def face_values_harmonic(grid, per_layer):
    """Distance-weighted harmonic mean of a per-layer coefficient at faces.

    Preserves continuity of the normal flux across coefficient jumps; at the
    two boundary faces the adjacent cell value is used (one-sided).
    """
    c = cell_values(grid, per_layer)
    out = np.empty(grid.n_cells + 1)
    out[0] = c[0]
    out[-1] = c[-1]
    dz = grid.dz
    out[1:-1] = (dz[:-1] + dz[1:]) / (dz[:-1] / c[:-1] + dz[1:] / c[1:])
    return out


def dirichlet_face_interp(values, grid):
    """Linear interpolation of center values to faces with zero at the
    boundary faces (psi-type fields)."""
    nzf = grid.n_cells + 1
    out = np.zeros((nzf,) + values.shape[1:], dtype=values.dtype)
    dz = grid.dz
    w_up = (dz[1:] / (dz[:-1] + dz[1:]))[:, None]
    out[1:-1] = w_up * values[:-1] + (1.0 - w_up) * values[1:]
    return out


def divergence(u):
    """Discrete divergence at centers: spectral d/dx u_x plus the face-flux
    difference of u_z."""
    grid = u.grid
    ddx = x_derivative(u.ux, grid)
    ddz = (u.uz[:-1] - u.uz[1:]) / grid.dz[:, None]
    return ScalarField(grid, ddx + ddz, CENTER)


def apply_diffusion_hat(psi_hat, grid, d_cell, d_face, k2):
    """L psi = -div(D grad psi) applied per wavenumber to spectral columns.

    ``psi_hat`` has shape (n_cells, n_modes); ``k2`` is the squared
    wavenumber per mode.  Dirichlet rows: the half-cell flux to the zero
    boundary value is kept, no boundary unknowns exist.
    """
    dz = grid.dz[:, None]
    dzf = grid.dzf
    # flux D dpsi/dz at every face, with psi = 0 beyond the boundary faces
    flux = np.empty((grid.n_cells + 1, psi_hat.shape[1]), dtype=psi_hat.dtype)
    flux[0] = d_face[0] * (0.0 - psi_hat[0]) / dzf[0]
    flux[-1] = d_face[-1] * (psi_hat[-1] - 0.0) / dzf[-1]
    flux[1:-1] = d_face[1:-1, None] * (psi_hat[:-1] - psi_hat[1:]) / dzf[1:-1, None]
    return k2[None, :] * d_cell[:, None] * psi_hat - (flux[:-1] - flux[1:]) / dz


def diffusion_bands(grid, d_cell, d_face, k2, scale=1.0):
    """Sub/main/super diagonals of scale * L per wavenumber.

    Returns arrays shaped (n_cells, n_modes); the sub band's row 0 and the
    super band's last row are unused.
    """
    n = grid.n_cells
    dz = grid.dz
    dzf = grid.dzf
    w_up = d_face[:-1] / dzf[:-1] / dz      # coupling through the upper face
    w_dn = d_face[1:] / dzf[1:] / dz        # coupling through the lower face
    diag = scale * (k2[None, :] * d_cell[:, None] + (w_up + w_dn)[:, None])
    sub = np.zeros((n, k2.size))
    sup = np.zeros((n, k2.size))
    sub[1:] = -scale * w_up[1:, None]
    sup[:-1] = -scale * w_dn[:-1, None]
    return sub, diag, sup


def solve_tridiagonal(sub, diag, sup, rhs):
    """Thomas solve of independent tridiagonal systems stacked as columns.

    All arrays are (n, m): column j is one system.  No pivoting — callers
    supply diagonally dominant (SPD-similar) systems.
    """
    n = diag.shape[0]
    cp = np.empty_like(rhs)
    dp = np.empty_like(rhs)
    cp[0] = sup[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - sub[i] * cp[i - 1]
        cp[i] = sup[i] / denom
        dp[i] = (rhs[i] - sub[i] * dp[i - 1]) / denom
    x = np.empty_like(rhs)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


# --- norms ----------------------------------------------------------------


def _center_l2_sq(values, grid):
    return grid.L / grid.nx * float(np.sum(values**2 * grid.dz[:, None]))


def _face_l2_sq(values, grid):
    return grid.L / grid.nx * float(np.sum(values**2 * grid.dzf[:, None]))


def field_l2(f):
    """Plain L2 norm of a scalar field (midpoint in z, exact in x)."""
    if f.stag == CENTER:
        return np.sqrt(_center_l2_sq(f.values, f.grid))
    return np.sqrt(_face_l2_sq(f.values, f.grid))


def vector_l2(u):
    """L2 norm of a velocity field over both staggered components."""
    return np.sqrt(_center_l2_sq(u.ux, u.grid) + _face_l2_sq(u.uz, u.grid))


@dataclass(frozen=True)
class FieldNorms:
    """Discrete norms of a psi-type field (an energy-report fragment)."""

    l2: float
    grad: float             # || grad psi ||
    grad_weighted: float    # || sqrt(D) grad psi ||
    l_psi: float            # || -div(D grad psi) ||


def norms(f, layers):
    """L2, gradient, sqrt(D)-weighted gradient, and L psi norms of ``f``."""
    if f.stag != CENTER:
        raise StaggeringError("norms are defined for center-staggered fields")
    grid = f.grid
    psi_hat = np.fft.rfft(f.values, axis=1)
    d_cell = cell_values(grid, layers.D)
    d_face = face_values_harmonic(grid, layers.D)
    ones_c = np.ones(grid.n_cells)
    ones_f = np.ones(grid.n_cells + 1)
    w = mode_weights(grid)  # carries the 1/nx^2 for the unnormalized rfft
    grad_w_sq = _spectral_grad_sq(psi_hat, grid, d_cell, d_face, w)
    grad_sq = _spectral_grad_sq(psi_hat, grid, ones_c, ones_f, w)
    k2 = wavenumbers(grid) ** 2
    lpsi_hat = apply_diffusion_hat(psi_hat, grid, d_cell, d_face, k2)
    lpsi_sq = float(np.sum(w * np.sum(np.abs(lpsi_hat) ** 2 * grid.dz[:, None], axis=0)))
    l2_sq = float(np.sum(w * np.sum(np.abs(psi_hat) ** 2 * grid.dz[:, None], axis=0)))
    return FieldNorms(
        np.sqrt(l2_sq), np.sqrt(grad_sq), np.sqrt(grad_w_sq), np.sqrt(lpsi_sq)
    )


def _spectral_grad_sq(psi_hat, grid, d_cell, d_face, w):
    dzf = grid.dzf
    diff = np.empty((grid.n_cells + 1, psi_hat.shape[1]), dtype=psi_hat.dtype)
    diff[0] = 0.0 - psi_hat[0]
    diff[-1] = psi_hat[-1] - 0.0
    diff[1:-1] = psi_hat[:-1] - psi_hat[1:]
    gz = np.sum(d_face[:, None] * np.abs(diff) ** 2 / dzf[:, None], axis=0)
    k2 = wavenumbers(grid) ** 2
    gx = k2 * np.sum(d_cell[:, None] * np.abs(psi_hat) ** 2 * grid.dz[:, None], axis=0)
    return float(np.sum(w * (gz + gx)))


def dissipation_sq(f, layers):
    """||sqrt(D) grad f||^2 alone (cheaper than the full norm set)."""
    grid = f.grid
    psi_hat = np.fft.rfft(f.values, axis=1)
    d_cell = cell_values(grid, layers.D)
    d_face = face_values_harmonic(grid, layers.D)
    return _spectral_grad_sq(psi_hat, grid, d_cell, d_face, mode_weights(grid))


# --- snapshot format --------------------------------------------------------
#
# flat binary: header (magic, nx, nz, L, H, staggering tag, time) then
# row-major float64 values.

SNAPSHOT_MAGIC = b"LAYFLD01"
_HEADER = struct.Struct("<8sqqddqd")
_STAG_CODE = {CENTER: 0, FACE: 1}
_STAG_NAME = {0: CENTER, 1: FACE}


def write_field(path, f, time=0.0):
    """Write a scalar field snapshot (see module docstring for the layout)."""
    nz = f.values.shape[0]
    header = _HEADER.pack(
        SNAPSHOT_MAGIC, f.grid.nx, nz, f.grid.L, f.grid.H,
        _STAG_CODE[f.stag], float(time),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_field(path, grid):
    """Read a snapshot back onto ``grid``; returns (field, time)."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        magic, nx, nz, L, H, stag, time = _HEADER.unpack(raw)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not a field snapshot (magic {magic!r})")
        data = np.frombuffer(fh.read(nx * nz * 8), dtype="<f8").reshape(nz, nx)
    if nx != grid.nx:
        raise ValueError(f"{path}: nx={nx} does not match grid nx={grid.nx}")
    stag_name = _STAG_NAME[stag]
    expect = grid.n_cells + (1 if stag_name == FACE else 0)
    if nz != expect:
        raise ValueError(f"{path}: nz={nz} does not match grid ({expect})")
    if abs(L - grid.L) > 1e-12 * max(1.0, grid.L) or abs(H - grid.H) > 1e-12 * max(1.0, grid.H):
        raise ValueError(f"{path}: domain ({L}, {H}) does not match grid")
    return ScalarField(grid, data.copy(), stag_name), time


def export_field_text(path, f):
    """Column-text dump (x, z, value) for plotting."""
    grid = f.grid
    zs = grid.z_centers if f.stag == CENTER else grid.z_faces
    with open(path, "w") as fh:
        fh.write("# x z value\n")
        for i, z in enumerate(zs):
            for j in range(grid.nx):
                fh.write(f"{grid.x[j]:.17g} {z:.17g} {f.values[i, j]:.17g}\n")
