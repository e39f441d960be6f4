"""Variable-coefficient pressure solve and Darcy velocity.

For each horizontal wavenumber k the discrete pressure problem is the
symmetric tridiagonal system obtained by writing the no-divergence statement
cell by cell with the staggered Darcy flux

    u_z = -K_face (delta_z p + psi_face),   u_x = -K d/dx p,

zero-flux boundary faces, and harmonic-mean K at faces.  Solving exactly this
system makes the discrete divergence of the resulting velocity an algebraic
identity (up to rounding), not an approximation.

The k = 0 column (and the Nyquist column, whose x-derivative is zeroed by the
odd spectral operator) is singular with a constant null vector; the row sums
of the right-hand side telescope to zero, so the system is compatible.  It is
solved by pinning the last unknown and removing the volume-weighted mean
afterwards ("mean zero subspace" gauge).
"""

from __future__ import annotations

import numpy as np

from .fields import (
    CENTER,
    ScalarField,
    VectorField,
    StaggeringError,
    cell_values,
    dirichlet_face_interp,
    face_values_harmonic,
    field_l2,
    mode_weights,
    solve_tridiagonal,
    wavenumbers,
    x_derivative,
)

RESIDUAL_RTOL = 1e-10


class SolverError(RuntimeError):
    """Pressure solve failed its residual check."""


def _check_conforming(grid, layers):
    faces = grid.z_faces
    for z in layers.interfaces:
        j = int(np.argmin(np.abs(faces - z)))
        if abs(faces[j] - z) > 1e-12 * max(1.0, layers.H):
            raise SolverError(
                f"grid is not interface-conforming: interface {z} has no face"
            )


def effective_k2(grid):
    """Squared wavenumbers as seen by the composed x-derivatives (the
    Nyquist mode rides along with k = 0 since odd derivatives zero it)."""
    k2 = wavenumbers(grid) ** 2
    if grid.nx % 2 == 0:
        k2 = k2.copy()
        k2[-1] = 0.0
    return k2


def pressure_bands(grid, layers, k2):
    """Sub/main/super diagonals of the per-mode symmetric operator."""
    n = grid.n_cells
    k_cell = cell_values(grid, layers.K)
    k_face = face_values_harmonic(grid, layers.K)
    w = k_face[1:-1] / grid.dzf[1:-1]       # interior face couplings
    sub = np.zeros((n, 1))
    sup = np.zeros((n, 1))
    sub[1:, 0] = -w
    sup[:-1, 0] = -w
    diag = (grid.dz * k_cell)[:, None] * k2[None, :]
    diag[:-1, :] += w[:, None]
    diag[1:, :] += w[:, None]
    return sub, diag, sup


def pressure_rhs(psi_hat, grid, layers):
    """Face-flux divergence form of the buoyancy source, one column per mode."""
    k_face = face_values_harmonic(grid, layers.K)
    psi_f = dirichlet_face_interp(psi_hat, grid)
    flux = k_face[:, None] * psi_f
    flux[0] = 0.0   # no-flow faces carry no flux at all
    flux[-1] = 0.0
    return flux[:-1] - flux[1:]


def apply_pressure_operator(p_hat, grid, layers, k2):
    """Matrix-free application of the per-mode operator (for residuals)."""
    k_cell = cell_values(grid, layers.K)
    k_face = face_values_harmonic(grid, layers.K)
    n = grid.n_cells
    flux = np.zeros((n + 1, p_hat.shape[1]), dtype=p_hat.dtype)
    flux[1:-1] = (k_face[1:-1] / grid.dzf[1:-1])[:, None] * (p_hat[:-1] - p_hat[1:])
    out = (grid.dz * k_cell)[:, None] * k2[None, :] * p_hat
    out[:-1] += flux[1:-1]
    out[1:] -= flux[1:-1]
    return out


def solve_pressure_hat(psi_hat, grid, layers):
    """Per-mode pressure solve; returns mean-zero spectral columns."""
    n = grid.n_cells
    k2 = effective_k2(grid)
    sub, diag, sup = pressure_bands(grid, layers, k2)
    rhs = pressure_rhs(psi_hat, grid, layers)
    p_hat = np.zeros_like(rhs)

    regular = k2 > 0.0
    if np.any(regular):
        p_hat[:, regular] = solve_tridiagonal(
            sub, diag[:, regular], sup, rhs[:, regular]
        )

    singular = np.nonzero(~regular)[0]
    for m in singular:
        if n == 1:
            p_hat[:, m] = 0.0
            continue
        # pin the last unknown to zero, solve the SPD leading block
        red = solve_tridiagonal(
            sub[: n - 1], diag[: n - 1, m : m + 1], sup[: n - 1], rhs[: n - 1, m : m + 1]
        )
        p_hat[: n - 1, m] = red[:, 0]
        p_hat[n - 1, m] = 0.0
        # mean-zero gauge (volume weighted)
        p_hat[:, m] -= np.sum(grid.dz * p_hat[:, m]) / grid.H

    res = apply_pressure_operator(p_hat, grid, layers, k2) - rhs
    norm_rhs = np.linalg.norm(rhs)
    if np.linalg.norm(res) > RESIDUAL_RTOL * norm_rhs + 1e-300:
        raise SolverError(
            f"pressure residual {np.linalg.norm(res):.3e} exceeds "
            f"{RESIDUAL_RTOL:.0e} * ||rhs|| = {RESIDUAL_RTOL * norm_rhs:.3e}"
        )
    return p_hat


def solve_pressure(psi, layers):
    """Mean-zero pressure field for a given buoyancy perturbation."""
    if psi.stag != CENTER:
        raise StaggeringError("pressure solve expects a center-staggered psi")
    grid = psi.grid
    _check_conforming(grid, layers)
    psi_hat = np.fft.rfft(psi.values, axis=1)
    p_hat = solve_pressure_hat(psi_hat, grid, layers)
    return ScalarField(grid, np.fft.irfft(p_hat, n=grid.nx, axis=1), CENTER)


def darcy_velocity_hat(p_hat, psi_hat, grid, layers):
    """Spectral Darcy velocity (u_x at centers, u_z at faces).

    For the singular columns (k = 0 and the Nyquist rider) the discrete
    pressure system forces every face flux to zero exactly, so those columns
    are set to zero outright instead of re-subtracting two large hydrostatic
    terms and keeping their rounding residue.
    """
    k_cell = cell_values(grid, layers.K)
    k_face = face_values_harmonic(grid, layers.K)
    ik = 1j * wavenumbers(grid)
    if grid.nx % 2 == 0:
        ik = ik.copy()
        ik[-1] = 0.0
    ux_hat = -k_cell[:, None] * (ik[None, :] * p_hat)
    psi_f = dirichlet_face_interp(psi_hat, grid)
    uz_hat = np.zeros((grid.n_cells + 1, p_hat.shape[1]), dtype=p_hat.dtype)
    uz_hat[1:-1] = -k_face[1:-1, None] * (
        (p_hat[:-1] - p_hat[1:]) / grid.dzf[1:-1, None] + psi_f[1:-1]
    )
    uz_hat[:, effective_k2(grid) == 0.0] = 0.0
    return ux_hat, uz_hat


def darcy_velocity(p, psi, layers):
    """Physical Darcy velocity; boundary faces are forced to u_z = 0.

    Computed through the spectral path so the hydrostatic (k = 0) balance is
    honored exactly; requires p from solve_pressure with the same psi.
    """
    grid = p.grid
    p_hat = np.fft.rfft(p.values, axis=1)
    psi_hat = np.fft.rfft(psi.values, axis=1)
    ux_hat, uz_hat = darcy_velocity_hat(p_hat, psi_hat, grid, layers)
    return VectorField(
        grid,
        np.fft.irfft(ux_hat, n=grid.nx, axis=1),
        np.fft.irfft(uz_hat, n=grid.nx, axis=1),
    )


def pressure_gradient_centers(p_values, grid):
    """(d/dx p, d/dz p) collocated at centers; the z-part averages the two
    adjacent face differences, with zero gradient at the no-flow faces."""
    gx = x_derivative(p_values, grid)
    gzf = np.zeros((grid.n_cells + 1, grid.nx))
    gzf[1:-1] = (p_values[:-1] - p_values[1:]) / grid.dzf[1:-1, None]
    gz = 0.5 * (gzf[:-1] + gzf[1:])
    return gx, gz


def neumann_gradient_sq(p_hat, grid):
    """||grad p||^2 with the face-based z-difference, zero gradient at the
    no-flow boundary faces, and the same effective wavenumbers as the
    operator (the Nyquist x-derivative is zero by construction)."""
    w = mode_weights(grid)
    dzf = grid.dzf[1:-1, None]
    gz = np.sum(np.abs(p_hat[:-1] - p_hat[1:]) ** 2 / dzf, axis=0)
    gx = effective_k2(grid) * np.sum(np.abs(p_hat) ** 2 * grid.dz[:, None], axis=0)
    return float(np.sum(w * (gz + gx)))


def pressure_stability_check(psi, p, lebesgue=2):
    """Monitor ||grad p|| / ||psi|| (the discrete pressure estimate ratio).

    Returns 0 by convention for psi = 0.  ``lebesgue=4`` switches to the
    L4-norm variant computed pointwise from center-collocated gradients.
    """
    grid = psi.grid
    if lebesgue == 2:
        denom = field_l2(psi)
        if denom == 0.0:
            return 0.0
        p_hat = np.fft.rfft(p.values, axis=1)
        return float(np.sqrt(neumann_gradient_sq(p_hat, grid)) / denom)
    if lebesgue == 4:
        cellw = grid.L / grid.nx * grid.dz[:, None]
        denom4 = float(np.sum(psi.values**4 * cellw))
        if denom4 == 0.0:
            return 0.0
        gx = x_derivative(p.values, grid)
        gzf = np.zeros((grid.n_cells + 1, grid.nx))
        gzf[1:-1] = (p.values[:-1] - p.values[1:]) / grid.dzf[1:-1, None]
        gzc = 0.5 * (gzf[:-1] + gzf[1:])
        num4 = float(np.sum((gx**2 + gzc**2) ** 2 * cellw))
        return float((num4 / denom4) ** 0.25)
    raise ValueError(f"lebesgue must be 2 or 4, got {lebesgue}")
