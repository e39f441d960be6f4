"""Time integration of the buoyancy-perturbation transport equation coupled
to the pressure/velocity solve (the full semigroup of the layered model).

The update is IMEX: diffusion -div(D grad psi) is treated implicitly per
wavenumber with a Crank-Nicolson half (tridiagonal, harmonic-mean D at
faces, Dirichlet half-cell rows at z = 0, -H); advection in conservative
flux form div(u psi), the coupling phi_b' u_z, and the source D phi_b'' are
explicit through a second-order two-stage predictor-corrector.  After every
psi update, pressure and velocity are re-solved, so the cached velocity is
always consistent with psi.

The thin cells inside a vanishing layer make explicit diffusion hopeless
(dt ~ eps^2); the implicit half removes that restriction entirely while the
Crank-Nicolson factors keep |amplification| <= 1 for every dt.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import pressure as pr
from .fields import (
    CENTER,
    ScalarField,
    VectorField,
    apply_diffusion_hat,
    cell_values,
    diffusion_bands,
    dissipation_sq,
    face_values_harmonic,
    mode_weights,
    read_field,
    solve_tridiagonal,
    wavenumbers,
    x_derivative,
)
from .geometry import check_delta


class CFLError(ValueError):
    """Requested dt violates the advective stability limit."""

    def __init__(self, dt, limit, suggested):
        self.dt = dt
        self.limit = limit
        self.suggested = suggested
        super().__init__(
            f"dt={dt:.6g} exceeds the advective limit {limit:.6g}; "
            f"suggested dt <= {suggested:.6g}"
        )


class DivergenceError(RuntimeError):
    """The solution became non-finite."""

    def __init__(self, step_index, t):
        self.step_index = step_index
        self.t = t
        super().__init__(f"non-finite values after step {step_index} (t={t:.6g})")


@dataclass(frozen=True)
class SimState:
    """Trajectory point: psi with its consistent Darcy velocity.

    Both divergence trackers are running maxima over every Darcy update so
    far: div_abs_max is max|div u| itself, div_ratio_max normalizes it by
    max|u| / min dz (the rounding-scale yardstick)."""

    t: float
    psi: ScalarField
    u: VectorField
    step_index: int = 0
    dt_last: float = 0.0
    div_abs_max: float = 0.0
    div_ratio_max: float = 0.0


@dataclass(frozen=True)
class TimeConfig:
    t_end: float = 1.0
    dt_max: float = 0.01
    safety: float = 0.5
    cadence: float = 0.1
    freeze_velocity: bool = False
    upwind: bool = False


@dataclass(frozen=True)
class InitSpec:
    """Initial data recipe: zero field, a single sinusoidal mode, a seeded
    random field with prescribed L2 norm, or a snapshot file."""

    kind: str = "zero"
    amplitude: float = 0.0
    mode: int = 1
    seed: int = 0
    norm: float = 0.1
    snapshot_path: str = ""


def build_initial(spec, grid):
    """Materialize an InitSpec on a grid (deterministic given the seed)."""
    x = grid.x[None, :]
    zc = grid.z_centers[:, None]
    H = grid.H
    if spec.kind == "zero":
        vals = np.zeros((grid.n_cells, grid.nx))
    elif spec.kind == "mode":
        vals = spec.amplitude * np.sin(2.0 * np.pi * spec.mode * x / grid.L) * np.sin(
            np.pi * (zc + H) / H
        )
    elif spec.kind == "random":
        rng = np.random.default_rng(np.random.SeedSequence([91823, spec.seed]))
        vals = np.zeros((grid.n_cells, grid.nx))
        for m in range(0, 4):
            for n in range(1, 5):
                a = rng.standard_normal() / (1.0 + m * m + n * n)
                b = rng.standard_normal() / (1.0 + m * m + n * n)
                zmode = np.sin(n * np.pi * (zc + H) / H)
                vals += (a * np.cos(2.0 * np.pi * m * x / grid.L)
                         + b * np.sin(2.0 * np.pi * m * x / grid.L)) * zmode
        nrm = np.sqrt(grid.L / grid.nx * np.sum(vals**2 * grid.dz[:, None]))
        if nrm > 0.0:
            vals *= spec.norm / nrm
    elif spec.kind == "snapshot":
        f, _ = read_field(spec.snapshot_path, grid)
        vals = f.values.copy()
    else:
        raise ValueError(f"unknown initial-data kind {spec.kind!r}")
    return ScalarField(grid, vals, CENTER)


class Stepper:
    """Precomputed operators for one (grid, layers, profile) triple.

    Building the coefficient and stencil arrays once per trajectory keeps the
    per-step cost down to FFTs and tridiagonal sweeps.
    """

    def __init__(self, layers, grid, profile, upwind=False, freeze_velocity=False):
        self.layers = layers
        self.grid = grid
        self.profile = profile
        self.upwind = upwind
        self.freeze_velocity = freeze_velocity
        self.d_cell = cell_values(grid, layers.D)
        self.d_face = face_values_harmonic(grid, layers.D)
        self.k2 = wavenumbers(grid) ** 2
        self.source = (self.d_cell * profile.d2phi_c)[:, None]  # D phi_b''
        self._cn_cache = {}

    def _cn_bands(self, dt):
        bands = self._cn_cache.get(dt)
        if bands is None:
            sub, diag, sup = diffusion_bands(
                self.grid, self.d_cell, self.d_face, self.k2, scale=0.5 * dt
            )
            diag += 1.0
            bands = (sub, diag, sup)
            if len(self._cn_cache) > 16:
                self._cn_cache.clear()
            self._cn_cache[dt] = bands
        return bands

    def _advective_face_values(self, psi_vals, uz):
        grid = self.grid
        vals = np.zeros((grid.n_cells + 1, grid.nx))
        if self.upwind:
            donor_below = psi_vals[1:]    # u_z >= 0 carries from below
            donor_above = psi_vals[:-1]
            vals[1:-1] = np.where(uz[1:-1] >= 0.0, donor_below, donor_above)
        else:
            # plain mean keeps the telescoping energy identity on the
            # nonuniform spacing; boundary faces carry no flux anyway
            vals[1:-1] = 0.5 * (psi_vals[:-1] + psi_vals[1:])
        return vals

    def explicit_tendency(self, psi_vals, u):
        """-div(u psi) - phi_b' u_z + D phi_b'' at cell centers."""
        grid = self.grid
        adv_x = x_derivative(u.ux * psi_vals, grid)
        flux_z = u.uz * self._advective_face_values(psi_vals, u.uz)
        adv_z = (flux_z[:-1] - flux_z[1:]) / grid.dz[:, None]
        uz_c = 0.5 * (u.uz[:-1] + u.uz[1:])
        couple = self.profile.dphi_c[:, None] * uz_c
        return -(adv_x + adv_z + couple) + self.source

    def zero_velocity(self):
        grid = self.grid
        return VectorField(grid, np.zeros((grid.n_cells, grid.nx)),
                           np.zeros((grid.n_cells + 1, grid.nx)))

    def velocity(self, psi_hat):
        """Darcy velocity consistent with psi, plus its divergence ratio.

        With freeze_velocity the velocity is pinned to zero (pure
        transport-diffusion mode for decay and audit baselines).
        """
        grid = self.grid
        if self.freeze_velocity:
            return self.zero_velocity(), None, (0.0, 0.0)
        p_hat = pr.solve_pressure_hat(psi_hat, grid, self.layers)
        ux_hat, uz_hat = pr.darcy_velocity_hat(p_hat, psi_hat, grid, self.layers)
        ux = np.fft.irfft(ux_hat, n=grid.nx, axis=1)
        uz = np.fft.irfft(uz_hat, n=grid.nx, axis=1)
        u = VectorField(grid, ux, uz)
        div_hat = _spectral_divergence_hat(ux_hat, uz_hat, grid)
        div = np.fft.irfft(div_hat, n=grid.nx, axis=1)
        umax = max(np.max(np.abs(ux)), np.max(np.abs(uz)))
        div_abs = float(np.max(np.abs(div)))
        ratio = 0.0 if umax == 0.0 else div_abs * float(np.min(grid.dz)) / umax
        return u, p_hat, (div_abs, ratio)

    def advance(self, state, dt):
        """One IMEX predictor-corrector step of size dt."""
        limit = cfl_dt(state, self.grid, 1.0, np.inf)
        if dt > limit * (1.0 + 1e-12):
            raise CFLError(dt, limit, 0.5 * limit)
        grid = self.grid
        psi_n = state.psi.values
        psi_hat_n = np.fft.rfft(psi_n, axis=1)
        lhs_bands = self._cn_bands(dt)
        # (I - dt/2 L) psi^n, reused by both stages
        base = psi_hat_n - 0.5 * dt * apply_diffusion_hat(
            psi_hat_n, grid, self.d_cell, self.d_face, self.k2
        )

        n1 = self.explicit_tendency(psi_n, state.u)
        n1_hat = np.fft.rfft(n1, axis=1)
        star_hat = solve_tridiagonal(*lhs_bands, base + dt * n1_hat)

        abs_max = state.div_abs_max
        ratio_max = state.div_ratio_max
        if self.freeze_velocity:
            u_star = state.u
        else:
            u_star, _, (da, dr) = self.velocity(star_hat)
            abs_max = max(abs_max, da)
            ratio_max = max(ratio_max, dr)
        psi_star = np.fft.irfft(star_hat, n=grid.nx, axis=1)

        n2 = self.explicit_tendency(psi_star, u_star)
        n2_hat = np.fft.rfft(n2, axis=1)
        new_hat = solve_tridiagonal(*lhs_bands, base + 0.5 * dt * (n1_hat + n2_hat))
        psi_new = np.fft.irfft(new_hat, n=grid.nx, axis=1)

        if not np.all(np.isfinite(psi_new)):
            raise DivergenceError(state.step_index + 1, state.t + dt)

        if self.freeze_velocity:
            u_new = state.u
        else:
            u_new, _, (da, dr) = self.velocity(new_hat)
            abs_max = max(abs_max, da)
            ratio_max = max(ratio_max, dr)
        return SimState(
            t=state.t + dt,
            psi=ScalarField(grid, psi_new, CENTER),
            u=u_new,
            step_index=state.step_index + 1,
            dt_last=dt,
            div_abs_max=abs_max,
            div_ratio_max=ratio_max,
        )


def _spectral_divergence_hat(ux_hat, uz_hat, grid):
    ik = 1j * wavenumbers(grid)
    if grid.nx % 2 == 0:
        ik = ik.copy()
        ik[-1] = 0.0
    return ik[None, :] * ux_hat + (uz_hat[:-1] - uz_hat[1:]) / grid.dz[:, None]


def initial_state(psi0, layers, stepper=None, profile=None):
    """SimState at t = 0 with the velocity already consistent with psi0."""
    if stepper is None:
        stepper = Stepper(layers, psi0.grid, profile)
    psi_hat = np.fft.rfft(psi0.values, axis=1)
    u, _, (div_abs, ratio) = stepper.velocity(psi_hat)
    return SimState(0.0, psi0, u, 0, 0.0, div_abs, ratio)


def step(state, layers, grid, profile, dt, upwind=False, freeze_velocity=False):
    """Single-shot step (builds a Stepper; use Stepper directly in loops)."""
    return Stepper(layers, grid, profile, upwind, freeze_velocity).advance(state, dt)


def cfl_dt(state, grid, safety, dt_max):
    """Advective time-step limit.

    safety * min(dx / max|u_x|, min over cells of dz / max|u_z| on its
    faces), capped at dt_max; a quiescent field returns dt_max.
    """
    if not 0.0 < safety <= 1.0:
        raise ValueError(f"safety must be in (0, 1], got {safety}")
    ux_max = float(np.max(np.abs(state.u.ux))) if state.u.ux.size else 0.0
    uz = np.abs(state.u.uz)
    uz_cell = np.maximum(uz[:-1], uz[1:]).max(axis=1)
    # work with velocity-over-length rates so tiny velocities cannot overflow
    rate = ux_max / grid.dx
    rate = max(rate, float(np.max(uz_cell / grid.dz)))
    if rate <= 0.0:
        return dt_max
    try:
        dt = safety / rate
    except OverflowError:
        return dt_max
    return min(dt, dt_max)


@dataclass
class TrajectoryRecord:
    """Sampled norms along one run (column text on disk).

    Columns: t, ||psi||^2, ||sqrt(D) grad psi||^2, ||L psi||^2, max|div u|
    (running maximum over every Darcy update so far), dt.
    """

    t: np.ndarray
    psi_sq: np.ndarray
    grad_sq: np.ndarray
    lpsi_sq: np.ndarray
    div_max: np.ndarray
    dt: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def failed(self):
        return bool(self.meta.get("failed", False))


def _lpsi_sq(psi_vals, grid, d_cell, d_face, k2):
    psi_hat = np.fft.rfft(psi_vals, axis=1)
    lhat = apply_diffusion_hat(psi_hat, grid, d_cell, d_face, k2)
    w = mode_weights(grid)
    return float(np.sum(w * np.sum(np.abs(lhat) ** 2 * grid.dz[:, None], axis=0)))


def cadence_times(t_end, cadence):
    """Sample instants 0, cadence, 2 cadence, ..., ending exactly at t_end."""
    n = int(np.floor(t_end / cadence + 1e-9))
    pts = np.arange(n + 1) * cadence
    if t_end - pts[-1] > 1e-9 * max(1.0, t_end):
        pts = np.append(pts, t_end)
    else:
        pts[-1] = t_end
    return pts


def simulate(psi0, layers, grid, profile, tcfg, sample_times=None, observers=()):
    """Advance psi0 to t_end with adaptive dt, sampling norms on the way.

    Observers are called as observer(state) at every sample time with a
    read-only state.  Returns (record, final_state); a blow-up aborts with
    the partial record flagged failed.  Runs are deterministic for a fixed
    configuration.
    """
    adm = check_delta(layers, profile)
    if not adm.admissible:
        warnings.warn(
            f"delta={adm.delta:.6g} exceeds the admissible bound "
            f"{adm.delta_max:.6g}; energy estimates lose validity",
            stacklevel=2,
        )
    stepper = Stepper(
        layers, grid, profile,
        upwind=tcfg.upwind, freeze_velocity=tcfg.freeze_velocity,
    )
    if sample_times is None:
        sample_times = cadence_times(tcfg.t_end, tcfg.cadence)
    else:
        sample_times = np.unique(np.asarray(sample_times, dtype=float))

    state = initial_state(psi0, layers, stepper=stepper)
    rows = []
    failed = False

    def sample(st):
        rows.append((
            st.t,
            grid.L / grid.nx * float(np.sum(st.psi.values**2 * grid.dz[:, None])),
            dissipation_sq(st.psi, layers),
            _lpsi_sq(st.psi.values, grid, stepper.d_cell, stepper.d_face, stepper.k2),
            st.div_abs_max,
            st.dt_last,
        ))
        for obs in observers:
            obs(st)

    for target in sample_times:
        try:
            while state.t < target - 1e-12 * max(1.0, target):
                limit = cfl_dt(state, grid, tcfg.safety, tcfg.dt_max)
                dt = min(limit, target - state.t)
                state = stepper.advance(state, dt)
                if abs(state.t - target) < 1e-12 * max(1.0, target):
                    state = SimState(target, state.psi, state.u,
                                     state.step_index, state.dt_last,
                                     state.div_abs_max, state.div_ratio_max)
        except DivergenceError:
            failed = True
            break
        sample(state)
    record = TrajectoryRecord(
        *(np.array([r[i] for r in rows]) for i in range(6)),
        meta={
            "nx": grid.nx,
            "n_cells": grid.n_cells,
            "max_dz": float(np.max(grid.dz)),
            "dt_max": tcfg.dt_max,
            "cadence": tcfg.cadence,
            "delta": profile.delta,
            "c_delta": profile.c_delta,
            "admissible": adm.admissible,
            "failed": failed,
        },
    )
    return record, state


_COLUMNS = "t psi_l2_sq gradD_l2_sq lpsi_l2_sq div_max dt"


def write_record(path, record):
    """Column-text trajectory record with `# key = value` metadata."""
    with open(path, "w") as fh:
        for key, val in record.meta.items():
            if isinstance(val, bool):
                sval = "true" if val else "false"
            elif isinstance(val, float):
                sval = f"{val:.17g}"
            else:
                sval = str(val)
            fh.write(f"# {key} = {sval}\n")
        fh.write(f"# columns: {_COLUMNS}\n")
        for i in range(record.t.size):
            fh.write(" ".join(
                f"{arr[i]:.17g}"
                for arr in (record.t, record.psi_sq, record.grad_sq,
                            record.lpsi_sq, record.div_max, record.dt)
            ) + "\n")


def read_record(path):
    """Inverse of :func:`write_record`."""
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("columns:"):
                    continue
                key, _, val = body.partition("=")
                key = key.strip()
                val = val.strip()
                if val in ("true", "false"):
                    meta[key] = val == "true"
                else:
                    try:
                        meta[key] = int(val)
                    except ValueError:
                        try:
                            meta[key] = float(val)
                        except ValueError:
                            meta[key] = val
                continue
            rows.append([float(v) for v in line.split()])
    data = np.array(rows) if rows else np.zeros((0, 6))
    return TrajectoryRecord(
        data[:, 0], data[:, 1], data[:, 2], data[:, 3], data[:, 4], data[:, 5],
        meta=meta,
    )
