"""Thin-layer sweep harness: finite-time convergence of solutions and
attractor semi-distance measurements as the thin layer's thickness shrinks.

The difference fields (psi, u, grad p between an eps-member and the merged
limit model) are obtained by subtracting independently computed solutions on
a common reference grid — the object the convergence statement is actually
about — rather than by integrating a separate error system.  The same
initial data, generated once on the reference grid and restricted to every
member grid, realizes the shared-initial-condition hypothesis.

Family members and initial conditions are independent jobs; a process pool
of configurable size may run them, and results are merged deterministically
by eps then seed.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import pressure as pr
from .fields import CENTER, FACE, ScalarField, field_l2
from .geometry import build_grid, build_profile
from .transport import InitSpec, TimeConfig, build_initial, cadence_times, simulate


# --- regridding -------------------------------------------------------------


def _x_resample(values, src_nx, dst_nx):
    """Spectral resample along axis 1 (zero padding / truncation), exact for
    band-limited data.  Nyquist energy is split symmetrically on upsampling
    and folded on downsampling."""
    if src_nx == dst_nx:
        return values
    fh = np.fft.fft(values, axis=1)
    out = np.zeros((values.shape[0], dst_nx), dtype=complex)
    n = min(src_nx, dst_nx)
    kpos = (n + 1) // 2   # DC plus strictly positive frequencies
    kneg = (n - 1) // 2   # strictly negative frequencies
    out[:, :kpos] = fh[:, :kpos]
    if kneg:
        out[:, -kneg:] = fh[:, -kneg:]
    if n % 2 == 0:
        if dst_nx > src_nx:
            out[:, n // 2] = 0.5 * fh[:, n // 2]
            out[:, -(n // 2)] = 0.5 * fh[:, n // 2]
        else:
            out[:, n // 2] = fh[:, n // 2].real + fh[:, -(n // 2)].real
    return np.fft.ifft(out, axis=1).real * (dst_nx / src_nx)


def _z_interp_matrix(z_src, z_dst):
    """Piecewise-linear interpolation weights between decreasing coordinate
    vectors, with two-point linear extrapolation beyond the source hull (so
    affine data is reproduced exactly)."""
    n = z_src.size
    inc = -z_src  # increasing
    j = np.searchsorted(inc, -z_dst, side="right") - 1
    j = np.clip(j, 0, n - 2)
    w = (z_src[j] - z_dst) / (z_src[j] - z_src[j + 1])
    mat = np.zeros((z_dst.size, n))
    rows = np.arange(z_dst.size)
    mat[rows, j] = 1.0 - w
    mat[rows, j + 1] = w
    return mat


def regrid_values(values, src_grid, dst_grid, stag=CENTER):
    """Transfer grid-function values: spectral in x, linear in z."""
    vals = _x_resample(values, src_grid.nx, dst_grid.nx)
    if stag == CENTER:
        mat = _z_interp_matrix(src_grid.z_centers, dst_grid.z_centers)
    else:
        mat = _z_interp_matrix(src_grid.z_faces, dst_grid.z_faces)
    return mat @ vals


def to_reference(f, ref_grid):
    """Interpolate a scalar field onto the reference grid."""
    src = f.grid
    if abs(src.L - ref_grid.L) > 1e-12 * max(1.0, ref_grid.L):
        raise ValueError(f"horizontal period mismatch: {src.L} vs {ref_grid.L}")
    if abs(src.H - ref_grid.H) > 1e-12 * max(1.0, ref_grid.H):
        raise ValueError(f"depth mismatch: {src.H} vs {ref_grid.H}")
    return ScalarField(ref_grid, regrid_values(f.values, src, ref_grid, f.stag), f.stag)


# --- shared run setup -------------------------------------------------------


@dataclass(frozen=True)
class RunSetup:
    """Numerical parameters shared by every member of a family study."""

    nx: int
    target_dz: float
    delta: float
    c0: float
    c_mH: float
    time: TimeConfig
    init: InitSpec
    max_cells: int = 1_000_000


def reference_grid(family, setup):
    """Finest member z-resolution refined once more, on the base geometry."""
    return build_grid(family.base, setup.nx, 0.5 * setup.target_dz,
                      max_cells=setup.max_cells)


def coefficient_difference_norms(family, eps, r=2.0):
    """Exact L^r norms of the coefficient differences K0 - K_eps, D0 - D_eps:
    |dK| (L eps)^(1/r) over the vanished band."""
    jb = family.j - 2
    dk = abs(family.base.K[jb] - family.thin_K)
    dd = abs(family.base.D[jb] - family.thin_D)
    factor = (family.base.L * eps) ** (1.0 / r)
    return dk * factor, dd * factor


def _sample_times(tcfg):
    return cadence_times(tcfg.t_end, tcfg.cadence)


def _run_member(args):
    """One family member: simulate and collect field samples (separate
    process safe; everything in and out is plain data)."""
    family, eps, setup, sample_times, psi0_ref_values, ref_desc = args
    stack = family.instantiate(eps)
    grid = build_grid(stack, setup.nx, setup.target_dz, max_cells=setup.max_cells)
    profile = build_profile(stack, grid, setup.delta, setup.c0, setup.c_mH)
    ref_grid = build_grid(family.base, setup.nx, ref_desc, max_cells=setup.max_cells)
    psi0 = ScalarField(
        grid, regrid_values(psi0_ref_values, ref_grid, grid, CENTER), CENTER
    )
    samples = {"t": [], "psi": [], "ux": [], "uz": [], "gpx": [], "gpz": []}

    def collect(state):
        samples["t"].append(state.t)
        samples["psi"].append(state.psi.values.copy())
        samples["ux"].append(state.u.ux.copy())
        samples["uz"].append(state.u.uz.copy())
        p = pr.solve_pressure(state.psi, stack)
        gx, gz = pr.pressure_gradient_centers(p.values, grid)
        samples["gpx"].append(gx)
        samples["gpz"].append(gz)

    record, _ = simulate(
        psi0, stack, grid, profile, setup.time,
        sample_times=sample_times, observers=(collect,),
    )
    return eps, record.failed, samples, grid


@dataclass
class ConvergenceRecord:
    """Difference norms of one member against the limit run."""

    eps: float
    times: np.ndarray
    psi_sq: np.ndarray      # ||psi_tilde||^2 at each sample
    u_sq: np.ndarray        # ||u_tilde||^2
    gradp_sq: np.ndarray    # ||grad p_tilde||^2
    ktilde_l2: float
    dtilde_l2: float
    interp_floor: float     # 10x-able measured interpolation round-trip energy
    failed: bool = False

    @property
    def e(self):
        return self.psi_sq + self.u_sq + self.gradp_sq

    @property
    def sup_e(self):
        return float(np.max(self.e)) if self.e.size else 0.0


@dataclass
class SweepResult:
    records: tuple
    rate: float
    prefactor: float
    null_family: bool
    n_fit: int
    solver_floor: float


def _ref_arrays(samples, grid, ref_grid):
    out = {}
    for key, stag in (("psi", CENTER), ("ux", CENTER), ("uz", FACE),
                      ("gpx", CENTER), ("gpz", CENTER)):
        out[key] = [regrid_values(v, grid, ref_grid, stag) for v in samples[key]]
    return out


def _center_sq(vals, grid):
    return grid.L / grid.nx * float(np.sum(vals**2 * grid.dz[:, None]))


def _face_sq(vals, grid):
    return grid.L / grid.nx * float(np.sum(vals**2 * grid.dzf[:, None]))


def fit_rate(eps, sup_e, n_fit=4):
    """Least-squares slope/prefactor of log sup_t E against log eps over the
    smallest n_fit thicknesses."""
    pairs = sorted(zip(eps, sup_e))[:n_fit]
    le = np.log([p[0] for p in pairs])
    lv = np.log([max(p[1], 1e-300) for p in pairs])
    slope, intercept = np.polyfit(le, lv, 1)
    return float(slope), float(math.exp(intercept))


def sweep(family, setup, sample_times=None, n_fit=4, workers=1):
    """Run the family plus its limit, difference on the reference grid, and
    fit the convergence rate of sup_t E(eps)."""
    if sample_times is None:
        sample_times = _sample_times(setup.time)
    ref_grid = reference_grid(family, setup)
    psi0_ref = build_initial(setup.init, ref_grid)

    jobs = [
        (family, eps, setup, sample_times, psi0_ref.values, 0.5 * setup.target_dz)
        for eps in (0.0,) + tuple(family.epsilons)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_run_member, jobs))
    else:
        raw = [_run_member(j) for j in jobs]
    raw.sort(key=lambda r: -r[0])  # decreasing eps; limit (0.0) last
    by_eps = {r[0]: r for r in raw}

    _, limit_failed, limit_samples, limit_grid = by_eps[0.0]
    if limit_failed:
        raise RuntimeError("the limit-model run blew up; sweep cannot proceed")
    limit_ref = _ref_arrays(limit_samples, limit_grid, ref_grid)
    times = np.asarray(limit_samples["t"])

    jb = family.j - 2
    null_family = (
        family.base.K[jb] == family.thin_K and family.base.D[jb] == family.thin_D
    )
    psi_scale = max(max(field_l2(ScalarField(ref_grid, a)) for a in limit_ref["psi"]), 1e-30)
    solver_floor = (pr.RESIDUAL_RTOL * psi_scale) ** 2

    records = []
    for eps in family.epsilons:
        _, failed, samples, grid = by_eps[eps]
        if failed:
            warnings.warn(f"member eps={eps} blew up; excluded from the fit")
            records.append(ConvergenceRecord(
                eps, times, np.full(times.size, np.nan), np.full(times.size, np.nan),
                np.full(times.size, np.nan),
                *coefficient_difference_norms(family, eps), 0.0, failed=True,
            ))
            continue
        mem = _ref_arrays(samples, grid, ref_grid)
        psi_sq = np.array([
            _center_sq(a - b, ref_grid) for a, b in zip(mem["psi"], limit_ref["psi"])
        ])
        u_sq = np.array([
            _center_sq(ax - bx, ref_grid) + _face_sq(az - bz, ref_grid)
            for ax, bx, az, bz in zip(mem["ux"], limit_ref["ux"],
                                      mem["uz"], limit_ref["uz"])
        ])
        gradp_sq = np.array([
            _center_sq(ax - bx, ref_grid) + _center_sq(az - bz, ref_grid)
            for ax, bx, az, bz in zip(mem["gpx"], limit_ref["gpx"],
                                      mem["gpz"], limit_ref["gpz"])
        ])
        # measured interpolation floor: round-trip the limit fields through
        # this member's grid and see what energy that alone fabricates
        floor = 0.0
        for i in range(len(times)):
            rt_psi = regrid_values(
                regrid_values(limit_ref["psi"][i], ref_grid, grid, CENTER),
                grid, ref_grid, CENTER,
            )
            rt_ux = regrid_values(
                regrid_values(limit_ref["ux"][i], ref_grid, grid, CENTER),
                grid, ref_grid, CENTER,
            )
            rt_uz = regrid_values(
                regrid_values(limit_ref["uz"][i], ref_grid, grid, FACE),
                grid, ref_grid, FACE,
            )
            e_rt = (
                _center_sq(rt_psi - limit_ref["psi"][i], ref_grid)
                + _center_sq(rt_ux - limit_ref["ux"][i], ref_grid)
                + _face_sq(rt_uz - limit_ref["uz"][i], ref_grid)
            )
            floor = max(floor, e_rt)
        kt, dt_ = coefficient_difference_norms(family, eps)
        records.append(ConvergenceRecord(
            eps, times, psi_sq, u_sq, gradp_sq, kt, dt_, floor,
        ))

    good = [r for r in records if not r.failed]
    if null_family or len(good) < 2:
        rate, prefactor = float("nan"), float("nan")
    else:
        rate, prefactor = fit_rate(
            [r.eps for r in good], [r.sup_e for r in good], n_fit
        )
    return SweepResult(tuple(records), rate, prefactor, null_family,
                       min(n_fit, len(good)), solver_floor)


# --- attractor sampling -----------------------------------------------------


@dataclass
class AttractorSample:
    """Pooled post-spin-up snapshots approximating one attractor."""

    eps: float
    grid: object               # reference grid the snapshots live on
    snapshots: np.ndarray      # (count, n_cells, nx)
    times: np.ndarray
    seeds: np.ndarray
    spin_time: float
    t1: float
    window: float
    cadence: float

    def __post_init__(self):
        if self.snapshots.shape[0] == 0:
            raise ValueError("attractor sample is empty")
        if np.any(self.times < self.t1 + 1.0 - 1e-9):
            raise ValueError("snapshot taken before T1 + 1")


def _run_ic(args):
    """One initial condition of the attractor study."""
    (stack, setup, snap_times, spin_time, psi0_values, ref_dz, base, ic_seed) = args
    ref_grid = build_grid(base, setup.nx, ref_dz, max_cells=setup.max_cells)
    grid = build_grid(stack, setup.nx, setup.target_dz, max_cells=setup.max_cells)
    profile = build_profile(stack, grid, setup.delta, setup.c0, setup.c_mH)
    psi0 = ScalarField(grid, regrid_values(psi0_values, ref_grid, grid, CENTER), CENTER)
    shots = []

    def collect(state):
        if state.t >= spin_time - 1e-9:
            shots.append((state.t, regrid_values(state.psi.values, grid, ref_grid, CENTER)))

    sample_times = np.unique(np.concatenate([[0.0], snap_times]))
    record, _ = simulate(psi0, stack, grid, profile, setup.time,
                         sample_times=sample_times, observers=(collect,))
    return ic_seed, record.failed, shots


def sample_attractor(stack, setup, family_base, n_init, radius, spin_pad,
                     window, cadence, seed, min_snapshots=1, eps=0.0, workers=1):
    """Integrate seeded initial conditions past the absorbing time and pool
    snapshots over the sampling window, on the reference grid.

    Initial conditions are random fields with L2 norm drawn inside the ball
    of the given radius; T1 is evaluated at the ball radius, so every
    snapshot time satisfies t >= T1 + 1.
    """
    if n_init < 1:
        raise ValueError("need at least one initial condition")
    n_shots = int(math.floor(window / cadence + 1e-9)) + 1
    if n_shots < min_snapshots:
        raise ValueError(
            f"window/cadence give {n_shots} snapshots, fewer than {min_snapshots}"
        )
    ref_dz = 0.5 * setup.target_dz
    ref_grid = build_grid(family_base, setup.nx, ref_dz, max_cells=setup.max_cells)
    t1 = absorbing_time_for(radius, stack)
    spin_time = t1 + 1.0 + spin_pad
    snap_times = spin_time + np.arange(n_shots) * cadence
    t_end = float(snap_times[-1])
    tcfg = TimeConfig(
        t_end=t_end, dt_max=setup.time.dt_max, safety=setup.time.safety,
        cadence=setup.time.cadence, freeze_velocity=setup.time.freeze_velocity,
        upwind=setup.time.upwind,
    )
    run_setup = RunSetup(setup.nx, setup.target_dz, setup.delta, setup.c0,
                         setup.c_mH, tcfg, setup.init, setup.max_cells)

    rng = np.random.default_rng(np.random.SeedSequence([777, seed]))
    norms_drawn = radius * rng.uniform(0.2, 1.0, n_init)
    jobs = []
    for i in range(n_init):
        ic_seed = seed * 100003 + i
        spec = InitSpec(kind="random", norm=float(norms_drawn[i]), seed=ic_seed)
        psi0 = build_initial(spec, ref_grid)
        jobs.append((stack, run_setup, snap_times, spin_time, psi0.values,
                     ref_dz, family_base, ic_seed))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_run_ic, jobs))
    else:
        raw = [_run_ic(j) for j in jobs]
    raw.sort(key=lambda r: r[0])

    shots, times, seeds = [], [], []
    for ic_seed, failed, ic_shots in raw:
        if failed:
            warnings.warn(f"initial condition seed={ic_seed} blew up; skipped")
            continue
        for t, vals in ic_shots:
            shots.append(vals)
            times.append(t)
            seeds.append(ic_seed)
    return AttractorSample(
        eps, ref_grid, np.array(shots), np.array(times), np.array(seeds),
        spin_time, t1, window, cadence,
    )


def absorbing_time_for(radius, stack):
    if radius <= 1.0:
        return 0.0
    return 2.0 * stack.H**2 / stack.min_D * math.log(radius)


def semidistance(a, b):
    """Hausdorff semi-distance max over a of min over b of the L2 distance.

    Brute-force pairwise with early exit: once a row's running minimum drops
    to or below the current maximum, that row cannot raise the result.
    """
    if a.snapshots.shape[0] == 0 or b.snapshots.shape[0] == 0:
        raise ValueError("semidistance of an empty sample")
    grid = a.grid
    w = grid.L / grid.nx * grid.dz[:, None]
    best_max = 0.0
    for fa in a.snapshots:
        row_min = math.inf
        for fb in b.snapshots:
            d = math.sqrt(float(np.sum((fa - fb) ** 2 * w)))
            if d < row_min:
                row_min = d
                if row_min <= best_max:
                    break
        if row_min > best_max:
            best_max = row_min
    return best_max
