"""Explicit energy-estimate constants and discrete audits along trajectories.

The L2 machinery is fully explicit: M1, M2, M3, the absorbing time T1 and
the admissibility bound on delta depend only on the geometry and the
profile.  The H1 chain (M4..M8) additionally involves embedding constants
(C1, C2, C_u, C_p and a generic Gronwall constant) that are not available
in closed form; they enter as user-supplied scalars with default 1 and the
corresponding constants are flagged parametric.

Audits compare sampled trajectory norms against the inequalities the
constants bound: the per-sample dissipation inequality, the Gronwall decay
envelope, absorbing-set membership with its windowed dissipation integral,
and the qualitative H1 boundedness/linearity claims.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import check_delta


def exp_saturating(x):
    """exp that saturates to inf instead of overflowing; the Gronwall
    constants routinely exceed double range and inf keeps every comparison
    against them honest (the bound holds trivially)."""
    if x > 709.0:
        return math.inf
    return math.exp(x)


@dataclass(frozen=True)
class EmbedConstants:
    """User-supplied stand-ins for the embedding constants (default 1)."""

    c1: float = 1.0    # L4 interpolation
    c2: float = 1.0    # gradient L4 interpolation
    cu: float = 1.0    # weighted-norm upper equivalence
    cp: float = 1.0    # pressure-gradient stability
    cgen: float = 1.0  # generic Gronwall constant in the convergence bound


@dataclass(frozen=True)
class EnergyReport:
    """Constants of the energy machinery plus admissibility data.

    m1..m3 are exact; m4..m8 are parametric in the supplied embedding
    constants.  t1 is the absorbing time for the given initial norm.
    """

    m1: float
    m2: float
    m3: float
    m4: float
    m5: float
    m6: float
    m7: float
    m8: float
    t1: float
    delta: float
    delta_max: float
    admissible: bool
    parametric: tuple = ("m4", "m5", "m6", "m7", "m8")
    embed: EmbedConstants = EmbedConstants()
    psi0_l2: float = 1.0
    psi0_grad: float = 1.0
    horizon: float = 1.0
    H: float = 1.0
    min_d: float = 1.0

    @property
    def absorbing_level(self):
        """The L2-squared absorbing threshold M1 H^2 / min D + 1."""
        return self.m1 * self.H**2 / self.min_d + 1.0


def absorbing_time(psi0_norm, layers):
    """T1 = max(0, (2 H^2 / min D) ln ||psi0||)."""
    if psi0_norm <= 1.0:
        return 0.0
    return 2.0 * layers.H**2 / layers.min_D * math.log(psi0_norm)


def constants(layers, profile, embed=None, psi0_l2=1.0, psi0_grad=1.0, horizon=1.0):
    """Evaluate M1..M8 and T1 for a geometry/profile pair.

    psi0_l2, psi0_grad are ||psi0|| and ||sqrt(D) grad psi0||; horizon is the
    time t at which the finite-time constants M7, M8 are evaluated.
    """
    if embed is None:
        embed = EmbedConstants()
    cd = profile.c_delta
    delta = profile.delta
    L = layers.L
    H = layers.H
    min_d, max_d = layers.min_D, layers.max_D
    min_k, max_k = layers.min_K, layers.max_K

    m1 = 8.0 * cd**2 * L / delta * max_d**2 / min_d
    m2 = 8.0 * cd**2 * L / delta**3 * max_d**2
    m3 = 8.0 * max_k**4 * cd**2 / (min_k**2 * min_d)
    m4 = 13.5 * embed.c1**4 * embed.c2**2 * embed.cu**2 * (1.0 + embed.cp) ** 4 \
        * max_k**4 / min_d**2

    level = m1 * H**2 / min_d + 1.0
    m5 = (m2 + level) * exp_saturating(m3 + m4 * level**2)

    t1 = absorbing_time(psi0_l2, layers)
    a2 = psi0_l2**2
    b2 = psi0_grad**2
    t_ref = t1 + 1.0
    m5p = (b2 + m2 * t_ref) * exp_saturating(
        m3 * t_ref + m4 * (m1 * H**2 / min_d + a2) * (m1 * t_ref + a2)
    )
    m6 = max(m5, m5p)
    m7 = 2.0 * ((m2 + m3 * m6 + m4 * m6**2 * (m1 * H**2 / min_d + a2)) * horizon + b2)
    c = embed.cgen
    m8 = c * (
        exp_saturating(c * m6**2 * horizon)
        * (c * horizon + c * m6**2 * horizon + c * m7)
        + m6
    )

    adm = check_delta(layers, profile)
    return EnergyReport(
        m1, m2, m3, m4, m5, m6, m7, m8, t1,
        adm.delta, adm.delta_max, adm.admissible,
        embed=embed, psi0_l2=psi0_l2, psi0_grad=psi0_grad, horizon=horizon,
        H=H, min_d=min_d,
    )


@dataclass
class AuditResult:
    """Outcome of one audit: pass/fail, worst residuals, per-check details."""

    name: str
    applicable: bool
    passed: bool
    worst: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)


def default_tol(record, report, factor=10.0):
    """Discretization allowance: audits must not fail on O(dt^2 + dz^2).

    The scale is set by the constants and the initial energy, never by the
    audited samples themselves, so a corrupted tail cannot widen its own
    tolerance."""
    dt = float(record.meta.get("dt_max", np.max(record.dt) if record.dt.size else 0.0))
    max_dz = float(record.meta.get("max_dz", 0.0))
    e0 = float(record.psi_sq[0]) if record.psi_sq.size else 0.0
    scale = max(1.0, report.m1, e0)
    return factor * (dt**2 + max_dz**2) * scale


def l2_envelope(t, psi0_sq, report):
    """Gronwall decay envelope of the L2 energy."""
    a = report.min_d / report.H**2
    decay = np.exp(-a * np.asarray(t, dtype=float))
    return psi0_sq * decay + report.m1 / a * (1.0 - decay)


def audit_l2(record, report, tol_t=None, tol_factor=10.0):
    """Check the dissipation inequality, the decay envelope, and the
    absorbing-set bounds on a sampled trajectory.

    (a) centered-difference d/dt ||psi||^2 + ||sqrt(D) grad psi||^2 <= M1
    (b) ||psi(t)||^2 under the Gronwall envelope
    (c) for t >= T1: L2 level and the windowed dissipation integral under
        M1 H^2 / min D + 1
    """
    if not report.admissible:
        return AuditResult("l2", applicable=False, passed=False,
                           details={"reason": "delta inadmissible"})
    if tol_t is None:
        tol_t = default_tol(record, report, tol_factor)
    t = record.t
    e = record.psi_sq
    g = record.grad_sq
    out = AuditResult("l2", applicable=True, passed=True,
                      details={"tol_t": tol_t, "m1": report.m1})

    if t.size >= 3:
        dedt = (e[2:] - e[:-2]) / (t[2:] - t[:-2])
        res_a = dedt + g[1:-1] - report.m1
    else:
        res_a = np.zeros(0)
    out.residuals["a"] = res_a
    out.worst["a"] = float(res_a.max()) if res_a.size else 0.0
    pass_a = bool(res_a.size == 0 or res_a.max() <= tol_t)

    env = l2_envelope(t, e[0] if e.size else 0.0, report)
    res_b = e - env
    out.residuals["b"] = res_b
    out.worst["b"] = float(res_b.max()) if res_b.size else 0.0
    pass_b = bool(res_b.size == 0 or res_b.max() <= tol_t)

    t1 = absorbing_time(math.sqrt(e[0]) if e.size else 0.0, _LayersView(report))
    level = report.absorbing_level
    late = t >= t1 - 1e-12
    res_c_level = e[late] - level
    res_c_int = []
    for i in np.nonzero(late)[0]:
        if t[i] + 1.0 > t[-1] + 1e-12:
            break
        win = (t >= t[i] - 1e-12) & (t <= t[i] + 1.0 + 1e-12)
        res_c_int.append(np.trapezoid(g[win], t[win]) - level)
    res_c_int = np.asarray(res_c_int)
    out.residuals["c_level"] = res_c_level
    out.residuals["c_integral"] = res_c_int
    out.worst["c"] = float(max(
        res_c_level.max() if res_c_level.size else -math.inf,
        res_c_int.max() if res_c_int.size else -math.inf,
    )) if (res_c_level.size or res_c_int.size) else 0.0
    pass_c = bool(
        (res_c_level.size == 0 or res_c_level.max() <= tol_t)
        and (res_c_int.size == 0 or res_c_int.max() <= tol_t)
    )

    out.details.update({"t1": t1, "absorbing_level": level,
                        "pass_a": pass_a, "pass_b": pass_b, "pass_c": pass_c})
    out.passed = pass_a and pass_b and pass_c
    return out


class _LayersView:
    """Adapter so absorbing_time can reuse a report's H and min D."""

    def __init__(self, report):
        self.H = report.H
        self.min_D = report.min_d


def _fit_slope(t, y):
    if t.size < 2:
        return 0.0
    a = np.polyfit(t, y, 1)
    return float(a[0])


def _fractional_growth(t, y):
    """Fitted growth across a window relative to the quantity's own level.

    A healthy post-transient drift toward a steady value scores well below
    one percent; genuine growth scores O(1) regardless of absolute scale, so
    the measure cannot be defeated by magnitude."""
    if t.size < 2:
        return 0.0
    window = float(t[-1] - t[0])
    level = float(np.max(np.abs(y)))
    if window <= 0.0 or level <= 0.0:
        return 0.0
    return max(0.0, _fit_slope(t, y)) * window / level


def _accelerating(t, y, slack=0.1):
    """Whether the fitted growth rate of the second half exceeds the first
    half's by more than the slack: a finite window cannot distinguish a
    saturating approach from an indefinite drift, but sustained super-linear
    growth accelerates while stiff-mode equilibration decelerates."""
    if t.size < 4:
        return False
    mid = t.size // 2
    s1 = _fit_slope(t[:mid + 1], y[:mid + 1])
    s2 = _fit_slope(t[mid:], y[mid:])
    level = float(np.max(np.abs(y)))
    window = max(float(t[-1] - t[0]), 1e-300)
    floor = 1e-3 * level / window
    return s2 > max(s1, 0.0) * (1.0 + slack) + floor


def audit_h1(record, report, tol_t=None, tol_factor=10.0, growth_tol=0.05):
    """Qualitative H1 checks: bounded dissipation norm past T1 + 1 with no
    growth trend, and at-most-linear growth of the cumulative ||L psi||^2
    integral (equivalently a trend-free integrand); the minimal multipliers
    placing the data under the parametric M5/M7 are reported as fitted
    constants.

    growth_tol bounds the fitted fractional growth of each audited quantity
    across the post-transient window (finite windows legitimately drift
    toward their steady level from below)."""
    if not report.admissible:
        return AuditResult("h1", applicable=False, passed=False,
                           details={"reason": "delta inadmissible"})
    if tol_t is None:
        tol_t = default_tol(record, report, tol_factor)
    t = record.t
    g = record.grad_sq
    lp = record.lpsi_sq
    out = AuditResult("h1", applicable=True, passed=True,
                      details={"tol_t": tol_t, "growth_tol": growth_tol})

    t1 = absorbing_time(math.sqrt(record.psi_sq[0]) if record.psi_sq.size else 0.0,
                        _LayersView(report))
    late = t >= t1 + 1.0 - 1e-12
    slope_g = _fit_slope(t[late], g[late]) if np.count_nonzero(late) >= 2 else 0.0
    growth_g = _fractional_growth(t[late], g[late])
    # a decelerating climb is a saturating approach to the steady level (the
    # stiffest modes equilibrate slowly under the trapezoidal factors), not a
    # growth trend; sustained super-linear growth accelerates instead
    pass_bound = bool(np.all(np.isfinite(g[late]))) and (
        growth_g <= growth_tol or not _accelerating(t[late], g[late])
    )

    cum = np.concatenate([[0.0], np.cumsum(0.5 * (lp[1:] + lp[:-1]) * np.diff(t))]) \
        if t.size >= 2 else np.zeros(t.size)
    slope_cum = _fit_slope(t, cum)
    # at-most-linear growth of the integral == bounded integrand, audited
    # past the transient window where the claim lives
    growth_lp = _fractional_growth(t[late], lp[late])
    pass_linear = bool(np.all(np.isfinite(lp[late]))) and (
        growth_lp <= growth_tol or not _accelerating(t[late], lp[late])
    )

    fitted_c5 = float(np.max(g[late]) / report.m5) if np.count_nonzero(late) else 0.0
    m7_slope = report.m7 / report.horizon if report.horizon > 0 else math.inf
    fitted_c7 = slope_cum / m7_slope if m7_slope > 0 else 0.0

    out.worst = {"grad_growth": growth_g, "lpsi_growth": growth_lp}
    out.details.update({
        "t1": t1, "pass_bound": pass_bound, "pass_linear": pass_linear,
        "slope_gradD_sq": slope_g, "slope_cum_lpsi_sq": slope_cum,
        "fitted_c_vs_m5": fitted_c5, "fitted_c_vs_m7_rate": fitted_c7,
    })
    out.passed = pass_bound and pass_linear
    return out
