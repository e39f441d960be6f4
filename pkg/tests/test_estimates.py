"""Energy-estimate constants and the trajectory audits."""

import math

import numpy as np
import pytest

from darcylayers.estimates import (
    EmbedConstants,
    absorbing_time,
    audit_h1,
    audit_l2,
    constants,
    l2_envelope,
)
from darcylayers.geometry import LayerStack, build_grid, build_profile
from darcylayers.transport import InitSpec, TimeConfig, TrajectoryRecord, \
    build_initial, simulate


def report_for(K=(1.0,), D=(1.0,), delta=0.1, c0=1.0, c_mH=0.0, L=1.0,
               interfaces=(0.0, -1.0), **kw):
    s = LayerStack(L, interfaces, K, D)
    g = build_grid(s, 4, 0.02)
    p = build_profile(s, g, delta, c0, c_mH)
    return constants(s, p, **kw)


class TestConstants:
    def test_m1_unit_case(self):
        # c_delta=1, L=1, delta=0.1, D=1: M1 = 80
        rep = report_for()
        assert rep.m1 == pytest.approx(80.0, rel=1e-14)

    def test_m3_unit_case(self):
        rep = report_for()
        assert rep.m3 == pytest.approx(8.0, rel=1e-14)

    def test_m2_formula(self):
        rep = report_for(delta=0.1)
        assert rep.m2 == pytest.approx(8.0 / 0.1**3, rel=1e-14)

    def test_zero_contrast(self):
        rep = report_for(c0=1.0, c_mH=1.0)
        assert rep.m1 == 0.0 and rep.m2 == 0.0 and rep.m3 == 0.0

    def test_positive_when_contrasted(self):
        rep = report_for(c0=2.0, c_mH=0.0)
        assert rep.m1 > 0 and rep.m2 > 0 and rep.m3 > 0

    def test_monotonicity(self):
        m1 = [report_for(delta=d).m1 for d in (0.05, 0.1, 0.2)]
        assert m1[0] > m1[1] > m1[2]
        m1c = [report_for(c0=c).m1 for c in (0.5, 1.0, 2.0)]
        assert m1c[0] < m1c[1] < m1c[2]
        m1L = [report_for(L=L).m1 for L in (0.5, 1.0, 2.0)]
        assert m1L[0] < m1L[1] < m1L[2]

    def test_parametric_flagging(self):
        rep = report_for()
        assert set(rep.parametric) == {"m4", "m5", "m6", "m7", "m8"}
        assert rep.m4 > 0 and rep.m5 > 0

    def test_embed_constants_enter_m4(self):
        a = report_for(embed=EmbedConstants())
        b = report_for(embed=EmbedConstants(c1=2.0))
        assert b.m4 == pytest.approx(16.0 * a.m4, rel=1e-12)

    def test_overflow_saturates_to_inf(self):
        rep = report_for(delta=0.001, c0=5.0)
        assert math.isinf(rep.m5)
        assert math.isinf(rep.m8)


class TestAbsorbingTime:
    def test_log_e(self):
        s = LayerStack(1.0, (0.0, -1.0), (1.0,), (1.0,))
        assert absorbing_time(math.e, s) == pytest.approx(2.0, rel=1e-14)

    def test_clamped_at_small_norms(self):
        s = LayerStack(1.0, (0.0, -1.0), (1.0,), (1.0,))
        assert absorbing_time(1.0, s) == 0.0
        assert absorbing_time(0.2, s) == 0.0

    def test_scaled_case(self):
        # H=2, min D=0.5, ||psi0|| = e^2: T1 = (2*4/0.5)*2 = 32
        s = LayerStack(1.0, (0.0, -2.0), (1.0,), (0.5,))
        assert absorbing_time(math.e**2, s) == pytest.approx(32.0, rel=1e-14)


def run_trajectory(c0=1.0, c_mH=0.0, delta=0.03, K=(1.0, 2.0), D=(1.0, 1.0),
                   interfaces=(0.0, -0.5, -1.0), amplitude=0.05, t_end=0.5,
                   dt=2e-3, cadence=0.02, freeze=False, nx=16, dz=1 / 128):
    s = LayerStack(1.0, interfaces, K, D)
    g = build_grid(s, nx, dz)
    p = build_profile(s, g, delta, c0, c_mH)
    psi0 = build_initial(InitSpec(kind="mode", amplitude=amplitude, mode=1), g)
    tc = TimeConfig(t_end=t_end, dt_max=dt, safety=0.5, cadence=cadence,
                    freeze_velocity=freeze)
    rec, _ = simulate(psi0, s, g, p, tc)
    rep = constants(s, p, psi0_l2=math.sqrt(rec.psi_sq[0]),
                    psi0_grad=math.sqrt(rec.grad_sq[0]), horizon=t_end)
    return rec, rep


class TestAuditL2:
    def test_null_trajectory_passes(self):
        rec, rep = run_trajectory(c0=1.0, c_mH=1.0, amplitude=0.0, t_end=0.1,
                                  cadence=0.01)
        res = audit_l2(rec, rep)
        assert res.applicable and res.passed
        assert res.worst["a"] <= 0.0
        assert res.worst["b"] <= 0.0

    def test_pure_diffusion_run(self):
        rec, rep = run_trajectory(c0=1.0, c_mH=1.0, amplitude=1.0, t_end=0.3,
                                  freeze=True)
        res = audit_l2(rec, rep)
        assert res.applicable and res.passed
        # zero contrast: the envelope reduces to pure exponential decay and
        # the solution sits strictly below it after t = 0
        env = l2_envelope(rec.t, rec.psi_sq[0], rep)
        assert np.all(rec.psi_sq[1:] < env[1:])

    def test_nonlinear_admissible_run(self):
        rec, rep = run_trajectory()
        assert rep.admissible
        res = audit_l2(rec, rep)
        assert res.applicable and res.passed

    def test_corrupted_record_fails_envelope(self):
        rec, rep = run_trajectory(t_end=0.2)
        bad = TrajectoryRecord(
            rec.t, rec.psi_sq.copy(), rec.grad_sq, rec.lpsi_sq,
            rec.div_max, rec.dt, dict(rec.meta),
        )
        bad.psi_sq[len(bad.psi_sq) // 2 :] += 10.0 * rep.absorbing_level
        res = audit_l2(bad, rep)
        assert not res.passed

    def test_inadmissible_marked_not_applicable(self):
        rec, rep = run_trajectory(K=(1.0, 9.0), delta=0.2, t_end=0.05)
        assert not rep.admissible
        res = audit_l2(rec, rep)
        assert not res.applicable

    def test_absorbing_window_integral(self):
        # long enough run that windows [t, t+1] exist past T1 = 0
        rec, rep = run_trajectory(t_end=1.5, cadence=0.05)
        res = audit_l2(rec, rep)
        assert res.residuals["c_integral"].size > 0
        assert res.passed


class TestAuditH1:
    def test_null_trajectory(self):
        rec, rep = run_trajectory(c0=1.0, c_mH=1.0, amplitude=0.0, t_end=0.1,
                                  cadence=0.01)
        res = audit_h1(rec, rep)
        assert res.applicable and res.passed

    def test_pure_diffusion_integrable(self):
        rec, rep = run_trajectory(c0=1.0, c_mH=1.0, amplitude=1.0, t_end=1.5,
                                  freeze=True, cadence=0.05)
        res = audit_h1(rec, rep)
        assert res.passed
        assert res.details["slope_gradD_sq"] <= 0.0

    def test_nonlinear_admissible_bounded(self):
        rec, rep = run_trajectory(t_end=1.5, cadence=0.05)
        res = audit_h1(rec, rep)
        assert res.applicable and res.passed
        assert np.isfinite(res.details["fitted_c_vs_m5"])

    def test_growing_integrand_fails(self):
        rec, rep = run_trajectory(t_end=1.5, cadence=0.05)
        bad = TrajectoryRecord(
            rec.t, rec.psi_sq, rec.grad_sq.copy(), rec.lpsi_sq.copy(),
            rec.div_max, rec.dt, dict(rec.meta),
        )
        growth = np.linspace(0.0, 50.0, bad.t.size) ** 2
        bad.grad_sq = bad.grad_sq + growth
        bad.lpsi_sq = bad.lpsi_sq + growth
        res = audit_h1(bad, rep)
        assert not res.passed


def test_envelope_shape():
    rep = report_for()
    t = np.array([0.0, 1.0, 10.0, 100.0])
    env = l2_envelope(t, 4.0, rep)
    assert env[0] == pytest.approx(4.0)
    # saturates at M1 H^2 / min D
    assert env[-1] == pytest.approx(rep.m1, rel=1e-3)
