"""Regridding, the eps-sweep harness, attractor sampling, semidistance."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from darcylayers.fields import CENTER, FACE, ScalarField
from darcylayers.geometry import LayerStack, build_family, build_grid
from darcylayers.thinlimit import (
    AttractorSample,
    RunSetup,
    coefficient_difference_norms,
    fit_rate,
    regrid_values,
    sample_attractor,
    semidistance,
    sweep,
    to_reference,
)
from darcylayers.transport import InitSpec, TimeConfig


def grids(src_dz=0.1, ref_dz=0.05, nx=8):
    s = LayerStack(1.0, (0.0, -1.0), (1.0,), (1.0,))
    return build_grid(s, nx, src_dz), build_grid(s, nx, ref_dz)


class TestToReference:
    def test_constant_exact(self):
        src, ref = grids()
        f = ScalarField(src, np.full((src.n_cells, src.nx), 2.5))
        out = to_reference(f, ref)
        np.testing.assert_allclose(out.values, 2.5, rtol=1e-14)

    def test_linear_exact(self):
        # linear-in-z data is reproduced exactly, including the extrapolated
        # half cells near the boundaries
        src, ref = grids()
        vals = np.tile((3.0 * src.z_centers + 0.7)[:, None], (1, src.nx))
        out = to_reference(ScalarField(src, vals), ref)
        expect = np.tile((3.0 * ref.z_centers + 0.7)[:, None], (1, ref.nx))
        np.testing.assert_allclose(out.values, expect, atol=1e-13)

    def test_sine_refinement_second_order(self):
        s = LayerStack(1.0, (0.0, -1.0), (1.0,), (1.0,))
        ref = build_grid(s, 8, 1.0 / 256)
        errs = []
        for dz in (0.05, 0.025):
            src = build_grid(s, 8, dz)
            vals = np.tile(np.sin(np.pi * src.z_centers)[:, None], (1, src.nx))
            out = to_reference(ScalarField(src, vals), ref)
            exact = np.tile(np.sin(np.pi * ref.z_centers)[:, None], (1, ref.nx))
            errs.append(np.abs(out.values - exact).max())
        assert errs[0] / errs[1] > 3.0

    def test_face_staggered_transfer(self):
        src, ref = grids()
        vals = np.tile((src.z_faces**2)[:, None], (1, src.nx))
        out = to_reference(ScalarField(src, vals, FACE), ref)
        assert out.stag == FACE
        assert out.values.shape == (ref.n_cells + 1, ref.nx)
        # boundary faces are shared between the grids
        np.testing.assert_allclose(out.values[0], vals[0], atol=1e-14)
        np.testing.assert_allclose(out.values[-1], vals[-1], atol=1e-14)

    def test_domain_mismatch_rejected(self):
        src, _ = grids()
        other = LayerStack(2.0, (0.0, -1.0), (1.0,), (1.0,))
        ref = build_grid(other, 8, 0.05)
        f = ScalarField(src, np.zeros((src.n_cells, src.nx)))
        with pytest.raises(ValueError):
            to_reference(f, ref)

    def test_x_upsample_band_limited_exact(self):
        s = LayerStack(1.0, (0.0, -1.0), (1.0,), (1.0,))
        src = build_grid(s, 8, 0.25)
        ref = build_grid(s, 16, 0.25)
        x = src.x
        vals = np.tile(np.cos(2 * np.pi * 3 * x + 0.3), (src.n_cells, 1))
        out = regrid_values(vals, src, ref, CENTER)
        expect = np.tile(np.cos(2 * np.pi * 3 * ref.x + 0.3), (ref.n_cells, 1))
        np.testing.assert_allclose(out, expect, atol=1e-12)


class TestCoefficientNorms:
    def test_exact_value(self):
        base = LayerStack(2.0, (0.0, -0.5, -1.0), (1.0, 1.0), (3.0, 1.0))
        fam = build_family(base, 2, 4.0, 1.0, (0.1, 0.05))
        kt, dt = coefficient_difference_norms(fam, 0.1)
        assert kt == pytest.approx(3.0 * np.sqrt(2.0 * 0.1), rel=1e-14)
        assert dt == pytest.approx(2.0 * np.sqrt(2.0 * 0.1), rel=1e-14)

    def test_general_lebesgue_exponent(self):
        base = LayerStack(1.0, (0.0, -0.5, -1.0), (1.0, 1.0), (1.0, 1.0))
        fam = build_family(base, 2, 3.0, 1.0, (0.2,))
        kt, _ = coefficient_difference_norms(fam, 0.2, r=4.0)
        assert kt == pytest.approx(2.0 * 0.2**0.25, rel=1e-14)

    def test_half_slope_in_l2(self):
        base = LayerStack(1.0, (0.0, -0.5, -1.0), (1.0, 1.0), (1.0, 1.0))
        eps = (0.08, 0.04, 0.02, 0.01)
        fam = build_family(base, 2, 2.0, 5.0, eps)
        kts = [coefficient_difference_norms(fam, e)[0] for e in eps]
        slope, _ = np.polyfit(np.log(eps), np.log(kts), 1)
        assert abs(slope - 0.5) <= 1e-6


class TestSemidistance:
    def make_sample(self, arrays, eps=0.0):
        s = LayerStack(1.0, (0.0, -1.0), (1.0,), (1.0,))
        g = build_grid(s, 4, 0.25)
        snaps = np.array([np.full((g.n_cells, g.nx), a, dtype=float)
                          if np.isscalar(a) else a for a in arrays])
        times = np.full(len(arrays), 5.0)
        return AttractorSample(eps, g, snaps, times, np.zeros(len(arrays)),
                               5.0, 0.0, 1.0, 1.0)

    def test_identical_sets(self):
        a = self.make_sample([1.0, 2.0])
        assert semidistance(a, a) == 0.0

    def test_singletons(self):
        a = self.make_sample([1.0])
        b = self.make_sample([3.0])
        # || 1 - 3 || over the unit box = 2
        assert semidistance(a, b) == pytest.approx(2.0, rel=1e-14)

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(23)
        s = LayerStack(1.0, (0.0, -1.0), (1.0,), (1.0,))
        g = build_grid(s, 4, 0.25)
        a_arr = rng.standard_normal((3, g.n_cells, g.nx))
        b_arr = rng.standard_normal((2, g.n_cells, g.nx))
        a = self.make_sample(list(a_arr))
        b = self.make_sample(list(b_arr))
        w = g.L / g.nx * g.dz[:, None]
        oracle = max(
            min(np.sqrt(np.sum((fa - fb) ** 2 * w)) for fb in b_arr)
            for fa in a_arr
        )
        assert semidistance(a, b) == oracle

    def test_asymmetry(self):
        a = self.make_sample([0.0, 4.0])
        b = self.make_sample([0.0])
        assert semidistance(b, a) == 0.0
        assert semidistance(a, b) == pytest.approx(4.0, rel=1e-14)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=4),
           st.lists(st.floats(-5, 5), min_size=1, max_size=4),
           st.lists(st.floats(-5, 5), min_size=1, max_size=4))
    def test_triangle_inequality(self, xs, ys, zs):
        a = self.make_sample(xs)
        b = self.make_sample(ys)
        c = self.make_sample(zs)
        assert semidistance(a, c) <= semidistance(a, b) + semidistance(b, c) + 1e-12

    def test_empty_rejected(self):
        s = LayerStack(1.0, (0.0, -1.0), (1.0,), (1.0,))
        g = build_grid(s, 4, 0.25)
        with pytest.raises(ValueError):
            AttractorSample(0.0, g, np.zeros((0, g.n_cells, g.nx)),
                            np.zeros(0), np.zeros(0), 5.0, 0.0, 1.0, 1.0)


def small_setup(t_end=0.25, dt=0.01, nx=8, target_dz=0.05, c0=1.0):
    tc = TimeConfig(t_end=t_end, dt_max=dt, safety=0.5, cadence=t_end / 2)
    init = InitSpec(kind="mode", amplitude=0.1, mode=1)
    return RunSetup(nx=nx, target_dz=target_dz, delta=0.1, c0=c0, c_mH=0.0,
                    time=tc, init=init)


class TestSweep:
    def test_null_family_floor(self):
        base = LayerStack(1.0, (0.0, -0.5, -1.0), (1.0, 1.0), (1.0, 1.0))
        fam = build_family(base, 2, 1.0, 1.0, (0.1, 0.05))
        res = sweep(fam, small_setup())
        assert res.null_family
        assert np.isnan(res.rate)
        for rec in res.records:
            assert rec.sup_e <= 10.0 * (rec.interp_floor + res.solver_floor)

    def test_contrasted_family_converges(self):
        base = LayerStack(1.0, (0.0, -0.5, -1.0), (1.0, 1.0), (1.0, 1.0))
        fam = build_family(base, 2, 2.0, 2.0, (0.2, 0.1, 0.05))
        res = sweep(fam, small_setup(target_dz=0.05), n_fit=3)
        sup = [r.sup_e for r in res.records]
        assert sup[0] > sup[1] > sup[2] > 0.0
        assert res.rate >= 0.25
        assert not res.null_family

    def test_initial_difference_vanishes(self):
        # psi(0) is shared, so the t = 0 psi difference is interpolation-level
        base = LayerStack(1.0, (0.0, -0.5, -1.0), (1.0, 1.0), (1.0, 1.0))
        fam = build_family(base, 2, 2.0, 2.0, (0.1,))
        res = sweep(fam, small_setup())
        rec = res.records[0]
        assert rec.psi_sq[0] <= 10 * (rec.interp_floor + res.solver_floor)
        # but the velocity difference at t = 0 is real (different K)
        assert rec.u_sq[0] > rec.psi_sq[0]

    def test_sup_e_is_prefix_monotone(self):
        base = LayerStack(1.0, (0.0, -0.5, -1.0), (1.0, 1.0), (1.0, 1.0))
        fam = build_family(base, 2, 2.0, 2.0, (0.1,))
        res = sweep(fam, small_setup())
        e = res.records[0].e
        prefix_sup = np.maximum.accumulate(e)
        assert np.all(np.diff(prefix_sup) >= 0.0)

    def test_fit_rate_on_synthetic_power_law(self):
        eps = [0.4, 0.2, 0.1, 0.05, 0.025]
        vals = [3.0 * e**0.75 for e in eps]
        rate, pref = fit_rate(eps, vals, n_fit=4)
        assert rate == pytest.approx(0.75, rel=1e-12)
        assert pref == pytest.approx(3.0, rel=1e-10)

    def test_worker_pool_matches_serial(self):
        base = LayerStack(1.0, (0.0, -0.5, -1.0), (1.0, 1.0), (1.0, 1.0))
        fam = build_family(base, 2, 2.0, 2.0, (0.1, 0.05))
        setup = small_setup(t_end=0.1)
        serial = sweep(fam, setup, workers=1)
        pooled = sweep(fam, setup, workers=2)
        for a, b in zip(serial.records, pooled.records):
            assert a.eps == b.eps
            np.testing.assert_array_equal(a.psi_sq, b.psi_sq)
            np.testing.assert_array_equal(a.u_sq, b.u_sq)
        assert serial.rate == pooled.rate


class TestAttractor:
    def test_deterministic_and_invariant(self):
        stack = LayerStack(1.0, (0.0, -1.0), (1.0,), (1.0,))
        setup = small_setup(t_end=1.0, dt=0.02, target_dz=0.1)
        kw = dict(n_init=2, radius=0.5, spin_pad=0.5, window=1.0, cadence=0.5,
                  seed=3, min_snapshots=2)
        a = sample_attractor(stack, setup, stack, **kw)
        b = sample_attractor(stack, setup, stack, **kw)
        np.testing.assert_array_equal(a.snapshots, b.snapshots)
        assert np.all(a.times >= a.t1 + 1.0 - 1e-9)
        assert a.snapshots.shape[0] == 2 * 3  # n_init * snapshots per run

    def test_zero_contrast_collapses_to_origin(self):
        # with c_delta = 0 every trajectory decays; the pooled sample sits
        # within 1e-6 of zero after a long enough spin-up
        stack = LayerStack(1.0, (0.0, -1.0), (1.0,), (1.0,))
        setup = small_setup(t_end=1.0, dt=0.02, target_dz=0.1, c0=0.0)
        s = sample_attractor(stack, setup, stack, n_init=2, radius=0.5,
                             spin_pad=1.5, window=1.0, cadence=0.5, seed=1,
                             min_snapshots=2)
        g = s.grid
        w = g.L / g.nx * g.dz[:, None]
        norms = [np.sqrt(np.sum(f**2 * w)) for f in s.snapshots]
        assert max(norms) <= 1e-6

    def test_min_snapshot_validation(self):
        stack = LayerStack(1.0, (0.0, -1.0), (1.0,), (1.0,))
        setup = small_setup()
        with pytest.raises(ValueError):
            sample_attractor(stack, setup, stack, n_init=1, radius=0.5,
                             spin_pad=0.0, window=1.0, cadence=0.6, seed=0,
                             min_snapshots=3)
