"""Tests for the stochastic macrospin integrator."""
import math

import numpy as np
from django.test import SimpleTestCase, tag
from hypothesis import given, settings as hyp_settings, strategies as st
from scipy import integrate

from MTJEngine.mtj_app import sllgs
from MTJEngine.mtj_app.device import PHYS, characteristic_time, critical_current, gamma_prime, reference_device
from MTJEngine.mtj_app.exceptions import StepRejected


def unit_vectors():
    return st.tuples(
        st.floats(min_value=0.01, max_value=math.pi - 0.01),
        st.floats(min_value=0.0, max_value=2.0 * math.pi),
    ).map(lambda a: np.array([math.sin(a[0]) * math.cos(a[1]), math.sin(a[0]) * math.sin(a[1]), math.cos(a[0])]))


class FieldAndTorqueTests(SimpleTestCase):
    def setUp(self):
        self.params = reference_device()
        self.i_c = critical_current(self.params)

    @hyp_settings(max_examples=100, deadline=None)
    @given(unit_vectors(), st.floats(min_value=-5.0, max_value=5.0))
    def test_rhs_is_tangent(self, m, i):
        dm = sllgs.llgs_rhs(m, self.params, current=i * self.i_c, h_ext=(1e3, -2e3, 5e3))
        scale = gamma_prime(self.params) * self.params.h_k_eff
        self.assertLess(abs(float(np.dot(dm, m))), 1e-9 * scale)

    def test_rest_states_are_fixed_points(self):
        for m in ((0.0, 0.0, 1.0), (0.0, 0.0, -1.0)):
            with self.subTest(m=m):
                dm = sllgs.llgs_rhs(np.array(m), self.params, current=3.0 * self.i_c)
                self.assertTrue(np.allclose(dm, 0.0, atol=1e-6))

    def test_positive_current_pushes_away_from_parallel(self):
        m = sllgs.MagnetizationState.from_angles(0.1).as_array()
        above = sllgs.llgs_rhs(m, self.params, current=2.0 * self.i_c)
        below = sllgs.llgs_rhs(m, self.params, current=0.5 * self.i_c)
        # d(m_z)/dt < 0 means theta grows
        self.assertLess(above[2], 0.0)
        self.assertGreater(below[2], 0.0)

    def test_thermal_sigma(self):
        dt = 1e-12
        expected = math.sqrt(
            2.0 * PHYS.k_b * 300.0 * 0.01
            / (PHYS.mu0 * gamma_prime(self.params) * self.params.m_s * self.params.volume * dt)
        )
        self.assertAlmostEqual(sllgs.thermal_sigma(self.params, dt) / expected, 1.0, places=12)
        self.assertAlmostEqual(
            sllgs.thermal_sigma(self.params, dt / 4.0) / sllgs.thermal_sigma(self.params, dt), 2.0, places=12)

    def test_effective_field_examples(self):
        hk = self.params.h_k_eff
        self.assertTrue(np.array_equal(sllgs.effective_field((0.0, 0.0, 1.0), self.params), [0.0, 0.0, hk]))
        for m in ((1.0, 0.0, 0.0), (0.6, 0.8, 0.0)):
            with self.subTest(m=m):
                self.assertTrue(np.array_equal(sllgs.effective_field(m, self.params), np.zeros(3)))
        cancelled = sllgs.effective_field((0.0, 0.0, 1.0), self.params, h_ext=(0.0, 0.0, -hk))
        self.assertTrue(np.array_equal(cancelled, np.zeros(3)))
        total = sllgs.effective_field((0.0, 0.0, -1.0), self.params, h_ext=(1.0, 2.0, 3.0), thermal=(4.0, 5.0, 6.0))
        self.assertTrue(np.array_equal(total, [5.0, 7.0, 9.0 - hk]))

    @hyp_settings(max_examples=50, deadline=None)
    @given(unit_vectors())
    def test_undamped_rhs_is_pure_precession(self, m):
        undamped = self.params.replace(alpha=0.0)
        dm = sllgs.llgs_rhs(m, undamped, h_ext=(2e3, 0.0, -1e3))
        h = sllgs.effective_field(m, undamped, h_ext=(2e3, 0.0, -1e3))
        expected = gamma_prime(undamped) * np.linalg.norm(np.cross(m, h))
        self.assertAlmostEqual(float(np.linalg.norm(dm)), expected, delta=1e-9 * gamma_prime(undamped) * 2e5)
        self.assertLess(abs(float(np.dot(dm, m))), 1e-9 * gamma_prime(undamped) * 2e5)

    def test_fictitious_field_is_azimuthal(self):
        self.assertTrue(np.all(sllgs.fictitious_field(np.array([0.0, 0.0, 1.0]), 5.0) == 0.0))
        m = sllgs.MagnetizationState.from_angles(0.4, 1.1).as_array()
        h = sllgs.fictitious_field(m, 7.0, push=-1.0)
        self.assertAlmostEqual(float(np.linalg.norm(h)), 7.0, places=12)
        self.assertAlmostEqual(float(np.dot(h, m)), 0.0, places=12)
        self.assertEqual(h[2], 0.0)

    def test_fictitious_amplitude_uses_reference_step(self):
        tau_d = characteristic_time(self.params)
        self.assertAlmostEqual(
            sllgs.fictitious_amplitude(self.params, 2.0),
            2.0 * sllgs.thermal_sigma(self.params, 1e-3 * tau_d),
            places=6,
        )


class StateAndWaveformTests(SimpleTestCase):
    def test_state_requires_unit_norm(self):
        with self.assertRaises(ValueError):
            sllgs.MagnetizationState((0.0, 0.0, 1.1))
        state = sllgs.MagnetizationState.from_angles(math.pi / 3.0, 0.2)
        self.assertAlmostEqual(state.m[2], 0.5, places=12)

    def test_discretize_hits_segment_ends(self):
        waveform = sllgs.DriveWaveform((
            sllgs.DriveSegment(50e-6, 1.05e-9),
            sllgs.DriveSegment(0.0, 0.3e-9, (0.0, 0.0, 100.0)),
        ))
        dts, currents, fields = waveform.discretize(1e-11)
        self.assertTrue(np.all(dts <= 1e-11 * (1 + 1e-12)))
        self.assertAlmostEqual(float(dts.sum()), 1.35e-9, delta=1e-21)
        self.assertEqual(len(dts), 105 + 30)
        self.assertEqual(currents[104], 50e-6)
        self.assertEqual(currents[105], 0.0)
        self.assertEqual(fields[-1, 2], 100.0)

    def test_waveform_validation(self):
        with self.assertRaises(ValueError):
            sllgs.DriveWaveform(())
        with self.assertRaises(ValueError):
            sllgs.DriveSegment(1e-6, 0.0)
        with self.assertRaises(ValueError):
            sllgs.DriveWaveform.constant(1e-6, 1e-9).discretize(0.0)

    def test_default_well_follows_current_sign(self):
        self.assertEqual(sllgs.default_well(sllgs.DriveWaveform.constant(1e-6, 1e-9)), 'parallel')
        self.assertEqual(sllgs.default_well(sllgs.DriveWaveform.constant(-1e-6, 1e-9)), 'antiparallel')


class TransientTests(SimpleTestCase):
    def setUp(self):
        self.params = reference_device()
        self.i_c = critical_current(self.params)
        self.tau_d = characteristic_time(self.params)

    def test_deterministic_relaxation_towards_easy_axis(self):
        waveform = sllgs.DriveWaveform.constant(0.0, 3.0 * self.tau_d)
        start = sllgs.MagnetizationState.from_angles(0.3).m
        result = sllgs.run_transient(self.params, waveform, mode='deterministic', m0=start, record_every=50)
        self.assertGreater(result.final_state.m[2], math.cos(0.3))
        self.assertFalse(result.switched)
        norms = np.linalg.norm(result.trajectory, axis=1)
        self.assertLess(float(np.max(np.abs(norms - 1.0))), 1e-12)

    def test_deterministic_switching_threshold(self):
        horizon = sllgs.DriveWaveform.constant(3.0 * self.i_c, 15.0 * self.tau_d)
        switched = sllgs.run_transient(self.params, horizon, mode='deterministic', stop_on_switch=True)
        self.assertTrue(switched.switched)
        self.assertLess(switched.switch_time, 15.0 * self.tau_d)

        weak = sllgs.DriveWaveform.constant(0.5 * self.i_c, 5.0 * self.tau_d)
        self.assertFalse(sllgs.run_transient(self.params, weak, mode='deterministic').switched)

    def test_fictitious_field_speeds_up_switching(self):
        waveform = sllgs.DriveWaveform.constant(1.5 * self.i_c, 20.0 * self.tau_d)
        plain = sllgs.run_transient(self.params, waveform, mode='fictitious', c_f=0.0, stop_on_switch=True)
        pushed = sllgs.run_transient(self.params, waveform, mode='fictitious', c_f=2.0, stop_on_switch=True)
        self.assertTrue(plain.switched)
        self.assertTrue(pushed.switched)
        self.assertLess(pushed.switch_time, plain.switch_time)

    def test_stochastic_transient_is_reproducible(self):
        waveform = sllgs.DriveWaveform.constant(2.0 * self.i_c, 0.5 * self.tau_d)
        first = sllgs.run_transient(self.params, waveform, seed=11, record_every=10)
        again = sllgs.run_transient(self.params, waveform, seed=11, record_every=10)
        other = sllgs.run_transient(self.params, waveform, seed=12, record_every=10)
        self.assertEqual(first.rows(), again.rows())
        self.assertNotEqual(first.rows(), other.rows())
        self.assertEqual(first.seed, 11)

    def anisotropy_energy(self, params, mz):
        return -0.5 * PHYS.mu0 * params.m_s * params.h_k_eff * params.volume * np.asarray(mz) ** 2

    def test_undamped_precession_conserves_mz_and_energy(self):
        undamped = self.params.replace(alpha=0.0)
        start = sllgs.MagnetizationState.from_angles(0.5, 0.2).m
        waveform = sllgs.DriveWaveform.constant(0.0, 0.2e-9)
        result = sllgs.run_transient(undamped, waveform, dt=1e-13, mode='deterministic', m0=start,
                                     record_every=100)
        mz = result.trajectory[:, 2]
        self.assertLess(float(np.max(np.abs(mz - start[2]))), 1e-7)
        energy = self.anisotropy_energy(undamped, mz)
        self.assertLess(float(np.max(np.abs(energy / energy[0] - 1.0))), 1e-7)
        azimuth = np.unwrap(np.arctan2(result.trajectory[:, 1], result.trajectory[:, 0]))
        self.assertGreater(abs(float(azimuth[-1] - azimuth[0])), math.pi)

    def test_zero_temperature_relaxation_lowers_anisotropy_energy(self):
        start = sllgs.MagnetizationState.from_angles(1.0, 0.3).m
        waveform = sllgs.DriveWaveform.constant(0.0, 3.0 * self.tau_d)
        result = sllgs.run_transient(self.params, waveform, mode='deterministic', m0=start, record_every=1)
        energy = self.anisotropy_energy(self.params, result.trajectory[:, 2])
        self.assertEqual(len(energy), 3001)
        self.assertTrue(np.all(np.diff(energy) < 0.0))

    def test_one_step_thermal_increment_variance(self):
        dt = 1e-13
        rng = sllgs.walk_generator(21, 0)
        up = sllgs.MagnetizationState((0.0, 0.0, 1.0))
        mx = np.array([sllgs.step_heun(up, self.params, 0.0, dt, rng=rng).m[0] for _ in range(10000)])
        alpha = self.params.alpha
        expected = (gamma_prime(self.params) * dt * (1.0 + alpha * alpha) * 2.0 * alpha
                    * PHYS.k_b * self.params.temperature
                    / (PHYS.mu0 * self.params.m_s * self.params.volume))
        self.assertAlmostEqual(float(np.var(mx)) / expected, 1.0, delta=0.05)
        self.assertLess(abs(float(np.mean(mx))), 5.0 * math.sqrt(expected / 10000))

    def test_zero_temperature_step_is_classic_heun(self):
        current, dt = 1.7 * self.i_c, 2e-12
        state = sllgs.MagnetizationState.from_angles(0.4, 1.3)
        f = lambda m: sllgs.llgs_rhs(m, self.params, current=current)
        m = state.as_array()
        heun = m + 0.5 * dt * (f(m) + f(m + dt * f(m)))
        heun = heun / np.linalg.norm(heun)
        stepped = sllgs.step_heun(state, self.params, current, dt)
        self.assertTrue(np.allclose(stepped.as_array(), heun, rtol=0.0, atol=1e-15))

    def test_exactly_on_axis_start_never_switches(self):
        waveform = sllgs.DriveWaveform.constant(3.0 * self.i_c, 10.0 * self.tau_d)
        for mode in ('deterministic', 'fictitious'):
            with self.subTest(mode=mode):
                result = sllgs.run_transient(self.params, waveform, mode=mode, c_f=2.0, m0=(0.0, 0.0, 1.0))
                self.assertFalse(result.switched)
                self.assertEqual(result.final_state.m, (0.0, 0.0, 1.0))

    def test_fictitious_mode_without_field_is_deterministic_mode(self):
        waveform = sllgs.DriveWaveform.constant(1.5 * self.i_c, 20.0 * self.tau_d)
        fictitious = sllgs.run_transient(self.params, waveform, mode='fictitious', c_f=0.0, record_every=25)
        deterministic = sllgs.run_transient(self.params, waveform, mode='deterministic', record_every=25)
        self.assertTrue(np.array_equal(fictitious.trajectory, deterministic.trajectory))
        self.assertTrue(np.array_equal(fictitious.times, deterministic.times))
        self.assertEqual(fictitious.switch_time, deterministic.switch_time)
        self.assertIsNotNone(fictitious.switch_time)

    def test_large_step_is_rejected(self):
        state = sllgs.MagnetizationState.from_angles(math.pi / 3.0)
        with self.assertRaises(StepRejected) as ctx:
            sllgs.step_heun(state, self.params, 0.0, 1e-9)
        self.assertGreater(ctx.exception.angle, sllgs.MAX_STEP_ANGLE)

    def test_step_heun_keeps_unit_norm(self):
        state = sllgs.MagnetizationState.from_angles(0.5, 0.3)
        rng = sllgs.walk_generator(3, 0)
        for _ in range(20):
            state = sllgs.step_heun(state, self.params, 1.2 * self.i_c, 1e-12, rng=rng)
        self.assertAlmostEqual(float(np.linalg.norm(state.as_array())), 1.0, places=12)
        self.assertAlmostEqual(state.t, 20e-12, delta=1e-24)


class EnsembleTests(SimpleTestCase):
    def setUp(self):
        self.params = reference_device()
        self.tau_d = characteristic_time(self.params)

    def test_boltzmann_sampler_matches_equipartition(self):
        delta = 63.0
        u = (np.arange(20000) + 0.5) / 20000
        theta = sllgs.boltzmann_polar_angle(delta, u)
        self.assertTrue(np.all((theta >= 0.0) & (theta <= math.pi / 2.0)))
        weight = lambda x: math.exp(delta * (x * x - 1.0))
        num, _ = integrate.quad(lambda x: (1.0 - x * x) * weight(x), 0.0, 1.0, epsabs=0.0, epsrel=1e-12)
        den, _ = integrate.quad(weight, 0.0, 1.0, epsabs=0.0, epsrel=1e-12)
        self.assertAlmostEqual(float(np.mean(np.sin(theta) ** 2)) / (num / den), 1.0, delta=0.01)

    def test_batching_and_workers_do_not_change_results(self):
        waveform = sllgs.DriveWaveform.constant(2.0 * critical_current(self.params), 0.2 * self.tau_d)
        base = sllgs.run_ensemble(self.params, waveform, n_walks=6, base_seed=5, n_samples=4)
        split = sllgs.run_ensemble(self.params, waveform, n_walks=6, base_seed=5, n_samples=4, batch_size=4)
        pooled = sllgs.run_ensemble(self.params, waveform, n_walks=6, base_seed=5, n_samples=4,
                                    batch_size=2, jobs=2)
        for other in (split, pooled):
            self.assertTrue(np.array_equal(base.final_mz, other.final_mz))
            self.assertTrue(np.array_equal(base.switched_fraction, other.switched_fraction))

    def test_ensemble_stays_in_equilibrium_without_current(self):
        waveform = sllgs.DriveWaveform.constant(0.0, 2.0 * self.tau_d)
        result = sllgs.run_ensemble(self.params, waveform, n_walks=2000, base_seed=1, n_samples=2)
        sin2 = 1.0 - result.final_mz ** 2
        self.assertAlmostEqual(float(np.mean(sin2)) * self.params.delta, 1.0, delta=0.1)
        self.assertEqual(int(result.switched_counts[-1]), 0)
        self.assertEqual(len(result.times), 2)

    def test_binomial_interval(self):
        low, high = sllgs.binomial_interval(5, 10, 0.99)
        self.assertLess(low, 0.5)
        self.assertGreater(high, 0.5)
        low, high = sllgs.binomial_interval(0, 100, 0.99)
        self.assertEqual(low, 0.0)
        self.assertLess(high, 0.06)

    def test_ensemble_rejects_bad_sample_times(self):
        waveform = sllgs.DriveWaveform.constant(0.0, 1e-10)
        with self.assertRaises(ValueError):
            sllgs.run_ensemble(self.params, waveform, n_walks=2, sample_times=[5e-11, 2e-11])
        with self.assertRaises(ValueError):
            sllgs.run_ensemble(self.params, waveform, n_walks=0)

    @tag('slow')
    def test_empirical_switching_brackets_fpe_prediction(self):
        from MTJEngine.mtj_app.stats import SolverSettings, mc_validate, time_to_wer
        current = 2.0 * critical_current(self.params)
        settings = SolverSettings(solver='spectral', n_coeffs=200)
        t = time_to_wer(self.params, current, 0.5, settings)
        check = mc_validate(self.params, current, t, n_walks=2000, seed=17, settings=settings)
        self.assertTrue(check.agrees, msg=f"{check}")
