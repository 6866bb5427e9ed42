"""Tests for the finite-volume Fokker-Planck solver."""
import math

import numpy as np
from django.test import SimpleTestCase, tag
from hypothesis import given, settings as hyp_settings, strategies as st

from MTJEngine.mtj_app import fpe_fvm
from MTJEngine.mtj_app.device import NormalizedDrive
from MTJEngine.mtj_app.exceptions import BadGrading, NegativeMass, NotNormalized, PoleEvaluation


def drive(i=0.0, h=0.0, delta=63.0):
    return NormalizedDrive(i=i, h=h, delta=delta, i_c=22.8e-6, tau_d=2.5e-9)


class MeshTests(SimpleTestCase):
    def test_uniform_theta(self):
        mesh = fpe_fvm.build_mesh(4)
        self.assertTrue(np.allclose(mesh.faces, [0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4, math.pi]))
        self.assertEqual(mesh.size, 4)
        self.assertAlmostEqual(mesh.h_min, math.pi / 4)

    def test_gradings_cover_the_sphere(self):
        for grading in fpe_fvm.GRADINGS:
            with self.subTest(grading=grading):
                mesh = fpe_fvm.build_mesh(64, grading)
                self.assertEqual(mesh.faces[0], 0.0)
                self.assertEqual(mesh.faces[-1], math.pi)
                self.assertTrue(np.all(mesh.widths > 0))

    def test_tanh_refined_clusters_at_poles(self):
        mesh = fpe_fvm.build_mesh(512, 'tanh_refined')
        self.assertLess(mesh.widths[0], mesh.widths[256])
        width = 3.0 / math.sqrt(2.0 * 63.0)
        self.assertGreaterEqual(int(np.sum(mesh.centers < width)), 30)
        self.assertGreaterEqual(int(np.sum(mesh.centers > math.pi - width)), 30)
        uniform = fpe_fvm.build_mesh(512)
        self.assertGreater(int(np.sum(mesh.centers < width)), int(np.sum(uniform.centers < width)))

    def test_bad_grading(self):
        with self.assertRaises(BadGrading):
            fpe_fvm.build_mesh(1)
        with self.assertRaises(BadGrading):
            fpe_fvm.build_mesh(4, 'tanh_refined')
        with self.assertRaises(BadGrading):
            fpe_fvm.build_mesh(16, 'log_theta')
        with self.assertRaises(BadGrading):
            fpe_fvm.ThetaMesh(np.array([0.0, 2.0, 1.0, math.pi]))


class FluxTests(SimpleTestCase):
    def test_bernoulli_values(self):
        self.assertEqual(fpe_fvm.bernoulli(0.0), 1.0)
        self.assertAlmostEqual(fpe_fvm.bernoulli(1.0), 1.0 / (math.e - 1.0), places=14)
        self.assertEqual(fpe_fvm.bernoulli(800.0), 0.0)

    @given(st.floats(min_value=-50.0, max_value=50.0))
    def test_bernoulli_reflection(self, z):
        # B(-z) = B(z) + z
        self.assertAlmostEqual(fpe_fvm.bernoulli(-z), fpe_fvm.bernoulli(z) + z, delta=1e-12 * max(1.0, abs(z)))

    def test_bernoulli_is_continuous_at_series_switch(self):
        limit = fpe_fvm.BERNOULLI_SERIES_LIMIT
        inside = fpe_fvm.bernoulli(limit * (1 - 1e-9))
        outside = fpe_fvm.bernoulli(limit * (1 + 1e-9))
        self.assertAlmostEqual(inside, outside, places=12)

    def test_drift_rejects_poles(self):
        with self.assertRaises(PoleEvaluation):
            fpe_fvm.drift_diffusion(0.0, 1.0, 0.0, 63.0)
        u, d = fpe_fvm.drift_diffusion(math.pi / 2, 1.5, 0.5, 50.0)
        self.assertAlmostEqual(u, 1.0, places=12)
        self.assertEqual(d, 0.01)

    def test_zero_density_gives_zero_flux(self):
        self.assertEqual(fpe_fvm.sg_flux(0.0, 0.0, 3.0, 0.01, 0.1), 0.0)


class OperatorTests(SimpleTestCase):
    @hyp_settings(max_examples=30, deadline=None)
    @given(
        st.floats(min_value=-4.0, max_value=4.0),
        st.floats(min_value=-0.5, max_value=0.5),
        st.floats(min_value=5.0, max_value=120.0),
        st.sampled_from(fpe_fvm.GRADINGS),
    )
    def test_columns_sum_to_zero(self, i, h, delta, grading):
        op = fpe_fvm.assemble(fpe_fvm.build_mesh(128, grading), drive(i, h, delta))
        scale = float(np.max(np.abs(op.diag)))
        self.assertLess(float(np.max(np.abs(op.column_sums()))), 1e-13 * scale)
        self.assertTrue(np.all(op.lower > 0) and np.all(op.upper > 0))

    def test_dense_matches_matvec(self):
        op = fpe_fvm.assemble(fpe_fvm.build_mesh(16), drive(1.2))
        p = np.linspace(1.0, 2.0, 16)
        self.assertTrue(np.allclose(op.to_dense() @ p, op.matvec(p), rtol=1e-14, atol=0.0))

    def test_default_dtau_respects_caps(self):
        op = fpe_fvm.assemble(fpe_fvm.build_mesh(512), drive(2.0))
        dtau = fpe_fvm.default_dtau(op)
        self.assertLessEqual(dtau, fpe_fvm.DTAU_CAP)
        self.assertLessEqual(dtau, op.positivity_bound)


class DistributionTests(SimpleTestCase):
    def setUp(self):
        self.mesh = fpe_fvm.build_mesh(512)

    def test_normalization_and_sign_checks(self):
        with self.assertRaises(NotNormalized):
            fpe_fvm.GridDistribution(self.mesh, np.full(512, 2.0 / 512))
        p = np.full(512, 1.0 / 510)
        p[0], p[1] = -1e-6, 1e-6
        with self.assertRaises(NegativeMass):
            fpe_fvm.GridDistribution(self.mesh, p)
        with self.assertRaises(ValueError):
            fpe_fvm.GridDistribution(self.mesh, np.ones(10) / 10)

    def test_boltzmann_masses_fill_the_requested_well(self):
        upper = fpe_fvm.boltzmann_masses(self.mesh, 63.0, 'parallel')
        self.assertAlmostEqual(math.fsum(upper), 1.0, places=14)
        self.assertEqual(fpe_fvm.hemisphere_mass(self.mesh, upper, upper=True), 0.0)
        both = fpe_fvm.boltzmann_masses(self.mesh, 63.0)
        self.assertAlmostEqual(fpe_fvm.hemisphere_mass(self.mesh, both, upper=True), 0.5, places=12)

    def test_equilibrium_matches_boltzmann(self):
        eq = fpe_fvm.equilibrium_distribution(self.mesh, drive())
        exact = fpe_fvm.boltzmann_masses(self.mesh, 63.0)
        self.assertLess(float(np.abs(eq.p - exact).sum()), 1e-3)

    def test_equilibrium_is_stationary(self):
        op = fpe_fvm.assemble(self.mesh, drive())
        eq = fpe_fvm.equilibrium_distribution(self.mesh, drive())
        stepped = fpe_fvm.step_cn(eq, op, 0.05)
        self.assertLess(float(np.abs(stepped.p - eq.p).max()), 1e-12)
        self.assertAlmostEqual(stepped.tau, 0.05)

    def test_step_argument_checks(self):
        op = fpe_fvm.assemble(self.mesh, drive())
        eq = fpe_fvm.equilibrium_distribution(self.mesh, drive())
        with self.assertRaises(ValueError):
            fpe_fvm.step_cn(eq, op, 0.0)
        with self.assertRaises(ValueError):
            fpe_fvm.step_cn(eq, op, 0.01, theta=0.4)
        other = fpe_fvm.assemble(fpe_fvm.build_mesh(64), drive())
        with self.assertRaises(ValueError):
            fpe_fvm.step_cn(eq, other, 0.01)


class EvolutionTests(SimpleTestCase):
    def setUp(self):
        self.mesh = fpe_fvm.build_mesh(512)
        self.start = fpe_fvm.GridDistribution(self.mesh, fpe_fvm.boltzmann_masses(self.mesh, 63.0, 'parallel'))

    def test_mass_is_conserved(self):
        result = fpe_fvm.evolve(self.start, [(drive(2.0), 10.0)], dtau=1e-3, n_samples=10)
        self.assertEqual(result.steps, 10000)
        self.assertLess(abs(math.fsum(result.final.p) - 1.0), 1e-10)
        self.assertTrue(np.all(result.final.p >= 0.0))

    def test_no_switching_without_current(self):
        result = fpe_fvm.evolve(self.start, [(drive(0.0), 5.0)], n_samples=5)
        self.assertLess(float(result.switched.max()), 1e-10)

    def test_supercritical_current_switches(self):
        result = fpe_fvm.evolve(self.start, [(drive(3.0), 5.0)], n_samples=20)
        self.assertGreater(result.switched[-1], 0.9)
        self.assertTrue(np.all(np.diff(result.switched) >= -1e-12))

    def test_samples_and_snapshots_land_on_requested_times(self):
        taus = [0.0, 0.25, 0.6, 1.0]
        result = fpe_fvm.evolve(self.start, [(drive(1.5), 0.5), (drive(0.0), 0.5)],
                                sample_taus=taus, keep_snapshots=True)
        self.assertTrue(np.allclose(result.taus, taus))
        self.assertEqual(len(result.snapshots), 4)
        self.assertAlmostEqual(result.snapshots[2].tau, 0.6)
        self.assertAlmostEqual(result.final.tau, 1.0)
        self.assertEqual(result.switched[0], 0.0)

    def test_backward_euler_weight_also_conserves_mass(self):
        result = fpe_fvm.evolve(self.start, [(drive(2.0), 2.0)], theta=1.0, n_samples=4)
        self.assertLess(abs(math.fsum(result.final.p) - 1.0), 1e-10)

    def test_schedule_checks(self):
        with self.assertRaises(ValueError):
            fpe_fvm.evolve(self.start, [(drive(1.0), 0.0)])
        with self.assertRaises(ValueError):
            fpe_fvm.evolve(self.start, [(drive(1.0), 1.0)], sample_taus=[0.5, 0.2])

    @tag('slow')
    def test_mesh_refinement_is_at_least_first_order(self):
        def masses(cells):
            mesh = fpe_fvm.build_mesh(cells)
            start = fpe_fvm.GridDistribution(mesh, fpe_fvm.boltzmann_masses(mesh, 63.0, 'parallel'))
            return fpe_fvm.evolve(start, [(drive(2.0), 1.0)], n_samples=1).final.p

        reference = masses(1024)
        errors = []
        for cells in (128, 256):
            coarse = reference.reshape(cells, 1024 // cells).sum(axis=1)
            errors.append(float(np.abs(masses(cells) - coarse).sum()))
        self.assertGreaterEqual(math.log2(errors[0] / errors[1]), 1.0)
