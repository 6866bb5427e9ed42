"""Tests for parameter regression, c_f calibration and the model-card deck."""
import math

import numpy as np
from django.test import SimpleTestCase, tag
from hypothesis import given, strategies as st

from MTJEngine.mtj_app import __version__
from MTJEngine.mtj_app.device import characteristic_time, critical_current, reference_device
from MTJEngine.mtj_app.exceptions import BudgetExhausted, CalibrationNoCross, IncompleteCalibration
from MTJEngine.mtj_app.fit import (
    FitParameter,
    FitSpace,
    ModelCard,
    calibrate_cf,
    dataset_hash,
    deck_cf,
    emit_model_card,
    fictitious_switch_time,
    fit_parameters,
    high_current_weights,
    load_model_card,
    loss,
    resolve_weights,
    residuals,
    synthesize_dataset,
)
from MTJEngine.mtj_app.stats import ErrorRatePoint, SolverSettings, time_to_wer

FAST = SolverSettings(solver='spectral', n_coeffs=60)


class FitSpaceTests(SimpleTestCase):
    @given(st.floats(min_value=0.0, max_value=1.0))
    def test_unit_mapping_round_trips(self, u):
        for scale in ('linear', 'log'):
            param = FitParameter('alpha', 1e-3, 1e-1, scale)
            self.assertAlmostEqual(param.to_unit(param.from_unit(u)), u, delta=1e-12)

    def test_unit_mapping_is_clipped(self):
        param = FitParameter('m_s', 1e6, 2e6)
        self.assertEqual(param.from_unit(-0.5), 1e6)
        self.assertEqual(param.from_unit(1.5), 2e6)
        self.assertAlmostEqual(FitParameter('m_s', 1e5, 1e7, 'log').from_unit(0.5), 1e6, delta=1e-6)

    def test_parameter_validation(self):
        with self.assertRaises(ValueError):
            FitParameter('delta', 10.0, 100.0)
        with self.assertRaises(ValueError):
            FitParameter('alpha', 0.1, 0.01)
        with self.assertRaises(ValueError):
            FitParameter('eps_prime', -1.0, 1.0, 'log')

    def test_space_around_base(self):
        base = reference_device(delta=None)
        space = FitSpace.around(base, free=['alpha', 'polarization_p', 'eps_prime'],
                                bounds={'alpha': (0.005, 0.05)})
        alpha, pol, eps = space.parameters
        self.assertEqual((alpha.lower, alpha.upper, alpha.scale), (0.005, 0.05, 'log'))
        self.assertEqual(pol.upper, 1.0)
        self.assertLess(eps.lower, 0.0)
        self.assertGreater(eps.upper, 0.0)
        self.assertTrue(np.all((space.initial_unit() >= 0.0) & (space.initial_unit() <= 1.0)))
        with self.assertRaises(ValueError):
            FitSpace(base, (alpha, alpha))

    def test_params_at_rederives_delta(self):
        base = reference_device()
        space = FitSpace.around(base, free=['m_s'])
        moved = space.params_at([1.0])
        self.assertAlmostEqual(moved.m_s, 2.0 * base.m_s)
        self.assertFalse(moved.delta_supplied)
        self.assertAlmostEqual(moved.delta, moved.computed_delta())


class LossTests(SimpleTestCase):
    def setUp(self):
        self.truth = reference_device(delta=None)
        i_c = critical_current(self.truth)
        self.dataset = synthesize_dataset(self.truth, [1.5 * i_c, 3.0 * i_c], [1e-3], FAST)

    def test_synthetic_points_are_measured(self):
        self.assertEqual(len(self.dataset), 2)
        self.assertTrue(all(p.source == 'measured' for p in self.dataset))
        self.assertGreater(self.dataset[0].pulse_width, self.dataset[1].pulse_width)

    def test_loss_vanishes_at_the_generating_device(self):
        self.assertEqual(loss(self.truth, self.dataset, settings=FAST), 0.0)
        self.assertGreater(loss(self.truth.replace(alpha=0.02), self.dataset, settings=FAST), 0.01)

    def test_unreachable_point_gets_a_finite_penalty(self):
        far = ErrorRatePoint(0.2 * critical_current(self.truth), 1e-9, 300.0, 1e-6, 'WER', 'measured')
        res, times = residuals(self.truth, [far], FAST)
        self.assertTrue(math.isfinite(res[0]))
        self.assertGreater(res[0], 0.0)
        self.assertTrue(math.isnan(times[0]))

    def test_weights(self):
        w = high_current_weights(self.dataset)
        self.assertAlmostEqual(float(w.mean()), 1.0)
        self.assertGreater(w[1], w[0])
        self.assertTrue(np.array_equal(resolve_weights(self.dataset, None), [1.0, 1.0]))
        with self.assertRaises(ValueError):
            resolve_weights(self.dataset, [1.0])
        with self.assertRaises(ValueError):
            resolve_weights(self.dataset, 'low_current')

    def test_dataset_hash(self):
        digest = dataset_hash(self.dataset)
        self.assertEqual(len(digest), 64)
        self.assertEqual(digest, dataset_hash(list(self.dataset)))
        self.assertNotEqual(digest, dataset_hash(self.dataset[:1]))


class FitParametersTests(SimpleTestCase):
    def setUp(self):
        self.truth = reference_device(delta=None)
        i_c = critical_current(self.truth)
        self.dataset = synthesize_dataset(self.truth, [1.5 * i_c, 2.0 * i_c, 3.0 * i_c], [1e-3], FAST)
        self.start = self.truth.replace(alpha=0.013)

    def test_frozen_space_only_evaluates(self):
        result = fit_parameters(self.dataset, FitSpace(self.truth, ()), settings=FAST)
        self.assertEqual(result.status, 'frozen')
        self.assertEqual(result.loss, 0.0)
        self.assertEqual(result.best, self.truth)

    def test_recovers_damping(self):
        space = FitSpace.around(self.start, free=['alpha'])
        result = fit_parameters(self.dataset, space, hops=1, seed=3, settings=FAST)
        self.assertTrue(result.improved)
        self.assertLess(result.loss, result.initial_loss)
        self.assertAlmostEqual(result.best.alpha / self.truth.alpha, 1.0, delta=0.05)
        self.assertGreaterEqual(len(result.trace), 2)
        self.assertEqual(result.trace[0].loss, result.initial_loss)
        self.assertEqual(result.residuals.shape, (3,))

    def test_budget(self):
        space = FitSpace.around(self.start, free=['alpha', 'm_s'])
        result = fit_parameters(self.dataset, space, hops=5, settings=FAST, max_evaluations=1)
        self.assertEqual(result.status, 'budget_exhausted')
        self.assertEqual(result.evaluations, 1)
        self.assertFalse(result.improved)
        with self.assertRaises(BudgetExhausted) as ctx:
            fit_parameters(self.dataset, space, hops=5, settings=FAST, max_evaluations=1, strict=True)
        self.assertEqual(ctx.exception.result.evaluations, 1)

    def test_same_seed_same_trace(self):
        space = FitSpace.around(self.start, free=['alpha', 'm_s'])
        first = fit_parameters(self.dataset, space, hops=3, seed=9, settings=FAST, max_evaluations=12)
        again = fit_parameters(self.dataset, space, hops=3, seed=9, settings=FAST, max_evaluations=12)
        self.assertEqual([e.loss for e in first.trace], [e.loss for e in again.trace])
        self.assertEqual(first.best, again.best)

    def test_argument_checks(self):
        space = FitSpace.around(self.start, free=['alpha'])
        with self.assertRaises(ValueError):
            fit_parameters(self.dataset, space, hops=0)
        with self.assertRaises(ValueError):
            fit_parameters(self.dataset, space, max_evaluations=0)
        with self.assertRaises(ValueError):
            fit_parameters((), space)

    @tag('slow')
    def test_twelve_point_round_trip(self):
        i_c = critical_current(self.truth)
        currents = [1.5 * i_c, 2.0 * i_c, 3.0 * i_c, 4.0 * i_c]
        dataset = synthesize_dataset(self.truth, currents, [0.5, 1e-2, 1e-4], FAST)
        self.assertEqual(len(dataset), 12)
        start = self.truth.replace(
            alpha=1.3 * self.truth.alpha,
            h_k_eff=0.7 * self.truth.h_k_eff,
            polarization_p=1.3 * self.truth.polarization_p,
        )
        space = FitSpace.around(start, free=['alpha', 'h_k_eff', 'polarization_p'])
        result = fit_parameters(dataset, space, hops=50, seed=0, settings=FAST)
        self.assertLess(np.max(np.abs(10.0 ** result.residuals - 1.0)), 0.05)


class ModelCardTests(SimpleTestCase):
    def setUp(self):
        self.params = reference_device(delta=None)
        self.card = emit_model_card(self.params, {0.5: 0.12, 1e-6: 1.75, 1e-8: 2.5},
                                    {'solver': 'spectral'}, [0.5, 1e-6, 1e-8])

    def test_deck_layout(self):
        deck = self.card.to_deck()
        lines = deck.splitlines()
        self.assertEqual(lines[0], f'# tool_version = {__version__}')
        keys = [line.split(' = ')[0] for line in lines if not line.startswith('#')]
        self.assertEqual(keys, [
            'msat_a_per_m', 'volume_m3', 'alpha', 'hk_eff_a_per_m', 'delta', 'temp_k', 'pol_p', 'eps_prime',
            'mp_x', 'mp_y', 'mp_z',
            'cf_wer_0.5', 'cf_wer_1e-06', 'cf_wer_1e-08',
        ])
        self.assertTrue(deck.endswith('\n'))

    def test_deck_round_trips_exactly(self):
        deck = self.card.to_deck()
        loaded = load_model_card(deck)
        self.assertEqual(loaded.to_deck(), deck)
        self.assertEqual(loaded.params.delta, self.params.delta)
        self.assertEqual(loaded.cf_map, self.card.cf_map)
        self.assertEqual(deck_cf(loaded, 1e-6), 1.75)
        with self.assertRaises(IncompleteCalibration):
            deck_cf(loaded, 1e-4)

    def test_missing_targets_are_refused(self):
        with self.assertRaises(IncompleteCalibration) as ctx:
            emit_model_card(self.params, {0.5: 0.1, 1e-6: None}, targets=[0.5, 1e-6, 1e-8])
        self.assertEqual(ctx.exception.missing, (1e-6, 1e-8))
        with self.assertRaises(IncompleteCalibration):
            emit_model_card(self.params, {0.5: math.nan})

    def test_malformed_decks(self):
        deck = self.card.to_deck()
        with self.assertRaises(ValueError):
            load_model_card(deck.replace('alpha = ', 'alpha : '))
        with self.assertRaises(ValueError):
            load_model_card(deck.replace('pol_p = 0.69999999999999996', 'pol_p = high'))
        with self.assertRaises(ValueError):
            load_model_card('\n'.join(l for l in deck.splitlines() if not l.startswith('temp_k')))
        with self.assertRaises(ValueError):
            load_model_card(deck + 'bias_v = 0.1\n')

    def test_tilted_reference_layer_round_trips(self):
        tilted = self.params.replace(m_p=(0.0, 0.6, 0.8))
        card = emit_model_card(tilted, {0.5: 0.12})
        self.assertIn('mp_y = 0.59999999999999998', card.to_deck())
        self.assertEqual(load_model_card(card.to_deck()).params.m_p, tilted.m_p)

    def test_deck_without_reference_layer_defaults_to_z(self):
        deck = ''.join(l + '\n' for l in self.card.to_deck().splitlines() if not l.startswith('mp_'))
        self.assertEqual(load_model_card(deck).params.m_p, (0.0, 0.0, 1.0))
        with self.assertRaises(ValueError):
            load_model_card(deck + 'mp_x = 0\n')

    def test_multiline_provenance_stays_one_line(self):
        config = 'C:\\decks\\run\nsolver = fvm\r\n# cf_wer_0.5 = 9'
        card = emit_model_card(self.params, {0.5: 0.12}, {'config': config})
        deck = card.to_deck()
        self.assertEqual(len(deck.splitlines()), 1 + 1 + 8 + 3 + 1)
        loaded = load_model_card(deck)
        self.assertEqual(loaded.provenance['config'], config)
        self.assertEqual(loaded.cf_map, {0.5: 0.12})
        self.assertEqual(loaded.to_deck(), deck)

    def test_provenance_keys_are_checked(self):
        for key in ('a\nb', 'x = 1', ''):
            with self.subTest(key=key), self.assertRaises(ValueError):
                emit_model_card(self.params, {0.5: 0.12}, {key: 'value'})
        with self.assertRaises(ValueError):
            ModelCard(self.params, {0.5: 0.1}, {'bad\nkey': 'v'}).to_deck()

    def test_model_card_targets_sorted(self):
        card = ModelCard(self.params, {1e-8: 2.0, 0.5: 0.1})
        self.assertEqual(card.targets(), (0.5, 1e-8))


class CalibrationTests(SimpleTestCase):
    def setUp(self):
        self.params = reference_device()
        self.current = 2.0 * critical_current(self.params)

    def test_no_crossing_in_bracket(self):
        with self.assertRaises(CalibrationNoCross) as ctx:
            calibrate_cf(self.params, 0.5, self.current, t_star=1e-12, bracket=(0.0, 1.0), max_expansions=0)
        self.assertEqual(ctx.exception.bracket, (0.0, 1.0))

    def test_stronger_fictitious_field_switches_sooner(self):
        horizon = 20.0 * characteristic_time(self.params)
        slow = fictitious_switch_time(self.params, 0.0, self.current, horizon)
        fast = fictitious_switch_time(self.params, 1.0, self.current, horizon)
        self.assertIsNotNone(slow)
        self.assertLess(fast, slow)

    @tag('slow')
    def test_calibrated_transient_hits_fpe_time(self):
        for target in (0.5, 1e-6):
            with self.subTest(target=target):
                t_star = time_to_wer(self.params, self.current, target)
                c_f = calibrate_cf(self.params, target, self.current, t_star=t_star)
                achieved = fictitious_switch_time(self.params, c_f, self.current, 10.0 * t_star)
                self.assertAlmostEqual(achieved / t_star, 1.0, delta=0.01)

    def test_applied_field_reaches_the_fictitious_transient(self):
        horizon = 20.0 * characteristic_time(self.params)
        h = 0.1 * self.params.h_k_eff
        plain = fictitious_switch_time(self.params, 1.0, self.current, horizon)
        assisted = fictitious_switch_time(self.params, 1.0, self.current, horizon, h_ext_z=-h)
        opposed = fictitious_switch_time(self.params, 1.0, self.current, horizon, h_ext_z=h)
        self.assertLess(assisted, plain)
        self.assertLess(plain, opposed)

    @tag('slow')
    def test_calibration_under_applied_field_replays(self):
        h = -0.1 * self.params.h_k_eff
        t_star = time_to_wer(self.params, self.current, 1e-3, h_ext_z=h)
        c_f = calibrate_cf(self.params, 1e-3, self.current, t_star=t_star, h_ext_z=h)
        achieved = fictitious_switch_time(self.params, c_f, self.current, 10.0 * t_star, h_ext_z=h)
        self.assertAlmostEqual(achieved / t_star, 1.0, delta=0.01)
        without_field = fictitious_switch_time(self.params, c_f, self.current, 10.0 * t_star)
        self.assertGreater(without_field / t_star, 1.02)
