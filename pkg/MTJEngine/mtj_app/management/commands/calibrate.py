"""
Django management command to calibrate fictitious-field coefficients and
write the model-card deck.

Usage:
    python manage.py calibrate --config fitted.json --current 60e-6 --targets 0.5,1e-6,1e-8 --out card.deck

For every WER target the FPE pulse width t* is found first, then the c_f
whose deterministic fictitious-field transient switches at t*. Any failed
target aborts with exit code 5 and no deck is written.
"""

import logging

from ... import exports
from ...exceptions import MTJModelError
from ...fit import calibrate_cf, emit_model_card
from ...stats import time_to_wer
from ._base import EXIT_CALIBRATION, MTJCommand, float_list

logger = logging.getLogger(__name__)


class Command(MTJCommand):
    help = 'Calibrate c_f per WER target and emit the model-card deck'

    def add_command_arguments(self, parser):
        parser.add_argument(
            '--targets',
            type=float_list,
            help='Comma-separated WER targets (default: fit.wer_targets)',
        )
        parser.add_argument('--current', type=float, help='Write current in A (default: first of sweep.currents_a)')
        parser.add_argument('--dt', type=float, help='Integrator step in s (default: solver.sllgs_dt)')

    def overrides(self, options):
        return {'fit.wer_targets': options.get('targets')}

    def run(self, config, options):
        params = config.device
        current = self.single_current(config, options.get('current'))
        targets = sorted(set(config.fit['wer_targets']), reverse=True)
        dt = options.get('dt') or config.solver.sllgs_dt
        h_ext_z = config.sweep['h_ext_z']

        cf_map, metadata, failures = {}, {}, []
        for target in targets:
            try:
                t_star = time_to_wer(params, current, target, config.solver, h_ext_z)
                c_f = calibrate_cf(params, target, current, config.solver, t_star=t_star, dt=dt,
                                   h_ext_z=h_ext_z)
            except MTJModelError as exc:
                logger.warning("calibration failed for WER %g: %s", target, exc)
                failures.append(f'{target!r} ({exc.__class__.__name__}: {exc})')
                continue
            cf_map[target] = c_f
            metadata[f't_star_s_wer_{target!r}'] = repr(t_star)
            self.stderr.write(f'WER {target:g}: t* = {t_star:.6e} s, c_f = {c_f:.6g}')

        if failures:
            self.fail('calibration failed for WER target(s): ' + '; '.join(failures), EXIT_CALIBRATION)

        metadata.update({
            'calibration_current_a': repr(current),
            'calibration_h_ext_z': repr(h_ext_z),
            'solver': config.solver.solver,
            'config': config.source or '<defaults>',
        })
        card = emit_model_card(params, cf_map, metadata, targets)
        exports.write_text(card.to_deck(), self.target(config))
        self.notice(config, f'model card with {len(targets)} c_f value(s)')
