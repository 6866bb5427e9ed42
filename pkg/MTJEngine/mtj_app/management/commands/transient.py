"""
Django management command to integrate one macrospin transient.

Usage:
    python manage.py transient --deck card.deck --wer 1e-6 --current 60e-6 --duration 10e-9
    python manage.py transient --config cfg.json --stochastic --seed 7

Fictitious mode (--wer with a deck, or --cf) is deterministic; stochastic
mode is reproducible from --seed. With --walks the stochastic ensemble's
switched fraction is written instead of a trajectory.
"""

import logging
from pathlib import Path

import numpy as np

from ... import exports, sllgs
from ...exceptions import ConfigError
from ...fit import deck_cf, load_model_card
from ._base import MTJCommand

logger = logging.getLogger(__name__)


class Command(MTJCommand):
    help = 'Integrate an s-LLGS transient and emit m(t) as t_s,mx,my,mz'
    require_device = False

    def add_command_arguments(self, parser):
        parser.add_argument('--deck', type=str, help='Model-card deck supplying the device and c_f values')
        mode = parser.add_mutually_exclusive_group()
        mode.add_argument('--wer', type=float, help='Fictitious-field run at the deck c_f for this WER target')
        mode.add_argument('--cf', type=float, help='Fictitious-field run with this c_f')
        mode.add_argument('--stochastic', action='store_true', help='Thermal-noise run')
        mode.add_argument('--deterministic', action='store_true', help='Noise-free run from the mean thermal tilt')
        parser.add_argument('--seed', type=int, default=0, help='Seed for stochastic runs (default: 0)')
        parser.add_argument('--current', type=float, help='Write current in A (default: first of sweep.currents_a)')
        parser.add_argument('--duration', type=float, help='Pulse length in s (default: longest of sweep.times_s)')
        parser.add_argument('--dt', type=float, help='Integrator step in s (default: solver.sllgs_dt)')
        parser.add_argument('--decimation', type=int, help='Keep every n-th step (default: output.decimation)')
        parser.add_argument('--walks', type=int, default=0, help='Stochastic ensemble size (0 = single transient)')

    def overrides(self, options):
        return {'output.decimation': options.get('decimation')}

    def run(self, config, options):
        card = None
        if options.get('deck'):
            try:
                card = load_model_card(Path(options['deck']).read_text(encoding='utf-8'))
            except OSError as exc:
                raise ConfigError(options['deck'], f'cannot read deck ({exc.strerror or exc})') from exc
            except ValueError as exc:
                raise ConfigError(options['deck'], str(exc)) from exc
            config = config.with_device(card.params)
        if config.device is None:
            raise ConfigError('device', 'give --config with a device section or --deck')

        if options.get('wer') is not None:
            if card is None:
                self.fail('--wer needs --deck to look up c_f')
            mode, c_f = 'fictitious', deck_cf(card, options['wer'])
            calibrated_h = card.provenance.get('calibration_h_ext_z', repr(config.sweep['h_ext_z']))
            if calibrated_h != repr(config.sweep['h_ext_z']):
                logger.warning("deck calibrated at h_ext_z=%s A/m, replaying at %r A/m",
                               calibrated_h, config.sweep['h_ext_z'])
        elif options.get('cf') is not None:
            mode, c_f = 'fictitious', options['cf']
        elif options.get('stochastic'):
            mode, c_f = 'stochastic', 0.0
        elif options.get('deterministic'):
            mode, c_f = 'deterministic', 0.0
        else:
            self.fail('choose one of --wer, --cf, --stochastic or --deterministic')

        current = self.single_current(config, options.get('current'))
        duration = self.pulse_length(config, options.get('duration'))
        dt = options.get('dt') or config.solver.sllgs_dt
        waveform = sllgs.DriveWaveform.constant(current, duration, (0.0, 0.0, config.sweep['h_ext_z']))

        if options['walks'] > 0:
            if mode != 'stochastic':
                self.fail('--walks needs --stochastic')
            result = sllgs.run_ensemble(
                config.device, waveform, dt=dt, n_walks=options['walks'], base_seed=options['seed'],
                n_samples=config.sweep['n_samples'], jobs=config.solver.jobs,
            )
            exports.write_frame(exports.ensemble_frame(result), self.target(config))
            self.notice(config, (
                f"{options['walks']} walks: switched fraction {result.final_fraction:.4f} "
                f"[{result.ci_low[-1]:.4f}, {result.ci_high[-1]:.4f}] at {duration:.4e} s"
            ))
            return

        result = sllgs.run_transient(
            config.device, waveform, dt=dt, seed=options['seed'], mode=mode, c_f=c_f,
            record_every=config.output['decimation'],
        )
        exports.write_frame(exports.trajectory_frame(result.rows()), self.target(config))
        norms = np.linalg.norm(result.trajectory, axis=1)
        if result.switched:
            message = f'{mode}: m_z crossed 0 at {result.switch_time:.6e} s'
        else:
            message = f'{mode}: no switch within {duration:.4e} s'
        self.notice(config, f'{message}; max ||m| - 1| = {np.max(np.abs(norms - 1.0)):.2e}')
