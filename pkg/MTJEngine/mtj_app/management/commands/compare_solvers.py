"""
Django management command to run both FPE solvers and the s-LLGS integrator
on the same write pulse and report their agreement and wall times.

Usage:
    python manage.py compare_solvers --config MTJEngine/configs/reference_device.json [options]

The report is JSON; wall times are measured, everything else is a
deterministic function of the config and seed.
"""

import json
import time
from dataclasses import replace

import numpy as np

from ... import exports, sllgs
from ...stats import start_well, switching_series
from ._base import MTJCommand


def _timed(func, *args, **kwargs):
    started = time.perf_counter()
    result = func(*args, **kwargs)
    return result, time.perf_counter() - started


class Command(MTJCommand):
    help = 'Compare FVM, spectral and s-LLGS switched fractions for one write pulse'

    def add_command_arguments(self, parser):
        parser.add_argument('--current', type=float, help='Write current in A')
        parser.add_argument('--duration', type=float, help='Pulse length in s')
        parser.add_argument('--samples', type=int, help='Sample times (default: sweep.n_samples)')
        parser.add_argument('--mesh-cells', type=int, help='FVM cells (default: solver.mesh_cells)')
        parser.add_argument('--n-coeffs', type=int, help='Legendre order (default: solver.n_coeffs)')
        parser.add_argument(
            '--walks',
            type=int,
            default=0,
            help='Also run an s-LLGS ensemble of this many walks (default: one transient only)',
        )
        parser.add_argument('--seed', type=int, default=0, help='s-LLGS base seed (default: 0)')

    def overrides(self, options):
        return {
            'sweep.n_samples': options.get('samples'),
            'solver.mesh_cells': options.get('mesh_cells'),
            'solver.n_coeffs': options.get('n_coeffs'),
        }

    def run(self, config, options):
        params = config.device
        current = self.single_current(config, options.get('current'))
        duration = self.pulse_length(config, options.get('duration'))
        n_samples = config.sweep['n_samples']
        h_ext_z = config.sweep['h_ext_z']
        seed = options['seed']

        fvm, fvm_seconds = _timed(
            switching_series, params, current, duration, replace(config.solver, solver='fvm'),
            n_samples=n_samples, h_ext_z=h_ext_z,
        )
        spectral, spectral_seconds = _timed(
            switching_series, params, current, duration, replace(config.solver, solver='spectral'),
            n_samples=n_samples, h_ext_z=h_ext_z,
        )
        difference = np.abs(fvm.switched - spectral.switched)
        worst = int(np.argmax(difference))

        waveform = sllgs.DriveWaveform.constant(current, duration, (0.0, 0.0, h_ext_z))
        transient, transient_seconds = _timed(
            sllgs.run_transient, params, waveform, dt=config.solver.sllgs_dt, seed=seed,
            well=start_well(current),
        )
        report = {
            'current_a': current,
            'duration_s': duration,
            'samples': n_samples,
            'fvm': {
                'mesh_cells': config.solver.mesh_cells,
                'grading': config.solver.grading,
                'seconds': fvm_seconds,
                'final_switched_fraction': float(fvm.switched[-1]),
            },
            'spectral': {
                'n_coeffs': config.solver.n_coeffs,
                'expm_method': config.solver.expm_method,
                'seconds': spectral_seconds,
                'final_switched_fraction': float(spectral.switched[-1]),
            },
            'max_abs_difference': float(difference[worst]),
            'max_abs_difference_t_s': float(fvm.times[worst]),
            'sllgs_transient': {
                'seed': seed,
                'seconds': transient_seconds,
                'switched': transient.switched,
                'switch_time_s': transient.switch_time,
            },
        }

        if options['walks'] > 0:
            ensemble, ensemble_seconds = _timed(
                sllgs.run_ensemble, params, waveform, dt=config.solver.sllgs_dt,
                n_walks=options['walks'], base_seed=seed, sample_times=fvm.times,
                well=start_well(current), jobs=config.solver.jobs,
            )
            # the ensemble reads each sample at the end of the step reaching it
            reference = np.interp(ensemble.times, spectral.times, spectral.switched)
            inside = (ensemble.ci_low <= reference) & (reference <= ensemble.ci_high)
            report['sllgs_ensemble'] = {
                'walks': options['walks'],
                'seed': seed,
                'seconds': ensemble_seconds,
                'seconds_per_1000_walks': ensemble_seconds * 1000.0 / options['walks'],
                'max_abs_difference': float(np.max(np.abs(ensemble.switched_fraction - reference))),
                'fraction_inside_ci': float(np.mean(inside)),
                'confidence': ensemble.confidence,
            }

        exports.write_text(json.dumps(report, indent=2, sort_keys=True) + '\n', self.target(config))
        self.notice(config, (
            f'max |FVM - spectral| = {difference[worst]:.3e}; '
            f'FVM {fvm_seconds:.2f} s, spectral {spectral_seconds:.2f} s, '
            f's-LLGS transient {transient_seconds:.2f} s'
        ))
