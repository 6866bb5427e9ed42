"""
Django management command to evolve the polar-angle Fokker-Planck equation
from the Boltzmann start under one constant write current.

Usage:
    python manage.py solve_fpe --config MTJEngine/configs/reference_device.json [options]

Emits the switched-fraction series as CSV (tau,t_s,switched_fraction) and
optionally distribution snapshots and Legendre coefficients.
"""

from ... import exports
from ...stats import switching_series
from ._base import MTJCommand


class Command(MTJCommand):
    help = 'Solve the Fokker-Planck equation for one write pulse and emit the switched-fraction series'

    def add_command_arguments(self, parser):
        parser.add_argument(
            '--solver',
            choices=['fvm', 'spectral'],
            help='FPE solver (default: solver.solver)',
        )
        parser.add_argument(
            '--current',
            type=float,
            help='Write current in A (default: first of sweep.currents_a)',
        )
        parser.add_argument(
            '--duration',
            type=float,
            help='Pulse length in s (default: longest of sweep.times_s)',
        )
        parser.add_argument(
            '--samples',
            type=int,
            help='Number of evenly spaced sample times (default: sweep.n_samples)',
        )
        parser.add_argument(
            '--snapshots',
            type=str,
            help='Also write distribution snapshots (tau,theta_rad,p_mass,rho_density) to this path',
        )
        parser.add_argument(
            '--coefficients',
            type=str,
            help='Also write the final Legendre coefficients (n,r_n) to this path (spectral only)',
        )

    def overrides(self, options):
        return {
            'solver.solver': options.get('solver'),
            'sweep.n_samples': options.get('samples'),
        }

    def run(self, config, options):
        params = config.device
        current = self.single_current(config, options.get('current'))
        duration = self.pulse_length(config, options.get('duration'))
        snapshot_count = config.output['snapshots']
        if options.get('snapshots') and snapshot_count == 0:
            snapshot_count = 1
        if options.get('coefficients') and config.solver.solver != 'spectral':
            self.fail('--coefficients needs the spectral solver')

        series = switching_series(
            params, current, duration, config.solver, n_samples=config.sweep['n_samples'],
            h_ext_z=config.sweep['h_ext_z'], snapshot_count=snapshot_count,
        )
        exports.write_frame(exports.series_frame(series.taus, series.times, series.switched),
                            self.target(config))
        if options.get('snapshots'):
            exports.write_frame(exports.snapshot_frame(series.snapshots, series.mesh), options['snapshots'])
        if options.get('coefficients'):
            exports.write_frame(exports.coefficient_frame(series.final), options['coefficients'])

        self.notice(config, (
            f'{series.solver}: I={current:.4e} A for {duration:.4e} s, '
            f'switched fraction {series.switched[-1]:.6e} (WER {1.0 - series.switched[-1]:.6e})'
        ))
