"""
Django management command to compute read-disturb (RER) curves.

Usage:
    python manage.py rer --config cfg.json --read-currents 2e-6,5e-6,1e-5 --t-read 1e-8
"""

from ... import exports
from ...exceptions import ConfigError
from ...stats import rer_curve
from ._base import MTJCommand, float_list


class Command(MTJCommand):
    help = 'Compute the read-disturb rate versus read current for one read pulse'

    def add_command_arguments(self, parser):
        parser.add_argument(
            '--read-currents',
            type=float_list,
            help='Comma-separated read currents in A (default: sweep.read_currents_a)',
        )
        parser.add_argument('--t-read', type=float, help='Read pulse length in s (default: sweep.t_read_s)')
        parser.add_argument('--solver', choices=['fvm', 'spectral'], help='FPE solver')
        parser.add_argument('--device-id', type=str, default='', help='Label stored with the curve')
        parser.add_argument('--excel', type=str, help='Also write the curve to this .xlsx workbook')

    def overrides(self, options):
        return {
            'solver.solver': options.get('solver'),
            'sweep.read_currents_a': options.get('read_currents'),
            'sweep.t_read_s': options.get('t_read'),
        }

    def run(self, config, options):
        currents = config.sweep['read_currents_a']
        if not currents:
            raise ConfigError('sweep.read_currents_a', 'no read current given')
        t_read = config.sweep['t_read_s']
        if t_read is None:
            raise ConfigError('sweep.t_read_s', 'no read pulse length given')

        curve = rer_curve(config.device, sorted(currents), t_read, config.solver,
                          config.sweep['h_ext_z'], options['device_id'])
        exports.write_curves([curve], self.target(config))
        if options.get('excel'):
            exports.export_curves_to_excel([curve], options['excel'], title='Read disturb rate')
        self.notice(config, f'RER at {len(curve)} read current(s) for t_read={t_read:.4e} s, '
                            f'max {curve.rates().max():.3e}')
