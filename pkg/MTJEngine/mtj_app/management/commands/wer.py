"""
Django management command to compute write-error-rate curves.

Usage:
    python manage.py wer --config cfg.json --currents 40e-6,50e-6 --times 1e-9,2e-9,5e-9

One curve per write current over the pulse-width grid, written as
current_A,pulse_s,temp_K,rate,kind,solver. Currents are solved in parallel
with --jobs; row order follows the command line regardless of worker count.
"""

from ... import exports
from ...parallel import run_ordered
from ...stats import wer_curve
from ._base import MTJCommand, float_list


class Command(MTJCommand):
    help = 'Compute WER(t) curves for a set of write currents'

    def add_command_arguments(self, parser):
        parser.add_argument(
            '--currents',
            type=float_list,
            help='Comma-separated write currents in A (default: sweep.currents_a)',
        )
        parser.add_argument(
            '--times',
            type=float_list,
            help='Comma-separated pulse widths in s (default: sweep.times_s)',
        )
        parser.add_argument('--solver', choices=['fvm', 'spectral'], help='FPE solver')
        parser.add_argument('--device-id', type=str, default='', help='Label stored with the curves')
        parser.add_argument('--excel', type=str, help='Also write the curves to this .xlsx workbook')

    def overrides(self, options):
        return {
            'solver.solver': options.get('solver'),
            'sweep.currents_a': options.get('currents'),
            'sweep.times_s': options.get('times'),
        }

    def run(self, config, options):
        currents = config.currents()
        times = sorted(config.times())
        settings = config.solver
        tasks = [
            (config.device, current, times, settings, config.sweep['h_ext_z'], options['device_id'])
            for current in currents
        ]
        curves = run_ordered(wer_curve, tasks, jobs=settings.jobs)

        exports.write_curves(curves, self.target(config))
        if options.get('excel'):
            exports.export_curves_to_excel(curves, options['excel'], title='Write error rate')
        self.notice(config, f'{len(curves)} WER curve(s), {sum(len(c) for c in curves)} points ({settings.solver})')
