"""
Django management command to regress device parameters against measured
write-error-rate points.

Usage:
    python manage.py fit_device --config cfg.json --data measured.csv [options]

The config's device section is the starting guess. The fitted parameters are
written as a complete config (loadable with --config); --residuals and
--report add the per-point table and a JSON run report.
"""

import json

import numpy as np
import pandas as pd

from ... import exports
from ...fit import dataset_hash, fit_parameters, resolve_weights
from ._base import EXIT_CONFIG, EXIT_FIT, MTJCommand

MIN_POINTS = 3


class Command(MTJCommand):
    help = 'Fit device parameters to measured WER points by basin hopping'

    def add_command_arguments(self, parser):
        parser.add_argument(
            '--data',
            type=str,
            required=True,
            help='Measured points as current_A,pulse_s,temp_K,rate,kind,solver (.csv or .xlsx)',
        )
        parser.add_argument('--hops', type=int, help='Basin-hopping iterations (default: fit.hops)')
        parser.add_argument('--seed', type=int, help='Optimizer seed (default: fit.seed)')
        parser.add_argument('--max-evaluations', type=int, help='Loss evaluation budget')
        parser.add_argument('--weights', choices=['uniform', 'high_current'], help='Weight preset')
        parser.add_argument('--residuals', type=str, help='Write the residual table to this path')
        parser.add_argument('--report', type=str, help='Write a JSON run report to this path')
        parser.add_argument(
            '--strict',
            action='store_true',
            help='Fail (exit 4) whenever the evaluation budget runs out',
        )

    def overrides(self, options):
        return {
            'fit.hops': options.get('hops'),
            'fit.seed': options.get('seed'),
            'fit.max_evaluations': options.get('max_evaluations'),
            'fit.weights': options.get('weights'),
        }

    def run(self, config, options):
        try:
            points = exports.read_points(options['data'])
        except FileNotFoundError:
            self.fail(f"{options['data']}: no such file")
        dataset = [p for p in points if p.kind == 'WER']
        if len(dataset) < len(points):
            self.stderr.write(f'ignoring {len(points) - len(dataset)} non-WER row(s)')
        if len(dataset) < MIN_POINTS:
            self.fail(f'need >= {MIN_POINTS} points, got {len(dataset)}', EXIT_CONFIG)

        fit = config.fit
        result = fit_parameters(
            dataset, config.fit_space(), hops=fit['hops'], seed=fit['seed'],
            settings=config.fit_settings(), weights=fit['weights'],
            max_evaluations=fit['max_evaluations'], step_sigma=fit['step_sigma'],
            temperature=fit['temperature'], jobs=config.solver.jobs, strict=options['strict'],
        )
        if result.status == 'budget_exhausted' and not result.improved:
            self.fail(
                f'evaluation budget exhausted after {result.evaluations} evaluations '
                f'without improving on the starting loss {result.initial_loss:.6g}',
                EXIT_FIT,
            )

        fitted = config.with_device(result.best).as_dict()
        exports.write_text(json.dumps(fitted, indent=2) + '\n', self.target(config))

        if options.get('residuals'):
            weights = resolve_weights(dataset, fit['weights'])
            table = pd.DataFrame({
                'current_A': [p.current for p in dataset],
                'pulse_s': [p.pulse_width for p in dataset],
                'rate': [p.rate for p in dataset],
                'model_pulse_s': result.model_times,
                'log10_ratio': result.residuals,
                'weight': weights,
            })
            exports.write_frame(table, options['residuals'])

        if options.get('report'):
            report = {
                'status': result.status,
                'loss': result.loss,
                'initial_loss': result.initial_loss,
                'evaluations': result.evaluations,
                'seed': result.seed,
                'points': len(dataset),
                'dataset_sha256': dataset_hash(dataset),
                'max_relative_time_error': float(np.nanmax(np.abs(10.0 ** result.residuals - 1.0))),
                'device': result.best.as_dict(),
                'trace': [
                    {'hop': e.hop, 'loss': e.loss, 'accepted': e.accepted, 'evaluations': e.evaluations}
                    for e in result.trace
                ],
            }
            exports.write_text(json.dumps(report, indent=2) + '\n', options['report'])

        self.notice(config, (
            f'fit {result.status}: loss {result.initial_loss:.6g} -> {result.loss:.6g} '
            f'after {result.evaluations} evaluations ({len(result.trace) - 1} local minima)'
        ))
