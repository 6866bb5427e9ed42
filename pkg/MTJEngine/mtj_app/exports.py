"""
Tabular emission and ingestion for the command-line tools.

Every CSV carries a header row with units in the column names and floats in
round-trip precision, so a rerun with the same inputs writes identical bytes
and the readers here recover the written values exactly.
"""

import io
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Iterable, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd
from openpyxl import Workbook
from openpyxl.styles import Font, PatternFill
from openpyxl.utils import get_column_letter

from . import __version__
from .fpe_fvm import GridDistribution, ThetaMesh
from .fpe_spectral import LegendreState, reconstruct, to_grid
from .stats import ErrorRateCurve, ErrorRatePoint

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'
CURVE_COLUMNS = ['current_A', 'pulse_s', 'temp_K', 'rate', 'kind', 'solver']
SERIES_COLUMNS = ['tau', 't_s', 'switched_fraction']
SNAPSHOT_COLUMNS = ['tau', 'theta_rad', 'p_mass', 'rho_density']
COEFFICIENT_COLUMNS = ['n', 'r_n']
TRAJECTORY_COLUMNS = ['t_s', 'mx', 'my', 'mz']
HEADER_FILL = PatternFill(start_color='CCCCCC', end_color='CCCCCC', fill_type='solid')

Target = Union[str, Path, TextIO]


def write_frame(frame: pd.DataFrame, target: Target) -> None:
    """Write ``frame`` as CSV to a path, an open text stream, or '-' for stdout."""
    if isinstance(target, (str, Path)) and str(target) == '-':
        target = sys.stdout
    if isinstance(target, (str, Path)):
        Path(target).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(target, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
        logger.info("wrote %d rows to %s", len(frame), target)
        return
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    target.write(buffer.getvalue())


def _read(source, columns: Sequence[str]) -> pd.DataFrame:
    if isinstance(source, (str, Path)) and str(source).lower().endswith('.xlsx'):
        frame = pd.read_excel(source, sheet_name=0, engine='openpyxl')
    else:
        frame = pd.read_csv(source, float_precision='round_trip')
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ValueError(f"missing column(s): {', '.join(missing)}")
    return frame


# Error-rate curves -----------------------------------------------------------

def curve_frame(curves: Iterable[ErrorRateCurve]) -> pd.DataFrame:
    rows = [
        (p.current, p.pulse_width, p.temperature, p.rate, p.kind,
         'measured' if p.source == 'measured' else (p.solver or curve.solver))
        for curve in curves for p in curve.points
    ]
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def write_curves(curves: Iterable[ErrorRateCurve], target: Target) -> None:
    write_frame(curve_frame(curves), target)


def read_points(source) -> Tuple[ErrorRatePoint, ...]:
    """Parse a curve CSV (or .xlsx); rows tagged solver=measured become measured points."""
    frame = _read(source, CURVE_COLUMNS)
    points = []
    for number, row in enumerate(frame.itertuples(index=False), start=2):
        solver = str(row.solver) if not pd.isna(row.solver) else ''
        source_tag = 'measured' if solver == 'measured' else 'computed'
        try:
            points.append(ErrorRatePoint(
                float(row.current_A), float(row.pulse_s), float(row.temp_K), float(row.rate),
                str(row.kind), source_tag, solver,
            ))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"row {number}: {exc}") from exc
    return tuple(points)


def export_curves_to_excel(curves: Sequence[ErrorRateCurve], output_path, title: str = 'Error rates') -> str:
    """Workbook with a summary sheet and one sheet of points."""
    frame = curve_frame(curves)
    wb = Workbook()

    ws_summary = wb.active
    ws_summary.title = "Summary"
    ws_summary["A1"] = title
    ws_summary["A1"].font = Font(bold=True)
    ws_summary["A2"] = "Generated on:"
    ws_summary["B2"] = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
    ws_summary["A3"] = "Tool version:"
    ws_summary["B3"] = __version__
    ws_summary["A4"] = "Curves:"
    ws_summary["B4"] = len(curves)
    ws_summary["A5"] = "Points:"
    ws_summary["B5"] = len(frame)
    devices = sorted({c.device_id for c in curves if c.device_id})
    if devices:
        ws_summary["A6"] = "Device:"
        ws_summary["B6"] = ', '.join(devices)

    ws_points = wb.create_sheet("Points")
    for col, header in enumerate(CURVE_COLUMNS, 1):
        cell = ws_points.cell(row=1, column=col, value=header)
        cell.font = Font(bold=True)
        cell.fill = HEADER_FILL
    for row, values in enumerate(frame.itertuples(index=False), 2):
        for col, value in enumerate(values, 1):
            ws_points.cell(row=row, column=col, value=value.item() if hasattr(value, 'item') else value)

    for ws in (ws_summary, ws_points):
        for column in ws.columns:
            width = max(len(str(cell.value)) for cell in column if cell.value is not None)
            ws.column_dimensions[get_column_letter(column[0].column)].width = min(width + 2, 50)

    # the points sheet is read back by read_points, so it goes first
    wb.move_sheet("Points", offset=-1)
    wb.save(output_path)
    logger.info("wrote %d points to %s", len(frame), output_path)
    return str(output_path)


# FPE outputs -----------------------------------------------------------------

def series_frame(taus, times, switched) -> pd.DataFrame:
    return pd.DataFrame({
        'tau': np.asarray(taus, dtype=float),
        't_s': np.asarray(times, dtype=float),
        'switched_fraction': np.asarray(switched, dtype=float),
    }, columns=SERIES_COLUMNS)


def read_series(source) -> pd.DataFrame:
    return _read(source, SERIES_COLUMNS)


def snapshot_frame(snapshots: Sequence[Union[GridDistribution, LegendreState]],
                   mesh: Optional[ThetaMesh] = None) -> pd.DataFrame:
    """Cell masses and densities for each snapshot, stacked with their tau.

    Legendre states are integrated over ``mesh`` cells; their density column
    is the series itself at the cell centres.
    """
    blocks = []
    for snap in snapshots:
        if isinstance(snap, GridDistribution):
            centers, p, rho = snap.mesh.centers, snap.p, snap.rho
        else:
            if mesh is None:
                raise ValueError("a mesh is needed to tabulate Legendre snapshots")
            centers, p = mesh.centers, to_grid(snap, mesh)
            rho = reconstruct(snap, x=np.cos(centers))
        blocks.append(pd.DataFrame({
            'tau': np.full(len(centers), float(snap.tau)),
            'theta_rad': centers,
            'p_mass': p,
            'rho_density': rho,
        }, columns=SNAPSHOT_COLUMNS))
    if not blocks:
        return pd.DataFrame(columns=SNAPSHOT_COLUMNS)
    return pd.concat(blocks, ignore_index=True)


def read_snapshots(source) -> pd.DataFrame:
    return _read(source, SNAPSHOT_COLUMNS)


def coefficient_frame(state: LegendreState) -> pd.DataFrame:
    return pd.DataFrame({'n': np.arange(len(state.r)), 'r_n': state.r}, columns=COEFFICIENT_COLUMNS)


def read_coefficients(source) -> LegendreState:
    frame = _read(source, COEFFICIENT_COLUMNS).sort_values('n')
    if not np.array_equal(frame['n'].to_numpy(), np.arange(len(frame))):
        raise ValueError("coefficient indices must run 0..N without gaps")
    return LegendreState(frame['r_n'].to_numpy(dtype=float))


# s-LLGS outputs --------------------------------------------------------------

def trajectory_frame(rows: Sequence[Tuple[float, float, float, float]]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=TRAJECTORY_COLUMNS)


def read_trajectory(source) -> pd.DataFrame:
    return _read(source, TRAJECTORY_COLUMNS)


def ensemble_frame(result) -> pd.DataFrame:
    """Switched fraction with its binomial interval at every sample time."""
    return pd.DataFrame({
        't_s': result.times,
        'switched_fraction': result.switched_fraction,
        'ci_low': result.ci_low,
        'ci_high': result.ci_high,
    })


# Decks -----------------------------------------------------------------------

def write_text(text: str, target: Target) -> None:
    if isinstance(target, (str, Path)) and str(target) == '-':
        target = sys.stdout
    if isinstance(target, (str, Path)):
        Path(target).parent.mkdir(parents=True, exist_ok=True)
        Path(target).write_text(text, encoding='utf-8')
        logger.info("wrote %s", target)
        return
    target.write(text)
