"""
Utility functions for SparseAccBench

File helpers shared by the command line: the data directory, trace and
speed-up CSV writers, JSON report saving and the per-decade summary line.

@version 0.1.0
@date October 2026
"""

import os
import sys
import csv
import json
import math
import logging
from datetime import datetime
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from serial_solvers import TRACE_COLUMNS, TraceRecord

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "SPARSEACC_DATA_DIR"
SPEEDUP_COLUMNS = ('threads', 'wall_time_s', 'speedup', 'tau_observed')


def get_data_dir() -> str:
    """Get the data directory path (SPARSEACC_DATA_DIR or ./data next to this module)"""
    data_dir = os.environ.get(DATA_DIR_ENV) or os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
    if not os.path.exists(data_dir):
        os.makedirs(data_dir)
    return data_dir


def _ensure_parent(path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.exists(directory):
        os.makedirs(directory)


def write_trace_csv(path: str, traces: Iterable[Tuple[Dict[str, object], Sequence[TraceRecord]]],
                    extra_columns: Sequence[str] = ()) -> int:
    """
    Write one or more traces to a CSV file.

    Args:
        path (str): Output file, or '-' for standard output
        traces: pairs of (extra column values, trace records)
        extra_columns (Sequence[str]): Column names appended after the trace columns

    Returns:
        int: number of rows written
    """
    if path == '-':
        rows = _write_trace_rows(sys.stdout, traces, extra_columns)
        sys.stdout.flush()
        return rows
    _ensure_parent(path)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        rows = _write_trace_rows(f, traces, extra_columns)
    logger.info(f"Wrote {rows} trace rows to {path}")
    return rows


def _write_trace_rows(handle, traces, extra_columns) -> int:
    writer = csv.writer(handle, lineterminator='\n')
    writer.writerow(list(TRACE_COLUMNS) + list(extra_columns))
    rows = 0
    for extra, records in traces:
        for record in records:
            writer.writerow([record.restart, record.epoch, repr(float(record.effective_passes)),
                             repr(float(record.wall_time)), repr(float(record.suboptimality))]
                            + [extra.get(column, '') for column in extra_columns])
            rows += 1
    return rows


def read_trace_csv(path: str) -> List[Dict[str, str]]:
    """Read a trace CSV back as a list of row dicts"""
    with open(path, 'r', newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f))


def write_speedup_csv(path: str, rows: Iterable[Dict[str, float]]) -> None:
    _ensure_parent(path)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=list(SPEEDUP_COLUMNS))
        writer.writeheader()
        for row in rows:
            writer.writerow({key: row.get(key, '') for key in SPEEDUP_COLUMNS})
    logger.info(f"Wrote speed-up table to {path}")


def decade_summary(trace: Sequence[TraceRecord], lowest: int = 12) -> List[Dict[str, float]]:
    """Passes and seconds at the first point below each decade 1e-1 .. 1e-lowest that was reached"""
    summary = []
    for exponent in range(1, lowest + 1):
        target = 10.0 ** -exponent
        hit = next((r for r in trace if r.suboptimality <= target), None)
        if hit is None:
            break
        summary.append({'target': target, 'passes': hit.effective_passes, 'seconds': hit.wall_time})
    return summary


def format_decade_summary(label: str, trace: Sequence[TraceRecord]) -> str:
    parts = [f"1e-{int(round(-math.log10(item['target'])))}: {item['passes']:.1f}p/{item['seconds']:.2f}s"
             for item in decade_summary(trace)]
    return f"{label}: " + (", ".join(parts) if parts else "no decade reached")


def save_report(report: Dict, filename: Optional[str] = None, directory: Optional[str] = None) -> Dict:
    """Save a verification report to a JSON file"""
    if not filename:
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        filename = f"report_{report.get('check', 'check')}_{timestamp}.json"
    filepath = filename if os.path.isabs(filename) else os.path.join(directory or get_data_dir(), filename)

    try:
        _ensure_parent(filepath)
        with open(filepath, 'w') as f:
            json.dump(report, f, indent=2, default=float)
        return {'success': True, 'filename': filepath}
    except Exception as e:
        logger.error(f"Error saving report: {str(e)}")
        return {'success': False, 'error': str(e)}
