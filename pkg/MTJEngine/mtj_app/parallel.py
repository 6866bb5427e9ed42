"""
Worker pool for independent solves (ensemble batches, sweep points).

Results always come back in task order, so output never depends on the
number of workers.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional, Sequence

logger = logging.getLogger(__name__)


def resolve_jobs(jobs: Optional[int]) -> int:
    """None or 0 means one worker per CPU."""
    if not jobs:
        return max(1, os.cpu_count() or 1)
    jobs = int(jobs)
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")
    return jobs


def run_ordered(func: Callable, tasks: Iterable[Sequence], jobs: Optional[int] = 1) -> List:
    """Apply ``func(*task)`` to every task; results are in task order.

    ``func`` must be a module-level callable and the task arguments picklable
    when more than one worker is used.
    """
    tasks = [tuple(t) for t in tasks]
    workers = min(resolve_jobs(jobs), max(1, len(tasks)))
    if workers == 1:
        return [func(*task) for task in tasks]

    logger.debug("dispatching %d tasks of %s to %d workers", len(tasks), func.__name__, workers)
    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(func, *task) for task in tasks]
        return [f.result() for f in futures]
