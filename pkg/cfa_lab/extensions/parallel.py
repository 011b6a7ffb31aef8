from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, List, Optional, Sequence, Tuple, TypeVar

from cfa_lab.context import sweep_id
from cfa_lab.runs import RunScope

T = TypeVar('T')
R = TypeVar('R')


def run_member(job: Tuple[Callable[[T], R], T, Optional[str]]) -> R:
    """
    Execute one member of a sweep with the sweep ID of the caller.

    Each member gets a fresh run ID. In worker processes the sweep ID is
    restored from the job, since context vars do not cross process
    boundaries, and cleared afterwards so a reused worker starts clean.
    """
    fn, argument, parent_sweep_id = job
    token = sweep_id.set(parent_sweep_id)
    try:
        with RunScope():
            return fn(argument)
    finally:
        sweep_id.reset(token)


def map_runs(fn: Callable[[T], R], arguments: Sequence[T], workers: int = 1) -> List[R]:
    """
    Apply ``fn`` to every argument, in order, each inside its own run scope.

    ``workers > 1`` distributes the members over a process pool; ``fn``
    must then be importable at module level. Results come back in
    argument order either way.
    """
    if workers < 1:
        raise ValueError(f'workers must be at least 1, got {workers}')
    jobs: List[Tuple[Callable[[Any], Any], Any, Optional[str]]] = [
        (fn, argument, sweep_id.get()) for argument in arguments
    ]
    if workers == 1 or len(jobs) < 2:
        return [run_member(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(run_member, jobs))
