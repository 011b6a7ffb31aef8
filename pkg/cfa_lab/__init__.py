from cfa_lab.context import run_id, sweep_id
from cfa_lab.log_filters import RunIdFilter, SweepTracingIdsFilter
from cfa_lab.runs import RunScope

__all__ = (
    'RunIdFilter',
    'RunScope',
    'SweepTracingIdsFilter',
    'run_id',
    'sweep_id',
)
