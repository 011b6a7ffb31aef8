from contextvars import ContextVar
from typing import Optional

# Training runs
run_id: ContextVar[Optional[str]] = ContextVar('run_id', default=None)

# Sweeps
sweep_id: ContextVar[Optional[str]] = ContextVar('sweep_id', default=None)
