from logging import Filter
from typing import TYPE_CHECKING, Optional, Tuple

from cfa_lab.context import run_id, sweep_id

if TYPE_CHECKING:
    from contextvars import ContextVar
    from logging import LogRecord


class _RunContextFilter(Filter):
    """
    Copies run-context variables onto every record passing through a handler.

    Subclasses list the ``(attribute, variable)`` pairs they stamp. IDs are
    cut to ``uuid_length`` characters; ``default_value`` is used while the
    variable has never been set in the current context.
    """

    stamps: Tuple[Tuple[str, 'ContextVar[Optional[str]]'], ...] = ()

    def __init__(self, name: str = '', uuid_length: Optional[int] = None, default_value: Optional[str] = None):
        super().__init__(name=name)
        self.uuid_length = uuid_length
        self.default_value = default_value

    def _shorten(self, value: Optional[str]) -> Optional[str]:
        if value and self.uuid_length is not None:
            return value[: self.uuid_length]
        return value

    def filter(self, record: 'LogRecord') -> bool:
        for attribute, variable in self.stamps:
            setattr(record, attribute, self._shorten(variable.get(self.default_value)))
        return True


class RunIdFilter(_RunContextFilter):
    """Adds ``run_id``: the training run whose epoch loop emitted the record"""

    stamps = (('run_id', run_id),)


class SweepTracingIdsFilter(_RunContextFilter):
    """
    Adds ``sweep_id`` and ``run_id``.

    Member runs of one sweep share the sweep ID, also inside worker
    processes, so a sweep's log lines can be grouped and then split per
    member. Outside a sweep ``sweep_id`` falls back to the default.
    """

    stamps = (('sweep_id', sweep_id), ('run_id', run_id))
