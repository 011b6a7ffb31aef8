import logging
from contextvars import Token
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Optional
from uuid import UUID, uuid4

from cfa_lab.context import run_id, sweep_id

if TYPE_CHECKING:
    from types import TracebackType
    from typing import Type

logger = logging.getLogger('cfa_lab')


def is_valid_uuid4(uuid_: str) -> bool:
    """
    Check whether a string is a valid v4 uuid.
    """
    try:
        return bool(UUID(uuid_, version=4))
    except ValueError:
        return False


FAILED_VALIDATION_MESSAGE = 'Generated new run ID (%s), since supplied value failed validation'


@dataclass
class RunScope:
    """
    Bind a run ID to everything executed inside a ``with`` block.

    Used once per training run and once per sweep (``sweep=True``), so
    that log records of nested runs carry both IDs.
    """

    supplied_id: Optional[str] = None
    sweep: bool = False

    # ID-generating callable
    generator: Callable[[], str] = field(default=lambda: uuid4().hex)

    # ID validator
    validator: Optional[Callable[[str], bool]] = field(default=is_valid_uuid4)

    # ID transformer - can be used to clean/mutate IDs
    transformer: Optional[Callable[[str], str]] = field(default=lambda a: a)

    def resolve(self) -> str:
        """
        Use the supplied ID if present and valid. Generate one otherwise.
        """
        validation_failed = False
        if not self.supplied_id:
            id_value = self.generator()
        elif self.validator and not self.validator(self.supplied_id):
            validation_failed = True
            id_value = self.generator()
        else:
            id_value = self.supplied_id

        if self.transformer:
            id_value = self.transformer(id_value)

        if validation_failed is True:
            logger.warning(FAILED_VALIDATION_MESSAGE, id_value)
        return id_value

    def __enter__(self) -> str:
        self.id_value = self.resolve()
        var = sweep_id if self.sweep else run_id
        self._token: Token[Optional[str]] = var.set(self.id_value)
        return self.id_value

    def __exit__(
        self,
        exc_type: 'Optional[Type[BaseException]]',
        exc_val: Optional[BaseException],
        exc_tb: 'Optional[TracebackType]',
    ) -> None:
        var = sweep_id if self.sweep else run_id
        var.reset(self._token)
