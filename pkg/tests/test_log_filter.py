import contextvars
from logging import INFO, LogRecord
from uuid import uuid4

import pytest

from cfa_lab import RunIdFilter, SweepTracingIdsFilter
from cfa_lab.context import run_id, sweep_id


@pytest.fixture(autouse=True)
def _isolated_ids():
    """Every test starts outside any run or sweep and leaves the context as it found it"""
    run_token, sweep_token = run_id.set(None), sweep_id.set(None)
    yield
    sweep_id.reset(sweep_token)
    run_id.reset(run_token)


@pytest.fixture()
def active_run():
    value = uuid4().hex
    run_id.set(value)
    return value


@pytest.fixture()
def epoch_line():
    return LogRecord(name='cfa_lab', level=INFO, pathname='', lineno=0, msg='epoch 3', args=(), exc_info=None)


def test_run_filter_keeps_its_settings():
    filter_ = RunIdFilter(uuid_length=8, default_value='-')
    assert filter_.uuid_length == 8
    assert filter_.default_value == '-'


def test_epoch_line_carries_the_active_run(active_run, epoch_line):
    assert not hasattr(epoch_line, 'run_id')
    assert RunIdFilter().filter(epoch_line) is True
    assert epoch_line.run_id == active_run


def test_run_id_is_shortened(active_run, epoch_line):
    RunIdFilter(uuid_length=8).filter(epoch_line)
    assert epoch_line.run_id == active_run[:8]


def test_explicitly_cleared_run_id_overrides_the_default(epoch_line):
    # the fixture set the variable to None, which wins over the default
    RunIdFilter(default_value='-').filter(epoch_line)
    assert epoch_line.run_id is None


def test_default_applies_outside_any_run_or_sweep(epoch_line):
    contextvars.Context().run(SweepTracingIdsFilter(default_value='-').filter, epoch_line)
    assert (epoch_line.sweep_id, epoch_line.run_id) == ('-', '-')


def test_sweep_member_line_carries_both_ids(active_run, epoch_line):
    sweep_id.set('margin-sweep')
    SweepTracingIdsFilter().filter(epoch_line)
    assert (epoch_line.sweep_id, epoch_line.run_id) == ('margin-sweep', active_run)


def test_member_lines_of_one_sweep_group_together():
    sweep_id.set('budget-sweep')
    lines = []
    for member in ('a' * 32, 'b' * 32):
        run_id.set(member)
        line = LogRecord(name='cfa_lab', level=INFO, pathname='', lineno=0, msg='done', args=(), exc_info=None)
        SweepTracingIdsFilter(uuid_length=4).filter(line)
        lines.append(line)
    assert [line.sweep_id for line in lines] == ['budg', 'budg']
    assert [line.run_id for line in lines] == ['aaaa', 'bbbb']


@pytest.mark.parametrize(
    ('uuid_length', 'expected'),
    [
        (6, 6),
        (16, 16),
        (None, 36),
        (38, 36),
    ],
)
def test_sweep_id_is_shortened(epoch_line, uuid_length, expected):
    value = str(uuid4())
    sweep_id.set(value)
    SweepTracingIdsFilter(uuid_length=uuid_length).filter(epoch_line)
    assert epoch_line.sweep_id == value[:expected]
