from logging.config import dictConfig
from typing import Callable

import numpy as np
import pytest

from cfa_lab.config import RunConfig, from_dict


@pytest.fixture(autouse=True, scope='session')
def _configure_logging():
    LOGGING = {
        'version': 1,
        'disable_existing_loggers': False,
        'filters': {
            'run_id': {'()': 'cfa_lab.RunIdFilter'},
            'sweep_tracing': {'()': 'cfa_lab.SweepTracingIdsFilter'},
        },
        'formatters': {
            'full': {
                'class': 'logging.Formatter',
                'datefmt': '%H:%M:%S',
                'format': '[%(sweep_id)s] [%(run_id)s] %(message)s',
            },
        },
        'handlers': {
            'console': {
                'class': 'logging.StreamHandler',
                'filters': ['run_id', 'sweep_tracing'],
                'formatter': 'full',
            },
        },
        'loggers': {
            # project logger
            'cfa_lab': {
                'handlers': ['console'],
                'level': 'DEBUG',
                'propagate': True,
            },
        },
    }
    dictConfig(LOGGING)


def numeric_gradient(f: Callable[[], float], array: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of ``f`` with respect to every entry of ``array``, perturbed in place"""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=['multi_index'])
    for _ in it:
        index = it.multi_index
        original = array[index]
        array[index] = original + h
        upper = f()
        array[index] = original - h
        lower = f()
        array[index] = original
        grad[index] = (upper - lower) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-5)
    return float(np.max(np.abs(analytic - numeric) / scale))


def small_config(**sections) -> RunConfig:
    """A desk run small enough for the test suite"""
    values = {
        'data': {'n': 400, 'test_n': 200, 'd': 8},
        'arch': {'hidden': [16]},
        'optim': {'epochs': 4, 'batch_size': 64},
        'train_attack': {'steps': 3},
        'eval_attack': {'steps': 3},
    }
    for name, section in sections.items():
        if isinstance(section, dict):
            values.setdefault(name, {}).update(section)
        else:
            values[name] = section
    return from_dict(values).validate()
