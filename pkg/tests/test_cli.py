import csv
import json

import pytest

from cfa_lab.cli import EXIT_CHECK_FAILED, EXIT_USAGE, build_parser, main

RUN_ID = '4f0c2b7e9a1d4c3b8e6f5a2d1c0b9e8f'

SMALL = [
    '--set=data.n=400',
    '--set=data.test_n=200',
    '--set=data.d=8',
    '--set=arch.hidden=[16]',
    '--set=optim.epochs=2',
    '--set=optim.batch_size=64',
    '--set=train_attack.steps=3',
    '--set=eval_attack.steps=3',
]


@pytest.fixture(autouse=True)
def _keep_test_logging(mocker):
    # main() installs its own handlers, which would detach caplog in later tests
    mocker.patch('cfa_lab.cli.configure_logging')


def test_parser_rejects_seed_and_seeds_together():
    with pytest.raises(SystemExit):
        build_parser().parse_args(['train', '--seed', '1', '--seeds', '1,2'])


def test_parser_reads_value_lists():
    args = build_parser().parse_args(['sweep-budget', '--parameter', 'lambda2', '--values', '0.3, 0.5'])
    assert args.parameter == 'lambda2'
    assert args.values == [0.3, 0.5]


def test_toy_verify_passes_with_default_parameter_sets(tmp_path):
    code = main(['toy-verify', '--out', str(tmp_path), '--mc-samples', '0', '--check'])
    assert code == 0
    payload = json.loads((tmp_path / 'theorems.json').read_text())
    assert payload['passed'] is True
    assert payload['failures'] == []
    assert len(payload['reports']) == 21
    assert {report['delta_w'] for report in payload['reports']} == {0.1}


def test_toy_verify_reports_argmax_mismatch(tmp_path, mocker, capsys):
    mocker.patch('cfa_lab.cli.numeric_optimal_w', return_value=0.0)
    code = main(['toy-verify', '--out', str(tmp_path), '--random', '0', '--mc-samples', '0', '--check'])
    assert code == EXIT_CHECK_FAILED
    assert 'check failed: w*(+1)' in capsys.readouterr().err
    assert json.loads((tmp_path / 'theorems.json').read_text())['passed'] is False


def test_toy_verify_without_check_always_succeeds(tmp_path, mocker):
    mocker.patch('cfa_lab.cli.numeric_optimal_w', return_value=0.0)
    assert main(['toy-verify', '--out', str(tmp_path), '--random', '0', '--mc-samples', '0']) == 0


def test_toy_sweep_writes_curves_and_samples(tmp_path):
    assert main(['toy-sweep', '--out', str(tmp_path), '--samples', '5']) == 0
    with open(tmp_path / 'toy_sweep.csv', newline='') as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ['w', 'eps', 'class', 'clean_or_robust', 'value']
    # 50 weights, two classes, clean and robust
    assert len(rows) == 1 + 50 * 2 * 2
    with open(tmp_path / 'toy_samples.csv', newline='') as handle:
        samples = list(csv.reader(handle))
    assert samples[0] == ['class', 'x1', 'x2']
    assert len(samples) == 1 + 10


def test_train_writes_report_and_model(tmp_path):
    code = main(['train', '--out', str(tmp_path), '--save-model', '--check', '--run-id', RUN_ID] + SMALL)
    assert code == 0
    for name in ('metrics.csv', 'summary.json', 'config.json', 'model.bin', 'model.json'):
        assert (tmp_path / name).exists()
    summary = json.loads((tmp_path / 'summary.json').read_text())
    assert summary['run_id'] == RUN_ID


def test_train_over_seeds(tmp_path):
    assert main(['train', '--out', str(tmp_path), '--seeds', '0,1'] + SMALL) == 0
    assert (tmp_path / 'seed-0' / 'metrics.csv').exists()
    assert (tmp_path / 'seed-1' / 'metrics.csv').exists()
    assert json.loads((tmp_path / 'aggregate.json').read_text())['seeds'] == [0, 1]


def test_failed_check_exits_nonzero(tmp_path, mocker, capsys):
    mocker.patch('cfa_lab.cli.check_run', return_value=['robust above clean'])
    assert main(['train', '--out', str(tmp_path)] + SMALL) == 0
    assert main(['train', '--out', str(tmp_path), '--check'] + SMALL) == EXIT_CHECK_FAILED
    assert 'check failed: seed 0: robust above clean' in capsys.readouterr().err


@pytest.mark.parametrize(
    'arguments',
    [
        ['--set', 'method=sgd'],
        ['--set', 'cfa.ccr=true'],
        ['--set', 'optim.learning_rate=0.1'],
        ['--config', '/nonexistent/cfa-lab.json'],
    ],
)
def test_bad_configuration_is_a_usage_error(tmp_path, capsys, arguments):
    assert main(['train', '--out', str(tmp_path)] + arguments) == EXIT_USAGE
    assert capsys.readouterr().err.startswith('error: ')


def test_sweep_requires_trades_for_beta(tmp_path):
    assert main(['sweep-beta', '--out', str(tmp_path), '--values', '0,6'] + SMALL) == EXIT_USAGE
