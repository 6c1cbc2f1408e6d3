#!/usr/bin/env python3
"""
Tests the run, gradcheck and report commands and the command line.
"""

import json
import os
import tempfile
import unittest
from unittest import mock

from bilevel import log as bilevel_log
from bilevel.cli import build_parser, main
from bilevel.errors import ErrorCode
from bilevel.harness import (EXIT_CONFIG, EXIT_FAILED, EXIT_OK, EXIT_RUNTIME, cmd_gradcheck,
                             cmd_report, cmd_run, exit_status)
from bilevel.trace import read_csv

PROBLEM = {
    'family': 'quadratic',
    'seed': 1,
    'params': {
        'p_dim': 3,
        'q_dim': 3,
        'kappa_target': 4.0,
        'noise_sigma': 0.5
    },
}

RUNS = [
    {
        'label': 'aid',
        'algorithm': 'AID',
        'K': 5,
        'D': 5,
        'N': 3,
        'x0': 1.0
    },
    {
        'label': 'stoc',
        'algorithm': 'stocBiO',
        'K': 3,
        'D': 2,
        'Q': 2,
        'B': 2,
        'S': 2,
        'Df': 2,
        'Dg': 2,
        'x0': 1.0
    },
]

GRADCHECK = {
    'x': 0.5,
    'checks': [
        {
            'method': 'AID',
            'D': 200,
            'N': 3,
            'threshold': 1e-6
        },
        {
            'method': 'ITD',
            'D': 300,
            'threshold': 1e-6
        },
    ],
}


class HarnessTestCase(unittest.TestCase):
    """Writes configs into a scratch directory"""

    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()  # pylint: disable=consider-using-with
        self.out = os.path.join(self.tmp.name, 'out')
        bilevel_log.log_to_none()

    def tearDown(self) -> None:
        self.tmp.cleanup()

    def write_config(self, **changes) -> str:
        """Writes a config with top level changes applied and returns its path"""
        data = {'problem': PROBLEM, 'runs': RUNS, 'timing': False}
        data.update(changes)
        filename = os.path.join(self.tmp.name, 'config.json')
        with open(filename, 'w', encoding='utf-8') as config_file:
            json.dump(data, config_file)
        return filename

    def read_json(self, name: str) -> dict:
        """Reads a JSON file from the output directory"""
        with open(os.path.join(self.out, name), 'r', encoding='utf-8') as json_file:
            return json.load(json_file)


class TestRunCommand(HarnessTestCase):
    """Tests cmd_run"""

    def test_run(self) -> None:
        """Writes one trace per run plus the summaries"""
        self.assertEqual(cmd_run(self.write_config(), self.out), EXIT_OK)
        self.assertEqual(len(read_csv(os.path.join(self.out, 'aid.csv'))), 6)
        self.assertEqual(len(read_csv(os.path.join(self.out, 'stoc.csv'))), 4)
        summary = self.read_json('summary.json')
        self.assertEqual([run['label'] for run in summary['runs']], ['aid', 'stoc'])
        self.assertEqual(summary['problem']['constants']['L'], 4.0)
        stoc = summary['runs'][1]
        self.assertEqual(stoc['settings']['schedule']['sizes'], [3, 4])
        self.assertTrue(os.path.exists(os.path.join(self.out, 'problem.json')))

    def test_parallel_matches_serial(self) -> None:
        """Concurrent run blocks produce the same results"""
        config = self.write_config()
        cmd_run(config, self.out)
        serial = self.read_json('summary.json')
        cmd_run(config, self.out, parallel=2)
        parallel = self.read_json('summary.json')
        self.assertEqual([run['x_final'] for run in serial['runs']],
                         [run['x_final'] for run in parallel['runs']])

    def test_seed_override(self) -> None:
        """--seed changes the instance"""
        config = self.write_config()
        cmd_run(config, self.out)
        first = self.read_json('summary.json')['runs'][0]['x_final']
        cmd_run(config, self.out, seed=2)
        second = self.read_json('summary.json')
        self.assertEqual(second['problem']['seed'], 2)
        self.assertNotEqual(second['runs'][0]['x_final'], first)

    def test_bad_config(self) -> None:
        """Config errors exit with status 2"""
        self.assertEqual(cmd_run(self.write_config(extra=True), self.out), EXIT_CONFIG)
        self.assertEqual(cmd_run(os.path.join(self.tmp.name, 'nope.json'), self.out), EXIT_CONFIG)

    def test_diverged_run(self) -> None:
        """A diverging run exits with status 3 and keeps its partial trace"""
        runs = [{'label': 'boom', 'algorithm': 'ITD', 'K': 10, 'D': 2, 'beta': 1e12, 'x0': 1.0}]
        self.assertEqual(cmd_run(self.write_config(runs=runs), self.out), EXIT_RUNTIME)
        self.assertEqual(len(read_csv(os.path.join(self.out, 'boom.csv'))), 1)
        self.assertIn('Diverged', self.read_json('summary.json')['runs'][0]['error'])


class TestGradcheckCommand(HarnessTestCase):
    """Tests cmd_gradcheck"""

    def test_pass(self) -> None:
        """Converged estimators pass their thresholds"""
        self.assertEqual(cmd_gradcheck(self.write_config(gradcheck=GRADCHECK), self.out), EXIT_OK)
        rows = self.read_json('gradcheck.json')['checks']
        self.assertEqual([row['method'] for row in rows], ['AID', 'ITD'])
        self.assertTrue(all(row['passed'] for row in rows))
        self.assertIsNone(rows[1]['N'])

    def test_fail(self) -> None:
        """A shallow check over its threshold exits with status 1"""
        gradcheck = {'x': 0.5, 'checks': [{'method': 'ITD', 'D': 1, 'threshold': 1e-12}]}
        with bilevel_log.captured() as lines:
            self.assertEqual(cmd_gradcheck(self.write_config(gradcheck=gradcheck), self.out),
                             EXIT_FAILED)
        self.assertTrue(any(line.startswith('FAIL: ITD D=1') for line in lines))


class TestReportCommand(HarnessTestCase):
    """Tests cmd_report"""

    def test_report(self) -> None:
        """Writes report.json and report.txt"""
        config = self.write_config(gradcheck=GRADCHECK, acceptance={'only': [10]})
        self.assertEqual(cmd_report(config, self.out), EXIT_OK)
        report = self.read_json('report.json')
        self.assertTrue(report['passed'])
        self.assertEqual([c['number'] for c in report['criteria']], [10])
        self.assertEqual(set(report['runs']), {'aid', 'stoc'})
        with open(os.path.join(self.out, 'report.txt'), 'r', encoding='utf-8') as text_file:
            self.assertEqual(text_file.read().splitlines()[-1], 'ALL PASS')

    def test_unknown_criterion(self) -> None:
        """Selecting a criterion that does not exist is a config error"""
        config = self.write_config(acceptance={'only': [13]})
        self.assertEqual(cmd_report(config, self.out), EXIT_CONFIG)


class TestExitStatus(unittest.TestCase):
    """Tests the error code to exit status mapping"""

    def test_mapping(self) -> None:
        """Config, runtime and everything else"""
        self.assertEqual(exit_status(ErrorCode.CONFIG), EXIT_CONFIG)
        self.assertEqual(exit_status(ErrorCode.INVALID_PARAM), EXIT_CONFIG)
        self.assertEqual(exit_status(ErrorCode.NOT_SPD), EXIT_RUNTIME)
        self.assertEqual(exit_status(ErrorCode.NON_FINITE), EXIT_RUNTIME)
        self.assertEqual(exit_status(ErrorCode.NO_ORACLE), EXIT_FAILED)


class TestCommandLine(HarnessTestCase):
    """Tests the argument parser and main"""

    def test_main(self) -> None:
        """run and gradcheck through main"""
        config = self.write_config(gradcheck=GRADCHECK)
        self.assertEqual(main(['run', '-c', config, '-o', self.out, '-q']), EXIT_OK)
        self.assertEqual(main(['gradcheck', '--config', config, '--out', self.out, '-q']),
                         EXIT_OK)

    def test_env_default(self) -> None:
        """BILEVEL_CONFIG supplies the default config"""
        config = self.write_config()
        with mock.patch.dict(os.environ, {'BILEVEL_CONFIG': config}):
            args = build_parser().parse_args(['run'])
        self.assertEqual(args.config, config)
        self.assertEqual(args.parallel, 1)

    def test_missing_config(self) -> None:
        """No config at all is a usage error"""
        with mock.patch.dict(os.environ, {}, clear=True):
            with mock.patch('sys.stderr'):
                with self.assertRaises(SystemExit):
                    main(['run'])

    def test_bad_command(self) -> None:
        """Unknown commands are rejected"""
        with mock.patch('sys.stderr'):
            with self.assertRaises(SystemExit):
                build_parser().parse_args(['train'])


if __name__ == '__main__':
    unittest.main()
