import io
import json
import logging
import tempfile
import unittest
from contextlib import redirect_stdout
from pathlib import Path

from covert_link.analysis import CSV_COLUMNS
from covert_link.main import (EXIT_AUTH_FAILED, EXIT_CONFIG_ERROR, EXIT_SUCCESS, build_parser, main)

# Configure logging
logging.basicConfig(level=logging.ERROR, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


def run_cli(*argv):
    buffer = io.StringIO()
    with redirect_stdout(buffer):
        code = main(list(argv))
    return code, buffer.getvalue()


class TestCommandLine(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write_config(self, data):
        path = self.dir / 'scenario.json'
        path.write_text(json.dumps(data), encoding='utf-8')
        return path

    def test_parser_commands(self):
        args = build_parser().parse_args(['sweep', '--preset', 'noiseless-smoke', '--snr', '8:14:2'])
        self.assertEqual(args.command, 'sweep')
        self.assertEqual(args.mods, '2,4')
        self.assertEqual(args.trials, 1)

    def test_presets(self):
        code, output = run_cli('presets')
        self.assertEqual(code, EXIT_SUCCESS)
        self.assertIn('noiseless-smoke', output)
        self.assertIn('lossy-arq', output)
        self.assertIn('randomized (standard)', output)

    def test_run_from_config(self):
        config = self.write_config({'name': 'cli', 'channel': {'snr_db': 'inf'}, 'covert_size': 2000,
                                    'duration': 500})
        out = self.dir / 'out'
        code, output = run_cli('run', '--config', str(config), '--seed', '3', '--out', str(out))
        self.assertEqual(code, EXIT_SUCCESS)
        self.assertIn('transfer complete', output)
        for name in ('delivered.bin', 'events.log', 'metrics.csv'):
            self.assertTrue((out / name).exists(), name)
        self.assertEqual(len((out / 'delivered.bin').read_bytes()), 2000)
        header = (out / 'metrics.csv').read_text(encoding='utf-8').splitlines()[0]
        self.assertEqual(header.split(','), CSV_COLUMNS)

    def test_run_is_reproducible(self):
        config = self.write_config({'channel': {'snr_db': 34}, 'covert_size': 1500, 'duration': 500})
        for name in ('a', 'b'):
            run_cli('run', '--config', str(config), '--seed', '5', '--out', str(self.dir / name))
        for artifact in ('delivered.bin', 'events.log', 'metrics.csv'):
            self.assertEqual((self.dir / 'a' / artifact).read_bytes(), (self.dir / 'b' / artifact).read_bytes())

    def test_run_multiple_modulations(self):
        config = self.write_config({'channel': {'snr_db': 'inf'}, 'covert_size': 1000, 'duration': 500,
                                    'modulations': [2, 4]})
        out = self.dir / 'mods'
        code, _ = run_cli('run', '--config', str(config), '--out', str(out))
        self.assertEqual(code, EXIT_SUCCESS)
        self.assertTrue((out / 'mod2' / 'delivered.bin').exists())
        self.assertTrue((out / 'mod4' / 'delivered.bin').exists())
        self.assertEqual(len((out / 'metrics.csv').read_text(encoding='utf-8').splitlines()), 3)

    def test_auth_failure_exit_code(self):
        code, output = run_cli('run', '--preset', 'mismatched-psk', '--out', str(self.dir / 'mm'))
        self.assertEqual(code, EXIT_AUTH_FAILED)
        self.assertIn('auth_failed', output)

    def test_config_errors(self):
        self.assertEqual(run_cli('run', '--out', str(self.dir))[0], EXIT_CONFIG_ERROR)
        self.assertEqual(run_cli('run', '--config', str(self.dir / 'missing.json'))[0], EXIT_CONFIG_ERROR)
        self.assertEqual(run_cli('run', '--preset', 'unknown')[0], EXIT_CONFIG_ERROR)
        bad = self.write_config({'duration': 0})
        self.assertEqual(run_cli('run', '--config', str(bad))[0], EXIT_CONFIG_ERROR)

    def test_no_command(self):
        code, _ = run_cli()
        self.assertEqual(code, EXIT_CONFIG_ERROR)

    def test_sweep(self):
        config = self.write_config({'covert_size': 500, 'duration': 500})
        out = self.dir / 'sweep'
        code, _ = run_cli('sweep', '--config', str(config), '--snr', '34:40:6', '--mods', '2,4', '--out', str(out))
        self.assertEqual(code, EXIT_SUCCESS)
        lines = (out / 'sweep.csv').read_text(encoding='utf-8').splitlines()
        self.assertEqual(len(lines), 5)

    def test_bad_mods(self):
        config = self.write_config({})
        code, _ = run_cli('sweep', '--config', str(config), '--snr', '30', '--mods', 'two')
        self.assertEqual(code, EXIT_CONFIG_ERROR)

    def test_analyze_self_is_zero(self):
        config = self.write_config({'channel': {'snr_db': 50}, 'covert_size': 1000, 'duration': 500,
                                    'capture': True, 'capture_symbols': 6000,
                                    'policy': {'undetectable': True}})
        out = self.dir / 'cap'
        self.assertEqual(run_cli('run', '--config', str(config), '--out', str(out))[0], EXIT_SUCCESS)
        capture = str(out / 'capture_stego.iq')
        code, output = run_cli('analyze', '--capture', capture, '--reference', capture)
        self.assertEqual(code, EXIT_SUCCESS)
        self.assertEqual(output.strip(), '0')
        code, output = run_cli('analyze', '--capture', capture, '--reference', str(out / 'capture_clean.iq'))
        self.assertGreater(float(output.strip()), 0.0)

    def test_analyze_missing_capture(self):
        missing = str(self.dir / 'absent.iq')
        code, _ = run_cli('analyze', '--capture', missing, '--reference', missing)
        self.assertEqual(code, EXIT_CONFIG_ERROR)

    def test_steganalysis_reports_target(self):
        code, output = run_cli('steganalysis', '--snr', '20', '--symbols', '12000', '--flag-table', 'standard')
        self.assertEqual(code, EXIT_SUCCESS)
        self.assertIn('Below the 3x KS reduction target', output)

    def test_steganalysis(self):
        out = self.dir / 'stega'
        code, output = run_cli('steganalysis', '--snr', '20', '--symbols', '12000', '--out', str(out))
        self.assertEqual(code, EXIT_SUCCESS)
        self.assertIn('KS reduction factor', output)
        for name in ('capture_fixed.iq', 'capture_undetectable.iq', 'capture_clean.iq'):
            self.assertTrue((out / name).exists(), name)


if __name__ == '__main__':
    unittest.main()
