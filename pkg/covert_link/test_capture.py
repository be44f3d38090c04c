import json
import logging
import tempfile
import unittest
from pathlib import Path

import numpy as np

from covert_link.capture import SIDECAR_KEYS, read_capture, sidecar_path, write_capture
from covert_link.errors import ConfigError, LengthError

# Configure logging
logging.basicConfig(level=logging.ERROR, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


class TestCapture(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_layout_is_interleaved_float32(self):
        path = write_capture(self.dir / 'a.iq', np.array([1 + 2j, -0.5 - 0.25j]))
        raw = path.read_bytes()
        self.assertEqual(len(raw), 16)
        np.testing.assert_array_equal(np.frombuffer(raw, dtype='<f4'), [1.0, 2.0, -0.5, -0.25])

    def test_write_then_read(self):
        symbols = np.random.default_rng(0).normal(size=500) + 1j * np.random.default_rng(1).normal(size=500)
        metadata = {'seed': 7, 'scenario': 'static', 'snr_db': 20.0, 'modulation': 4, 'undetectable': True}
        path = write_capture(self.dir / 'nested' / 'stego.iq', symbols, metadata)
        read, sidecar = read_capture(path)
        np.testing.assert_allclose(read, symbols.astype(np.complex64), rtol=1e-6)
        self.assertEqual(sidecar['sample_count'], 500)
        self.assertEqual(sidecar['scenario'], 'static')
        self.assertEqual(set(SIDECAR_KEYS), set(sidecar))

    def test_sidecar_defaults(self):
        path = write_capture(self.dir / 'b.iq', np.ones(3, dtype=complex))
        with open(sidecar_path(path), encoding='utf-8') as f:
            sidecar = json.load(f)
        self.assertEqual(sidecar['sample_count'], 3)
        self.assertIsNone(sidecar['seed'])

    def test_missing_sidecar(self):
        path = self.dir / 'raw.iq'
        np.array([0.5, 0.5], dtype='<f4').tofile(path)
        symbols, metadata = read_capture(path)
        self.assertEqual(metadata, {})
        np.testing.assert_allclose(symbols, [0.5 + 0.5j])

    def test_missing_capture(self):
        with self.assertRaises(ConfigError):
            read_capture(self.dir / 'absent.iq')

    def test_odd_float_count(self):
        path = self.dir / 'odd.iq'
        np.array([1.0, 2.0, 3.0], dtype='<f4').tofile(path)
        with self.assertRaises(LengthError):
            read_capture(path)

    def test_count_mismatch_warns(self):
        path = write_capture(self.dir / 'c.iq', np.ones(4, dtype=complex))
        np.ones(2, dtype='<f4').tofile(path)
        with self.assertLogs('covert_link.capture', level='WARNING'):
            symbols, _ = read_capture(path)
        self.assertEqual(symbols.size, 1)


if __name__ == '__main__':
    unittest.main()
