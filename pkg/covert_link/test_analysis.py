import csv
import logging
import tempfile
import unittest
from pathlib import Path

import numpy as np
from scipy import stats

from covert_link.analysis import (CSV_COLUMNS, aggregate_metrics, ks_distance, magnitude_histogram,
                                  parse_event_line, write_metrics_csv)
from covert_link.errors import LogParseError, ValidationError

# Configure logging
logging.basicConfig(level=logging.ERROR, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


def brute_force_ks(a, b):
    best = 0.0
    for x in list(a) + list(b):
        fa = sum(1 for v in a if v <= x) / len(a)
        fb = sum(1 for v in b if v <= x) / len(b)
        best = max(best, abs(fa - fb))
    return best


class TestKsDistance(unittest.TestCase):
    def test_identical(self):
        sample = np.random.default_rng(0).random(500)
        self.assertEqual(ks_distance(sample, sample), 0.0)

    def test_disjoint(self):
        self.assertEqual(ks_distance([0, 0, 0], [1, 1, 1]), 1.0)

    def test_shifted(self):
        self.assertAlmostEqual(ks_distance([1, 2, 3], [2, 3, 4]), 1 / 3, places=12)

    def test_brute_force_oracle(self):
        """Test agreement with ECDF enumeration on 100 random small pairs, ties included"""
        rng = np.random.default_rng(1)
        for _ in range(100):
            a = rng.integers(0, 10, int(rng.integers(1, 15)))
            b = rng.integers(0, 10, int(rng.integers(1, 15)))
            self.assertAlmostEqual(ks_distance(a, b), brute_force_ks(a, b), delta=1e-12)

    def test_matches_scipy(self):
        rng = np.random.default_rng(2)
        a = rng.normal(1.0, 0.1, 3000)
        b = rng.normal(1.02, 0.12, 2000)
        self.assertAlmostEqual(ks_distance(a, b), stats.ks_2samp(a, b).statistic, places=12)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a, b = rng.random(50), rng.random(70) * 1.3
            d = ks_distance(a, b)
            self.assertEqual(d, ks_distance(b, a))
            self.assertGreaterEqual(d, 0.0)
            self.assertLessEqual(d, 1.0)

    def test_empty_sample(self):
        with self.assertRaises(ValidationError):
            ks_distance([], [1.0])
        with self.assertRaises(ValidationError):
            ks_distance([1.0], np.array([]))


class TestMagnitudeHistogram(unittest.TestCase):
    def test_integrates_to_one(self):
        sample = np.abs(np.random.default_rng(4).normal(1.0, 0.1, 10000))
        densities, edges = magnitude_histogram(sample, bins=50)
        self.assertAlmostEqual(float(np.sum(densities * np.diff(edges))), 1.0, delta=1e-9)

    def test_constant_sample(self):
        densities, _ = magnitude_histogram(np.full(100, 0.5), bins=10)
        self.assertEqual(int(np.count_nonzero(densities)), 1)

    def test_four_ask_modes(self):
        """Test that a noisy 4-ASK magnitude sample shows peaks at the four levels"""
        rng = np.random.default_rng(5)
        levels = np.array([0.25, 0.5, 0.75, 1.0])
        sample = levels[rng.integers(0, 4, 40000)] + rng.normal(0.0, 0.02, 40000)
        densities, edges = magnitude_histogram(sample, bins=48, value_range=(0.0, 1.2))
        centers = (edges[:-1] + edges[1:]) / 2
        for level in levels:
            peak = densities[np.argmin(np.abs(centers - level))]
            valley = densities[np.argmin(np.abs(centers - (level - 0.125)))]
            self.assertGreater(peak, 10 * valley)

    def test_invalid(self):
        with self.assertRaises(ValidationError):
            magnitude_histogram([1.0, 2.0], bins=1)
        with self.assertRaises(ValidationError):
            magnitude_histogram([], bins=10)


class TestEventLines(unittest.TestCase):
    def test_parse(self):
        event = parse_event_line('subframe=12 node=bs event=packet_sent pkt=3 type=2 retx=1 reason=x_y')
        self.assertEqual(event['subframe'], 12)
        self.assertEqual(event['node'], 'bs')
        self.assertEqual(event['retx'], 1)
        self.assertEqual(event['reason'], 'x_y')

    def test_bad_token(self):
        with self.assertRaises(LogParseError) as ctx:
            parse_event_line('subframe=1 node=bs event=ack_sent garbage', 7)
        self.assertEqual(ctx.exception.line_number, 7)
        self.assertIn('line 7', str(ctx.exception))

    def test_missing_key(self):
        with self.assertRaises(LogParseError):
            parse_event_line('subframe=1 event=ack_sent')

    def test_non_integer_subframe(self):
        with self.assertRaises(LogParseError):
            parse_event_line('subframe=x node=bs event=ack_sent')


class TestAggregateMetrics(unittest.TestCase):
    def test_throughput_example(self):
        """Test that 36000 bytes in 1000 subframes is 288 kbps"""
        lines = ['subframe=10 node=ue event=data_delivered pkt=1 bytes=20000',
                 'subframe=900 node=ue event=data_delivered pkt=2 bytes=16000']
        metrics, row = aggregate_metrics(lines, {'subframes': 1000})
        self.assertAlmostEqual(metrics.covert_throughput_bps, 288000.0)
        self.assertEqual(row['covert_tput_bps'], '288000.000')
        self.assertEqual(metrics.delivered_bytes, 36000)

    def test_retransmission_percentage(self):
        lines = ['subframe=0 node=bs event=packet_sent pkt=0 type=4 retx=0 repeat=0',
                 'subframe=1 node=bs event=packet_sent pkt=0 type=4 retx=1 repeat=0',
                 'subframe=2 node=ue event=packet_sent pkt=0 type=0 retx=0 repeat=1',
                 '',
                 'subframe=3 node=bs event=packet_sent pkt=1 type=6 retx=0 repeat=0']
        metrics, row = aggregate_metrics(lines, {'subframes': 4})
        self.assertEqual(metrics.packets_sent, 4)
        self.assertEqual(metrics.retransmissions, 1)
        self.assertEqual(row['retx_pct'], '25.0000')

    def test_zero_losses(self):
        lines = ['subframe=0 node=bs event=packet_sent pkt=0 type=4 retx=0 repeat=0']
        metrics, _ = aggregate_metrics(lines, {'subframes': 1})
        self.assertEqual(metrics.retx_pct, 0.0)

    def test_primary_metrics(self):
        metadata = {'subframes': 1000, 'primary_opportunities': 2000, 'primary_errored': 20,
                    'primary_bits_ok': 2_400_000, 'scenario': 'demo', 'seed': 3, 'snr_db': 20.0,
                    'modulation': 4, 'undetectable': True, 'ks_vs_clean': 0.0123456789}
        metrics, row = aggregate_metrics([], metadata)
        self.assertAlmostEqual(metrics.primary_packet_error_rate, 0.01)
        self.assertAlmostEqual(metrics.primary_throughput_bps, 2_400_000.0)
        self.assertEqual(row['primary_per'], '0.010000')
        self.assertEqual(row['undetectable'], 1)
        self.assertEqual(row['ks_vs_clean'], '0.012346')
        self.assertEqual(list(row), CSV_COLUMNS)

    def test_empty_run(self):
        metrics, row = aggregate_metrics([], {})
        self.assertEqual(metrics.covert_throughput_bps, 0.0)
        self.assertEqual(row['ks_vs_clean'], '')

    def test_malformed_line_names_line(self):
        lines = ['subframe=0 node=bs event=packet_sent retx=0', 'oops']
        with self.assertRaises(LogParseError) as ctx:
            aggregate_metrics(lines, {'subframes': 1})
        self.assertEqual(ctx.exception.line_number, 2)

    def test_deterministic(self):
        lines = ['subframe=5 node=ue event=data_delivered pkt=1 bytes=100']
        self.assertEqual(aggregate_metrics(lines, {'subframes': 10})[1],
                         aggregate_metrics(lines, {'subframes': 10})[1])


class TestMetricsCsv(unittest.TestCase):
    def test_write(self):
        with tempfile.TemporaryDirectory() as tmp:
            _, row = aggregate_metrics([], {'subframes': 10, 'scenario': 's', 'seed': 1})
            path = write_metrics_csv(Path(tmp) / 'out' / 'metrics.csv', [row, row])
            with open(path, newline='', encoding='utf-8') as f:
                rows = list(csv.reader(f))
        self.assertEqual(rows[0], CSV_COLUMNS)
        self.assertEqual(len(rows), 3)
        self.assertEqual(rows[1][0], 's')


if __name__ == '__main__':
    unittest.main()
