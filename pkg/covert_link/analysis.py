"""Steganalysis and run metrics.

Magnitude distributions and the exact two-sample KS distance used to judge
how visible covert embedding is, plus aggregation of link event logs into
the throughput/retransmission/primary-impact metrics written to CSV.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from . import config
from .errors import LogParseError, ValidationError

logger = logging.getLogger(__name__)

CSV_COLUMNS = ['scenario', 'seed', 'snr_db', 'modulation', 'undetectable', 'covert_tput_bps',
               'retx_pct', 'primary_per', 'primary_tput_bps', 'ks_vs_clean']
REQUIRED_EVENT_KEYS = ('subframe', 'node', 'event')


def _as_sample(values) -> np.ndarray:
    sample = np.asarray(values, dtype=np.float64).ravel()
    if sample.size == 0:
        raise ValidationError("magnitude sample is empty")
    return sample


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance, exact over all merged points.

    Raises:
        ValidationError: If either sample is empty
    """
    a = np.sort(_as_sample(a))
    b = np.sort(_as_sample(b))
    points = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, points, side='right') / a.size
    cdf_b = np.searchsorted(b, points, side='right') / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def magnitude_histogram(sample, bins: int = 100,
                        value_range: Optional[Tuple[float, float]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Normalized PDF estimate of a magnitude sample.

    Returns:
        (densities, bin_edges); densities integrate to 1
    """
    if bins < 2:
        raise ValidationError(f"need at least 2 bins, got {bins}")
    sample = _as_sample(sample)
    return np.histogram(sample, bins=bins, range=value_range, density=True)


def _coerce(value: str) -> Any:
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def parse_event_line(line: str, line_number: int = 0) -> Dict[str, Any]:
    """Parse one 'key=value ...' event line.

    Raises:
        LogParseError: If a token is not key=value or a required key is missing
    """
    fields: Dict[str, Any] = {}
    for token in line.split():
        key, sep, value = token.partition('=')
        if not sep or not key:
            raise LogParseError(line_number, line, f"token {token!r} is not key=value")
        fields[key] = _coerce(value)
    for key in REQUIRED_EVENT_KEYS:
        if key not in fields:
            raise LogParseError(line_number, line, f"missing '{key}'")
    if not isinstance(fields['subframe'], int):
        raise LogParseError(line_number, line, "subframe is not an integer")
    return fields


@dataclass
class RunMetrics:
    covert_throughput_bps: float
    retx_pct: float
    primary_packet_error_rate: float
    primary_throughput_bps: float
    delivered_bytes: int = 0
    packets_sent: int = 0
    retransmissions: int = 0
    subframes: int = 0


def aggregate_metrics(lines: Iterable[str],
                      metadata: Mapping[str, Any]) -> Tuple[RunMetrics, Dict[str, Any]]:
    """Turn an event log and run metadata into metrics and a CSV row.

    Metadata keys used: subframes, primary_opportunities, primary_errored,
    primary_bits_ok, plus the identifying CSV columns (scenario, seed,
    snr_db, modulation, undetectable, ks_vs_clean).
    """
    delivered = sent = retransmitted = 0
    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        event = parse_event_line(line, line_number)
        if event['event'] == 'data_delivered':
            delivered += int(event.get('bytes', 0))
        elif event['event'] == 'packet_sent':
            sent += 1
            retransmitted += int(event.get('retx', 0))

    subframes = int(metadata.get('subframes', 0))
    seconds = subframes * config.SUBFRAME_SECONDS
    opportunities = int(metadata.get('primary_opportunities', 0))
    metrics = RunMetrics(
        covert_throughput_bps=delivered * 8 / seconds if seconds else 0.0,
        retx_pct=100.0 * retransmitted / sent if sent else 0.0,
        primary_packet_error_rate=int(metadata.get('primary_errored', 0)) / opportunities if opportunities else 0.0,
        primary_throughput_bps=int(metadata.get('primary_bits_ok', 0)) / seconds if seconds else 0.0,
        delivered_bytes=delivered,
        packets_sent=sent,
        retransmissions=retransmitted,
        subframes=subframes,
    )
    ks = metadata.get('ks_vs_clean')
    row = {
        'scenario': metadata.get('scenario', ''),
        'seed': metadata.get('seed', ''),
        'snr_db': metadata.get('snr_db', ''),
        'modulation': metadata.get('modulation', ''),
        'undetectable': int(bool(metadata.get('undetectable', False))),
        'covert_tput_bps': f"{metrics.covert_throughput_bps:.3f}",
        'retx_pct': f"{metrics.retx_pct:.4f}",
        'primary_per': f"{metrics.primary_packet_error_rate:.6f}",
        'primary_tput_bps': f"{metrics.primary_throughput_bps:.3f}",
        'ks_vs_clean': '' if ks is None else f"{ks:.6f}",
    }
    return metrics, row


def write_metrics_csv(path, rows: List[Mapping[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: row.get(key, '') for key in CSV_COLUMNS})
    return path
