"""Primary QPSK mapping and covert M-ASK amplitude maps."""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from . import config
from .codec import BitStream
from .errors import LengthError, ValidationError

logger = logging.getLogger(__name__)

SQRT_HALF = 1.0 / math.sqrt(2.0)
ASK_ORDERS = (2, 4)

# Distance per threshold flag {0, 1, 2, 3}, per covert modulation order.
FLAG_TABLES: Dict[str, Dict[int, Tuple[float, ...]]] = {
    'standard': {
        4: (0.04, 0.08, 0.12, 0.16),
        2: (0.08, 0.16, 0.24, 0.32),
    },
    'stealth': {
        4: (0.004, 0.008, 0.012, 0.016),
        2: (0.008, 0.016, 0.024, 0.032),
    },
}


class Role(str, Enum):
    """What part of a covert packet an AskConfig demodulates."""
    HEADER = 'header'
    PAYLOAD_FIXED = 'payload-fixed'
    PAYLOAD_UNDETECTABLE = 'payload-undetectable'


@dataclass(frozen=True)
class AskConfig:
    """Amplitude levels and decision thresholds of an M-ASK covert map."""
    order: int
    distance: float
    levels: Tuple[float, ...]
    thresholds: Tuple[float, ...]

    @classmethod
    def from_distance(cls, order: int, distance: float) -> 'AskConfig':
        """Build the level set {1 - (M-1-k)·d} and its midpoint thresholds.

        Raises:
            ValidationError: If the order is unsupported or the distance would
                put the lowest level at or below zero
        """
        if order not in ASK_ORDERS:
            raise ValidationError(f"unsupported covert order {order}")
        if not 0.0 < distance < 1.0 / (order - 1):
            raise ValidationError(f"distance {distance} out of range for {order}-ASK")
        levels = tuple(1.0 - (order - 1 - k) * distance for k in range(order))
        thresholds = tuple((levels[k] + levels[k + 1]) / 2.0 for k in range(order - 1))
        return cls(order, distance, levels, thresholds)

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.order))

    @property
    def min_gap(self) -> float:
        return self.distance


def flag_distances(order: int, flag_table: str = config.DEFAULT_FLAG_TABLE) -> Tuple[float, ...]:
    """Return the four undetectable-mode distances for an order."""
    try:
        return FLAG_TABLES[flag_table][order]
    except KeyError:
        raise ValidationError(f"no flag table '{flag_table}' for {order}-ASK")


def ask_config(order: int, flag: int, role: Role,
               flag_table: str = config.DEFAULT_FLAG_TABLE,
               header_distance: float = config.HEADER_DISTANCE) -> AskConfig:
    """Select the covert amplitude map for a packet part.

    Args:
        order: Covert modulation order (2 or 4); ignored for the header
        flag: Threshold flag in {0, 1, 2, 3}; only used in undetectable mode
        role: Header, fixed payload, or undetectable payload
        flag_table: Name of the distance table for undetectable mode
        header_distance: Level spacing of the fixed 2-ASK header map

    Returns:
        The AskConfig the transmitter modulates with and the receiver
        demodulates with
    """
    role = Role(role)
    if role is Role.HEADER:
        return AskConfig.from_distance(2, header_distance)
    if role is Role.PAYLOAD_FIXED:
        return AskConfig.from_distance(order, 1.0 / order)
    if not 0 <= flag <= 3:
        raise ValidationError(f"threshold flag {flag} out of range")
    return AskConfig.from_distance(order, flag_distances(order, flag_table)[flag])


def qpsk_modulate(bits: BitStream) -> np.ndarray:
    """Gray-map bit pairs (b1, b0) onto unit-energy QPSK symbols.

    Raises:
        LengthError: If the bit count is odd
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % 2:
        raise LengthError(f"QPSK needs an even bit count, got {bits.size}")
    pairs = bits.reshape(-1, 2).astype(np.float64)
    return ((1.0 - 2.0 * pairs[:, 0]) + 1j * (1.0 - 2.0 * pairs[:, 1])) * SQRT_HALF


def qpsk_demodulate(symbols: np.ndarray) -> BitStream:
    """Hard quadrant decision; amplitude is ignored and zero maps to bit 0."""
    symbols = np.asarray(symbols)
    bits = np.empty(2 * symbols.size, dtype=np.uint8)
    bits[0::2] = symbols.real < 0
    bits[1::2] = symbols.imag < 0
    return bits


def _group_values(bits: np.ndarray, width: int) -> np.ndarray:
    weights = 1 << np.arange(width - 1, -1, -1)
    return bits.reshape(-1, width) @ weights


def ask_modulate(bits: BitStream, cfg: AskConfig, jitter: float = 0.0,
                 rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Map each log2(M)-bit group (MSB-first) to levels[group value].

    Args:
        bits: Covert bits
        cfg: Amplitude map
        jitter: Half-width of optional uniform amplitude jitter
        rng: Random generator, required when jitter > 0

    Returns:
        One amplitude factor per group, never above 1.0

    Raises:
        LengthError: If the bit count is not a multiple of log2(M)
        ValidationError: If jitter does not leave a decision margin
    """
    bits = np.asarray(bits, dtype=np.int64)
    width = cfg.bits_per_symbol
    if bits.size % width:
        raise LengthError(f"{bits.size} bits do not split into {width}-bit groups")
    amplitudes = np.asarray(cfg.levels)[_group_values(bits, width)]
    if jitter > 0.0:
        if jitter >= cfg.min_gap / 2.0:
            raise ValidationError(f"jitter {jitter} leaves no margin for distance {cfg.distance}")
        if rng is None:
            raise ValidationError("jitter requires a random generator")
        amplitudes = np.minimum(amplitudes + rng.uniform(-jitter, jitter, amplitudes.size), 1.0)
    return amplitudes


def ask_demodulate(amplitudes: np.ndarray, cfg: AskConfig) -> BitStream:
    """Slice amplitudes against the thresholds and emit level indices as bits.

    A value exactly on a threshold resolves to the higher level.
    """
    indices = np.searchsorted(np.asarray(cfg.thresholds), np.asarray(amplitudes, dtype=np.float64),
                              side='right')
    width = cfg.bits_per_symbol
    shifts = np.arange(width - 1, -1, -1)
    return ((indices[:, None] >> shifts) & 1).astype(np.uint8).ravel()
