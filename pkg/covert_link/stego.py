"""Covert packet embedder (transmitter) and detector/extractor (receiver).

A covert packet always starts at symbol 0 of a transmission opportunity.
The 32-byte header is modulated with the fixed 2-ASK header map (8 symbols
per byte); payload and CRC32 follow with the map selected by the header's
modulation and threshold flag. Trailing primary symbols stay untouched.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional, Protocol

import numpy as np

from . import config
from .codec import bits_to_bytes, bytes_to_bits
from .constellation import (AskConfig, Role, ask_config, ask_demodulate, ask_modulate,
                            flag_distances, qpsk_modulate, FLAG_TABLES)
from .errors import LengthError, ValidationError
from .packet import (HEADER_LEN, PAYLOAD_CRC_LEN, CovertHeader, Modulation, PacketType,
                     parse_body, parse_header)

logger = logging.getLogger(__name__)

HEADER_SYMBOLS = HEADER_LEN * 8


class Direction(str, Enum):
    DOWNLINK = 'downlink'
    UPLINK = 'uplink'


@dataclass
class TransmissionOpportunity:
    """One subframe's primary symbols available for embedding."""
    primary_symbols: np.ndarray
    direction: Direction
    subframe_index: int
    primary_bits: Optional[np.ndarray] = None

    @property
    def num_symbols(self) -> int:
        return int(self.primary_symbols.size)


@dataclass(frozen=True)
class EmbedPolicy:
    """Link-wide embedding settings shared by transmitter and receiver."""
    payload_modulation: Modulation = Modulation.ASK4
    undetectable: bool = False
    jitter: float = 0.0
    dummy_primary: bool = False
    flag_table: str = config.DEFAULT_FLAG_TABLE
    header_distance: float = config.HEADER_DISTANCE
    dummy_symbols: int = config.DEFAULT_OPPORTUNITY_SYMBOLS

    def __post_init__(self):
        object.__setattr__(self, 'payload_modulation', Modulation(self.payload_modulation))
        if self.flag_table not in FLAG_TABLES:
            raise ValidationError(f"unknown flag table '{self.flag_table}'")
        if not 0.0 < self.header_distance < 1.0:
            raise ValidationError(f"header distance {self.header_distance} out of range")
        if self.dummy_symbols < 0:
            raise ValidationError("dummy_symbols must be non-negative")
        if self.jitter < 0.0:
            raise ValidationError("jitter must be non-negative")
        if self.jitter > 0.0 and self.jitter >= self.min_payload_distance / 2.0:
            raise ValidationError(
                f"jitter {self.jitter} must stay below half the minimum distance {self.min_payload_distance}")

    @property
    def min_payload_distance(self) -> float:
        """Smallest level gap any packet under this policy can use."""
        orders = (2, 4)
        if self.undetectable:
            return min(min(flag_distances(order, self.flag_table)) for order in orders)
        return min(1.0 / order for order in orders)


@dataclass(frozen=True)
class TransmitRecord:
    """What was embedded in one opportunity, for ARQ bookkeeping."""
    header: CovertHeader
    wire: bytes
    retransmission: bool = False
    repeat: bool = False

    @property
    def packet_number(self) -> int:
        return self.header.packet_number

    @property
    def packet_type(self) -> PacketType:
        return self.header.packet_type

    @property
    def payload_len(self) -> int:
        return self.header.payload_len


class CovertSource(Protocol):
    """Anything that can hand out the next covert packet for an opportunity."""

    def wants_to_send(self) -> bool: ...

    def next_packet(self, num_symbols: int, modulation: Modulation,
                    threshold_flag: int) -> Optional[TransmitRecord]: ...


class StegoBlock(NamedTuple):
    symbols: np.ndarray
    record: Optional[TransmitRecord]
    dummy: bool = False


def _bits_per_symbol(order: int) -> int:
    return int(math.log2(order))


def capacity(num_symbols: int, order: int) -> Optional[int]:
    """Payload bytes that fit in an opportunity, or None when no packet fits.

    The header takes 256 symbols; payload and CRC32 use log2(order) bits
    per symbol.
    """
    if num_symbols < HEADER_SYMBOLS:
        return None
    budget = (num_symbols - HEADER_SYMBOLS) * _bits_per_symbol(order) // 8 - PAYLOAD_CRC_LEN
    return budget if budget >= 0 else None


def payload_symbols(payload_len: int, order: int) -> int:
    """Symbols carrying payload and CRC32 at the given order."""
    return math.ceil((payload_len + PAYLOAD_CRC_LEN) * 8 / _bits_per_symbol(order))


def symbols_needed(payload_len: int, order: int) -> int:
    return HEADER_SYMBOLS + payload_symbols(payload_len, order)


def header_config(policy: EmbedPolicy) -> AskConfig:
    return ask_config(2, 0, Role.HEADER, header_distance=policy.header_distance)


def payload_config(header: CovertHeader, policy: EmbedPolicy) -> AskConfig:
    """Amplitude map for the payload part of a packet with this header."""
    order = header.modulation.order
    if policy.undetectable:
        return ask_config(order, header.threshold_flag, Role.PAYLOAD_UNDETECTABLE,
                          flag_table=policy.flag_table)
    return ask_config(order, header.threshold_flag, Role.PAYLOAD_FIXED)


def embed_packet(symbols: np.ndarray, wire: bytes, header: CovertHeader, policy: EmbedPolicy,
                 rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Scale the leading primary symbols by the packet's amplitude factors.

    Args:
        symbols: Clean primary symbols of the opportunity
        wire: Full packet wire image
        header: The header the wire image was built from
        policy: Embedding policy (header distance, flag table, jitter)
        rng: Random generator for payload jitter

    Returns:
        A new block; symbols past the packet are copied unchanged

    Raises:
        LengthError: If the packet does not fit the block
    """
    header_amplitudes = ask_modulate(bytes_to_bits(wire[:HEADER_LEN]), header_config(policy))
    payload_amplitudes = ask_modulate(bytes_to_bits(wire[HEADER_LEN:]), payload_config(header, policy),
                                      jitter=policy.jitter, rng=rng)
    amplitudes = np.concatenate([header_amplitudes, payload_amplitudes])
    if amplitudes.size > symbols.size:
        raise LengthError(f"packet needs {amplitudes.size} symbols, opportunity has {symbols.size}")
    block = np.array(symbols, dtype=np.complex128, copy=True)
    block[:amplitudes.size] *= amplitudes
    return block


def generate_and_embed(opportunity: TransmissionOpportunity, session: CovertSource,
                       policy: EmbedPolicy, rng: np.random.Generator) -> StegoBlock:
    """Embed the session's next covert packet into an opportunity.

    Draws the threshold flag uniformly in undetectable mode. When dummy
    primary traffic is enabled, an empty opportunity is replaced by random
    QPSK symbols whenever the session has something to send.

    Returns:
        The block to transmit, the transmit record (None on pass-through)
        and whether the primary symbols were synthesized
    """
    symbols = opportunity.primary_symbols
    dummy = False
    if symbols.size == 0 and policy.dummy_primary and policy.dummy_symbols > 0 and session.wants_to_send():
        symbols = qpsk_modulate(rng.integers(0, 2, 2 * policy.dummy_symbols, dtype=np.uint8))
        dummy = True
    if symbols.size < HEADER_SYMBOLS:
        return StegoBlock(symbols, None, dummy)

    flag = int(rng.integers(0, 4)) if policy.undetectable else 0
    record = session.next_packet(int(symbols.size), policy.payload_modulation, flag)
    if record is None:
        return StegoBlock(symbols, None, dummy)
    logger.debug(f"Embedding pkt {record.packet_number} type {record.packet_type.name} "
                 f"({record.payload_len} bytes, flag {record.header.threshold_flag}) "
                 f"in subframe {opportunity.subframe_index}")
    return StegoBlock(embed_packet(symbols, record.wire, record.header, policy, rng), record, dummy)


def detect(block: np.ndarray, policy: EmbedPolicy,
           max_payload_len: int = config.MAX_PAYLOAD_LEN) -> Optional[CovertHeader]:
    """Demodulate the first 256 magnitudes with the header map and parse them.

    Returns:
        The header, or None when no covert packet is detected
    """
    if block is None or len(block) < HEADER_SYMBOLS:
        return None
    bits = ask_demodulate(np.abs(block[:HEADER_SYMBOLS]), header_config(policy))
    return parse_header(bits_to_bytes(bits), max_payload_len)


def extract(block: np.ndarray, header: CovertHeader, policy: EmbedPolicy) -> Optional[bytes]:
    """Demodulate and verify the payload announced by a detected header.

    Returns:
        The payload bytes, or None on crc-failure (including a payload
        running past the end of the block)
    """
    count = payload_symbols(header.payload_len, header.modulation.order)
    if len(block) < HEADER_SYMBOLS + count:
        return None
    cfg = payload_config(header, policy)
    bits = ask_demodulate(np.abs(block[HEADER_SYMBOLS:HEADER_SYMBOLS + count]), cfg)
    usable = bits.size - bits.size % 8
    return parse_body(bits_to_bytes(bits[:usable]), header)
