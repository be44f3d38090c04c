"""Byte-exact covert packet wire format.

Header layout (32 bytes):
    0..3    payload length L_P, big-endian
    4       payload CRC length L_PC (always 4)
    5..28   reserved, zero
    29..30  info: [packet_number:10][modulation:1][threshold_flag:2][packet_type:3]
    31      crc8 over bytes 0..30

A packet is header || payload || crc32(payload).
"""

import logging
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Optional

from . import config
from .codec import crc8, crc32
from .errors import ValidationError

logger = logging.getLogger(__name__)

HEADER_LEN = 32
PAYLOAD_CRC_LEN = 4
MIN_PACKET_LEN = HEADER_LEN + PAYLOAD_CRC_LEN
SEQ_MODULUS = 1024
MAX_PAYLOAD_FIELD = 2 ** 32 - 1
CHALLENGE_LEN = 32
ADDRESS_INFO_LEN = 12
MSIN_LEN = 5


class PacketType(IntEnum):
    ACK = 0
    NACK = 1
    DATA = 2
    ADDRESS = 3
    CHALLENGE = 4
    RESPONSE = 5
    AUTH_ACK = 6
    RESERVED = 7


# Types that consume a sequence number and are retransmitted until answered.
RELIABLE_TYPES = frozenset({PacketType.DATA, PacketType.ADDRESS,
                            PacketType.CHALLENGE, PacketType.AUTH_ACK})


class Modulation(IntEnum):
    ASK2 = 0
    ASK4 = 1

    @property
    def order(self) -> int:
        return 2 if self is Modulation.ASK2 else 4

    @classmethod
    def from_order(cls, order: int) -> 'Modulation':
        if order == 2:
            return cls.ASK2
        if order == 4:
            return cls.ASK4
        raise ValidationError(f"no covert modulation of order {order}")


@dataclass(frozen=True)
class CovertHeader:
    """Decoded header fields. header_crc is filled in by parse_header."""
    payload_len: int
    packet_number: int
    modulation: Modulation
    threshold_flag: int
    packet_type: PacketType
    crc_len: int = PAYLOAD_CRC_LEN
    header_crc: Optional[int] = field(default=None, compare=False)

    @property
    def packet_len(self) -> int:
        return HEADER_LEN + self.payload_len + self.crc_len


@dataclass(frozen=True)
class AddressInfo:
    """Type-3 payload: source/destination MSINs and the transfer's packet count."""
    source_msin: int
    destination_msin: int
    total_packets: int

    def to_bytes(self) -> bytes:
        for name in ('source_msin', 'destination_msin'):
            if not 0 <= getattr(self, name) < 1 << (8 * MSIN_LEN):
                raise ValidationError(f"{name} does not fit in {MSIN_LEN} bytes")
        if not 0 <= self.total_packets <= 0xFFFF:
            raise ValidationError(f"total_packets {self.total_packets} does not fit in 16 bits")
        return (self.source_msin.to_bytes(MSIN_LEN, 'big')
                + self.destination_msin.to_bytes(MSIN_LEN, 'big')
                + struct.pack('>H', self.total_packets))

    @classmethod
    def from_bytes(cls, data: bytes) -> 'AddressInfo':
        if len(data) != ADDRESS_INFO_LEN:
            raise ValidationError(f"address info must be {ADDRESS_INFO_LEN} bytes, got {len(data)}")
        return cls(int.from_bytes(data[0:5], 'big'), int.from_bytes(data[5:10], 'big'),
                   struct.unpack('>H', data[10:12])[0])


def build_header(header: CovertHeader) -> bytes:
    """Serialize header fields into the 32-byte wire header.

    Args:
        header: Header fields; header_crc is ignored and recomputed

    Returns:
        The 32 header bytes

    Raises:
        ValidationError: If a field is out of range
    """
    if not 0 <= header.payload_len <= MAX_PAYLOAD_FIELD:
        raise ValidationError(f"payload length {header.payload_len} out of range")
    if not 0 <= header.packet_number < SEQ_MODULUS:
        raise ValidationError(f"packet number {header.packet_number} out of range")
    if not 0 <= header.threshold_flag <= 3:
        raise ValidationError(f"threshold flag {header.threshold_flag} out of range")
    if not 0 <= int(header.packet_type) <= 7:
        raise ValidationError(f"packet type {header.packet_type} out of range")
    if int(header.modulation) not in (0, 1):
        raise ValidationError(f"modulation flag {header.modulation} out of range")
    if header.crc_len != PAYLOAD_CRC_LEN:
        raise ValidationError(f"crc length must be {PAYLOAD_CRC_LEN}")
    info = ((header.packet_number << 6) | (int(header.modulation) << 5)
            | (header.threshold_flag << 3) | int(header.packet_type))
    prefix = struct.pack('>IB', header.payload_len, header.crc_len) + bytes(24) + struct.pack('>H', info)
    return prefix + bytes([crc8(prefix)])


def parse_header(data: bytes, max_payload_len: int = config.MAX_PAYLOAD_LEN) -> Optional[CovertHeader]:
    """Decode and sanity-check a 32-byte header.

    Args:
        data: Exactly 32 candidate header bytes
        max_payload_len: Largest payload length accepted

    Returns:
        The header, or None when no covert packet is detected
    """
    if len(data) != HEADER_LEN:
        return None
    if crc8(data[:HEADER_LEN - 1]) != data[HEADER_LEN - 1]:
        return None
    payload_len, crc_len = struct.unpack('>IB', data[0:5])
    info = struct.unpack('>H', data[29:31])[0]
    packet_type = info & 0x7
    if crc_len != PAYLOAD_CRC_LEN or packet_type > PacketType.AUTH_ACK or payload_len > max_payload_len:
        logger.debug(f"Header passed CRC8 but failed sanity checks (type={packet_type}, L_P={payload_len})")
        return None
    return CovertHeader(payload_len=payload_len,
                        packet_number=info >> 6,
                        modulation=Modulation((info >> 5) & 1),
                        threshold_flag=(info >> 3) & 0x3,
                        packet_type=PacketType(packet_type),
                        crc_len=crc_len,
                        header_crc=data[HEADER_LEN - 1])


def build_packet(packet_type: PacketType, payload: bytes, packet_number: int,
                 modulation: Modulation, threshold_flag: int) -> bytes:
    """Emit header || payload || crc32(payload)."""
    header = CovertHeader(payload_len=len(payload), packet_number=packet_number,
                          modulation=Modulation(modulation), threshold_flag=threshold_flag,
                          packet_type=PacketType(packet_type))
    return build_header(header) + bytes(payload) + struct.pack('>I', crc32(payload))


def parse_body(body: bytes, header: CovertHeader) -> Optional[bytes]:
    """Verify payload || crc32 against a validated header; None on crc-failure."""
    if len(body) < header.payload_len + PAYLOAD_CRC_LEN:
        return None
    payload = bytes(body[:header.payload_len])
    received = struct.unpack('>I', body[header.payload_len:header.payload_len + PAYLOAD_CRC_LEN])[0]
    if crc32(payload) != received:
        return None
    return payload


def parse_packet(data: bytes, header: CovertHeader) -> Optional[bytes]:
    """Return the payload of a full wire image, or None on crc-failure."""
    return parse_body(data[HEADER_LEN:header.packet_len], header)


def build_typed_payload(packet_type: PacketType, value: Any = None) -> bytes:
    """Serialize the payload of a given packet type.

    Args:
        packet_type: One of the defined types 0-6
        value: Referenced packet number (ACK/NACK), raw bytes (data,
            challenge, response), AddressInfo (type 3) or None (auth ACK)

    Returns:
        The payload bytes

    Raises:
        ValidationError: If the value does not fit the type's layout
    """
    packet_type = PacketType(packet_type)
    if packet_type in (PacketType.ACK, PacketType.NACK):
        if not 0 <= int(value) < SEQ_MODULUS:
            raise ValidationError(f"referenced packet number {value} out of range")
        return struct.pack('>H', int(value))
    if packet_type is PacketType.DATA:
        return bytes(value)
    if packet_type is PacketType.ADDRESS:
        return value.to_bytes()
    if packet_type in (PacketType.CHALLENGE, PacketType.RESPONSE):
        if len(value) != CHALLENGE_LEN:
            raise ValidationError(f"{packet_type.name} payload must be {CHALLENGE_LEN} bytes")
        return bytes(value)
    if packet_type is PacketType.AUTH_ACK:
        return b''
    raise ValidationError(f"packet type {packet_type} is reserved")


def parse_typed_payload(packet_type: PacketType, payload: bytes) -> Any:
    """Inverse of build_typed_payload.

    Raises:
        ValidationError: If a control payload has the wrong length
    """
    packet_type = PacketType(packet_type)
    if packet_type in (PacketType.ACK, PacketType.NACK):
        if len(payload) != 2:
            raise ValidationError(f"{packet_type.name} payload must be 2 bytes, got {len(payload)}")
        number = struct.unpack('>H', payload)[0]
        if number >= SEQ_MODULUS:
            raise ValidationError(f"referenced packet number {number} out of range")
        return number
    if packet_type is PacketType.DATA:
        return bytes(payload)
    if packet_type is PacketType.ADDRESS:
        return AddressInfo.from_bytes(payload)
    if packet_type in (PacketType.CHALLENGE, PacketType.RESPONSE):
        if len(payload) != CHALLENGE_LEN:
            raise ValidationError(f"{packet_type.name} payload must be {CHALLENGE_LEN} bytes")
        return bytes(payload)
    if packet_type is PacketType.AUTH_ACK:
        if payload:
            raise ValidationError("auth ACK payload must be empty")
        return None
    raise ValidationError(f"packet type {packet_type} is reserved")
