"""Bit-exact primitives shared by every wire operation.

CRC-8 (poly 0x07, init 0x00, no reflection, no final XOR), CRC-32/IEEE
(reflected, init and final XOR 0xFFFFFFFF), HMAC-SHA-256 and MSB-first
bit (de)serialization. All functions are pure.
"""

import hashlib
import hmac
import logging
import zlib
from typing import List

import numpy as np

from .errors import LengthError

logger = logging.getLogger(__name__)

# A BitStream is a 1-D uint8 numpy array of 0/1 values, MSB-first per byte.
BitStream = np.ndarray

CRC8_POLY = 0x07
HMAC_DIGEST_LEN = 32


def _generate_crc8_table(poly: int) -> List[int]:
    table = []
    for crc in range(256):
        for _ in range(8):
            crc = (crc << 1) ^ poly if (crc & 0x80) else crc << 1
            crc &= 0xFF
        table.append(crc)
    return table


CRC8_TABLE = _generate_crc8_table(CRC8_POLY)


def crc8(data: bytes) -> int:
    """Compute the CRC-8 of a byte sequence.

    Args:
        data: The bytes to protect

    Returns:
        The checksum as an int in [0, 255]
    """
    crc = 0x00
    for byte in data:
        crc = CRC8_TABLE[crc ^ byte]
    return crc


def crc32(data: bytes) -> int:
    """Compute the CRC-32/IEEE of a byte sequence.

    Args:
        data: The bytes to protect

    Returns:
        The checksum as an int; serialized big-endian on the wire
    """
    return zlib.crc32(data) & 0xFFFFFFFF


def hmac_sha256(key: bytes, message: bytes) -> bytes:
    """Compute the 32-byte HMAC-SHA-256 of a message.

    Args:
        key: The pre-shared key
        message: The message to authenticate (a challenge)

    Returns:
        The digest bytes
    """
    return hmac.new(key, message, hashlib.sha256).digest()


def verify_hmac(key: bytes, message: bytes, digest: bytes) -> bool:
    """Check a received digest against the expected one in constant time."""
    return hmac.compare_digest(hmac_sha256(key, message), digest)


def bytes_to_bits(data: bytes) -> BitStream:
    """Expand bytes into an MSB-first bit array."""
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))


def bits_to_bytes(bits: BitStream) -> bytes:
    """Pack an MSB-first bit array back into bytes.

    Raises:
        LengthError: If the bit count is not a multiple of 8
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % 8:
        raise LengthError(f"bit count {bits.size} is not a multiple of 8")
    return np.packbits(bits).tobytes()
