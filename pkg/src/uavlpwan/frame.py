"""Wire format of the ad-hoc LoRa link layer.

Layout (big-endian)::

    0     magic 0xA5
    1-2   src node id
    3-4   dst node id (0xFFFF broadcast)
    5     seq
    6     flags (bit0 ACK, bit1 DATA)
    7     payload length
    8..   payload (0-64 bytes)
    last2 CRC-16/CCITT-FALSE over every preceding byte
"""

from __future__ import annotations

import binascii
import struct
from dataclasses import dataclass

MAGIC = 0xA5
BROADCAST = 0xFFFF
FLAG_ACK = 0x01
FLAG_DATA = 0x02
HEADER_LEN = 8
CRC_LEN = 2
MAX_PAYLOAD = 64
MAX_FRAME_LEN = HEADER_LEN + MAX_PAYLOAD + CRC_LEN

_HEADER = struct.Struct(">BHHBBB")


class FrameError(ValueError):
    pass


class BadMagic(FrameError):
    pass


class TruncatedFrame(FrameError):
    pass


class LengthMismatch(FrameError):
    pass


class CrcMismatch(FrameError):
    pass


class OversizePayload(ValueError):
    pass


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection, no xorout)."""
    return binascii.crc_hqx(data, 0xFFFF)


@dataclass(frozen=True)
class Frame:
    src: int
    dst: int
    seq: int
    flags: int = FLAG_DATA
    payload: bytes = b""

    @property
    def is_ack(self) -> bool:
        return bool(self.flags & FLAG_ACK)

    @property
    def is_data(self) -> bool:
        return bool(self.flags & FLAG_DATA)

    @property
    def is_broadcast(self) -> bool:
        return self.dst == BROADCAST

    @property
    def wire_size(self) -> int:
        return HEADER_LEN + len(self.payload) + CRC_LEN


def ack_for(frame: Frame, me: int) -> Frame:
    return Frame(src=me, dst=frame.src, seq=frame.seq, flags=FLAG_ACK)


def frame_encode(f: Frame) -> bytes:
    if len(f.payload) > MAX_PAYLOAD:
        raise OversizePayload(f"payload of {len(f.payload)} bytes exceeds {MAX_PAYLOAD}")
    body = _HEADER.pack(MAGIC, f.src, f.dst, f.seq, f.flags, len(f.payload)) + bytes(f.payload)
    return body + crc16(body).to_bytes(2, "big")


def frame_decode(data: bytes) -> Frame:
    if len(data) < HEADER_LEN + CRC_LEN:
        raise TruncatedFrame(f"{len(data)} bytes, need at least {HEADER_LEN + CRC_LEN}")
    magic, src, dst, seq, flags, length = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"magic 0x{magic:02X}")
    if length > MAX_PAYLOAD:
        raise LengthMismatch(f"declared payload {length} exceeds {MAX_PAYLOAD}")
    expected = HEADER_LEN + length + CRC_LEN
    if len(data) < expected:
        raise TruncatedFrame(f"{len(data)} bytes, header declares {expected}")
    if len(data) > expected:
        raise LengthMismatch(f"{len(data)} bytes, header declares {expected}")
    if crc16(data[:-CRC_LEN]) != int.from_bytes(data[-CRC_LEN:], "big"):
        raise CrcMismatch("checksum does not match")
    return Frame(src=src, dst=dst, seq=seq, flags=flags, payload=bytes(data[HEADER_LEN:-CRC_LEN]))
