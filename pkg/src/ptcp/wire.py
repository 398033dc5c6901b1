"""Binary wire protocol and chunk partitioning for parallel striped transfers.

Every connection of a striped transfer carries the same self-delimiting frame
stream.  Frame layout (all integers big-endian):

    magic    4 bytes   0x50 0x54 0x43 0x50 ("PTCP")
    version  u8        1
    kind     u8        HELLO=0x01, DATA=0x02, FIN=0x03
    body     kind-specific, fixed size except DATA (length-prefixed payload)

    HELLO body: transfer_id (16) | total_size u64 | connection_count u32 |
                chunk_index u32 | chunk_offset u64 | chunk_length u64 |
                payload_digest (32)
    DATA  body: chunk_index u32 | offset_in_chunk u64 | payload_len u32 | payload
    FIN   body: chunk_index u32 | chunk_digest (32)

Digests are SHA-256.  A DATA payload is capped at 64 KiB and must be
non-empty; an empty chunk is carried by HELLO+FIN alone.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple

MAGIC = b"PTCP"
VERSION = 1
MAX_DATA_PAYLOAD = 64 * 1024
DIGEST_SIZE = 32
TRANSFER_ID_SIZE = 16

_HEADER = struct.Struct("!4sBB")
_HELLO_BODY = struct.Struct("!16sQIIQQ32s")
_DATA_HEAD = struct.Struct("!IQI")
_FIN_BODY = struct.Struct("!I32s")


class FrameKind(IntEnum):
    HELLO = 0x01
    DATA = 0x02
    FIN = 0x03


class ProtocolError(Exception):
    """Malformed or out-of-contract frame stream.

    ``offset`` is the absolute byte offset of the offending byte within the
    decoded stream, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (at byte {offset})")
        self.offset = offset


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class ChunkAssignment(NamedTuple):
    """One connection's slice of the payload: contiguous [offset, offset+length)."""

    index: int
    offset: int
    length: int


def partition(total_size: int, connection_count: int) -> list[ChunkAssignment]:
    """Split ``total_size`` bytes into ``connection_count`` contiguous chunks.

    The first ``total_size % connection_count`` chunks carry one extra byte,
    so chunk lengths differ by at most one.  Empty chunks are legal when
    there are more connections than bytes.
    """
    if connection_count < 1:
        raise ValueError(f"connection_count must be >= 1, got {connection_count}")
    if total_size < 0:
        raise ValueError(f"total_size must be >= 0, got {total_size}")
    base, extra = divmod(total_size, connection_count)
    chunks = []
    offset = 0
    for index in range(connection_count):
        length = base + (1 if index < extra else 0)
        chunks.append(ChunkAssignment(index, offset, length))
        offset += length
    return chunks


@dataclass(frozen=True)
class TransferManifest:
    """Chunk table binding byte ranges to connection sequence numbers."""

    transfer_id: bytes
    total_size: int
    connection_count: int
    chunks: tuple[ChunkAssignment, ...]
    payload_digest: bytes

    @classmethod
    def for_payload(
        cls, payload: bytes, connection_count: int, transfer_id: bytes | None = None
    ) -> "TransferManifest":
        if transfer_id is None:
            transfer_id = os.urandom(TRANSFER_ID_SIZE)
        return cls(
            transfer_id=transfer_id,
            total_size=len(payload),
            connection_count=connection_count,
            chunks=tuple(partition(len(payload), connection_count)),
            payload_digest=sha256(payload),
        )

    def validate(self) -> None:
        if len(self.transfer_id) != TRANSFER_ID_SIZE:
            raise ValueError("transfer_id must be 16 bytes")
        if len(self.payload_digest) != DIGEST_SIZE:
            raise ValueError("payload_digest must be 32 bytes")
        if self.connection_count < 1:
            raise ValueError("connection_count must be >= 1")
        if len(self.chunks) != self.connection_count:
            raise ValueError("chunk count must equal connection_count")
        offset = 0
        base = self.total_size // self.connection_count
        for index, chunk in enumerate(self.chunks):
            if chunk.index != index:
                raise ValueError(f"chunk indices must be 0..n-1, got {chunk.index} at {index}")
            if chunk.offset != offset:
                raise ValueError(f"chunk {index} not contiguous: offset {chunk.offset} != {offset}")
            if chunk.length not in (base, base + 1):
                raise ValueError(f"chunk {index} length {chunk.length} not balanced")
            offset += chunk.length
        if offset != self.total_size:
            raise ValueError(f"chunks cover {offset} bytes, expected {self.total_size}")


@dataclass(frozen=True)
class Hello:
    """Per-connection transfer announcement; every stream carries its own."""

    transfer_id: bytes
    total_size: int
    connection_count: int
    chunk_index: int
    chunk_offset: int
    chunk_length: int
    payload_digest: bytes

    kind = FrameKind.HELLO


@dataclass(frozen=True)
class Data:
    chunk_index: int
    offset_in_chunk: int
    payload: bytes = field(repr=False)

    kind = FrameKind.DATA


@dataclass(frozen=True)
class Fin:
    """End-of-chunk marker carrying the chunk's SHA-256."""

    chunk_index: int
    chunk_digest: bytes

    kind = FrameKind.FIN


Frame = Hello | Data | Fin


def encode_frame(frame: Frame) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, frame.kind)
    if isinstance(frame, Hello):
        if len(frame.transfer_id) != TRANSFER_ID_SIZE:
            raise ValueError("transfer_id must be 16 bytes")
        if len(frame.payload_digest) != DIGEST_SIZE:
            raise ValueError("payload_digest must be 32 bytes")
        body = _HELLO_BODY.pack(
            frame.transfer_id,
            frame.total_size,
            frame.connection_count,
            frame.chunk_index,
            frame.chunk_offset,
            frame.chunk_length,
            frame.payload_digest,
        )
    elif isinstance(frame, Data):
        if not frame.payload:
            raise ValueError("DATA payload must be non-empty")
        if len(frame.payload) > MAX_DATA_PAYLOAD:
            raise ValueError(f"DATA payload {len(frame.payload)} exceeds {MAX_DATA_PAYLOAD}")
        body = _DATA_HEAD.pack(frame.chunk_index, frame.offset_in_chunk, len(frame.payload))
        body += frame.payload
    elif isinstance(frame, Fin):
        if len(frame.chunk_digest) != DIGEST_SIZE:
            raise ValueError("chunk_digest must be 32 bytes")
        body = _FIN_BODY.pack(frame.chunk_index, frame.chunk_digest)
    else:
        raise TypeError(f"not a frame: {frame!r}")
    return header + body


class FrameDecoder:
    """Incremental frame-stream decoder.

    Feed arbitrary byte slices; complete frames come out as they close.
    Feeding byte-by-byte yields the same frames as feeding one shot.
    """

    def __init__(self):
        self._buf = bytearray()
        self._consumed = 0  # absolute offset of _buf[0] in the stream

    @property
    def residual(self) -> bytes:
        return bytes(self._buf)

    def feed(self, data: bytes) -> list[Frame]:
        self._buf.extend(data)
        frames = []
        while True:
            frame, used = self._try_decode_one()
            if frame is None:
                break
            del self._buf[:used]
            self._consumed += used
            frames.append(frame)
        return frames

    def _try_decode_one(self) -> tuple[Frame | None, int]:
        buf = self._buf
        if len(buf) < _HEADER.size:
            if buf and not MAGIC.startswith(bytes(buf[:4])):
                raise ProtocolError("bad frame magic", self._consumed)
            return None, 0
        magic, version, kind = _HEADER.unpack_from(buf)
        if magic != MAGIC:
            raise ProtocolError("bad frame magic", self._consumed)
        if version != VERSION:
            raise ProtocolError(f"unsupported version {version}", self._consumed + 4)
        pos = _HEADER.size
        if kind == FrameKind.HELLO:
            if len(buf) < pos + _HELLO_BODY.size:
                return None, 0
            (tid, total, count, idx, off, length, digest) = _HELLO_BODY.unpack_from(buf, pos)
            return Hello(tid, total, count, idx, off, length, digest), pos + _HELLO_BODY.size
        if kind == FrameKind.DATA:
            if len(buf) < pos + _DATA_HEAD.size:
                return None, 0
            idx, off, plen = _DATA_HEAD.unpack_from(buf, pos)
            if plen > MAX_DATA_PAYLOAD:
                raise ProtocolError(f"DATA payload length {plen} exceeds cap", self._consumed + pos)
            if plen == 0:
                raise ProtocolError("zero-length DATA payload", self._consumed + pos)
            end = pos + _DATA_HEAD.size + plen
            if len(buf) < end:
                return None, 0
            payload = bytes(buf[pos + _DATA_HEAD.size : end])
            return Data(idx, off, payload), end
        if kind == FrameKind.FIN:
            if len(buf) < pos + _FIN_BODY.size:
                return None, 0
            idx, digest = _FIN_BODY.unpack_from(buf, pos)
            return Fin(idx, digest), pos + _FIN_BODY.size
        raise ProtocolError(f"unknown frame kind 0x{kind:02x}", self._consumed + 5)


def decode_frames(buffer: bytes) -> tuple[list[Frame], bytes]:
    """One-shot decode: all complete frames plus the unconsumed tail."""
    decoder = FrameDecoder()
    frames = decoder.feed(buffer)
    return frames, decoder.residual
