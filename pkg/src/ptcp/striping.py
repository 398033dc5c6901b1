"""Sender and receiver sides of the parallel striped transfer.

Sender: split the payload into one chunk per connection, open the
connections, then pump every chunk concurrently — HELLO, DATA frames in
order, FIN with the chunk digest.  After FIN each sender worker waits for
the receiver's receipt (a FIN frame echoing the digest the receiver
computed) so corruption is observable end to end.

Receiver: an accept loop hands each new stream to a connection worker.
Workers register with the per-transfer monitor on HELLO, buffer DATA, and
signal completion on FIN once the chunk digest verifies.  When the last
chunk completes the monitor gathers the chunks in index order, writes the
payload to the sink, and verifies the payload digest.  A failure on any
connection fails the whole transfer; there is no retry.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from .wire import (
    Data,
    Fin,
    FrameDecoder,
    Hello,
    ProtocolError,
    TransferManifest,
    encode_frame,
    sha256,
)

DEFAULT_DATA_FRAME_BYTES = 64 * 1024
DEFAULT_IDLE_TIMEOUT = 30.0
DEFAULT_BUFFER_CAP = 256 * 1024 * 1024


class AssemblyError(Exception):
    """Chunk set cannot be gathered into the final payload."""


def assemble(chunks: dict[int, bytes], connection_count: int, total_size: int) -> bytes:
    """Concatenate chunks in ascending index order into the final payload."""
    parts = []
    for index in range(connection_count):
        if index not in chunks:
            raise AssemblyError(f"missing chunk {index}")
        parts.append(chunks[index])
    payload = b"".join(parts)
    if len(payload) != total_size:
        raise AssemblyError(f"assembled {len(payload)} bytes, expected {total_size}")
    return payload


# ---------------------------------------------------------------------------
# Sender side
# ---------------------------------------------------------------------------


@dataclass
class ConnectionStat:
    chunk_index: int
    bytes: int
    start_time: float
    end_time: float


@dataclass
class TransferReport:
    transfer_id: bytes
    bytes_sent: int
    wall_time: float
    per_connection: list[ConnectionStat]
    ok: bool
    failure_reason: str | None = None
    failing_chunk: int | None = None


def send_transfer(
    payload: bytes,
    transport,
    connection_count: int,
    *,
    data_frame_bytes: int = DEFAULT_DATA_FRAME_BYTES,
    transfer_id: bytes | None = None,
    receipt_timeout: float = DEFAULT_IDLE_TIMEOUT,
) -> TransferReport:
    """Send ``payload`` over ``connection_count`` concurrent streams.

    Returns a report rather than raising on transfer failure; a stream that
    fails to open or breaks mid-chunk fails the transfer with that chunk's
    index.
    """
    if connection_count < 1:
        raise ValueError(f"connection_count must be >= 1, got {connection_count}")
    manifest = TransferManifest.for_payload(payload, connection_count, transfer_id)
    t0 = transport.now()

    streams = []
    for chunk in manifest.chunks:
        try:
            streams.append(transport.connect())
        except OSError as exc:
            for s in streams:
                s.abort()
            return TransferReport(
                transfer_id=manifest.transfer_id,
                bytes_sent=0,
                wall_time=transport.now() - t0,
                per_connection=[],
                ok=False,
                failure_reason=f"connect failed: {exc}",
                failing_chunk=chunk.index,
            )

    stats: list[ConnectionStat | None] = [None] * connection_count
    errors: list[tuple[int, str] | None] = [None] * connection_count

    def worker(index: int):
        chunk = manifest.chunks[index]
        stream = streams[index]
        body = payload[chunk.offset : chunk.offset + chunk.length]
        start = transport.now() - t0
        try:
            stream.write_all(
                encode_frame(
                    Hello(
                        transfer_id=manifest.transfer_id,
                        total_size=manifest.total_size,
                        connection_count=connection_count,
                        chunk_index=chunk.index,
                        chunk_offset=chunk.offset,
                        chunk_length=chunk.length,
                        payload_digest=manifest.payload_digest,
                    )
                )
            )
            for off in range(0, len(body), data_frame_bytes):
                piece = body[off : off + data_frame_bytes]
                stream.write_all(encode_frame(Data(chunk.index, off, piece)))
            stream.write_all(encode_frame(Fin(chunk.index, sha256(body))))
            _read_receipt(stream, chunk.index, sha256(body), receipt_timeout)
            stream.close()
            stats[index] = ConnectionStat(chunk.index, len(body), start, transport.now() - t0)
        except Exception as exc:  # noqa: BLE001 - reported in the transfer outcome
            errors[index] = (index, f"{type(exc).__name__}: {exc}")
            stream.abort()

    handles = [transport.spawn(lambda i=i: worker(i), name=f"send-{i}") for i in range(connection_count)]
    for h in handles:
        h.join()

    failures = [e for e in errors if e is not None]
    if failures:
        failing_chunk, reason = failures[0]
        return TransferReport(
            transfer_id=manifest.transfer_id,
            bytes_sent=sum(s.bytes for s in stats if s is not None),
            wall_time=transport.now() - t0,
            per_connection=[s for s in stats if s is not None],
            ok=False,
            failure_reason=reason,
            failing_chunk=failing_chunk,
        )
    return TransferReport(
        transfer_id=manifest.transfer_id,
        bytes_sent=manifest.total_size,
        wall_time=transport.now() - t0,
        per_connection=[s for s in stats if s is not None],
        ok=True,
    )


def _read_receipt(stream, chunk_index: int, expected_digest: bytes, timeout: float) -> None:
    decoder = FrameDecoder()
    while True:
        data = stream.read_some(timeout=timeout)
        if data == b"":
            raise ConnectionError(f"stream closed before receipt for chunk {chunk_index}")
        for frame in decoder.feed(data):
            if not isinstance(frame, Fin) or frame.chunk_index != chunk_index:
                raise ProtocolError(f"unexpected receipt frame {frame!r}")
            if frame.chunk_digest != expected_digest:
                raise ConnectionError(f"receiver digest mismatch on chunk {chunk_index}")
            return


# ---------------------------------------------------------------------------
# Receiver side
# ---------------------------------------------------------------------------


@dataclass
class ReceiverState:
    """Snapshot of one transfer's progress at the monitor."""

    transfer_id: bytes
    connection_count: int
    registered: set[int]
    completed: set[int]
    failed: str | None


@dataclass
class ReceivedTransfer:
    transfer_id: bytes | None
    ok: bool
    reason: str | None
    total_size: int
    wall_time: float
    per_connection: list[ConnectionStat]
    timeline: list[tuple[float, int, int]]  # (time, chunk_index, bytes)


class _TransferMonitor:
    """Completion tracker for one transfer: register / data / complete / fail."""

    def __init__(self, hello: Hello, received_at: float, buffer_cap: int):
        self.transfer_id = hello.transfer_id
        self.total_size = hello.total_size
        self.connection_count = hello.connection_count
        self.payload_digest = hello.payload_digest
        self.buffer_cap = buffer_cap
        self.started_at = received_at
        self.lock = threading.Lock()
        self.registered: set[int] = set()
        self.completed: set[int] = set()
        self.chunks: dict[int, bytearray] = {}
        self.chunk_meta: dict[int, tuple[int, int]] = {}  # index -> (offset, length)
        self.stats: list[ConnectionStat] = []
        self.timeline: list[tuple[float, int, int]] = []
        self.failed: str | None = None
        self.finalized = False

    def consistent_with(self, hello: Hello) -> bool:
        return (
            hello.total_size == self.total_size
            and hello.connection_count == self.connection_count
            and hello.payload_digest == self.payload_digest
        )

    def register(self, hello: Hello) -> None:
        with self.lock:
            if not self.consistent_with(hello):
                raise ProtocolError(
                    f"HELLO fields inconsistent across connections of transfer {self.transfer_id.hex()}"
                )
            if hello.chunk_index in self.registered:
                raise ProtocolError(f"duplicate registration for chunk {hello.chunk_index}")
            if hello.chunk_index >= self.connection_count:
                raise ProtocolError(
                    f"chunk index {hello.chunk_index} out of range for {self.connection_count} connections"
                )
            if self.total_size > self.buffer_cap:
                raise ProtocolError(
                    f"transfer of {self.total_size} bytes exceeds receiver buffer cap {self.buffer_cap}"
                )
            self.registered.add(hello.chunk_index)
            self.chunks[hello.chunk_index] = bytearray()
            self.chunk_meta[hello.chunk_index] = (hello.chunk_offset, hello.chunk_length)

    def data(self, frame: Data, now: float) -> None:
        with self.lock:
            buf = self.chunks[frame.chunk_index]
            _, length = self.chunk_meta[frame.chunk_index]
            if frame.offset_in_chunk != len(buf):
                raise ProtocolError(
                    f"chunk {frame.chunk_index}: DATA offset {frame.offset_in_chunk}, expected {len(buf)}"
                )
            if len(buf) + len(frame.payload) > length:
                raise ProtocolError(f"chunk {frame.chunk_index} overflows its declared length")
            buf.extend(frame.payload)
            self.timeline.append((now, frame.chunk_index, len(frame.payload)))

    def complete(self, frame: Fin, started: float, now: float) -> bool:
        """Verify and mark one chunk done; True when this was the last chunk."""
        with self.lock:
            buf = self.chunks[frame.chunk_index]
            _, length = self.chunk_meta[frame.chunk_index]
            if len(buf) != length:
                raise ProtocolError(
                    f"chunk {frame.chunk_index} FIN after {len(buf)} of {length} bytes"
                )
            if sha256(bytes(buf)) != frame.chunk_digest:
                raise _CorruptChunk(frame.chunk_index)
            self.completed.add(frame.chunk_index)
            self.stats.append(ConnectionStat(frame.chunk_index, length, started, now))
            return len(self.completed) == self.connection_count

    def fail(self, reason: str) -> None:
        with self.lock:
            if self.failed is None:
                self.failed = reason

    def snapshot(self) -> ReceiverState:
        with self.lock:
            return ReceiverState(
                transfer_id=self.transfer_id,
                connection_count=self.connection_count,
                registered=set(self.registered),
                completed=set(self.completed),
                failed=self.failed,
            )


class _CorruptChunk(Exception):
    def __init__(self, chunk_index: int):
        super().__init__(f"chunk {chunk_index} digest mismatch")
        self.chunk_index = chunk_index


class Receiver:
    """Accept loop plus per-connection workers feeding per-transfer monitors.

    Supports concurrent transfers with distinct transfer ids on one
    listener.  ``serve_one`` blocks until the next transfer finalizes
    (success or failure) and returns its result.
    """

    def __init__(
        self,
        transport,
        sink=None,
        *,
        idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
        buffer_cap: int = DEFAULT_BUFFER_CAP,
    ):
        self._transport = transport
        self._sink = sink
        self._idle_timeout = idle_timeout
        self._buffer_cap = buffer_cap
        self._listener = transport.listen()
        self._monitors: dict[bytes, _TransferMonitor] = {}
        self._monitors_lock = threading.Lock()
        self._completions = transport.channel()
        self._acceptor = transport.spawn(self._accept_loop, name="recv-accept")

    @property
    def listener(self):
        return self._listener

    def transfer_states(self) -> list[ReceiverState]:
        with self._monitors_lock:
            monitors = list(self._monitors.values())
        return [m.snapshot() for m in monitors]

    def serve_one(self) -> ReceivedTransfer:
        return self._completions.get()

    def close(self) -> None:
        self._listener.close()

    # -- internals --

    def _accept_loop(self):
        while True:
            try:
                stream = self._listener.accept()
            except (ConnectionError, OSError):
                return
            self._transport.spawn(lambda s=stream: self._connection_worker(s), name="recv-conn")

    def _monitor_for(self, hello: Hello, now: float) -> _TransferMonitor:
        with self._monitors_lock:
            monitor = self._monitors.get(hello.transfer_id)
            if monitor is None:
                monitor = _TransferMonitor(hello, now, self._buffer_cap)
                self._monitors[hello.transfer_id] = monitor
            return monitor

    def _connection_worker(self, stream):
        decoder = FrameDecoder()
        monitor: _TransferMonitor | None = None
        chunk_index: int | None = None
        started = 0.0
        try:
            eof = False
            while not eof:
                data = stream.read_some(timeout=self._idle_timeout)
                if data == b"":
                    eof = True
                for frame in decoder.feed(data):
                    if monitor is not None and monitor.failed is not None:
                        stream.abort()
                        return
                    if isinstance(frame, Hello):
                        if monitor is not None:
                            raise ProtocolError("second HELLO on one stream")
                        started = self._transport.now()
                        monitor = self._monitor_for(frame, started)
                        chunk_index = frame.chunk_index
                        monitor.register(frame)
                    elif isinstance(frame, Data):
                        if monitor is None:
                            raise ProtocolError("DATA before HELLO on stream")
                        if frame.chunk_index != chunk_index:
                            raise ProtocolError(
                                f"DATA for chunk {frame.chunk_index} on the chunk-{chunk_index} stream"
                            )
                        monitor.data(frame, self._transport.now() - monitor.started_at)
                    elif isinstance(frame, Fin):
                        if monitor is None:
                            raise ProtocolError("FIN before HELLO on stream")
                        if frame.chunk_index != chunk_index:
                            raise ProtocolError(
                                f"FIN for chunk {frame.chunk_index} on the chunk-{chunk_index} stream"
                            )
                        now = self._transport.now()
                        last = monitor.complete(
                            frame, started - monitor.started_at, now - monitor.started_at
                        )
                        stream.write_all(
                            encode_frame(Fin(chunk_index, sha256(bytes(monitor.chunks[chunk_index]))))
                        )
                        stream.close()
                        if last:
                            self._finalize(monitor)
                        return
            if monitor is None or chunk_index is None:
                raise ProtocolError("stream ended before HELLO")
            raise ProtocolError(f"stream for chunk {chunk_index} ended before FIN")
        except _CorruptChunk as exc:
            self._fail_transfer(monitor, f"corrupt-chunk: {exc.chunk_index}")
            stream.abort()
        except ProtocolError as exc:
            self._fail_transfer(monitor, f"protocol-error: {exc}")
            stream.abort()
        except TimeoutError:
            self._fail_transfer(monitor, "stalled: idle timeout")
            stream.abort()
        except (ConnectionError, OSError) as exc:
            self._fail_transfer(monitor, f"connection failed: {exc}")
            stream.abort()

    def _fail_transfer(self, monitor: _TransferMonitor | None, reason: str) -> None:
        if monitor is None:
            # Stream-level failure with no registered transfer.
            self._completions.put(
                ReceivedTransfer(None, False, reason, 0, 0.0, [], [])
            )
            return
        first = monitor.failed is None
        monitor.fail(reason)
        if first:
            self._forget(monitor)
            self._completions.put(
                ReceivedTransfer(
                    transfer_id=monitor.transfer_id,
                    ok=False,
                    reason=reason,
                    total_size=monitor.total_size,
                    wall_time=self._transport.now() - monitor.started_at,
                    per_connection=list(monitor.stats),
                    timeline=list(monitor.timeline),
                )
            )

    def _finalize(self, monitor: _TransferMonitor) -> None:
        if monitor.finalized:
            return
        monitor.finalized = True
        self._forget(monitor)
        try:
            payload = assemble(
                {i: bytes(b) for i, b in monitor.chunks.items()},
                monitor.connection_count,
                monitor.total_size,
            )
        except AssemblyError as exc:
            self._emit_failure(monitor, f"assembly-error: {exc}")
            return
        if sha256(payload) != monitor.payload_digest:
            self._emit_failure(monitor, "corrupt-payload: digest mismatch")
            return
        if self._sink is not None:
            self._sink(monitor.transfer_id, payload)
        self._completions.put(
            ReceivedTransfer(
                transfer_id=monitor.transfer_id,
                ok=True,
                reason=None,
                total_size=monitor.total_size,
                wall_time=self._transport.now() - monitor.started_at,
                per_connection=sorted(monitor.stats, key=lambda s: s.chunk_index),
                timeline=list(monitor.timeline),
            )
        )

    def _emit_failure(self, monitor: _TransferMonitor, reason: str) -> None:
        monitor.fail(reason)
        self._completions.put(
            ReceivedTransfer(
                transfer_id=monitor.transfer_id,
                ok=False,
                reason=reason,
                total_size=monitor.total_size,
                wall_time=self._transport.now() - monitor.started_at,
                per_connection=list(monitor.stats),
                timeline=list(monitor.timeline),
            )
        )

    def _forget(self, monitor: _TransferMonitor) -> None:
        with self._monitors_lock:
            self._monitors.pop(monitor.transfer_id, None)


def serve(transport, sink=None, **options) -> ReceivedTransfer:
    """Serve a single transfer on ``transport`` and return its result."""
    receiver = Receiver(transport, sink, **options)
    try:
        return receiver.serve_one()
    finally:
        receiver.close()
