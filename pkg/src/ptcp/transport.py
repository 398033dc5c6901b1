"""Transport seam between the striping layer and its byte-stream backends.

A transport bundles everything the striping layer needs from its environment:

    transport.connect()          -> Stream (reliable, ordered, duplex)
    transport.listen()           -> Listener with accept() / close()
    transport.spawn(fn)          -> worker handle with join()
    transport.channel()          -> FIFO with put() / blocking get()
    transport.now()              -> monotonic seconds

Streams expose blocking ``read_some`` / ``write_all`` / ``close`` with TCP
semantics; ``read_some`` returns b"" at end of stream and raises
``TimeoutError`` when a read deadline passes.  Backends here: real OS TCP
sockets and an in-process memory pipe.  The simulated-bottleneck backend
lives in ``ptcp.simbridge``.
"""

from __future__ import annotations

import queue
import socket
import threading
import time

READ_CHUNK = 64 * 1024


class ThreadHandle:
    """Join-able worker; re-raises the worker's exception on join."""

    def __init__(self, fn, name: str | None = None):
        self._result = None
        self._exc: BaseException | None = None

        def run():
            try:
                self._result = fn()
            except BaseException as exc:  # noqa: BLE001 - surfaced on join
                self._exc = exc

        self._thread = threading.Thread(target=run, name=name, daemon=True)
        self._thread.start()

    def join(self, timeout: float | None = None):
        self._thread.join(timeout)
        if self._thread.is_alive():
            raise TimeoutError("worker did not finish in time")
        if self._exc is not None:
            raise self._exc
        return self._result


class _ThreadedTransportBase:
    """spawn/channel/now for backends scheduled by the OS."""

    def spawn(self, fn, name: str | None = None) -> ThreadHandle:
        return ThreadHandle(fn, name)

    def channel(self) -> "queue.Queue":
        return queue.Queue()

    def now(self) -> float:
        return time.monotonic()


# ---------------------------------------------------------------------------
# Real TCP sockets
# ---------------------------------------------------------------------------


class TcpStream:
    def __init__(self, sock: socket.socket):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock

    def read_some(self, max_bytes: int = READ_CHUNK, timeout: float | None = None) -> bytes:
        self._sock.settimeout(timeout)
        try:
            return self._sock.recv(max_bytes)
        except socket.timeout as exc:
            raise TimeoutError("read timed out") from exc

    def write_all(self, data: bytes) -> None:
        self._sock.settimeout(None)
        self._sock.sendall(data)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass
        # Drain until peer EOF so close() implies the peer saw everything.
        try:
            self._sock.settimeout(5.0)
            while self._sock.recv(READ_CHUNK):
                pass
        except OSError:
            pass
        self._sock.close()

    def abort(self) -> None:
        self._sock.close()


class TcpListener:
    def __init__(self, host: str, port: int, backlog: int = 64):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(backlog)

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()[:2]

    def accept(self) -> TcpStream:
        conn, _ = self._sock.accept()
        return TcpStream(conn)

    def close(self) -> None:
        self._sock.close()


class TcpTransport(_ThreadedTransportBase):
    """host:port addressed OS TCP sockets."""

    def __init__(self, host: str, port: int):
        self.host = host
        self.port = port

    def connect(self) -> TcpStream:
        return TcpStream(socket.create_connection((self.host, self.port), timeout=10.0))

    def listen(self, backlog: int = 64) -> TcpListener:
        listener = TcpListener(self.host, self.port, backlog)
        if self.port == 0:
            self.port = listener.address[1]
        return listener


# ---------------------------------------------------------------------------
# In-process memory pipes (loopback without sockets; also the base for test
# doubles that delay or stall individual connections)
# ---------------------------------------------------------------------------


class _PipeEnd:
    """One direction of a duplex memory stream."""

    def __init__(self):
        self.buf = bytearray()
        self.closed = False
        self.cv = threading.Condition()


class MemoryStream:
    def __init__(self, rx: _PipeEnd, tx: _PipeEnd):
        self._rx = rx
        self._tx = tx

    def read_some(self, max_bytes: int = READ_CHUNK, timeout: float | None = None) -> bytes:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._rx.cv:
            while not self._rx.buf and not self._rx.closed:
                remaining = None
                if deadline is not None:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        raise TimeoutError("read timed out")
                self._rx.cv.wait(remaining)
            if not self._rx.buf:
                return b""
            data = bytes(self._rx.buf[:max_bytes])
            del self._rx.buf[: len(data)]
            return data

    def write_all(self, data: bytes) -> None:
        with self._tx.cv:
            if self._tx.closed:
                raise ConnectionError("peer closed")
            self._tx.buf.extend(data)
            self._tx.cv.notify_all()

    def close(self) -> None:
        for end in (self._tx, self._rx):
            with end.cv:
                end.closed = True
                end.cv.notify_all()

    abort = close


def memory_stream_pair() -> tuple[MemoryStream, MemoryStream]:
    a_to_b, b_to_a = _PipeEnd(), _PipeEnd()
    return MemoryStream(b_to_a, a_to_b), MemoryStream(a_to_b, b_to_a)


class MemoryListener:
    def __init__(self):
        self._pending: "queue.Queue[MemoryStream | None]" = queue.Queue()
        self._closed = False

    def accept(self) -> MemoryStream:
        stream = self._pending.get()
        if stream is None:
            raise ConnectionError("listener closed")
        return stream

    def close(self) -> None:
        self._closed = True
        self._pending.put(None)

    def _submit(self, stream: MemoryStream) -> None:
        if self._closed:
            raise ConnectionRefusedError("listener closed")
        self._pending.put(stream)


class MemoryTransport(_ThreadedTransportBase):
    """Zero-copy in-process transport; one listener per instance."""

    def __init__(self):
        self._listener: MemoryListener | None = None

    def connect(self) -> MemoryStream:
        if self._listener is None or self._listener._closed:
            raise ConnectionRefusedError("nothing listening")
        client, server = memory_stream_pair()
        self._listener._submit(server)
        return client

    def listen(self) -> MemoryListener:
        self._listener = MemoryListener()
        return self._listener
