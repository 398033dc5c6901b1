"""
The wire protocol, one frame at a time
======================================

A transfer is announced per connection (HELLO), carried as offset-tagged
DATA frames, and sealed with a FIN holding the chunk digest.  This script
builds each frame by hand, then feeds the encoded bytes to the streaming
decoder in awkward little pieces to show that framing never depends on
read boundaries.
"""

from ptcp.striping import assemble
from ptcp.wire import (
    Data,
    Fin,
    FrameDecoder,
    Hello,
    TransferManifest,
    encode_frame,
    partition,
    sha256,
)

# A small payload split across three connections.  The partition is
# remainder-first: the first (size % n) chunks carry one extra byte.
payload = bytes(range(256)) * 40  # 10240 bytes
manifest = TransferManifest.for_payload(payload, 3)
print(f"payload: {manifest.total_size} bytes, digest {manifest.payload_digest.hex()[:16]}...")
for chunk in manifest.chunks:
    print(f"  chunk {chunk.index}: offset {chunk.offset}, length {chunk.length}")

# Every stream opens with its own HELLO carrying the whole plan, so the
# receiver can reconstruct the transfer no matter which stream lands first.
chunk = manifest.chunks[1]
hello = Hello(
    transfer_id=manifest.transfer_id,
    total_size=manifest.total_size,
    connection_count=3,
    chunk_index=chunk.index,
    chunk_offset=chunk.offset,
    chunk_length=chunk.length,
    payload_digest=manifest.payload_digest,
)
body = payload[chunk.offset : chunk.offset + chunk.length]
frames = [hello]
for off in range(0, len(body), 1024):
    frames.append(Data(chunk.index, off, body[off : off + 1024]))
frames.append(Fin(chunk.index, sha256(body)))

stream_bytes = b"".join(encode_frame(f) for f in frames)
print(f"\nstream for chunk 1: {len(frames)} frames, {len(stream_bytes)} bytes on the wire")

# Feed the decoder in 7-byte slivers; frames pop out whole regardless.
decoder = FrameDecoder()
decoded = []
for i in range(0, len(stream_bytes), 7):
    decoded.extend(decoder.feed(stream_bytes[i : i + 7]))
print(f"decoded {len(decoded)} frames from 7-byte reads; residual {len(decoder.residual)} bytes")
assert decoded == frames

# Reassembly is a dict of verified chunks glued in index order.
chunks = {
    c.index: payload[c.offset : c.offset + c.length] for c in manifest.chunks
}
rebuilt = assemble(chunks, 3, manifest.total_size)
print(f"reassembled digest matches: {sha256(rebuilt) == manifest.payload_digest}")
