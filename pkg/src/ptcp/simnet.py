"""Deterministic packet-level simulation of AIMD flows over one bottleneck.

Topology is a dumbbell collapsed to its only interesting part: every flow's
segments enter a single drop-tail FIFO served at link capacity, then cross
a fixed propagation delay.  Acks return on the reverse path, which is pure
delay: no bandwidth, no loss.  Random forward loss is Bernoulli per
serviced segment, drawn from a PCG64 generator seeded in LinkConfig, so a
scenario is a pure function of its configuration.

Congestion control is plain AIMD: cwnd grows by 1/cwnd per new ack (one
segment per RTT), halves on loss with at most one halving per base RTT,
and never drops below one segment.  Loss is detected by a fixed
retransmission timeout of twice the base RTT; there is no fast retransmit
and no delayed acks.  Flows start at cwnd = 2 with slow start off unless
asked for.

Event ordering is a binary heap keyed by (time, insertion sequence), so
same-time events run in insertion order on every run.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .metrics import FlowTrace


@dataclass(frozen=True)
class LinkConfig:
    capacity: float  # bits/second through the bottleneck
    one_way_delay: float  # seconds, symmetric
    queue_limit: int  # packets, counting the one in service
    loss_probability: float = 0.0  # forward path only
    mss: int = 1500  # bytes per segment on the wire
    seed: int = 0

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValueError(f"capacity must be > 0, got {self.capacity}")
        if self.one_way_delay < 0:
            raise ValueError(f"one_way_delay must be >= 0, got {self.one_way_delay}")
        if self.queue_limit < 1:
            raise ValueError(f"queue_limit must be >= 1, got {self.queue_limit}")
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ValueError(f"loss_probability must be in [0,1], got {self.loss_probability}")
        if self.mss < 1:
            raise ValueError(f"mss must be >= 1, got {self.mss}")

    @property
    def service_time(self) -> float:
        """Seconds to push one segment through the bottleneck."""
        return self.mss * 8 / self.capacity

    @property
    def rtt_base(self) -> float:
        """Round trip with empty queues."""
        return 2 * self.one_way_delay


@dataclass(frozen=True)
class AimdFlowState:
    flow_id: str
    cwnd: float
    rtt_base: float
    in_flight: int
    delivered: int
    next_seq: int
    highest_acked: int


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str
    flow_id: str
    seq: int


class AimdFlow:
    """One sender/receiver pair: AIMD window, timeout loss detection,
    retransmission with priority over new data, receiver-side dedup.

    ``byte_limit`` caps the new data a greedy source produces; the default
    is an unlimited bulk flow.  ``loss_at_cwnd`` is a test hook: treat
    reaching that window as a congestion signal (halve, drop nothing),
    which produces a clean deterministic sawtooth.
    """

    def __init__(
        self,
        flow_id: str,
        link: LinkConfig,
        *,
        role: str = "targeted",
        start_time: float = 0.0,
        byte_limit: int | None = None,
        initial_cwnd: float = 2.0,
        slow_start: bool = False,
        loss_at_cwnd: float | None = None,
    ):
        self.flow_id = flow_id
        self.link = link
        self.role = role
        self.start_time = start_time
        self.cwnd = float(initial_cwnd)
        self.in_flight = 0
        self.next_seq = 0
        self.highest_acked = -1
        self.slow_start = slow_start
        self.ssthresh = math.inf
        self.loss_at_cwnd = loss_at_cwnd
        self.timeout_interval = 2.0 * link.rtt_base
        self.byte_limit = byte_limit
        if byte_limit is None:
            self._seq_limit = math.inf
        else:
            self._seq_limit = math.ceil(byte_limit / link.mss)
        self._outstanding: dict[int, tuple[int, float]] = {}  # seq -> (tid, sent_at)
        self._next_tid = 0
        self._rtx_queue: deque[int] = deque()
        self._rtx_set: set[int] = set()
        self._last_halving = -math.inf
        self._recovery_until = -1  # losses below this seq were already punished
        self.halvings = 0
        self.timeouts = 0
        self.sent_segments = 0
        # receiver side
        self._received: set[int] = set()
        self._next_expected = 0
        self.delivered_bytes = 0
        self.delivery_log: list[tuple[float, int]] = []

    # -- sender --

    def _new_segment_ready(self) -> bool:
        return self.next_seq < self._seq_limit

    def _on_new_seq(self, seq: int) -> None:
        """Hook for stream-backed subclasses to bind payload bytes to a seq."""

    def segment_payload(self, seq: int) -> int:
        """Application bytes carried by segment ``seq`` (wire cost is always
        one MSS; a final partial segment is padded)."""
        if self.byte_limit is not None and (seq + 1) * self.link.mss > self.byte_limit:
            return self.byte_limit - seq * self.link.mss
        return self.link.mss

    def _rtx_pending(self) -> bool:
        while self._rtx_queue and self._rtx_queue[0] not in self._rtx_set:
            self._rtx_queue.popleft()  # acked late, nothing to resend
        return bool(self._rtx_queue)

    def next_transmission(self, now: float) -> tuple[int, int] | None:
        """Pick the next segment to put on the wire, or None when window- or
        data-bound.  Retransmissions go first."""
        if self.in_flight >= self.cwnd:
            return None
        if self._rtx_pending():
            seq = self._rtx_queue.popleft()
            self._rtx_set.discard(seq)
        elif self._new_segment_ready():
            seq = self.next_seq
            self.next_seq += 1
            self._on_new_seq(seq)
        else:
            return None
        tid = self._next_tid
        self._next_tid += 1
        self._outstanding[seq] = (tid, now)
        self.in_flight += 1
        self.sent_segments += 1
        return seq, tid

    def on_ack(self, seq: int, now: float) -> None:
        if seq in self._outstanding:
            del self._outstanding[seq]
            self.in_flight -= 1
            if seq > self.highest_acked:
                self.highest_acked = seq
            if self.slow_start and self.cwnd < self.ssthresh:
                self.cwnd += 1.0
            else:
                self.cwnd += 1.0 / self.cwnd
            if self.loss_at_cwnd is not None and self.cwnd >= self.loss_at_cwnd:
                self.on_loss(now)
        else:
            # Ack for a segment already written off: it arrived after all,
            # so cancel any pending retransmission.
            self._rtx_set.discard(seq)

    def on_timeout(self, seq: int, tid: int, now: float) -> bool:
        """Retransmission timer fired.  True if this detected a real loss;
        a stale timer (segment acked or already retransmitted) is ignored."""
        entry = self._outstanding.get(seq)
        if entry is None or entry[0] != tid:
            return False
        del self._outstanding[seq]
        self.in_flight -= 1
        if seq not in self._rtx_set:
            self._rtx_set.add(seq)
            self._rtx_queue.append(seq)
        self.timeouts += 1
        # One decrease per window of data: a queue-overflow episode drops a
        # run of segments whose timers fire over several RTTs, and punishing
        # each one would collapse the window well below the pipe size.
        if seq >= self._recovery_until:
            self.on_loss(now)
        return True

    def on_loss(self, now: float) -> bool:
        """Multiplicative decrease, at most once per base RTT."""
        if now - self._last_halving < self.link.rtt_base:
            return False
        if self.slow_start:
            self.ssthresh = max(self.cwnd / 2.0, 1.0)
        self.cwnd = max(1.0, self.cwnd / 2.0)
        self._last_halving = now
        self._recovery_until = self.next_seq
        self.halvings += 1
        return True

    # -- receiver --

    def on_segment_arrival(self, seq: int, now: float) -> bool:
        """True if this segment is new; duplicates are still acked but not
        counted as delivered."""
        if seq < self._next_expected or seq in self._received:
            return False
        # Payload size is read before the release loop: releasing a segment
        # may consume its backing bytes in stream-backed subclasses.
        payload = self.segment_payload(seq)
        self._received.add(seq)
        while self._next_expected in self._received:
            self._received.discard(self._next_expected)
            self._release(self._next_expected, now)
            self._next_expected += 1
        self.delivered_bytes += payload
        self.delivery_log.append((now, payload))
        return True

    def _release(self, seq: int, now: float) -> None:
        """In-order delivery hook for stream-backed subclasses."""

    def state(self) -> AimdFlowState:
        return AimdFlowState(
            flow_id=self.flow_id,
            cwnd=self.cwnd,
            rtt_base=self.link.rtt_base,
            in_flight=self.in_flight,
            delivered=self.delivered_bytes,
            next_seq=self.next_seq,
            highest_acked=self.highest_acked,
        )


class Network:
    """The bottleneck, the clock, and the event queue."""

    def __init__(self, link: LinkConfig, *, record_events: bool = False):
        self.link = link
        self.rng = np.random.Generator(np.random.PCG64(link.seed))
        self.now = 0.0
        self.flows: dict[str, AimdFlow] = {}
        self._heap: list = []
        self._counter = itertools.count()
        self._queue: deque[tuple[str, int, int]] = deque()
        self._service_scheduled = False
        self.drops = 0
        self.bernoulli_losses = 0
        self.ack_losses = 0  # structurally zero: reverse path is lossless
        self.max_queue_len = 0
        self.event_log: list[EventRecord] | None = [] if record_events else None

    def add_flow(self, flow: AimdFlow) -> AimdFlow:
        if flow.flow_id in self.flows:
            raise ValueError(f"duplicate flow_id {flow.flow_id!r}")
        self.flows[flow.flow_id] = flow
        self._schedule(flow.start_time, "start", flow.flow_id)
        return flow

    def _schedule(self, t: float, kind: str, data) -> None:
        heapq.heappush(self._heap, (t, next(self._counter), kind, data))

    def _log(self, kind: str, flow_id: str, seq: int) -> EventRecord:
        record = EventRecord(self.now, kind, flow_id, seq)
        if self.event_log is not None:
            self.event_log.append(record)
        return record

    def pump(self, flow: AimdFlow) -> None:
        """Transmit as much as the flow's window allows right now."""
        if self.now < flow.start_time:
            return
        while (tx := flow.next_transmission(self.now)) is not None:
            seq, tid = tx
            self._log("send", flow.flow_id, seq)
            self._schedule(self.now, "arrival", (flow.flow_id, seq, tid))
            self._schedule(self.now + flow.timeout_interval, "timeout", (flow.flow_id, seq, tid))

    def step(self) -> EventRecord | None:
        """Execute one event; None when the queue is empty."""
        if not self._heap:
            return None
        t, _, kind, data = heapq.heappop(self._heap)
        self.now = t
        return self._execute(kind, data)

    def run_until(self, t: float) -> None:
        while self._heap and self._heap[0][0] <= t:
            self.step()
        self.now = max(self.now, t)

    def run(self, duration: float) -> None:
        self.run_until(self.now + duration)

    def idle(self) -> bool:
        return not self._heap

    def schedule_call(self, t: float, fn) -> None:
        """Run ``fn()`` when the clock reaches ``t``.  Plumbing for stream
        bridges and experiment drivers; calls are not part of the event log."""
        if t < self.now:
            raise ValueError(f"cannot schedule at {t} before now {self.now}")
        self._schedule(t, "call", fn)

    def inject_loss(self, flow_ids=None) -> dict[str, bool]:
        """Force a synchronized loss signal on the given flows (all by
        default).  Returns which flows actually halved."""
        ids = list(self.flows) if flow_ids is None else list(flow_ids)
        return {fid: self.flows[fid].on_loss(self.now) for fid in ids}

    def flow_states(self) -> dict[str, AimdFlowState]:
        return {fid: flow.state() for fid, flow in self.flows.items()}

    def log_digest(self) -> str:
        if self.event_log is None:
            raise ValueError("event recording was not enabled")
        h = hashlib.sha256()
        for e in self.event_log:
            h.update(f"{e.time:.9f} {e.kind} {e.flow_id} {e.seq}\n".encode())
        return h.hexdigest()

    # -- event execution --

    def _execute(self, kind: str, data) -> EventRecord:
        if kind == "start":
            flow = self.flows[data]
            record = EventRecord(self.now, "start", data, -1)
            self.pump(flow)
            return record
        if kind == "arrival":
            flow_id, seq, tid = data
            if len(self._queue) >= self.link.queue_limit:
                self.drops += 1
                return self._log("drop", flow_id, seq)
            self._queue.append(data)
            self.max_queue_len = max(self.max_queue_len, len(self._queue))
            if not self._service_scheduled:
                self._service_scheduled = True
                self._schedule(self.now + self.link.service_time, "service", None)
            return EventRecord(self.now, "enqueue", flow_id, seq)
        if kind == "service":
            flow_id, seq, tid = self._queue.popleft()
            if self._queue:
                self._schedule(self.now + self.link.service_time, "service", None)
            else:
                self._service_scheduled = False
            if self.link.loss_probability > 0.0 and self.rng.random() < self.link.loss_probability:
                self.bernoulli_losses += 1
                return self._log("loss", flow_id, seq)
            self._schedule(self.now + self.link.one_way_delay, "deliver", (flow_id, seq, tid))
            return EventRecord(self.now, "service", flow_id, seq)
        if kind == "deliver":
            flow_id, seq, tid = data
            flow = self.flows[flow_id]
            fresh = flow.on_segment_arrival(seq, self.now)
            record = self._log("deliver" if fresh else "dup", flow_id, seq)
            # Per-segment ack on the lossless reverse path: delay, no queue.
            self._schedule(self.now + self.link.one_way_delay, "ack", (flow_id, seq))
            return record
        if kind == "ack":
            flow_id, seq = data
            flow = self.flows[flow_id]
            flow.on_ack(seq, self.now)
            record = self._log("ack", flow_id, seq)
            self.pump(flow)
            return record
        if kind == "timeout":
            flow_id, seq, tid = data
            flow = self.flows[flow_id]
            if flow.on_timeout(seq, tid, self.now):
                record = self._log("timeout", flow_id, seq)
                self.pump(flow)
                return record
            return EventRecord(self.now, "stale-timer", flow_id, seq)
        if kind == "call":
            data()
            return EventRecord(self.now, "call", "", -1)
        raise AssertionError(f"unknown event kind {kind!r}")


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def aggregate_window_reduction(flow_count: int, flows_hit: int) -> float:
    """Fraction of the aggregate window lost when ``flows_hit`` of
    ``flow_count`` equal-window flows halve simultaneously."""
    if flow_count < 1:
        raise ValueError(f"flow_count must be >= 1, got {flow_count}")
    if not 0 <= flows_hit <= flow_count:
        raise ValueError(f"flows_hit must be in [0, {flow_count}], got {flows_hit}")
    return flows_hit / (2 * flow_count)


def steady_state_throughput(w_max: float, mss: int, rtt: float) -> float:
    """Mean rate of the AIMD sawtooth oscillating between w_max/2 and
    w_max: 0.75 * w_max * mss / rtt, in bytes/second."""
    if w_max < 2:
        raise ValueError(f"w_max must be >= 2, got {w_max}")
    if rtt <= 0:
        raise ValueError(f"rtt must be > 0, got {rtt}")
    return 0.75 * w_max * mss / rtt


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowSpec:
    flow_id: str
    role: str = "targeted"
    start_time: float = 0.0
    byte_limit: int | None = None


def run_scenario(
    link: LinkConfig,
    flows: list[FlowSpec],
    duration: float,
    *,
    bucket_width: float = 0.1,
) -> list[FlowTrace]:
    """Simulate all flows sharing the bottleneck for ``duration`` seconds
    and return per-flow delivered-bytes traces.  Output is a pure function
    of (link, flows, duration, bucket_width)."""
    if not flows:
        raise ValueError("need at least one flow")
    if duration <= 0:
        raise ValueError(f"duration must be > 0, got {duration}")
    network = Network(link)
    for spec in flows:
        network.add_flow(
            AimdFlow(
                spec.flow_id,
                link,
                role=spec.role,
                start_time=spec.start_time,
                byte_limit=spec.byte_limit,
            )
        )
    network.run_until(duration)
    n_buckets = math.ceil(duration / bucket_width)
    traces = []
    for spec in flows:
        flow = network.flows[spec.flow_id]
        buckets = [0.0] * n_buckets
        for t, nbytes in flow.delivery_log:
            buckets[min(int(t / bucket_width), n_buckets - 1)] += nbytes
        traces.append(FlowTrace(spec.flow_id, spec.role, bucket_width, buckets))
    return traces


# ---------------------------------------------------------------------------
# Scenario config files: flat key=value text
# ---------------------------------------------------------------------------

_SCENARIO_DEFAULTS = {
    "capacity_bps": "10000000",
    "one_way_delay_s": "0.05",
    "queue_limit_pkts": "50",
    "loss_prob": "0.0",
    "mss_bytes": "1500",
    "seed": "0",
    "duration_s": "30.0",
    "flows": "1+1",
}


@dataclass(frozen=True)
class ScenarioConfig:
    link: LinkConfig
    duration: float
    targeted_flows: int
    background_flows: int


def parse_kv(text: str) -> dict[str, str]:
    """Parse flat key=value lines; '#' starts a comment, blanks skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ValueError(f"duplicate key {key}")
        out[key] = value.strip()
    return out


def _take(kv: dict[str, str], key: str, convert):
    raw = kv.pop(key, _SCENARIO_DEFAULTS[key])
    try:
        return convert(raw)
    except ValueError:
        raise ValueError(f"invalid value for {key}: {raw!r}") from None


def _parse_flows(raw: str) -> tuple[int, int]:
    if "+" not in raw:
        raise ValueError()
    left, right = raw.split("+", 1)
    return int(left), int(right)


def scenario_from_keys(kv: dict[str, str]) -> ScenarioConfig:
    """Build a scenario from a key=value mapping, consuming the keys it
    recognizes.  Leftover keys are the caller's to validate."""
    capacity = _take(kv, "capacity_bps", float)
    delay = _take(kv, "one_way_delay_s", float)
    queue_limit = _take(kv, "queue_limit_pkts", int)
    loss = _take(kv, "loss_prob", float)
    mss = _take(kv, "mss_bytes", int)
    seed = _take(kv, "seed", int)
    duration = _take(kv, "duration_s", float)
    targeted, background = _take(kv, "flows", _parse_flows)
    if capacity <= 0:
        raise ValueError(f"capacity_bps must be > 0, got {capacity}")
    if delay < 0:
        raise ValueError(f"one_way_delay_s must be >= 0, got {delay}")
    if queue_limit < 1:
        raise ValueError(f"queue_limit_pkts must be >= 1, got {queue_limit}")
    if not 0.0 <= loss <= 1.0:
        raise ValueError(f"loss_prob must be in [0,1], got {loss}")
    if mss < 1:
        raise ValueError(f"mss_bytes must be >= 1, got {mss}")
    if duration <= 0:
        raise ValueError(f"duration_s must be > 0, got {duration}")
    if targeted < 1:
        raise ValueError(f"flows must name at least one targeted flow, got {targeted}")
    if background < 0:
        raise ValueError(f"flows background count must be >= 0, got {background}")
    link = LinkConfig(
        capacity=capacity,
        one_way_delay=delay,
        queue_limit=queue_limit,
        loss_probability=loss,
        mss=mss,
        seed=seed,
    )
    return ScenarioConfig(
        link=link, duration=duration, targeted_flows=targeted, background_flows=background
    )


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse a complete scenario config; unknown keys are errors."""
    kv = parse_kv(text)
    config = scenario_from_keys(kv)
    if kv:
        raise ValueError(f"unknown key {sorted(kv)[0]}")
    return config
