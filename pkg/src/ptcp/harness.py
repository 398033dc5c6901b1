"""Experiment orchestration: the parallelism sweep and fairness matrix.

For each parallelism level n and repetition, one targeted application
(n connections) competes with single-connection background traffic
through a shared bottleneck.  Simulated runs drive the event loop and are
bit-reproducible per seed (repetition r uses seed ``base_seed + r``);
socket runs use real loopback connections and measure whatever the host
delivers.  Results land in ``throughput.csv`` and ``fairness.csv`` plus a
``meta.txt`` recording the resolved configuration, with optional per-flow
trace dumps.
"""

from __future__ import annotations

import csv
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .metrics import (
    FairnessReport,
    FlowTrace,
    fairness_report,
    jain_fairness,
    steady_window,
    throughput_ratio,
)
from .simnet import FlowSpec, LinkConfig, parse_kv, run_scenario, scenario_from_keys
from .striping import Receiver, send_transfer
from .transport import TcpTransport

TRACE_BUCKET_WIDTH = 0.1
BACKGROUND_HEAD_START = 1.0  # competitor is established before targeted flows start

_EXPERIMENT_DEFAULTS = {
    "mode": "sim",
    "levels": "1,2,4,8,16",
    "payload_bytes": str(4 * 1024 * 1024),
    "repetitions": "3",
    "host": "127.0.0.1",
    "port": "0",
    "out": "results",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment matrix: sweep levels x repetitions on one link."""

    mode: str  # "sim" or "sockets"
    levels: tuple[int, ...]  # parallelism sweep, ascending
    payload_size: int  # bytes per transfer (socket mode)
    repetitions: int
    link: LinkConfig
    duration: float  # measurement length per simulated run
    background_count: int
    host: str
    port: int
    out_dir: str


@dataclass(frozen=True)
class LevelResult:
    """One cell of the matrix: rates in bits/second plus the full report."""

    n: int
    rep: int
    targeted_bps: float
    background_bps: float
    throughput_ratio: float
    fairness: FairnessReport
    traces: list[FlowTrace]


def experiment_from_keys(kv: dict[str, str]) -> ExperimentConfig:
    """Build a config from flat key=value pairs, consuming link keys first.

    The targeted component of the ``flows`` key is ignored: the sweep in
    ``levels`` decides how many targeted connections each run gets.
    """
    scenario = scenario_from_keys(kv)
    if scenario.background_flows < 1:
        raise ValueError(
            "flows must include at least one background flow for experiments, "
            f"got {scenario.background_flows}"
        )

    def take(key: str) -> str:
        return kv.pop(key, _EXPERIMENT_DEFAULTS[key])

    mode = take("mode")
    if mode not in ("sim", "sockets"):
        raise ValueError(f"mode must be 'sim' or 'sockets', got {mode!r}")

    levels_text = take("levels")
    try:
        levels = tuple(int(part) for part in levels_text.split(","))
    except ValueError:
        raise ValueError(f"levels must be comma-separated integers, got {levels_text!r}") from None
    if not levels or min(levels) < 1:
        raise ValueError(f"levels must all be >= 1, got {levels_text!r}")
    if len(set(levels)) != len(levels):
        raise ValueError(f"levels must be distinct, got {levels_text!r}")

    payload_text = take("payload_bytes")
    try:
        payload_size = int(payload_text)
    except ValueError:
        raise ValueError(f"payload_bytes must be an integer, got {payload_text!r}") from None
    if payload_size < 1:
        raise ValueError(f"payload_bytes must be >= 1, got {payload_size}")

    repetitions_text = take("repetitions")
    try:
        repetitions = int(repetitions_text)
    except ValueError:
        raise ValueError(f"repetitions must be an integer, got {repetitions_text!r}") from None
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")

    host = take("host")
    port_text = take("port")
    try:
        port = int(port_text)
    except ValueError:
        raise ValueError(f"port must be an integer, got {port_text!r}") from None
    if not 0 <= port <= 65535:
        raise ValueError(f"port must be in [0, 65535], got {port}")

    out_dir = take("out")
    if kv:
        raise ValueError(f"unknown config key: {sorted(kv)[0]}")
    return ExperimentConfig(
        mode=mode,
        levels=tuple(sorted(levels)),
        payload_size=payload_size,
        repetitions=repetitions,
        link=scenario.link,
        duration=scenario.duration,
        background_count=scenario.background_flows,
        host=host,
        port=port,
        out_dir=out_dir,
    )


def parse_experiment(text: str) -> ExperimentConfig:
    return experiment_from_keys(parse_kv(text))


def load_experiment(path) -> ExperimentConfig:
    return parse_experiment(Path(path).read_text())


# ---------------------------------------------------------------------------
# Running one cell of the matrix
# ---------------------------------------------------------------------------


def _measure(traces: list[FlowTrace], link: LinkConfig):
    """Steady-window aggregate rates (bytes/s) and the fairness report."""
    window = steady_window(traces)
    capacity_bytes = link.capacity / 8.0
    report = fairness_report(traces, window, capacity=capacity_bytes)
    targeted = report.per_application.get("targeted", 0.0)
    background = report.per_application.get("background", 0.0)
    return targeted, background, throughput_ratio(targeted, capacity_bytes), report


def sim_flow_specs(n: int, background_count: int) -> list[FlowSpec]:
    background = [
        FlowSpec(f"background-{j}", role="background", start_time=0.0)
        for j in range(background_count)
    ]
    targeted = [
        FlowSpec(f"targeted-{i}", role="targeted", start_time=BACKGROUND_HEAD_START)
        for i in range(n)
    ]
    return background + targeted


def run_level_sim(config: ExperimentConfig, n: int, rep: int) -> LevelResult:
    link = replace(config.link, seed=config.link.seed + rep)
    traces = run_scenario(
        link,
        sim_flow_specs(n, config.background_count),
        config.duration,
        bucket_width=TRACE_BUCKET_WIDTH,
    )
    targeted, background, ratio, report = _measure(traces, link)
    return LevelResult(n, rep, targeted * 8.0, background * 8.0, ratio, report, traces)


def _bucketize(flow_id: str, role: str, events: list[tuple[float, int]]) -> FlowTrace:
    """Accumulate (time, bytes) events into fixed-width buckets from t=0."""
    width = TRACE_BUCKET_WIDTH
    last = max((t for t, _ in events), default=0.0)
    buckets = np.zeros(int(last // width) + 1, dtype=np.float64)
    for t, nbytes in events:
        buckets[int(t // width)] += nbytes
    return FlowTrace(flow_id, role, width, buckets)


def _random_payload(size: int, seed: int) -> bytes:
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.integers(0, 256, size, dtype=np.uint8).tobytes()


def run_level_sockets(config: ExperimentConfig, n: int, rep: int) -> LevelResult:
    """One loopback run: background sender, head start, targeted sender."""
    recv_transport = TcpTransport(config.host, config.port)
    receiver = Receiver(recv_transport)
    try:
        transport = TcpTransport(config.host, recv_transport.port)
        seed = config.link.seed + rep
        payloads = {
            "background": _random_payload(config.payload_size, 2 * seed),
            "targeted": _random_payload(config.payload_size, 2 * seed + 1),
        }
        reports = {}
        offsets = {}
        t0 = time.monotonic()

        def run_one(role: str, connections: int):
            offsets[role] = time.monotonic() - t0
            reports[role] = send_transfer(payloads[role], transport, connections)

        background = threading.Thread(target=run_one, args=("background", 1))
        background.start()
        time.sleep(BACKGROUND_HEAD_START)
        targeted = threading.Thread(target=run_one, args=("targeted", n))
        targeted.start()
        background.join()
        targeted.join()

        received = {}
        for _ in range(2):
            result = receiver.serve_one()
            for role, report in reports.items():
                if result.transfer_id == report.transfer_id:
                    received[role] = result
    finally:
        receiver.close()

    for role in ("background", "targeted"):
        report = reports[role]
        if not report.ok:
            raise RuntimeError(f"{role} transfer failed: {report.failure_reason}")
        if role not in received or not received[role].ok:
            reason = received[role].reason if role in received else "no completion"
            raise RuntimeError(f"{role} transfer failed at the receiver: {reason}")

    traces = []
    for role, result in sorted(received.items()):
        base = offsets[role]
        per_flow: dict[int, list[tuple[float, int]]] = {}
        for t, chunk_index, nbytes in result.timeline:
            per_flow.setdefault(chunk_index, []).append((base + t, nbytes))
        for chunk_index, events in sorted(per_flow.items()):
            traces.append(_bucketize(f"{role}-{chunk_index}", role, events))

    # Real transfers are bursts at staggered offsets, so rates come from each
    # connection's own active interval rather than a shared steady window.
    per_flow_rates = []
    for role in sorted(received):
        for stat in received[role].per_connection:
            per_flow_rates.append(stat.bytes / max(stat.end_time - stat.start_time, 1e-9))
    per_application = {
        role: result.total_size / max(result.wall_time, 1e-9)
        for role, result in received.items()
    }
    total = sum(per_application.values())
    capacity_bytes = config.link.capacity / 8.0
    report = FairnessReport(
        per_flow_throughput=per_flow_rates,
        flow_count=len(per_flow_rates),
        fairness_index=jain_fairness(per_flow_rates),
        per_application=per_application,
        shares={role: rate / total for role, rate in per_application.items()},
        utilization=total / capacity_bytes,
    )
    targeted_rate = per_application["targeted"]
    background_rate = per_application["background"]
    ratio = throughput_ratio(targeted_rate, capacity_bytes)
    return LevelResult(n, rep, targeted_rate * 8.0, background_rate * 8.0, ratio, report, traces)


def run_level(config: ExperimentConfig, n: int, rep: int) -> LevelResult:
    if config.mode == "sim":
        return run_level_sim(config, n, rep)
    return run_level_sockets(config, n, rep)


# ---------------------------------------------------------------------------
# The full matrix and its output files
# ---------------------------------------------------------------------------


def run_experiment(config: ExperimentConfig, *, write_traces: bool = False, log=None) -> list[LevelResult]:
    results = []
    for n in config.levels:
        for rep in range(config.repetitions):
            result = run_level(config, n, rep)
            results.append(result)
            if log is not None:
                log(
                    f"n={n} rep={rep}: targeted {result.targeted_bps / 1e6:.3f} Mbit/s, "
                    f"background {result.background_bps / 1e6:.3f} Mbit/s, "
                    f"ratio {result.throughput_ratio:.3f}, "
                    f"JFI {result.fairness.fairness_index:.4f}"
                )
    write_outputs(config, results, write_traces=write_traces)
    return results


def _meta_lines(config: ExperimentConfig) -> list[str]:
    link = config.link
    return [
        f"capacity_bps={link.capacity:g}",
        f"duration_s={config.duration:g}",
        f"flows=sweep+{config.background_count}",
        f"host={config.host}",
        "levels=" + ",".join(str(n) for n in config.levels),
        f"loss_prob={link.loss_probability:g}",
        f"mode={config.mode}",
        f"mss_bytes={link.mss}",
        f"one_way_delay_s={link.one_way_delay:g}",
        f"out={config.out_dir}",
        f"payload_bytes={config.payload_size}",
        f"port={config.port}",
        f"queue_limit_pkts={link.queue_limit}",
        f"repetitions={config.repetitions}",
        "rng=pcg64",
        f"seed={link.seed}",
    ]


def write_outputs(
    config: ExperimentConfig, results: list[LevelResult], *, write_traces: bool = False
) -> list[Path]:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "throughput.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n", "rep", "targeted_bps", "background_bps", "throughput_ratio"])
        for r in results:
            writer.writerow(
                [
                    r.n,
                    r.rep,
                    f"{r.targeted_bps:.3f}",
                    f"{r.background_bps:.3f}",
                    f"{r.throughput_ratio:.6f}",
                ]
            )
    written.append(path)

    path = out / "fairness.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n", "rep", "jfi_per_flow", "targeted_share", "background_share"])
        for r in results:
            writer.writerow(
                [
                    r.n,
                    r.rep,
                    f"{r.fairness.fairness_index:.6f}",
                    f"{r.fairness.shares.get('targeted', 0.0):.6f}",
                    f"{r.fairness.shares.get('background', 0.0):.6f}",
                ]
            )
    written.append(path)

    path = out / "meta.txt"
    path.write_text("".join(line + "\n" for line in _meta_lines(config)))
    written.append(path)

    if write_traces:
        for r in results:
            path = out / f"traces_n{r.n}_rep{r.rep}.csv"
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(
                    ["flow_id", "role", "bucket_width_s", "bucket_index", "delivered_bytes"]
                )
                for trace in r.traces:
                    for index, value in enumerate(trace.buckets):
                        writer.writerow(
                            [
                                trace.flow_id,
                                trace.role,
                                f"{trace.bucket_width:g}",
                                index,
                                f"{value:.1f}",
                            ]
                        )
            written.append(path)
    return written
