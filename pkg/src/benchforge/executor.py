"""Four-phase suite execution: install, prepare, run, report inputs.

Benchmarks execute sequentially in suite order so results stay
uncontaminated; the processes of one benchmark run concurrently across
the declared device pool. Every child gets a dedicated metric channel
(a pipe named via BENCHFORGE_METRICS_FD); stderr passes through
untouched.

Run layout: ``<base>/runs/<stamp>/<bench>/<rank>.jsonl`` plus
``meta.json``, ``suite.yaml`` and per-benchmark ``outcomes.json``.
"""

from __future__ import annotations

import hashlib
import json
import os
import shlex
import signal
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .protocol import (
    MetricEvent,
    Observation,
    ObservationLog,
    StreamDecoder,
    events_only,
)
from .suite import BenchmarkSpec, SuiteConfig, render_suite

INSTALL_STAMP = ".installed"
PREPARE_STAMP = ".prepared"


class ExecutorError(RuntimeError):
    pass


@dataclass(frozen=True)
class DevicePool:
    """Declared (never probed) pool of opaque device ids across nodes.

    Devices are split over nodes in contiguous chunks, earlier nodes
    taking the remainder.
    """

    devices: tuple[str, ...]
    nodes: int = 1

    def __post_init__(self) -> None:
        if not self.devices:
            raise ExecutorError("device pool must not be empty")
        if len(set(self.devices)) != len(self.devices):
            raise ExecutorError("device ids must be unique")
        if not 1 <= self.nodes <= len(self.devices):
            raise ExecutorError(
                f"need 1 <= nodes <= {len(self.devices)}, got {self.nodes}"
            )

    def node_of(self, device: str) -> int:
        index = self.devices.index(device)
        base, extra = divmod(len(self.devices), self.nodes)
        for node in range(self.nodes):
            size = base + (1 if node < extra else 0)
            if index < size:
                return node
            index -= size
        raise ExecutorError(f"device {device!r} not in pool")

    def node_devices(self, node: int) -> tuple[str, ...]:
        return tuple(d for d in self.devices if self.node_of(d) == node)


@dataclass
class ProcessPlan:
    """One resolved child-process launch."""

    bench: str
    rank: int
    world_size: int
    devices: tuple[str, ...]
    env: dict[str, str]
    command: tuple[str, ...]
    timeout_s: float
    obs_min: int
    gang_id: str | None = None
    node: int = 0


@dataclass
class ProcessOutcome:
    plan: ProcessPlan
    log: ObservationLog
    exit_code: int
    duration_s: float
    classified: str  # one of {success, error, timeout}


@dataclass
class RunRecord:
    bench: str
    outcomes: list[ProcessOutcome] = field(default_factory=list)
    phase_durations: dict[str, float] = field(default_factory=dict)
    run_dir: Path | None = None
    error: str | None = None


def _resolve(template: str, values: dict[str, object]) -> tuple[str, ...]:
    try:
        return tuple(shlex.split(template.format_map(values)))
    except (KeyError, ValueError) as exc:
        raise ExecutorError(f"cannot resolve command template {template!r}: {exc}") from exc


def _phase_values(base_dir: Path, bench_dir: Path) -> dict[str, object]:
    return {
        "base_dir": str(base_dir),
        "bench_dir": str(bench_dir),
        "device_id": "",
        "device_count": 0,
        "rank": 0,
        "world_size": 1,
    }


def plan_launches(
    spec: BenchmarkSpec, pool: DevicePool, base_dir: Path | str = "."
) -> list[ProcessPlan]:
    """Turn one benchmark spec into resolved process launches.

    single-device: one independent process per pool device. node-devices:
    one gang whose ranks partition node 0's devices. multi-node: one gang
    spanning every node (simulated locally; the node id is exported).
    """
    base_dir = Path(base_dir)
    bench_dir = base_dir / "data" / spec.name

    if spec.scale == "single-device":
        chosen = [(rank, device) for rank, device in enumerate(pool.devices)]
        world_size = len(pool.devices)
        gang_id = None
    elif spec.scale == "node-devices":
        node0 = pool.node_devices(0)
        chosen = [(rank, device) for rank, device in enumerate(node0)]
        world_size = len(node0)
        gang_id = f"{spec.name}:node0"
    elif spec.scale == "multi-node":
        if pool.nodes < 2:
            raise ExecutorError(
                f"benchmark {spec.name!r} needs scale=multi-node but pool has "
                f"{pool.nodes} node(s): insufficient nodes"
            )
        chosen = [(rank, device) for rank, device in enumerate(pool.devices)]
        world_size = len(pool.devices)
        gang_id = f"{spec.name}:all-nodes"
    else:
        raise ExecutorError(f"unknown scale {spec.scale!r}")

    plans: list[ProcessPlan] = []
    for rank, device in chosen:
        values = {
            "device_id": device,
            "device_count": 1,
            "rank": rank,
            "world_size": world_size,
            "base_dir": str(base_dir),
            "bench_dir": str(bench_dir),
        }
        node = pool.node_of(device)
        env = dict(spec.env)
        env.update(
            {
                "BENCHFORGE_DEVICE": device,
                "BENCHFORGE_RANK": str(rank),
                "BENCHFORGE_WORLD_SIZE": str(world_size),
                "BENCHFORGE_NODE": str(node),
            }
        )
        if gang_id is not None:
            env["BENCHFORGE_GANG"] = gang_id
            env["BENCHFORGE_RENDEZVOUS"] = str(base_dir / "rendezvous" / spec.name)
        plans.append(
            ProcessPlan(
                bench=spec.name,
                rank=rank,
                world_size=world_size,
                devices=(device,),
                env=env,
                command=_resolve(spec.run_cmd, values),
                timeout_s=spec.timeout_s,
                obs_min=spec.obs_min,
                gang_id=gang_id,
                node=node,
            )
        )
    return plans


def log_from_events(events: list[MetricEvent], process_id: str) -> ObservationLog:
    """Rebuild an observation log from a decoded event stream."""
    log = ObservationLog(process_id=process_id, raw_events=list(events))
    terminal = None
    for event in events:
        if event.event == "rate":
            data = event.data
            work = float(data["batch"])
            if "t0" in data and "t1" in data:
                elapsed = float(data["t1"]) - float(data["t0"])
            else:
                elapsed = work / float(data["rate"])
            if elapsed <= 0:
                log.faults += 1
                continue
            log.observations.append(
                Observation(
                    work=work,
                    elapsed=elapsed,
                    loss=None,
                    warmup=bool(data.get("warmup", False)),
                    task=event.task,
                )
            )
        elif event.event == "success" and terminal is None:
            terminal = "success"
        elif event.event == "error" and terminal is None:
            terminal = "error"
            log.message = str(event.data.get("message", ""))
    log.terminal = terminal if terminal is not None else "error"
    return log


def supervise(plan: ProcessPlan, out_dir: Path | str) -> ProcessOutcome:
    """Launch one planned child and follow it to an outcome.

    The raw metric stream is captured verbatim to
    ``out_dir/<rank>.jsonl`` while being decoded. Classification:
    success iff the child exited 0, its log ended in success, and it
    gathered at least obs_min observations; a stalled child is killed at
    timeout_s (whole process group) and classified timeout.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stream_path = out_dir / f"{plan.rank}.jsonl"

    read_fd, write_fd = os.pipe()
    env = dict(os.environ)
    env.update(plan.env)
    env["BENCHFORGE_METRICS_FD"] = str(write_fd)

    started = time.monotonic()
    try:
        proc = subprocess.Popen(
            plan.command,
            env=env,
            pass_fds=(write_fd,),
            start_new_session=True,
        )
    except OSError as exc:
        os.close(read_fd)
        os.close(write_fd)
        stream_path.write_bytes(b"")
        log = ObservationLog(process_id=f"{plan.bench}/{plan.rank}", message=str(exc))
        return ProcessOutcome(plan, log, exit_code=-1, duration_s=0.0, classified="error")
    os.close(write_fd)

    events: list[MetricEvent] = []

    def pump() -> None:
        decoder = StreamDecoder()
        with open(stream_path, "wb") as capture:
            while True:
                chunk = os.read(read_fd, 65536)
                if not chunk:
                    break
                capture.write(chunk)
                events.extend(events_only(decoder.feed(chunk)))
            events.extend(events_only(decoder.finish()))
        os.close(read_fd)

    reader = threading.Thread(target=pump, daemon=True)
    reader.start()

    timed_out = False
    try:
        exit_code = proc.wait(timeout=plan.timeout_s)
    except subprocess.TimeoutExpired:
        timed_out = True
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            proc.kill()
        exit_code = proc.wait()
    duration = time.monotonic() - started
    reader.join(timeout=10.0)

    log = log_from_events(events, process_id=f"{plan.bench}/{plan.rank}")
    if timed_out:
        log.terminal = "timeout"
        classified = "timeout"
    elif exit_code == 0 and log.terminal == "success" and len(log.observations) >= plan.obs_min:
        classified = "success"
    else:
        classified = "error"
        if exit_code == 0 and len(log.observations) < plan.obs_min:
            log.message = log.message or "insufficient observations"
    return ProcessOutcome(
        plan, log, exit_code=exit_code, duration_s=duration, classified=classified
    )


def _stamp_token(command: str) -> str:
    return hashlib.sha256(command.encode("utf-8")).hexdigest()


def _setup_phase(
    cfg: SuiteConfig,
    base_dir: Path,
    *,
    subdir: str,
    stamp_name: str,
    command_of,
    requires_install: bool = False,
) -> dict[str, str]:
    base_dir = Path(base_dir)
    statuses: dict[str, str] = {}
    for bench in cfg.enabled_benchmarks():
        command = command_of(bench)
        bench_dir = base_dir / subdir / bench.name
        if not command:
            statuses[bench.name] = "not-required"
            continue
        if requires_install and bench.install_cmd:
            install_stamp = base_dir / "envs" / bench.name / INSTALL_STAMP
            if not (
                install_stamp.exists()
                and install_stamp.read_text() == _stamp_token(bench.install_cmd)
            ):
                statuses[bench.name] = "blocked: install incomplete"
                continue
        stamp = bench_dir / stamp_name
        if stamp.exists() and stamp.read_text() == _stamp_token(command):
            statuses[bench.name] = "skipped"
            continue
        bench_dir.mkdir(parents=True, exist_ok=True)
        argv = _resolve(command, _phase_values(base_dir, bench_dir))
        try:
            result = subprocess.run(
                argv,
                cwd=bench_dir,
                env={**os.environ, **bench.env},
                timeout=bench.timeout_s,
            )
            ok = result.returncode == 0
        except (OSError, subprocess.TimeoutExpired):
            ok = False
        if ok:
            stamp.write_text(_stamp_token(command))
            statuses[bench.name] = "done"
        else:
            statuses[bench.name] = "failed"
    return statuses


def install(cfg: SuiteConfig, base_dir: Path | str) -> dict[str, str]:
    """Run each enabled benchmark's install command in its own env dir.

    Idempotent: a matching stamp file skips the command entirely. One
    failure never blocks the other benchmarks.
    """
    return _setup_phase(
        cfg,
        Path(base_dir),
        subdir="envs",
        stamp_name=INSTALL_STAMP,
        command_of=lambda b: b.install_cmd,
    )


def prepare(cfg: SuiteConfig, base_dir: Path | str) -> dict[str, str]:
    """Run each enabled benchmark's prepare command in its data dir."""
    return _setup_phase(
        cfg,
        Path(base_dir),
        subdir="data",
        stamp_name=PREPARE_STAMP,
        command_of=lambda b: b.prepare_cmd,
        requires_install=True,
    )


def _setup_complete(bench: BenchmarkSpec, base_dir: Path) -> str | None:
    if bench.install_cmd:
        stamp = base_dir / "envs" / bench.name / INSTALL_STAMP
        if not (stamp.exists() and stamp.read_text() == _stamp_token(bench.install_cmd)):
            return f"benchmark {bench.name!r}: install not completed (run `benchforge install`)"
    if bench.prepare_cmd:
        stamp = base_dir / "data" / bench.name / PREPARE_STAMP
        if not (stamp.exists() and stamp.read_text() == _stamp_token(bench.prepare_cmd)):
            return f"benchmark {bench.name!r}: prepare not completed (run `benchforge prepare`)"
    return None


def run(
    cfg: SuiteConfig,
    pool: DevicePool,
    base_dir: Path | str,
    *,
    system: str | None = None,
    check_setup: bool = True,
) -> tuple[Path, list[RunRecord]]:
    """Execute every enabled benchmark over the pool, sequentially.

    A benchmark failure never aborts the suite; it is recorded and the
    run continues. Returns the run directory and one RunRecord per
    enabled benchmark, in suite order.
    """
    base_dir = Path(base_dir)
    if check_setup:
        for bench in cfg.enabled_benchmarks():
            problem = _setup_complete(bench, base_dir)
            if problem:
                raise ExecutorError(problem)

    run_dir = _new_run_dir(base_dir)
    (run_dir / "suite.yaml").write_text(render_suite(cfg), encoding="utf-8")
    meta = {
        "suite_name": cfg.suite_name,
        "suite_sha256": cfg.sha256(),
        "system": system or os.uname().nodename,
        "created_unix": time.time(),
        "pool": {"devices": list(pool.devices), "nodes": pool.nodes},
        "benchmarks": [b.name for b in cfg.enabled_benchmarks()],
    }
    (run_dir / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")

    records: list[RunRecord] = []
    for bench in cfg.enabled_benchmarks():
        records.append(_run_bench(bench, pool, base_dir, run_dir))
    return run_dir, records


def _run_bench(
    bench: BenchmarkSpec, pool: DevicePool, base_dir: Path, run_dir: Path
) -> RunRecord:
    record = RunRecord(bench=bench.name, run_dir=run_dir)
    bench_out = run_dir / bench.name
    started = time.monotonic()
    try:
        plans = plan_launches(bench, pool, base_dir)
    except ExecutorError as exc:
        record.error = str(exc)
        bench_out.mkdir(parents=True, exist_ok=True)
        _write_outcomes(bench_out, record)
        record.phase_durations["run"] = time.monotonic() - started
        return record

    with ThreadPoolExecutor(max_workers=len(plans)) as executor:
        futures = [executor.submit(supervise, plan, bench_out) for plan in plans]
        outcomes = [f.result() for f in futures]
    outcomes.sort(key=lambda o: o.plan.rank)

    # A gang succeeds or fails as one unit; any failed rank fails the rest.
    if bench.scale != "single-device" and any(o.classified != "success" for o in outcomes):
        for outcome in outcomes:
            if outcome.classified == "success":
                outcome.classified = "error"
                outcome.log.message = "gang member failed"

    record.outcomes = outcomes
    record.phase_durations["run"] = time.monotonic() - started
    _write_outcomes(bench_out, record)
    return record


def _write_outcomes(bench_out: Path, record: RunRecord) -> None:
    rows = [
        {
            "rank": o.plan.rank,
            "devices": list(o.plan.devices),
            "gang_id": o.plan.gang_id,
            "exit_code": o.exit_code,
            "duration_s": o.duration_s,
            "classified": o.classified,
            "observations": len(o.log.observations),
            "message": o.log.message,
        }
        for o in record.outcomes
    ]
    payload = {"bench": record.bench, "error": record.error, "outcomes": rows}
    (bench_out / "outcomes.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")


def _new_run_dir(base_dir: Path) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
    candidate = base_dir / "runs" / stamp
    suffix = 0
    while candidate.exists():
        suffix += 1
        candidate = base_dir / "runs" / f"{stamp}-{suffix}"
    candidate.mkdir(parents=True)
    return candidate


@dataclass
class LoadedRun:
    """A run directory read back for reporting."""

    run_dir: Path
    meta: dict
    suite: SuiteConfig
    records: dict[str, RunRecord]


def load_run(run_dir: Path | str) -> LoadedRun:
    """Read a completed run directory back into foldable records."""
    from .suite import parse_suite

    run_dir = Path(run_dir)
    meta_path = run_dir / "meta.json"
    if not meta_path.exists():
        raise ExecutorError(f"{run_dir} is not a run directory (missing meta.json)")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    suite = parse_suite((run_dir / "suite.yaml").read_text(encoding="utf-8"))

    records: dict[str, RunRecord] = {}
    for bench in suite.enabled_benchmarks():
        bench_dir = run_dir / bench.name
        record = RunRecord(bench=bench.name, run_dir=run_dir)
        outcomes_path = bench_dir / "outcomes.json"
        if not outcomes_path.exists():
            record.error = "no outcomes recorded"
            records[bench.name] = record
            continue
        payload = json.loads(outcomes_path.read_text(encoding="utf-8"))
        record.error = payload.get("error")
        for row in payload["outcomes"]:
            rank = row["rank"]
            stream = bench_dir / f"{rank}.jsonl"
            events = []
            if stream.exists():
                decoder = StreamDecoder()
                events = events_only(decoder.feed(stream.read_bytes()))
                events.extend(events_only(decoder.finish()))
            log = log_from_events(events, process_id=f"{bench.name}/{rank}")
            plan = ProcessPlan(
                bench=bench.name,
                rank=rank,
                world_size=len(payload["outcomes"]),
                devices=tuple(row.get("devices", ())),
                env={},
                command=(),
                timeout_s=bench.timeout_s,
                obs_min=bench.obs_min,
                gang_id=row.get("gang_id"),
            )
            record.outcomes.append(
                ProcessOutcome(
                    plan=plan,
                    log=log,
                    exit_code=row["exit_code"],
                    duration_s=row["duration_s"],
                    classified=row["classified"],
                )
            )
        records[bench.name] = record
    return LoadedRun(run_dir=run_dir, meta=meta, suite=suite, records=records)
