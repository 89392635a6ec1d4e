"""Measurement-loop tests: budgets, deferred flushing, determinism."""

import random

import pytest

from benchforge.protocol import ObservationLog
from benchforge.worker import (
    EpochBuffer,
    EventSink,
    TimerConfig,
    WorkloadSpec,
    flush_epoch,
    synthetic_workload,
    timed_iterate,
)


def run_workload(spec: WorkloadSpec, cfg: TimerConfig, seed: int = 0):
    sink = EventSink()
    log = timed_iterate(spec, cfg, sink, seed=seed)
    return log, sink.events


class TestBudget:
    def test_constant_workload_exact_budget(self):
        spec = WorkloadSpec(kind="constant", batch_size=32, base_rate=64.0)
        log, _ = run_workload(spec, TimerConfig(obs_min=30, obs_max=60))
        assert log.terminal == "success"
        assert len(log.observations) == 60
        for obs in log.observations:
            assert obs.rate == pytest.approx(64.0, rel=1e-9)

    def test_stop_mid_third_epoch_with_epoch_25(self):
        spec = WorkloadSpec(kind="constant", batches_per_epoch=25)
        behavior = synthetic_workload(spec, seed=0)
        log = timed_iterate(behavior, TimerConfig(obs_min=30, obs_max=60))
        assert log.terminal == "success"
        assert len(log.observations) == 60
        # Budget check fires before the 61st batch would start.
        assert behavior.batches_started == 60

    def test_epochs_exhausted_between_min_and_max_is_success(self):
        spec = WorkloadSpec(kind="constant", batches_per_epoch=7)
        log, _ = run_workload(spec, TimerConfig(obs_min=10, obs_max=60, epochs_max=2))
        assert log.terminal == "success"
        assert len(log.observations) == 14

    def test_insufficient_observations_is_an_error(self):
        spec = WorkloadSpec(kind="constant", batches_per_epoch=3)
        log, events = run_workload(spec, TimerConfig(obs_min=30, obs_max=60, epochs_max=2))
        assert log.terminal == "error"
        assert log.message == "insufficient observations"
        assert len(log.observations) == 6
        assert any(e.event == "error" for e in events)

    def test_crash_keeps_observations_gathered_so_far(self):
        spec = WorkloadSpec(kind="crashing", crash_after=10)
        log, events = run_workload(spec, TimerConfig(obs_min=30, obs_max=60))
        assert log.terminal == "error"
        assert len(log.observations) == 10
        kinds = [e.event for e in events]
        assert kinds[-2:] == ["error", "end"]


class TestFlush:
    def test_three_tuples_constant_rate(self):
        buf = EpochBuffer()
        for i in range(3):
            buf.record(i * 0.5, (i + 1) * 0.5, 32, None)
        observations = flush_epoch(buf)
        assert [o.rate for o in observations] == [64.0, 64.0, 64.0]
        assert buf.pending == []

    def test_empty_buffer(self):
        sink = EventSink()
        assert flush_epoch(EpochBuffer(), sink) == []
        assert sink.events == []

    def test_randomized_tuples_match_recomputation(self):
        rng = random.Random(11)
        buf = EpochBuffer()
        expected = []
        t = 0.0
        for _ in range(200):
            elapsed = rng.uniform(1e-4, 3.0)
            work = rng.randint(1, 512)
            buf.record(t, t + elapsed, work, None)
            expected.append(work / elapsed)  # independent recomputation
            t += elapsed
        observations = flush_epoch(buf)
        assert len(observations) == 200
        for obs, want in zip(observations, expected):
            assert obs.rate == pytest.approx(want, rel=1e-12)

    def test_backwards_stamps_dropped_and_counted(self):
        buf = EpochBuffer()
        buf.record(0.0, 1.0, 10, None)
        buf.record(2.0, 1.5, 10, None)  # end before start: measurement fault
        buf.record(3.0, 3.0, 10, None)  # zero elapsed: also invalid
        observations = flush_epoch(buf)
        assert len(observations) == 1
        assert buf.faults == 2

    def test_emits_one_rate_line_per_observation(self):
        buf = EpochBuffer()
        buf.record(0.0, 0.5, 32, 1.5)
        buf.record(0.5, 1.0, 32, 1.4)
        sink = EventSink()
        flush_epoch(buf, sink, units="images", time=2.0)
        rates = [e for e in sink.events if e.event == "rate"]
        losses = [e for e in sink.events if e.event == "loss"]
        assert len(rates) == 2
        assert len(losses) == 2
        assert rates[0].data["warmup"] is True
        assert "warmup" not in rates[1].data
        assert all(e.time == 2.0 for e in sink.events)


class TestDeferredEmission:
    def test_no_rate_line_between_batch_start_and_flush(self):
        spec = WorkloadSpec(kind="jitter", jitter_frac=0.2, batches_per_epoch=13)
        _, events = run_workload(spec, TimerConfig(obs_min=30, obs_max=60), seed=5)
        flush_time = None
        for event in events:
            if event.event == "phase" and event.data.get("phase") == "flush":
                flush_time = event.time
            elif event.event == "rate":
                assert flush_time is not None, "rate line before any flush marker"
                # Emitted at the flush, after the batch window closed.
                assert event.time >= flush_time
                assert event.data["t1"] <= event.time
                assert event.data["t0"] < event.data["t1"]

    def test_rate_lines_only_after_epoch_marker_in_stream_order(self):
        spec = WorkloadSpec(kind="constant", batches_per_epoch=10)
        _, events = run_workload(spec, TimerConfig(obs_min=5, obs_max=25))
        open_epoch = False
        for event in events:
            if event.event == "phase":
                open_epoch = True
            elif event.event == "progress":
                open_epoch = False
            elif event.event in ("rate", "loss"):
                assert open_epoch, "metric line emitted outside a flush window"

    def test_immediate_flush_mode_still_counts_correctly(self):
        spec = WorkloadSpec(kind="constant", batches_per_epoch=10)
        log, _ = run_workload(spec, TimerConfig(obs_min=5, obs_max=25, defer_flush=False))
        assert log.terminal == "success"
        assert len(log.observations) == 25


class TestDeterminism:
    def test_identical_streams_for_identical_inputs(self):
        spec = WorkloadSpec(kind="jitter", jitter_frac=0.3)
        cfg = TimerConfig()
        log_a, events_a = run_workload(spec, cfg, seed=7)
        log_b, events_b = run_workload(spec, cfg, seed=7)
        assert events_a == events_b
        assert log_a.observations == log_b.observations

    def test_different_seeds_differ(self):
        spec = WorkloadSpec(kind="jitter", jitter_frac=0.3)
        _, events_a = run_workload(spec, TimerConfig(), seed=1)
        _, events_b = run_workload(spec, TimerConfig(), seed=2)
        assert events_a != events_b

    def test_jitter_mean_rate_matches_generators_own_delays(self):
        # Oracle: replay the generator's sampled delays independently.
        spec = WorkloadSpec(kind="jitter", batch_size=32, base_rate=64.0, jitter_frac=0.1)
        behavior = synthetic_workload(spec, seed=123)
        log = timed_iterate(behavior, TimerConfig(obs_min=30, obs_max=60))

        replay = synthetic_workload(spec, seed=123)
        sampled = []
        for epoch in range(10):
            for work, elapsed, _ in replay.epoch_batches(epoch):
                sampled.append(work / elapsed)
                if len(sampled) == 60:
                    break
            if len(sampled) == 60:
                break
        observed = [o.rate for o in log.observations]
        assert observed == pytest.approx(sampled, rel=1e-12)
        mean = sum(observed) / len(observed)
        assert abs(mean - 64.0) / 64.0 < 0.02

    def test_degrading_slows_linearly(self):
        spec = WorkloadSpec(kind="degrading", jitter_frac=0.05, batch_size=10, base_rate=10.0)
        log, _ = run_workload(spec, TimerConfig(obs_min=5, obs_max=20))
        rates = [o.rate for o in log.observations]
        assert rates == sorted(rates, reverse=True)
        assert rates[0] == pytest.approx(10.0)
        assert rates[10] == pytest.approx(10.0 / 1.5)


class TestMultiworker:
    def test_distinct_tasks_with_monotone_times(self):
        spec = WorkloadSpec(kind="multiworker", workers=4)
        log, events = run_workload(spec, TimerConfig(obs_min=10, obs_max=20), seed=3)
        assert log.terminal == "success"
        tasks = {o.task for o in log.observations}
        assert tasks == {f"worker-{i}" for i in range(4)}
        for worker in tasks:
            times = [e.time for e in events if e.task == worker]
            assert times == sorted(times)
        # Each worker keeps its own budget.
        for worker in tasks:
            count = sum(1 for o in log.observations if o.task == worker)
            assert 10 <= count <= 20

    def test_terminal_events_emitted_once_per_process(self):
        spec = WorkloadSpec(kind="multiworker", workers=3)
        _, events = run_workload(spec, TimerConfig(obs_min=5, obs_max=10))
        assert sum(1 for e in events if e.event == "success") == 1
        assert sum(1 for e in events if e.event == "error") == 0
        assert sum(1 for e in events if e.event == "end") == 1

    def test_multiworker_determinism(self):
        spec = WorkloadSpec(kind="multiworker", workers=4, jitter_frac=0.2)
        cfg = TimerConfig(obs_min=10, obs_max=20)
        _, a = run_workload(spec, cfg, seed=9)
        _, b = run_workload(spec, cfg, seed=9)
        assert a == b


class TestInvariants:
    def test_work_accounting_bound(self):
        rng = random.Random(1)
        for _ in range(50):
            spec = WorkloadSpec(
                kind=rng.choice(["constant", "jitter"]),
                batch_size=rng.randint(1, 64),
                base_rate=rng.uniform(1, 1000),
                jitter_frac=rng.uniform(0, 0.5) if rng.random() < 0.5 else 0.0,
                batches_per_epoch=rng.randint(1, 40),
            )
            cfg = TimerConfig(obs_min=1, obs_max=rng.randint(1, 80), epochs_max=rng.randint(1, 6))
            log, events = run_workload(spec, cfg, seed=rng.randint(0, 999))
            epochs_started = sum(
                1 for e in events if e.event == "phase" and e.data.get("phase") == "flush"
            )
            total_work = sum(o.work for o in log.observations)
            assert total_work <= spec.batch_size * spec.batches_per_epoch * epochs_started

    def test_warmup_flag_on_first_observation_only(self):
        spec = WorkloadSpec(kind="constant", batches_per_epoch=10)
        log, _ = run_workload(spec, TimerConfig(obs_min=5, obs_max=25))
        assert log.observations[0].warmup
        assert not any(o.warmup for o in log.observations[1:])

    def test_success_terminal_requires_obs_min(self):
        # terminal=success implies the log met the configured minimum
        for batches in (3, 10, 30):
            spec = WorkloadSpec(kind="constant", batches_per_epoch=batches)
            cfg = TimerConfig(obs_min=12, obs_max=40, epochs_max=2)
            log, _ = run_workload(spec, cfg)
            if log.terminal == "success":
                assert len(log.observations) >= 12


class TestValidation:
    def test_bad_spec_rejected(self):
        with pytest.raises(ValueError):
            WorkloadSpec(kind="mystery")
        with pytest.raises(ValueError):
            WorkloadSpec(base_rate=0)
        with pytest.raises(ValueError):
            WorkloadSpec(jitter_frac=1.0)

    def test_bad_timer_rejected(self):
        with pytest.raises(ValueError):
            TimerConfig(obs_min=10, obs_max=5)
        with pytest.raises(ValueError):
            TimerConfig(epochs_max=0)
