"""Policy evaluation: fixed-length rollouts, summary metrics and period detection.

A rollout starts from the uniform snapshot at absolute time 1 and records both
the normalized states and the absolute backup times, so attack simulations
can replay the same run.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import env
from .errors import InvalidArgument

DEFAULT_STEPS = 250
DEFAULT_WARMUP = 50
DEFAULT_MAX_PERIOD = 25


@dataclass
class StepRecord:
    step: int
    pre_state: np.ndarray
    device: int
    step_size: float
    post_state: np.ndarray
    reward: float
    q_reporting: float
    q_reward_internal: float
    update_time: float
    removed_time: float


@dataclass
class ReplayTrace:
    """Per-step records plus absolute backup times.

    ``backup_times[n]`` holds the sorted absolute times of the ``k`` stored
    backups after ``n`` updates (row 0 is the initial snapshot, at elapsed
    time 1).
    """

    k: int
    lam: float
    records: list[StepRecord] = field(default_factory=list)
    backup_times: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def update_times(self) -> np.ndarray:
        return np.array([r.update_time for r in self.records])

    @property
    def start_time(self) -> float:
        return 1.0

    @property
    def end_time(self) -> float:
        return self.records[-1].update_time if self.records else 1.0

    def q_reporting(self) -> np.ndarray:
        return np.array([r.q_reporting for r in self.records])

    def devices(self) -> list[int]:
        return [r.device for r in self.records]

    def backups_at(self, t: float) -> np.ndarray:
        """Absolute times of the backups that exist at time ``t``."""
        n = int(np.searchsorted(self.update_times, t, side="right"))
        return self.backup_times[n]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow([
                r.step, r.device, repr(r.step_size), repr(r.update_time), repr(r.removed_time),
                repr(r.reward), repr(r.q_reporting), repr(r.q_reward_internal),
                " ".join(repr(float(x)) for x in r.pre_state),
                " ".join(repr(float(x)) for x in r.post_state),
            ])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


TRACE_COLUMNS = [
    "step", "device", "step_size", "update_time", "removed_time",
    "reward", "q_reporting", "q_reward_internal", "pre_state", "post_state",
]


def load_trace_csv(path, lam: float = 5.0) -> ReplayTrace:
    """Rebuild a trace from the ``device``/``step_size`` columns of a trace CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InvalidArgument(f"{path}: trace has no rows")
    missing = set(TRACE_COLUMNS) - set(rows[0])
    if missing:
        raise InvalidArgument(f"{path}: trace is missing columns {sorted(missing)}")
    k = len(rows[0]["post_state"].split())
    actions = [env.UpdateAction(int(r["device"]), float(r["step_size"])) for r in rows]
    return build_trace(k, actions, lam)


class _TraceBuilder:
    def __init__(self, k: int, lam: float):
        self.trace = ReplayTrace(k, lam)
        self.state = env.new_uniform(k)
        self.times = np.arange(1, k + 1) / k
        self.trace.backup_times.append(self.times.copy())
        self.elapsed = 1.0

    def push(self, action: env.UpdateAction) -> env.Snapshot:
        k = self.trace.k
        post = env.transition(self.state, action)
        t = self.elapsed * action.step
        removed = float(self.times[action.device])
        times = np.concatenate([np.delete(self.times, action.device), [t]])
        if not np.isfinite(t):
            raise InvalidArgument("absolute time overflowed; trace is too long for its step sizes")
        m = float(post.intervals.max())
        self.trace.records.append(StepRecord(
            step=len(self.trace.records),
            pre_state=self.state.intervals,
            device=action.device,
            step_size=action.step,
            post_state=post.intervals,
            reward=env.reward_from_max(m, k, self.trace.lam),
            q_reporting=(k + 1) * m,
            q_reward_internal=k * m,
            update_time=t,
            removed_time=removed,
        ))
        self.trace.backup_times.append(times)
        self.times = times
        self.elapsed = t
        self.state = post
        return post


def build_trace(k: int, actions, lam: float = 5.0) -> ReplayTrace:
    builder = _TraceBuilder(k, lam)
    for a in actions:
        builder.push(a)
    return builder.trace


def trace_from_times(k: int, update_times, devices, lam: float = 5.0) -> ReplayTrace:
    """Trace whose ``n``-th update happens at absolute time ``update_times[n]``."""
    prev = 1.0
    actions = []
    for t, d in zip(update_times, devices):
        actions.append(env.UpdateAction(int(d), t / prev))
        prev = t
    return build_trace(k, actions, lam)


def rollout(policy, k: int, n_steps: int = DEFAULT_STEPS, lam: float = 5.0) -> ReplayTrace:
    if n_steps < 1:
        raise InvalidArgument(f"n_steps must be >= 1, got {n_steps}")
    policy.reset()
    builder = _TraceBuilder(k, lam)
    state = builder.state
    for _ in range(n_steps):
        state = builder.push(policy.act(state))
    return builder.trace


def canonical_rotation(seq) -> tuple[int, ...]:
    seq = tuple(seq)
    if not seq:
        return seq
    return min(seq[i:] + seq[:i] for i in range(len(seq)))


def detect_period(devices, max_period: int = DEFAULT_MAX_PERIOD):
    """Smallest period ``p <= max_period`` of the last ``2 * max_period`` entries, or None."""
    if max_period < 1:
        raise InvalidArgument("max_period must be >= 1")
    if len(devices) < 2 * max_period:
        raise InvalidArgument(
            f"need at least {2 * max_period} entries to detect periods up to {max_period}"
        )
    tail = list(devices[-2 * max_period:])
    for p in range(1, max_period + 1):
        if all(tail[i] == tail[i + p] for i in range(len(tail) - p)):
            return p
    return None


@dataclass
class EvalReport:
    k: int
    n_steps: int
    warmup: int
    mean_reward: float
    mean_q: float
    max_q: float
    mean_step: float
    mean_q_steady: float
    devices: list[int]
    period: int | None
    sequence: list[int] | None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def summarize(trace: ReplayTrace, warmup: int = DEFAULT_WARMUP,
              max_period: int = DEFAULT_MAX_PERIOD) -> EvalReport:
    """Means over every step; the maximum (and ``mean_q_steady``) skip the first ``warmup`` steps."""
    n = len(trace)
    if warmup < 0 or n <= warmup:
        raise InvalidArgument(f"need n_steps > warmup >= 0, got n_steps={n}, warmup={warmup}")
    q = trace.q_reporting()
    devices = trace.devices()
    period = detect_period(devices, max_period) if n >= 2 * max_period else None
    sequence = list(canonical_rotation(devices[-period:])) if period else None
    return EvalReport(
        k=trace.k,
        n_steps=n,
        warmup=warmup,
        mean_reward=float(np.mean([r.reward for r in trace.records])),
        mean_q=float(q.mean()),
        max_q=float(q[warmup:].max()),
        mean_step=float(np.mean([r.step_size for r in trace.records])),
        mean_q_steady=float(q[warmup:].mean()),
        devices=devices,
        period=period,
        sequence=sequence,
    )


def evaluate(policy, k: int, n_steps: int = DEFAULT_STEPS, warmup: int = DEFAULT_WARMUP,
             lam: float = 5.0) -> EvalReport:
    if warmup < 0 or n_steps <= warmup:
        raise InvalidArgument(f"need n_steps > warmup >= 0, got n_steps={n_steps}, warmup={warmup}")
    return summarize(rollout(policy, k, n_steps, lam), warmup)
