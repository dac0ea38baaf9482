"""Attack simulation against the absolute backup times of a trace.

An attacker infects the data at ``T'`` and triggers the damage at ``T''``.
Backups written in ``[T', T'']`` are corrupted, and every backup they replaced
is gone, so the defender restores the newest backup that is older than
``T'`` and still stored at ``T''`` (time 0 if none survives).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgument, OutOfHorizon
from .evaluation import ReplayTrace

ZERO_KNOWLEDGE = "zero-knowledge"
BIASED = "biased"
PERFECT_KNOWLEDGE = "perfect-knowledge"
VARIANTS = (ZERO_KNOWLEDGE, BIASED, PERFECT_KNOWLEDGE)

# a perfect-knowledge attacker strikes this fraction of elapsed time before an update
BOUNDARY_OFFSET = 1e-9
MAX_RETRIES = 1000


@dataclass(frozen=True)
class ThreatModel:
    """Where ``T'`` falls inside an inter-update gap and how long until ``T''``.

    Zero knowledge places ``T'`` uniformly in the gap; the biased insider uses
    position density proportional to ``x ** beta`` (``x`` the relative
    position, so ``beta = 0`` is uniform and large ``beta`` crowds the end);
    perfect knowledge strikes just before the gap closes.  The delay
    ``T'' - T'`` is ``delay`` exactly, or exponential with mean ``delay_mean``
    when that is given.
    """

    variant: str = ZERO_KNOWLEDGE
    delay: float = 0.0
    delay_mean: float | None = None
    beta: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidArgument(f"unknown threat model {self.variant!r}; choose from {VARIANTS}")
        if self.delay < 0:
            raise InvalidArgument("delay must be non-negative")
        if self.delay_mean is not None and self.delay_mean < 0:
            raise InvalidArgument("delay_mean must be non-negative")
        if self.beta < 0:
            raise InvalidArgument("beta must be non-negative")

    def sample_delay(self, rng: np.random.Generator) -> float:
        if self.delay_mean is None:
            return self.delay
        return float(rng.exponential(self.delay_mean)) if self.delay_mean > 0 else 0.0


@dataclass(frozen=True)
class ExposureSample:
    t_infect: float
    t_exec: float
    restore_time: float
    total: float
    unavoidable: float
    avoidable: float


def attack_at(trace: ReplayTrace, t_infect: float, t_exec: float) -> ExposureSample:
    if not 0.0 < t_infect <= t_exec:
        raise InvalidArgument(f"need 0 < T' <= T'', got T'={t_infect!r}, T''={t_exec!r}")
    if t_exec > trace.end_time:
        raise OutOfHorizon(f"T''={t_exec!r} lies beyond the trace end {trace.end_time!r}")
    stored = trace.backups_at(t_exec)
    clean = stored[stored < t_infect]
    restore = float(clean.max()) if clean.size else 0.0
    return ExposureSample(
        t_infect=t_infect,
        t_exec=t_exec,
        restore_time=restore,
        total=t_exec - restore,
        unavoidable=t_exec - t_infect,
        avoidable=t_infect - restore,
    )


def _gap_bounds(trace: ReplayTrace) -> tuple[np.ndarray, np.ndarray]:
    ends = trace.update_times
    starts = np.concatenate([[trace.start_time], ends[:-1]])
    return starts, ends


def _infection_time(start: float, end: float, tm: ThreatModel, rng: np.random.Generator) -> float:
    if tm.variant == PERFECT_KNOWLEDGE:
        return end - BOUNDARY_OFFSET * end
    x = 0.0
    while x <= 0.0:
        x = float(rng.random())
    if tm.variant == BIASED and tm.beta > 0:
        x = x ** (1.0 / (tm.beta + 1.0))
    t = start + (end - start) * x
    # keep T' strictly inside the gap
    return min(t, math.nextafter(end, start))


def simulate_attack(trace: ReplayTrace, tm: ThreatModel, rng: np.random.Generator) -> ExposureSample:
    """One attack in a uniformly chosen inter-update gap of the trace."""
    if len(trace) == 0:
        raise InvalidArgument("trace is empty")
    starts, ends = _gap_bounds(trace)
    j = int(rng.integers(0, len(ends)))
    t_infect = _infection_time(float(starts[j]), float(ends[j]), tm, rng)
    return attack_at(trace, t_infect, t_infect + tm.sample_delay(rng))


def draw_samples(trace: ReplayTrace, tm: ThreatModel, n_samples: int, rng: np.random.Generator,
                 max_retries: int = MAX_RETRIES) -> list[ExposureSample]:
    """``n_samples`` attacks; draws that run past the trace end are redrawn."""
    if n_samples < 1:
        raise InvalidArgument("n_samples must be >= 1")
    out = []
    for _ in range(n_samples):
        for _attempt in range(max_retries):
            try:
                out.append(simulate_attack(trace, tm, rng))
                break
            except OutOfHorizon:
                continue
        else:
            raise OutOfHorizon(
                f"{max_retries} consecutive draws ran past the trace end; "
                "shorten the delay or lengthen the trace"
            )
    return out


def _describe(values: np.ndarray) -> dict:
    return {
        "mean": float(values.mean()),
        "median": float(np.median(values)),
        "p95": float(np.percentile(values, 95)),
    }


def summarize_samples(samples: list[ExposureSample], tm: ThreatModel) -> dict:
    avoid = np.array([s.avoidable for s in samples])
    total = np.array([s.total for s in samples])
    unavoid = np.array([s.unavoidable for s in samples])
    rel = avoid / np.array([s.t_exec for s in samples])
    return {
        "threat_model": asdict(tm),
        "n_samples": len(samples),
        "avoidable": _describe(avoid),
        "total": _describe(total),
        "unavoidable_mean": float(unavoid.mean()),
        "relative_avoidable": _describe(rel),
    }


def exposure_stats(trace: ReplayTrace, tm: ThreatModel, n_samples: int, rng: np.random.Generator) -> dict:
    return summarize_samples(draw_samples(trace, tm, n_samples, rng), tm)


def samples_to_csv(samples: list[ExposureSample]) -> str:
    buf = io.StringIO()
    cols = ["t_infect", "t_exec", "restore_time", "total", "unavoidable", "avoidable"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for s in samples:
        w.writerow([repr(getattr(s, c)) for c in cols])
    return buf.getvalue()


def worst_case_series(trace: ReplayTrace) -> np.ndarray:
    """Largest gap over elapsed time after each update, from absolute backup times."""
    if len(trace) == 0:
        raise InvalidArgument("trace is empty")
    out = np.empty(len(trace))
    for n, rec in enumerate(trace.records):
        times = trace.backup_times[n + 1]
        gaps = np.diff(np.concatenate([[0.0], times]))
        out[n] = gaps.max() / rec.update_time
    return out


def worst_case_json(trace: ReplayTrace) -> str:
    ratios = worst_case_series(trace)
    q = (trace.k + 1) * ratios
    return json.dumps({
        "k": trace.k,
        "n_steps": len(trace),
        "ratio": ratios.tolist(),
        "q": q.tolist(),
        "mean_q": float(q.mean()),
        "max_q": float(q.max()),
    }, indent=2)
