"""Scale-invariant backup MDP: snapshots, update actions, transition and reward.

A snapshot of ``k`` backups is stored as the vector of inter-backup intervals
divided by the total elapsed time, so every state lives on the open unit
simplex.  Interval ``i`` ends at the backup carrying label ``i`` (label 0 is
the oldest backup); the first interval starts at time zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import InvalidArgument

MIN_STEP = 1.0 + 1e-6
MAX_STEP = 2.0
SUM_TOL = 1e-9

REWARD_INTERNAL = "reward-internal"
REPORTING = "reporting"
DiscrepancyMode = Literal["reward-internal", "reporting"]


class Snapshot:
    """Normalized inter-backup intervals; immutable."""

    __slots__ = ("intervals",)

    def __init__(self, intervals, *, check: bool = True):
        arr = np.array(intervals, dtype=np.float64)
        if check:
            _check_intervals(arr)
        arr.setflags(write=False)
        self.intervals = arr

    @classmethod
    def _trusted(cls, arr: np.ndarray) -> "Snapshot":
        obj = cls.__new__(cls)
        arr.setflags(write=False)
        obj.intervals = arr
        return obj

    @property
    def k(self) -> int:
        return self.intervals.shape[0]

    def __len__(self) -> int:
        return self.k

    def __iter__(self):
        return iter(self.intervals.tolist())

    def __getitem__(self, i):
        return self.intervals[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Snapshot):
            return NotImplemented
        return np.array_equal(self.intervals, other.intervals)

    def __hash__(self) -> int:
        return hash(self.intervals.tobytes())

    def __repr__(self) -> str:
        body = ", ".join(f"{x:.6g}" for x in self.intervals)
        return f"Snapshot({body})"


def _check_intervals(arr: np.ndarray) -> None:
    if arr.ndim != 1 or arr.shape[0] < 2:
        raise InvalidArgument(f"snapshot needs at least 2 intervals, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument("snapshot intervals must be finite")
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise InvalidArgument(f"snapshot intervals must lie in (0, 1): {arr}")
    if abs(arr.sum() - 1.0) > SUM_TOL:
        raise InvalidArgument(f"snapshot intervals sum to {arr.sum()!r}, expected 1")


@dataclass(frozen=True)
class UpdateAction:
    """Overwrite the backup labelled ``device`` at ``step`` times the elapsed time."""

    device: int
    step: float

    def __post_init__(self):
        if not MIN_STEP <= self.step <= MAX_STEP:
            raise InvalidArgument(
                f"step must lie in [{MIN_STEP}, {MAX_STEP}], got {self.step!r}"
            )
        if int(self.device) != self.device or self.device < 0:
            raise InvalidArgument(f"device must be a non-negative integer, got {self.device!r}")

    def check(self, k: int) -> None:
        if self.device > k - 2:
            raise InvalidArgument(
                f"device {self.device} out of range for k={k} (allowed 0..{k - 2})"
            )


def new_uniform(k: int) -> Snapshot:
    if int(k) != k or k < 2:
        raise InvalidArgument(f"k must be an integer >= 2, got {k!r}")
    return Snapshot._trusted(np.full(int(k), 1.0 / k))


def step_intervals(s: np.ndarray, device: int, step: float) -> np.ndarray:
    """Unchecked transition on a raw interval array; returns a new array."""
    k = s.shape[0]
    out = np.empty(k)
    out[:device] = s[:device]
    out[device] = s[device] + s[device + 1]
    out[device + 1 : k - 1] = s[device + 2 :]
    out[: k - 1] /= step
    out[k - 1] = (step - 1.0) / step
    # guards against drift over long runs
    out /= out.sum()
    return out


def transition(state: Snapshot, action: UpdateAction) -> Snapshot:
    """Merge interval ``device`` with its successor, rescale by the step, append the new gap."""
    action.check(state.k)
    return Snapshot._trusted(step_intervals(state.intervals, action.device, action.step))


def reward(state: Snapshot, lam: float = 5.0) -> float:
    if lam <= 0:
        raise InvalidArgument(f"lambda must be positive, got {lam!r}")
    return reward_from_max(float(state.intervals.max()), state.k, lam)


def reward_from_max(max_interval: float, k: int, lam: float) -> float:
    return -lam + (2.0 * lam / (k - 1)) * (1.0 / max_interval - 1.0)


def discrepancy(state: Snapshot, mode: DiscrepancyMode = REPORTING) -> float:
    """Largest interval relative to the ideal spacing.

    ``reward-internal`` divides elapsed time into ``k`` ideal parts, ``reporting``
    into ``k + 1`` parts (the convention used in reports).
    """
    m = float(state.intervals.max())
    if mode == REWARD_INTERNAL:
        return state.k * m
    if mode == REPORTING:
        return (state.k + 1) * m
    raise InvalidArgument(f"unknown discrepancy mode {mode!r}")


def encode_action(action: UpdateAction, k: int) -> np.ndarray:
    """One-hot device over ``k - 1`` slots followed by ``u = step - 1``."""
    action.check(k)
    enc = np.zeros(k)
    enc[action.device] = 1.0
    enc[k - 1] = action.step - 1.0
    return enc


def decode_action(encoding) -> UpdateAction:
    enc = np.asarray(encoding, dtype=np.float64)
    if enc.ndim != 1 or enc.shape[0] < 2:
        raise InvalidArgument(f"action encoding needs at least 2 components, got {enc.shape}")
    probs = enc[:-1]
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > SUM_TOL:
        raise InvalidArgument("device part of an action encoding must be a probability vector")
    u = float(enc[-1])
    if not 0.0 < u <= 1.0:
        raise InvalidArgument(f"step part of an action encoding must lie in (0, 1], got {u!r}")
    return UpdateAction(int(np.argmax(probs)), min(max(1.0 + u, MIN_STEP), MAX_STEP))
