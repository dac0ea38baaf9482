"""Fixed backup schemes and the policy interface shared with learned agents."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from . import env
from .errors import InvalidArgument

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0

# Device sequences and mean step sizes of the q-efficient reference schemes
# (k -> (devices, mean step)).  Only the mean step is known; per-position steps
# come from the oracle search.
REFERENCE_SEQUENCES: dict[int, tuple[tuple[int, ...], float]] = {
    2: ((0,), 2.000),
    3: ((0,), 1.618),
    4: ((0, 2), 1.346),
    5: ((0, 2), 1.325),
    6: ((0, 1, 2, 0, 2, 4), 1.242),
    7: ((0, 2, 3, 0, 4, 2), 1.209),
    8: ((0, 1, 3, 6, 4, 2, 0, 6, 4, 2, 6, 0, 3, 1, 3, 4), 1.161),
    9: ((0, 4, 2, 4, 0, 4, 5, 2), 1.163),
    10: ((0, 4, 2, 4, 0, 4, 5, 2, 0, 4, 8, 2, 4, 8), 1.133),
    11: ((0, 5, 2, 5, 8, 0, 5, 1, 2, 4, 5, 0, 5, 1, 9, 5, 2, 5), 1.124),
}


@dataclass(frozen=True)
class SchemeSpec:
    """Periodic scheme: position ``i`` overwrites ``devices[i]`` with step ``steps[i]``."""

    k: int
    devices: tuple[int, ...]
    steps: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(int(d) for d in self.devices))
        object.__setattr__(self, "steps", tuple(float(s) for s in self.steps))
        if int(self.k) != self.k or self.k < 2:
            raise InvalidArgument(f"k must be an integer >= 2, got {self.k!r}")
        if len(self.devices) == 0 or len(self.devices) != len(self.steps):
            raise InvalidArgument("devices and steps must be non-empty and of equal length")
        for d, s in zip(self.devices, self.steps):
            env.UpdateAction(d, s).check(self.k)

    @property
    def period(self) -> int:
        return len(self.devices)

    def actions(self) -> list[env.UpdateAction]:
        return [env.UpdateAction(d, s) for d, s in zip(self.devices, self.steps)]

    def mean_step(self) -> float:
        return sum(self.steps) / len(self.steps)

    def to_text(self) -> str:
        return (
            "# backup scheme\n"
            f"k = {self.k}\n"
            f"devices = {', '.join(str(d) for d in self.devices)}\n"
            f"steps = {', '.join(repr(s) for s in self.steps)}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "SchemeSpec":
        fields = parse_key_values(text)
        missing = {"k", "devices", "steps"} - fields.keys()
        if missing:
            raise InvalidArgument(f"scheme is missing fields: {sorted(missing)}")
        try:
            k = int(fields["k"])
            devices = [int(x) for x in fields["devices"].split(",")]
            steps = [float(x) for x in fields["steps"].split(",")]
        except ValueError as exc:
            raise InvalidArgument(f"malformed scheme field: {exc}") from None
        return cls(k, tuple(devices), tuple(steps))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "SchemeSpec":
        return cls.from_text(Path(path).read_text())


def parse_key_values(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def round_robin(k: int, step: float) -> SchemeSpec:
    """Always overwrite the oldest backup."""
    return SchemeSpec(k, (0,), (step,))


def golden(k: int = 3) -> SchemeSpec:
    return round_robin(k, GOLDEN_RATIO)


class Policy(Protocol):
    """Maps a snapshot to the next update action."""

    def reset(self) -> None: ...

    def act(self, state: env.Snapshot) -> env.UpdateAction: ...


class PeriodicPolicy:
    """Plays a SchemeSpec open-loop, ignoring the state."""

    def __init__(self, spec: SchemeSpec):
        self.spec = spec
        self._actions = spec.actions()
        self._pos = 0

    @property
    def k(self) -> int:
        return self.spec.k

    def reset(self) -> None:
        self._pos = 0

    def act(self, state: env.Snapshot) -> env.UpdateAction:
        a = self._actions[self._pos]
        self._pos = (self._pos + 1) % len(self._actions)
        return a


class RandomPolicy:
    """Uniform device and uniform step in (1, 2]."""

    def __init__(self, k: int, rng: np.random.Generator):
        self.k = k
        self.rng = rng

    def reset(self) -> None:
        pass

    def act(self, state: env.Snapshot) -> env.UpdateAction:
        d = int(self.rng.integers(0, self.k - 1))
        u = 1.0 - float(self.rng.random())  # (0, 1]
        return env.UpdateAction(d, min(max(1.0 + u, env.MIN_STEP), env.MAX_STEP))


def replay(spec: SchemeSpec, start: env.Snapshot, n_steps: int):
    """Play ``spec`` from ``start``; returns ``[(next_state, action), ...]``."""
    if start.k != spec.k:
        raise InvalidArgument(f"scheme has k={spec.k} but start snapshot has k={start.k}")
    if n_steps < 1:
        raise InvalidArgument(f"n_steps must be >= 1, got {n_steps}")
    actions = spec.actions()
    out = []
    state = start
    for n in range(n_steps):
        a = actions[n % len(actions)]
        state = env.transition(state, a)
        out.append((state, a))
    return out


def period_map(spec: SchemeSpec) -> tuple[np.ndarray, np.ndarray]:
    """Affine map ``S -> A @ S + b`` applying one full period of the scheme."""
    k = spec.k
    A = np.eye(k)
    b = np.zeros(k)
    for d, D in zip(spec.devices, spec.steps):
        M = np.zeros((k, k))
        for i in range(d):
            M[i, i] = 1.0 / D
        M[d, d] = M[d, d + 1] = 1.0 / D
        for i in range(d + 1, k - 1):
            M[i, i + 1] = 1.0 / D
        c = np.zeros(k)
        c[k - 1] = (D - 1.0) / D
        A = M @ A
        b = M @ b + c
    return A, b


def fixed_point(spec: SchemeSpec, tol: float = 1e-12, max_iter: int = 1_000_000):
    """Snapshot left invariant by one period of ``spec``, or None.

    Iterates the period map from the uniform snapshot.  The map is repeatedly
    squared, so after ``n`` rounds the iterate has covered ``2**n`` periods;
    gives up once more than ``max_iter`` periods would be needed.
    """
    if tol <= 0:
        raise InvalidArgument(f"tol must be positive, got {tol!r}")
    A0, b0 = period_map(spec)
    A, b = A0, b0
    s = np.full(spec.k, 1.0 / spec.k)
    covered = 0
    span = 1
    while covered + span <= max_iter:
        nxt = A @ s + b
        nxt /= nxt.sum()
        covered += span
        delta = np.max(np.abs(nxt - s))
        s = nxt
        if delta < tol:
            resid = A0 @ s + b0
            resid /= resid.sum()
            if np.max(np.abs(resid - s)) < tol:
                break
        A, b = A @ A, A @ b + b
        span *= 2
    else:
        return None
    if np.any(s <= 0.0):
        return None
    return env.Snapshot._trusted(s)


def steady_cycle(spec: SchemeSpec, tol: float = 1e-12, max_iter: int = 1_000_000):
    """Post-update snapshots of one period started from the fixed point, or None."""
    start = fixed_point(spec, tol, max_iter)
    if start is None:
        return None
    s = start.intervals
    out = []
    for d, D in zip(spec.devices, spec.steps):
        s = env.step_intervals(s, d, D)
        out.append(s)
    return out
