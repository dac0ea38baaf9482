"""Brute-force search over periodic schemes.

Every rotation-canonical device sequence up to a maximum period is paired
with step sizes optimized on its steady-state cycle: a coarse grid first, then
coordinate descent on successively finer grids.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import env
from .errors import InvalidArgument, NoConvergence
from .schemes import SchemeSpec, steady_cycle

log = logging.getLogger(__name__)

MEAN_Q = "mean-q"
MAX_Q = "max-q"
OBJECTIVES = (MEAN_Q, MAX_Q)


@dataclass(frozen=True)
class SearchConfig:
    k: int
    max_period: int = 1
    objective: str = MEAN_Q
    grid: float = 0.05
    refine_rounds: int = 3
    tol: float = 1e-12
    max_iter: int = 1_000_000
    # full grids larger than this fall back to a grid over one shared step
    max_grid_points: int = 10_000
    neighborhood: int = 10

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise InvalidArgument(f"k must be an integer >= 2, got {self.k!r}")
        if self.max_period < 1:
            raise InvalidArgument("max_period must be >= 1")
        if self.objective not in OBJECTIVES:
            raise InvalidArgument(f"objective must be one of {OBJECTIVES}")
        if not 0 < self.grid <= 1:
            raise InvalidArgument("grid resolution must lie in (0, 1]")
        if self.refine_rounds < 0:
            raise InvalidArgument("refine_rounds must be >= 0")

    @property
    def resolution(self) -> float:
        """Finest step increment the descent tries."""
        return self.grid / 10**self.refine_rounds


@dataclass
class Candidate:
    devices: tuple[int, ...]
    steps: tuple[float, ...]
    objective: float
    mean_q: float
    max_q: float

    def to_dict(self) -> dict:
        return {
            "devices": list(self.devices),
            "steps": list(self.steps),
            "objective": self.objective,
            "mean_q": self.mean_q,
            "max_q": self.max_q,
        }


@dataclass
class SearchResult:
    config: SearchConfig
    best: SchemeSpec
    value: float
    leaderboard: list[Candidate] = field(default_factory=list)
    skipped: list[tuple[int, ...]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "k": self.config.k,
            "max_period": self.config.max_period,
            "objective": self.config.objective,
            "best": {"devices": list(self.best.devices), "steps": list(self.best.steps), "value": self.value},
            "leaderboard": [c.to_dict() for c in self.leaderboard],
            "skipped": [list(s) for s in self.skipped],
        }, indent=2)


def is_primitive(seq: tuple[int, ...]) -> bool:
    p = len(seq)
    return not any(p % d == 0 and seq == seq[:d] * (p // d) for d in range(1, p))


def canonical_sequences(k: int, max_period: int):
    """Primitive device sequences that are their own smallest rotation, by period then lexicographically."""
    for p in range(1, max_period + 1):
        for seq in itertools.product(range(k - 1), repeat=p):
            if seq == min(seq[i:] + seq[:i] for i in range(p)) and is_primitive(seq):
                yield seq


def cycle_metrics(k: int, devices, steps, tol: float = 1e-12, max_iter: int = 1_000_000):
    """``(mean_q, max_q)`` over the steady-state cycle, or None when it does not converge."""
    spec = SchemeSpec(k, tuple(devices), tuple(steps))
    cycle = steady_cycle(spec, tol, max_iter)
    if cycle is None:
        return None
    q = np.array([(k + 1) * s.max() for s in cycle])
    return float(q.mean()), float(q.max())


class _Objective:
    def __init__(self, k, devices, cfg: SearchConfig):
        self.k, self.devices, self.cfg = k, tuple(devices), cfg
        self.cache: dict[tuple[float, ...], float] = {}

    def __call__(self, steps) -> float:
        key = tuple(round(s, 12) for s in steps)
        if key not in self.cache:
            m = cycle_metrics(self.k, self.devices, key, self.cfg.tol, self.cfg.max_iter)
            if m is None:
                self.cache[key] = np.inf
            else:
                self.cache[key] = m[0] if self.cfg.objective == MEAN_Q else m[1]
        return self.cache[key]


def _coarse_points(cfg: SearchConfig, p: int):
    n = int(round(1.0 / cfg.grid))
    axis = [min(1.0 + cfg.grid * i, env.MAX_STEP) for i in range(1, n + 1)]
    if len(axis) ** p <= cfg.max_grid_points:
        return itertools.product(axis, repeat=p)
    return ((a,) * p for a in axis)


def optimize_steps(k: int, devices, objective: str = MEAN_Q, cfg: SearchConfig | None = None):
    """Steps in (1, 2] minimizing the steady-state objective for a fixed device sequence."""
    cfg = cfg or SearchConfig(k, max(1, len(devices)), objective)
    if cfg.objective != objective:
        cfg = SearchConfig(**{**cfg.__dict__, "objective": objective})
    devices = tuple(int(d) for d in devices)
    if not devices:
        raise InvalidArgument("device sequence is empty")
    for d in devices:
        env.UpdateAction(d, 2.0).check(k)
    f = _Objective(k, devices, cfg)

    best, best_val = None, np.inf
    for pt in _coarse_points(cfg, len(devices)):
        v = f(pt)
        if v < best_val:
            best, best_val = list(pt), v
    if best is None:
        raise NoConvergence(f"no step vector for devices {devices} reached a steady state")

    h = cfg.grid
    for _ in range(cfg.refine_rounds):
        h /= 10.0
        improved = True
        while improved:
            improved = False
            for i in range(len(best)):
                for j in range(-cfg.neighborhood, cfg.neighborhood + 1):
                    if j == 0:
                        continue
                    trial = list(best)
                    trial[i] = best[i] + j * h
                    if not env.MIN_STEP <= trial[i] <= env.MAX_STEP:
                        continue
                    v = f(trial)
                    if v < best_val - 1e-15:
                        best, best_val, improved = trial, v, True
    return tuple(best), float(best_val)


def search(cfg: SearchConfig) -> SearchResult:
    board: list[Candidate] = []
    skipped = []
    for seq in canonical_sequences(cfg.k, cfg.max_period):
        try:
            steps, val = optimize_steps(cfg.k, seq, cfg.objective, cfg)
        except NoConvergence as exc:
            log.warning("skipping %s: %s", seq, exc)
            skipped.append(seq)
            continue
        mean_q, max_q = cycle_metrics(cfg.k, seq, steps, cfg.tol, cfg.max_iter)
        board.append(Candidate(seq, steps, val, mean_q, max_q))
    if not board:
        raise NoConvergence("no candidate sequence reached a steady state")
    board.sort(key=lambda c: (c.objective, len(c.devices), c.devices))
    # the objective is only known to about the step resolution, so anything that
    # close to the minimum is a tie: shortest, then lexicographically smallest, wins
    window = board[0].objective + cfg.resolution
    top = min((c for c in board if c.objective <= window), key=lambda c: (len(c.devices), c.devices))
    board.remove(top)
    board.insert(0, top)
    return SearchResult(cfg, SchemeSpec(cfg.k, top.devices, top.steps), top.objective, board, skipped)
