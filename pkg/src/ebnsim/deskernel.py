"""Deterministic discrete-event core.

Time is an integer number of nanoseconds. Events with equal timestamps are
delivered in insertion order. Each entity draws from its own RNG stream,
derived from the master seed and a stable hash of the entity path, so
adding or removing an entity never shifts another entity's draws.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from ebnsim.errors import SchedulingError


def to_clock(duration_ns: float) -> int:
    """Round a real duration up to whole clock ticks (1 ns)."""
    if duration_ns <= 0:
        return 0
    return int(math.ceil(duration_ns - 1e-9))


def stream_seed(master_seed: int, path: str) -> np.random.SeedSequence:
    digest = hashlib.blake2b(path.encode(), digest_size=8).digest()
    return np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest, "little")])


def derive_seed(master_seed: int, *parts) -> int:
    """Stable 63-bit seed from a master seed and arbitrary labels."""
    text = "/".join(repr(p) for p in parts)
    digest = hashlib.blake2b(f"{master_seed}|{text}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


@dataclass(order=True)
class Event:
    time: int
    seq: int
    target: str = field(compare=False)
    payload: Any = field(compare=False, default=None)
    cancelled: bool = field(compare=False, default=False)


@dataclass
class SimStats:
    events: int
    now: int


class Simulator:
    """Single-threaded event loop.

    Entities register a handler under an id; ``schedule`` targets that id.
    ``call_at``/``call_after`` are shorthands that deliver to a bound callable.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.now = 0
        self._queue: list[Event] = []
        self._seq = itertools.count()
        self._handlers: dict[str, Callable[[Event], None]] = {}
        self._rngs: dict[str, np.random.Generator] = {}
        self.trace_hooks: list[Callable[[dict], None]] = []
        self.events_processed = 0

    def register(self, target: str, handler: Callable[[Event], None]) -> None:
        if target in self._handlers:
            raise ValueError(f"entity {target!r} already registered")
        self._handlers[target] = handler

    def schedule(self, at: int, target: str, payload=None) -> Event:
        at = int(at)
        if at < self.now:
            raise SchedulingError(f"cannot schedule at {at} < now {self.now}")
        ev = Event(at, next(self._seq), target, payload)
        heapq.heappush(self._queue, ev)
        return ev

    def call_at(self, at: int, fn: Callable, *args) -> Event:
        return self.schedule(at, "__call__", (fn, args))

    def call_after(self, delay: int, fn: Callable, *args) -> Event:
        return self.call_at(self.now + int(delay), fn, *args)

    @staticmethod
    def cancel(event: Event) -> None:
        event.cancelled = True

    def rng(self, path: str) -> np.random.Generator:
        gen = self._rngs.get(path)
        if gen is None:
            gen = np.random.default_rng(stream_seed(self.seed, path))
            self._rngs[path] = gen
        return gen

    def trace(self, record: dict) -> None:
        for hook in self.trace_hooks:
            hook(record)

    @property
    def pending(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)

    def run_until(self, t_end: int | None = None) -> SimStats:
        """Deliver events in (time, seq) order until ``t_end`` or an empty queue."""
        q = self._queue
        count = 0
        while q:
            ev = q[0]
            if t_end is not None and ev.time > t_end:
                self.now = max(self.now, int(t_end))
                break
            heapq.heappop(q)
            if ev.cancelled:
                continue
            self.now = ev.time
            count += 1
            if ev.target == "__call__":
                fn, args = ev.payload
                fn(*args)
            else:
                self._handlers[ev.target](ev)
        self.events_processed += count
        return SimStats(count, self.now)
