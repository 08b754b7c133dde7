"""Ordered, tagged point-to-point channels between time workers.

Every ordered pair of ranks has its own FIFO queue.  ``recv`` names the tag
it expects (MPI-style matching): messages with other tags that arrive first
are parked until asked for, so per-tag order is send order.
"""

from __future__ import annotations

import multiprocessing as mp
import queue
import threading
import time
import traceback
from collections import deque
from typing import Any, Callable

import numpy as np

DEFAULT_TIMEOUT = 3600.0


class CommunicationError(RuntimeError):
    pass


class CommunicationTimeout(CommunicationError):
    pass


class WorkerFailure(RuntimeError):
    pass


def _snapshot(payload):
    # senders keep mutating their buffers
    if isinstance(payload, np.ndarray):
        return payload.copy()
    if isinstance(payload, tuple):
        return tuple(_snapshot(p) for p in payload)
    if isinstance(payload, list):
        return [_snapshot(p) for p in payload]
    return payload


class Endpoint:
    """One rank's view of the channel set."""

    def __init__(self, rank: int, size: int, queues: dict, abort, timeout: float):
        self.rank = rank
        self.size = size
        self._queues = queues
        self._abort = abort
        self.timeout = timeout
        self._parked: dict = {}

    def send(self, dest: int, tag, payload) -> None:
        try:
            q = self._queues[(self.rank, dest)]
        except KeyError:
            raise CommunicationError(f"no channel {self.rank} -> {dest}") from None
        q.put((tag, _snapshot(payload)))

    def recv(self, source: int, tag) -> Any:
        try:
            q = self._queues[(source, self.rank)]
        except KeyError:
            raise CommunicationError(f"no channel {source} -> {self.rank}") from None
        parked = self._parked.get((source, tag))
        if parked:
            return parked.popleft()
        deadline = time.monotonic() + self.timeout
        while True:
            if self._abort.is_set():
                raise CommunicationError("solve aborted by another worker")
            try:
                got_tag, payload = q.get(timeout=0.05)
            except queue.Empty:
                if time.monotonic() > deadline:
                    raise CommunicationTimeout(f"rank {self.rank} timed out waiting for {tag} from {source}")
                continue
            if got_tag == tag:
                return payload
            self._parked.setdefault((source, got_tag), deque()).append(payload)

    def pending(self) -> int:
        """Number of parked, unconsumed messages (0 after a clean protocol run)."""
        return sum(len(v) for v in self._parked.values())


def _pairs(size: int):
    pairs = {(r, r) for r in range(size)}
    for r in range(size):
        pairs.add((r, (r + 1) % size))
        pairs.add(((r + 1) % size, r))
    return pairs


def run_threads(size: int, fn: Callable[[Endpoint], Any], timeout: float = DEFAULT_TIMEOUT) -> list:
    """Run ``fn(endpoint)`` on ``size`` threads and return results by rank."""
    abort = threading.Event()
    queues = {p: queue.Queue() for p in _pairs(size)}
    results: list = [None] * size
    errors: list = [None] * size

    def target(rank):
        try:
            results[rank] = fn(Endpoint(rank, size, queues, abort, timeout))
        except BaseException as exc:  # noqa: BLE001 - re-raised in the caller
            errors[rank] = exc
            abort.set()

    if size == 1:
        target(0)
    else:
        threads = [threading.Thread(target=target, args=(r,), daemon=True) for r in range(size)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    _raise_first(errors)
    return results


def _raise_first(errors):
    primary = [e for e in errors if e is not None and not isinstance(e, CommunicationError)]
    first = primary[0] if primary else next((e for e in errors if e is not None), None)
    if first is not None:
        raise first


def run_processes(size: int, fn: Callable[[Endpoint], Any], timeout: float = DEFAULT_TIMEOUT) -> list:
    """Run ``fn(endpoint)`` in ``size`` forked processes.

    The worker function and its data reach the children through fork; only
    messages and results are pickled.
    """
    ctx = mp.get_context("fork")
    abort = ctx.Event()
    queues = {p: ctx.Queue() for p in _pairs(size)}
    out = ctx.Queue()

    def target(rank):
        try:
            res = fn(Endpoint(rank, size, queues, abort, timeout))
            out.put((rank, True, res))
        except BaseException as exc:  # noqa: BLE001
            abort.set()
            out.put((rank, False, (type(exc).__name__, str(exc), traceback.format_exc())))

    procs = [ctx.Process(target=target, args=(r,), daemon=True) for r in range(size)]
    for p in procs:
        p.start()
    results: list = [None] * size
    failures = []
    for _ in range(size):
        rank, ok, payload = out.get(timeout=timeout)
        if ok:
            results[rank] = payload
        else:
            failures.append((rank, payload))
    for p in procs:
        p.join()
    if failures:
        real = [f for f in failures if f[1][0] != "CommunicationError"] or failures
        rank, (name, msg, tb) = real[0]
        raise WorkerFailure(f"worker {rank} failed with {name}: {msg}\n{tb}")
    return results


BACKENDS = {"thread": run_threads, "process": run_processes}


def run_workers(backend: str, size: int, fn, timeout: float = DEFAULT_TIMEOUT) -> list:
    try:
        runner = BACKENDS[backend]
    except KeyError:
        raise ValueError(f"unknown backend {backend!r}; choose from {sorted(BACKENDS)}") from None
    return runner(size, fn, timeout)
