"""Two-tier memory execution: a large slow store, a capacity-bounded fast
arena, a bandwidth/latency-limited transfer channel, and four step
strategies over them.

The constitutive state lives in the slow store, split into contiguous
element partitions. Strategies differ only in placement and movement:

    SLOW_ONLY            everything computes against the slow store.
    SOLVER_FAST          solver and matrix update run in the fast tier;
                         the solution vector moves down and the element
                         tangents move up every step.
    PIPELINED            constitutive partitions stream through two fast
                         slots, double buffered: compute partition j while
                         downloading j-1 and uploading j+1.
    PIPELINED_BATCH2_EBE two independent cases share the solve (matrix
                         free), then each streams its partitions; there is
                         no matrix update stage.

Transfers move real bytes between store and slot buffers; time is charged
to a virtual clock as bytes/bandwidth + latency per message, the two
directions independent (full duplex). Compute charges come from an
injectable cost model or measured wall time. Every pipeline iteration runs
exactly three concurrent activities (compute, upload, download) joined by
a barrier; within one iteration the download completes before the upload
starts, because the upload reuses the slot the download vacates.
"""

import json
import threading
import time
from dataclasses import asdict, dataclass
from enum import Enum

from .errors import CapacityError, InputError, TransferError
from .springs import EVAL_POINTS_PER_ELEMENT, SpringField


class StrategyKind(Enum):
    SLOW_ONLY = "slow-only"
    SOLVER_FAST = "solver-fast"
    PIPELINED = "pipelined"
    PIPELINED_BATCH2_EBE = "pipelined-batch2-ebe"

    @classmethod
    def parse(cls, name):
        for kind in cls:
            if name in (kind.value, kind.name, kind.name.lower()):
                return kind
        raise InputError(f"unknown strategy {name!r}; choose from "
                         f"{[k.value for k in cls]}")


# ---------------------------------------------------------------------------
# tiers


class TransferChannel:
    """Virtual-clock accounting of a full-duplex link."""

    def __init__(self, bandwidth, latency=0.0):
        if not bandwidth > 0.0:
            raise InputError(f"bandwidth must be positive, got {bandwidth}")
        if latency < 0.0:
            raise InputError(f"latency must be nonnegative, got {latency}")
        self.bandwidth = bandwidth
        self.latency = latency
        self.bytes_up = 0
        self.bytes_down = 0
        self.busy_up_s = 0.0
        self.busy_down_s = 0.0
        self._lock = threading.Lock()

    def charge(self, nbytes, direction):
        """Account one message; returns its duration."""
        seconds = nbytes / self.bandwidth + self.latency
        with self._lock:
            if direction == "up":
                self.bytes_up += nbytes
                self.busy_up_s += seconds
            elif direction == "down":
                self.bytes_down += nbytes
                self.busy_down_s += seconds
            else:
                raise InputError(f"direction must be 'up' or 'down', "
                                 f"got {direction!r}")
        return seconds


class FastArena:
    """Named-allocation ledger for the capacity-bounded fast tier."""

    def __init__(self, capacity_bytes):
        if not capacity_bytes > 0:
            raise InputError(
                f"arena capacity must be positive, got {capacity_bytes}")
        self.capacity_bytes = int(capacity_bytes)
        self.peak_bytes = 0
        self._ledger = {}
        self._lock = threading.Lock()

    @property
    def allocated_bytes(self):
        return sum(self._ledger.values())

    def alloc(self, name, nbytes):
        nbytes = int(nbytes)
        if nbytes < 0:
            raise InputError(f"allocation size must be nonnegative: {name}")
        with self._lock:
            if name in self._ledger:
                raise InputError(f"arena slot {name!r} already allocated")
            total = self.allocated_bytes + nbytes
            if total > self.capacity_bytes:
                raise CapacityError(
                    f"fast arena over capacity: {name!r} needs {nbytes} B, "
                    f"{self.capacity_bytes - self.allocated_bytes} B free of "
                    f"{self.capacity_bytes}")
            self._ledger[name] = nbytes
            self.peak_bytes = max(self.peak_bytes, total)

    def free(self, name):
        with self._lock:
            if name not in self._ledger:
                raise InputError(f"arena slot {name!r} not allocated")
            del self._ledger[name]


# ---------------------------------------------------------------------------
# partitions


def partition_ranges(n_elements, partition_element_count):
    """Contiguous [start, stop) element ranges; the last may be short."""
    if n_elements <= 0:
        raise InputError(f"need at least one element, got {n_elements}")
    if partition_element_count < 1:
        raise InputError(
            f"partition size must be >= 1, got {partition_element_count}")
    starts = range(0, n_elements, partition_element_count)
    return [(s, min(s + partition_element_count, n_elements)) for s in starts]


SLOW, FAST, IN_FLIGHT_UP, IN_FLIGHT_DOWN = "slow", "fast", "up*", "down*"


class PartitionStore:
    """Slow-tier master copy of the spring field, split into partitions,
    with a residency ledger enforcing the two-partition fast-tier limit."""

    def __init__(self, spring_field, partition_element_count, max_resident=2):
        self.field = spring_field
        self.ranges = partition_ranges(spring_field.n_elements,
                                       partition_element_count)
        self.residency = [SLOW] * len(self.ranges)
        self.max_resident = max_resident
        self.resident_watermark = 0
        self._lock = threading.Lock()

    @property
    def n_partitions(self):
        return len(self.ranges)

    @property
    def max_partition_elements(self):
        return max(stop - start for start, stop in self.ranges)

    def partition_bytes(self, p):
        start, stop = self.ranges[p]
        return (stop - start) * self.field.bytes_per_element()

    @property
    def resident_count(self):
        return sum(1 for r in self.residency if r != SLOW)

    def reset_watermark(self):
        self.resident_watermark = self.resident_count

    def begin_transfer(self, p, direction):
        with self._lock:
            state = self.residency[p]
            if state in (IN_FLIGHT_UP, IN_FLIGHT_DOWN):
                raise TransferError(f"partition {p} already in flight")
            want = SLOW if direction == "up" else FAST
            if state != want:
                raise TransferError(
                    f"partition {p} is {state!r}, cannot move {direction}")
            self.residency[p] = IN_FLIGHT_UP if direction == "up" \
                else IN_FLIGHT_DOWN
            count = self.resident_count
            if count > self.max_resident:
                raise TransferError(
                    f"{count} partitions resident or in flight exceeds the "
                    f"limit of {self.max_resident}")
            self.resident_watermark = max(self.resident_watermark, count)

    def complete_transfer(self, p):
        with self._lock:
            state = self.residency[p]
            if state == IN_FLIGHT_UP:
                self.residency[p] = FAST
            elif state == IN_FLIGHT_DOWN:
                self.residency[p] = SLOW
            else:
                raise TransferError(f"partition {p} is not in flight")


class SlotBuffer:
    """One fast-tier partition slot backed by a real spring field."""

    def __init__(self, capacity_elements, n_springs):
        self.capacity_elements = capacity_elements
        self.field = SpringField(capacity_elements, n_springs)
        self.holder = None   # partition index currently loaded
        self.n_elements = 0  # valid leading elements


@dataclass
class TransferReceipt:
    partition: int
    direction: str
    nbytes: int
    seconds: float


def transfer(store, p, direction, channel, slot):
    """Move partition p between the store and a slot: real copy plus a
    virtual-clock charge of bytes/bandwidth + latency."""
    start, stop = store.ranges[p]
    count = stop - start
    if direction == "up" and count > slot.capacity_elements:
        raise CapacityError(
            f"partition {p} ({count} elements) exceeds slot capacity "
            f"{slot.capacity_elements}")
    if direction == "up" and slot.holder is not None:
        raise TransferError(
            f"slot still holds partition {slot.holder}, cannot upload {p}")
    if direction == "down" and slot.holder != p:
        raise TransferError(
            f"slot holds partition {slot.holder}, cannot download {p}")
    store.begin_transfer(p, direction)
    src_slice = store.field.point_slice(start, stop)
    dst_slice = slice(0, count * EVAL_POINTS_PER_ELEMENT)
    for a_store, a_slot in zip(store.field.arrays, slot.field.arrays):
        if direction == "up":
            a_slot[dst_slice] = a_store[src_slice]
        else:
            a_store[src_slice] = a_slot[dst_slice]
    if direction == "up":
        slot.holder = p
        slot.n_elements = count
    else:
        slot.holder = None
        slot.n_elements = 0
    nbytes = store.partition_bytes(p)
    seconds = channel.charge(nbytes, direction)
    store.complete_transfer(p)
    return TransferReceipt(p, direction, nbytes, seconds)


# ---------------------------------------------------------------------------
# cost model and telemetry


@dataclass
class CostModel:
    """Injected virtual-clock costs; None means measure wall time."""

    partition_compute_s: float = None
    solver_s: float = None
    crs_update_s: float = None
    direct_access_penalty_s: float = 0.0  # per element, diagnostic mode


@dataclass
class StepTelemetry:
    step: int
    strategy: str
    solver_s: float = 0.0
    constitutive_s: float = 0.0
    transfer_up_s: float = 0.0
    transfer_down_s: float = 0.0
    crs_update_s: float = 0.0
    overlapped_s: float = 0.0
    multispring_stage_s: float = 0.0
    peak_fast_bytes: int = 0
    resident_watermark: int = 0
    bytes_up: int = 0
    bytes_down: int = 0
    solver_iterations: int = 0

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# pipelined sweep


def _sweep_windows(npart):
    """Barrier-delimited windows: serialized prologue (two uploads) and
    epilogue (two downloads), three-way overlap in between."""
    w = [dict(up=0)]
    if npart >= 2:
        w.append(dict(up=1))
    w.append(dict(compute=0))
    for j in range(1, npart - 1):
        w.append(dict(compute=j, down=j - 1, up=j + 1))
    if npart >= 2:
        w.append(dict(compute=npart - 1))
        w.append(dict(down=npart - 2))
    w.append(dict(down=npart - 1))
    return w


class TierRuntime:
    """Shared arena, channel, cost model, and cached slot buffers."""

    def __init__(self, arena, channel, cost=None):
        self.arena = arena
        self.channel = channel
        self.cost = cost or CostModel()
        self._slots = {}

    def slots_for(self, store):
        n_slots = min(2, store.n_partitions)
        cap = store.max_partition_elements
        key = (cap, store.field.n_springs, n_slots)
        if key not in self._slots:
            slots = []
            for i in range(n_slots):
                self.arena.alloc(f"partition_slot{i}_{cap}",
                                 cap * store.field.bytes_per_element())
                slots.append(SlotBuffer(cap, store.field.n_springs))
            self._slots[key] = slots
        return self._slots[key]


def _run_sweep(rt, store, compute_fn, tel):
    """One pipelined pass over all partitions: three threads (compute,
    upload, download) step through the window schedule in lockstep."""
    slots = rt.slots_for(store)
    windows = _sweep_windows(store.n_partitions)
    store.reset_watermark()
    results = [dict() for _ in windows]
    down_done = [threading.Event() for _ in windows]
    barrier = threading.Barrier(3)
    errors = []

    def slot_of(p):
        return slots[p % len(slots)]

    def worker(role):
        for wi, w in enumerate(windows):
            try:
                if errors:
                    pass
                elif role == "down" and w.get("down") is not None:
                    p = w["down"]
                    results[wi]["down"] = transfer(
                        store, p, "down", rt.channel, slot_of(p)).seconds
                elif role == "up":
                    down_done[wi].wait()
                    if w.get("up") is not None:
                        p = w["up"]
                        results[wi]["up"] = transfer(
                            store, p, "up", rt.channel, slot_of(p)).seconds
                elif role == "compute" and w.get("compute") is not None:
                    p = w["compute"]
                    t0 = time.perf_counter()
                    compute_fn(p, slot_of(p))
                    wall = time.perf_counter() - t0
                    c = rt.cost.partition_compute_s
                    results[wi]["compute"] = wall if c is None else c
            except BaseException as exc:  # propagate after the sweep
                errors.append(exc)
            finally:
                if role == "down":
                    down_done[wi].set()
                barrier.wait()

    threads = [threading.Thread(target=worker, args=(role,), daemon=True)
               for role in ("compute", "up", "down")]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]

    for r in results:
        c = r.get("compute", 0.0)
        xfer = max(r.get("down", 0.0), r.get("up", 0.0))
        tel.constitutive_s += c
        tel.transfer_down_s += r.get("down", 0.0)
        tel.transfer_up_s += r.get("up", 0.0)
        tel.multispring_stage_s += max(c, xfer)
        if c and xfer:
            tel.overlapped_s += min(c, xfer)
    tel.resident_watermark = max(tel.resident_watermark,
                                 store.resident_watermark)


# ---------------------------------------------------------------------------
# step strategies


def _timed(fn, override):
    t0 = time.perf_counter()
    out = fn()
    wall = time.perf_counter() - t0
    return out, (wall if override is None else override)


def _finish(tel, rt, b_up0, b_dn0):
    tel.peak_fast_bytes = rt.arena.peak_bytes
    tel.bytes_up = rt.channel.bytes_up - b_up0
    tel.bytes_down = rt.channel.bytes_down - b_dn0
    return tel


def run_step_slow_only(rt, store, step, solve_fn, compute_fn, crs_update_fn):
    """Solve, constitutive update, and matrix update all against the slow
    store; the channel stays untouched."""
    tel = StepTelemetry(step, StrategyKind.SLOW_ONLY.value)
    b_up0, b_dn0 = rt.channel.bytes_up, rt.channel.bytes_down
    out, tel.solver_s = _timed(solve_fn, rt.cost.solver_s)
    tel.solver_iterations = out if isinstance(out, int) else 0
    for p in range(store.n_partitions):
        _, c = _timed(lambda: compute_fn(p, None), rt.cost.partition_compute_s)
        tel.constitutive_s += c
        tel.multispring_stage_s += c
    _, tel.crs_update_s = _timed(crs_update_fn, rt.cost.crs_update_s)
    return _finish(tel, rt, b_up0, b_dn0)


def run_step_solver_fast(rt, store, step, solve_fn, compute_fn, crs_update_fn,
                         down_bytes, up_bytes):
    """Solver and matrix update in the fast tier; the solution moves down
    and the element tangents move up each step, serialized with compute."""
    tel = StepTelemetry(step, StrategyKind.SOLVER_FAST.value)
    b_up0, b_dn0 = rt.channel.bytes_up, rt.channel.bytes_down
    out, tel.solver_s = _timed(solve_fn, rt.cost.solver_s)
    tel.solver_iterations = out if isinstance(out, int) else 0
    tel.transfer_down_s = rt.channel.charge(down_bytes, "down")
    for p in range(store.n_partitions):
        _, c = _timed(lambda: compute_fn(p, None), rt.cost.partition_compute_s)
        tel.constitutive_s += c
        tel.multispring_stage_s += c
    tel.transfer_up_s = rt.channel.charge(up_bytes, "up")
    tel.multispring_stage_s += tel.transfer_down_s + tel.transfer_up_s
    _, tel.crs_update_s = _timed(crs_update_fn, rt.cost.crs_update_s)
    return _finish(tel, rt, b_up0, b_dn0)


def run_step_pipelined(rt, store, step, solve_fn, compute_fn, crs_update_fn):
    """Solver in the fast tier; constitutive partitions stream through two
    double-buffered slots; matrix update serialized after the sweep."""
    tel = StepTelemetry(step, StrategyKind.PIPELINED.value)
    b_up0, b_dn0 = rt.channel.bytes_up, rt.channel.bytes_down
    out, tel.solver_s = _timed(solve_fn, rt.cost.solver_s)
    tel.solver_iterations = out if isinstance(out, int) else 0
    _run_sweep(rt, store, compute_fn, tel)
    _, tel.crs_update_s = _timed(crs_update_fn, rt.cost.crs_update_s)
    return _finish(tel, rt, b_up0, b_dn0)


def run_step_pipelined_batch2(rt, stores, step, solve_fn, compute_fns):
    """Two cases solved together matrix-free, then streamed one after the
    other; there is no matrix update stage."""
    tel = StepTelemetry(step, StrategyKind.PIPELINED_BATCH2_EBE.value)
    b_up0, b_dn0 = rt.channel.bytes_up, rt.channel.bytes_down
    out, tel.solver_s = _timed(solve_fn, rt.cost.solver_s)
    tel.solver_iterations = out if isinstance(out, int) else 0
    for store, compute_fn in zip(stores, compute_fns):
        _run_sweep(rt, store, compute_fn, tel)
    tel.crs_update_s = 0.0
    return _finish(tel, rt, b_up0, b_dn0)


def run_multispring_direct(rt, store, compute_fn):
    """Diagnostic mode: fast-tier compute reaches into the slow store with
    a per-element access penalty instead of streaming partitions; returns
    the virtual stage seconds."""
    stage = 0.0
    for p in range(store.n_partitions):
        start, stop = store.ranges[p]
        _, c = _timed(lambda: compute_fn(p, None), rt.cost.partition_compute_s)
        stage += c + rt.cost.direct_access_penalty_s * (stop - start)
    return stage
