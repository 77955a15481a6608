"""Deterministic discrete-event simulator over the shared machine core.

Given a scenario and a seed, the run is a pure function: the trace is
byte-identical across repeats. Simultaneous events are ordered by a fixed
priority (completions, token hops, scheduler slots, director drains,
admissions, then timeout enforcement) and by their identifying tuple, so
the simulator realizes exactly one of the interleavings the checker
explores.

Traces are line-oriented and replayable: ``step`` lines carry the timed
events (with enough information to reproduce every nondeterministic
choice), and the remaining lines are the zero-time effects the core emits.
``replay`` drives the same core from step lines alone, which is also how
checker witnesses are validated.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field

from . import messages as msg
from .core import Core, Scenario

PRIO = {"complete": 0, "hop": 1, "slot": 2, "director": 3, "arrival": 4,
        "timeout": 5}


@dataclass
class SimMetrics:
    latencies: list = field(default_factory=list)  # (gtag, admit, release, latency)
    occupancy: list = field(default_factory=list)  # (t, memory_units, token_bytes)
    drops: int = 0
    drop_codes: dict = field(default_factory=dict)
    max_in_flight: int = 0
    max_director_queue: int = 0
    max_ready_queue: int = 0

    @property
    def final_occupancy(self):
        return self.occupancy[-1][1:] if self.occupancy else (0, 0)


@dataclass
class SimResult:
    metrics: SimMetrics
    trace: list
    core: Core
    fault: tuple | None

    @property
    def ok(self):
        return self.fault is None


class _Engine:
    """Concrete-time engine hooks driving a Core."""

    def __init__(self, scenario, durations, jitters, enforce_timeout=True,
                 collect_trace=True):
        self.scn = scenario
        self.core = Core(scenario)
        self.durations = durations  # (inst, ltag, lo, hi) -> int
        self.jitters = jitters      # (source, k, bound) -> int
        self.enforce_timeout = enforce_timeout
        self.collect = collect_trace
        self.now = 0
        self.heap = []
        self.seq = 0
        self.active = {}
        self.started = {}           # timer key -> start time
        self.admit_time = {}
        self.metrics = SimMetrics()
        self.trace = []

    # -- event plumbing ------------------------------------------------------

    def _push(self, time, kind, args):
        self.seq += 1
        key = (kind,) + args
        self.active[key] = self.seq
        heapq.heappush(self.heap, (time, PRIO[kind], args, self.seq, kind))

    def _cancel(self, kind, args):
        self.active.pop((kind,) + args, None)

    # -- core hooks ------------------------------------------------------

    def emit(self, name, **fields):
        if self.collect:
            kv = " ".join(f"{k}={v}" for k, v in fields.items())
            self.trace.append(f"t={self.now} {name} {kv}".rstrip())

    def record_drop(self, code):
        self.metrics.drops += 1
        self.metrics.drop_codes[code] = self.metrics.drop_codes.get(code, 0) + 1
        self.emit("error-packet",
                  text=msg.render_text(msg.ErrorPacket(0, code, self.now)))

    def start_lifetime(self, inst):
        self.admit_time[inst] = self.now
        if self.enforce_timeout:
            ent = self.core.instances[inst]
            timeout = self.scn.timeout_of(ent.dff)
            self._push(self.now + timeout, "timeout", (inst,))

    def stop_lifetime(self, inst, released):
        admit = self.admit_time.pop(inst)
        self._cancel("timeout", (inst,))
        if released:
            gtag = self.core.instances[inst].gtag
            self.metrics.latencies.append((gtag, admit, self.now, self.now - admit))

    def start_director(self):
        self.started["dir"] = self.now
        self._push(self.now + self.core.director_work, "director", ())

    def retarget_director(self):
        self._cancel("director", ())
        self._push(self.started["dir"] + self.core.director_work, "director", ())

    def stop_director(self):
        self._cancel("director", ())
        self.started.pop("dir", None)

    def start_slot(self, stage):
        self._push(self.now + self.scn.machine.scheduler_cost, "slot", (stage,))

    def stop_slot(self, stage):
        self._cancel("slot", (stage,))

    def start_kernel(self, inst, ltag, lo, hi):
        dur = self.durations(inst, ltag, lo, hi)
        self.emit("duration", inst=inst, kernel=ltag, cc=dur)
        self._push(self.now + dur, "complete", (inst, ltag))

    def stop_kernel(self, inst, ltag):
        self._cancel("complete", (inst, ltag))

    def start_hop(self, inst, edge, delay):
        self._push(self.now + delay, "hop", (inst, edge))

    def edf_earlier(self, a, b):
        da = self.admit_time[a[0]] + self.core.kernel_info(*a).deadline_meta
        db = self.admit_time[b[0]] + self.core.kernel_info(*b).deadline_meta
        return da < db

    # -- driving ---------------------------------------------------------

    def schedule_arrival(self, source_index):
        src = self.scn.sources[source_index]
        k = self.core.emitted[source_index]
        if k >= src.count:
            return
        j = self.jitters(source_index, k, src.jitter)
        self._push(k * src.period + src.phase + j, "arrival", (source_index,))

    def dispatch_event(self, kind, args):
        if kind == "arrival":
            self.emit("step", kind="arrival", source=args[0])
            self.core.ev_arrival(self, args[0])
            self.schedule_arrival(args[0])
        elif kind == "complete":
            self.emit("step", kind="complete", inst=args[0], kernel=args[1])
            self.core.ev_complete(self, args[0], args[1])
        elif kind == "slot":
            self.emit("step", kind="slot", stage=args[0])
            self.core.ev_slot_done(self, args[0])
        elif kind == "director":
            self.emit("step", kind="director")
            self.core.ev_director_done(self)
        elif kind == "hop":
            self.emit("step", kind="hop", inst=args[0], edge=args[1])
            self.core.ev_hop_done(self, args[0], args[1])
        elif kind == "timeout":
            self.emit("step", kind="timeout", inst=args[0])
            self.core.ev_timeout(self, args[0])

    def observe(self):
        m = self.metrics
        c = self.core
        m.max_in_flight = max(m.max_in_flight, c.in_flight)
        m.max_director_queue = max(m.max_director_queue, len(c.director_queue))
        m.max_ready_queue = max(m.max_ready_queue,
                                max((len(s.ready) for s in c.stages), default=0))
        point = (self.now, c.memory_in_use(), c.token_bytes)
        if m.occupancy and m.occupancy[-1][0] == self.now:
            m.occupancy[-1] = point
        else:
            m.occupancy.append(point)

    def run(self, max_events=1_000_000):
        for s in range(len(self.scn.sources)):
            self.schedule_arrival(s)
        self.observe()
        count = 0
        while self.heap and self.core.fault is None:
            time, _, args, seq, kind = heapq.heappop(self.heap)
            key = (kind,) + args
            if self.active.get(key) != seq:
                continue
            del self.active[key]
            self.now = time
            self.dispatch_event(kind, args)
            self.observe()
            count += 1
            if count > max_events:
                raise RuntimeError("simulation exceeded event budget")
        return SimResult(self.metrics, self.trace, self.core, self.core.fault)


def _sampler(mode, rng):
    if mode == "sample":
        return lambda lo, hi: rng.randint(lo, hi)
    if mode == "min":
        return lambda lo, hi: lo
    if mode == "max":
        return lambda lo, hi: hi
    raise ValueError(f"unknown mode {mode!r}")


def run_simulation(scenario: Scenario, seed=None, runtime_mode="sample",
                   jitter_mode=None, enforce_timeout=True, collect_trace=True,
                   max_events=1_000_000) -> SimResult:
    """Execute one seeded run. ``runtime_mode``/``jitter_mode`` pick kernel
    durations and arrival jitters: 'sample' (uniform, needs a seed), 'min'
    or 'max'."""
    jitter_mode = jitter_mode or runtime_mode
    needs_rng = runtime_mode == "sample" or jitter_mode == "sample"
    if needs_rng and seed is None:
        raise ValueError("seed required when sampling runtimes or jitter")
    rng = random.Random(seed)
    for d in scenario.dffs:
        for k in d.kernels:
            if k.max_cc is None and runtime_mode != "min":
                raise ValueError(
                    f"kernel {k.kernel_name} has unbounded runtime; "
                    "simulate with runtime_mode='min' or replay a witness")
    dur_f = _sampler(runtime_mode, rng)
    jit_f = _sampler(jitter_mode, rng)
    durations = lambda i, l, lo, hi: dur_f(lo, hi)
    jitters = lambda s, k, bound: jit_f(0, bound)
    eng = _Engine(scenario, durations, jitters, enforce_timeout, collect_trace)
    return eng.run(max_events)


@dataclass(frozen=True)
class Step:
    time: int
    kind: str
    args: tuple


def parse_trace_steps(lines):
    """Extract replayable timed events from trace text lines."""
    steps = []
    for line in lines:
        parts = line.split()
        if len(parts) < 2 or not parts[0].startswith("t=") or parts[1] != "step":
            continue
        time = int(parts[0][2:])
        fields = dict(p.split("=", 1) for p in parts[2:])
        kind = fields.pop("kind")
        if kind == "arrival":
            args = (int(fields["source"]),)
        elif kind == "complete":
            args = (int(fields["inst"]), int(fields["kernel"]))
        elif kind == "slot":
            args = (int(fields["stage"]),)
        elif kind == "director":
            args = ()
        elif kind == "hop":
            args = (int(fields["inst"]), int(fields["edge"]))
        elif kind == "timeout":
            args = (int(fields["inst"]),)
        else:
            raise ValueError(f"unknown step kind {kind!r}")
        steps.append(Step(time, kind, args))
    return steps


class _ReplayEngine(_Engine):
    """Follows a prescribed step sequence instead of the event heap."""

    def __init__(self, scenario):
        super().__init__(scenario, durations=None, jitters=None,
                         enforce_timeout=False, collect_trace=True)

    def start_kernel(self, inst, ltag, lo, hi):
        self.started[("complete", inst, ltag)] = (self.now, lo, hi)

    def stop_kernel(self, inst, ltag):
        self.started.pop(("complete", inst, ltag), None)

    def start_slot(self, stage):
        self.started[("slot", stage)] = self.now

    def stop_slot(self, stage):
        self.started.pop(("slot", stage), None)

    def start_director(self):
        self.started["dir"] = self.now

    def retarget_director(self):
        pass

    def stop_director(self):
        self.started.pop("dir", None)

    def start_hop(self, inst, edge, delay):
        self.started[("hop", inst, edge)] = (self.now, delay)

    def start_lifetime(self, inst):
        self.admit_time[inst] = self.now

    def schedule_arrival(self, source_index):
        pass  # arrivals come from the witness itself

    def replay(self, steps):
        for step in steps:
            if self.core.fault is not None:
                break
            if step.time < self.now:
                raise ValueError(f"witness time goes backwards at {step}")
            self.now = step.time
            self._check_step(step)
            self.dispatch_event(step.kind, step.args)
            self.observe()
        return SimResult(self.metrics, self.trace, self.core, self.core.fault)

    def _check_step(self, step):
        mc = self.scn.machine
        if step.kind == "arrival":
            src = self.scn.sources[step.args[0]]
            k = self.core.emitted[step.args[0]]
            if k >= src.count:
                raise ValueError(f"source {step.args[0]} already exhausted")
            nominal = k * src.period + src.phase
            if not nominal <= step.time <= nominal + src.jitter:
                raise ValueError(f"arrival outside jitter window: {step}")
        elif step.kind == "complete":
            started = self.started.get(("complete",) + step.args)
            if started is None:
                raise ValueError(f"completion for kernel not running: {step}")
            t0, lo, hi = started
            if step.time - t0 < lo or (hi is not None and step.time - t0 > hi):
                raise ValueError(f"completion outside runtime window: {step}")
        elif step.kind == "slot":
            t0 = self.started.get(("slot",) + step.args)
            if t0 is None or step.time != t0 + mc.scheduler_cost:
                raise ValueError(f"slot end at wrong instant: {step}")
        elif step.kind == "director":
            t0 = self.started.get("dir")
            if t0 is None or step.time != t0 + self.core.director_work:
                raise ValueError(f"director drain at wrong instant: {step}")
        elif step.kind == "hop":
            rec = self.started.get(("hop",) + step.args)
            if rec is None or step.time != rec[0] + rec[1]:
                raise ValueError(f"hop completion at wrong instant: {step}")

    def dispatch_event(self, kind, args):
        if kind == "complete":
            self.started.pop(("complete",) + args, None)
        elif kind == "slot":
            self.started.pop(("slot",) + args, None)
        elif kind == "hop":
            self.started.pop(("hop",) + args, None)
        super().dispatch_event(kind, args)


def replay(scenario: Scenario, steps) -> SimResult:
    """Re-execute a trace or checker witness against the real machine."""
    return _ReplayEngine(scenario).replay(steps)
