"""Shared machine semantics: Director, stages, scheduler slots, pools.

One instant of machine behavior is a *timed event* (arrival, director
drain, scheduler slot end, kernel completion, token hop) followed by a
deterministic zero-time settle cascade (dependency resolution, scheduler
pops, pool allocations, releases). Drivers own time: the simulator picks
concrete instants, the discrete checker branches over integer choices,
the zone checker keeps clock zones. All three call the same ``ev_*``
entry points so their behaviors coincide by construction.

Scheduling discipline: when ``schedule_ahead`` is on (the default), every
kernel of an instance enters its stage's ready queue at dispatch in
topological order, so the scheduler's per-kernel cost overlaps upstream
execution; a scheduled kernel still waits for its input tokens before it
reaches the pool. With ``schedule_ahead`` off, a kernel is queued only
once all its inputs are available. The pool is all-or-nothing with
head-of-line blocking: a kernel short on resources stalls every kernel
behind it until a completion frees enough.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import messages as msg
from .graph import DffGraph, stage_maxima, topo_order

# kernel lifecycle states
K_WAITING = 0    # entry written, not yet queued
K_QUEUED = 1     # in the stage ready queue
K_SLOTTING = 2   # scheduler busy on it
K_SCHEDULED = 3  # slot done, input tokens still missing
K_POOLQ = 4      # awaiting pool allocation
K_RUNNING = 5
K_DONE = 6

F_RDY = 1
F_SCHED = 2
F_RUN = 4

# instance phases
I_DIRQ = 0
I_ACTIVE = 1

FCFS = "fcfs"
EDF = "edf"


@dataclass(frozen=True)
class KernelInfo:
    local_tag: int
    kernel_name: str
    stage: int
    cu: int
    mu: int
    min_cc: int
    max_cc: int | None
    deadline_meta: int
    in_edges: tuple
    out_edges: tuple


@dataclass(frozen=True)
class EdgeInfo:
    edge_id: int
    producer_tag: int
    producer_stage: int
    consumer_tag: int
    consumer_stage: int
    token_bytes: int


@dataclass(frozen=True)
class CompiledDff:
    """A validated graph lowered to dense runtime tables."""

    name: str
    container_id: int
    timeout_cc: int
    kernels: tuple          # KernelInfo, index = local_tag - 1
    edges: tuple            # EdgeInfo
    dispatch_order: tuple   # local tags, topological
    envelope: tuple         # ((stage, cu, mu), ...)
    input_bytes: int
    output_bytes: int


def compile_dff(g: DffGraph) -> CompiledDff:
    order = topo_order(g)
    edges = []
    stage_of = {m.local_tag: m.stage_id for m in g.microflows}
    stage_of[0] = -1
    for m in g.microflows:
        for src, nbytes in m.inputs:
            edges.append((src.owner_local_tag, m.local_tag, nbytes))
    for m in g.microflows:
        for sink, nbytes in m.outputs:
            if sink.owner_local_tag == 0:
                edges.append((m.local_tag, 0, nbytes))
    einfo = tuple(
        EdgeInfo(i, p, stage_of[p], c, stage_of[c], b)
        for i, (p, c, b) in enumerate(edges)
    )
    kinfo = []
    for m in sorted(g.microflows, key=lambda m: m.local_tag):
        kinfo.append(KernelInfo(
            local_tag=m.local_tag,
            kernel_name=m.kernel_name,
            stage=m.stage_id,
            cu=m.compute_units,
            mu=m.memory_units,
            min_cc=m.min_cc,
            max_cc=m.max_cc,
            deadline_meta=m.deadline_meta if m.deadline_meta is not None
            else g.timeout_cc,
            in_edges=tuple(e.edge_id for e in einfo if e.consumer_tag == m.local_tag),
            out_edges=tuple(e.edge_id for e in einfo if e.producer_tag == m.local_tag),
        ))
    env = tuple((s, cu, mu) for s, (cu, mu, _) in sorted(stage_maxima(g).items()))
    return CompiledDff(
        name=g.name,
        container_id=g.container_id,
        timeout_cc=g.timeout_cc,
        kernels=tuple(kinfo),
        edges=einfo,
        dispatch_order=tuple(order),
        envelope=env,
        input_bytes=g.total_input_bytes(),
        output_bytes=g.total_output_bytes(),
    )


@dataclass(frozen=True)
class SourceSpec:
    """Quasi-periodic control-packet source: k-th emission in
    [k*period + phase, k*period + phase + jitter]."""

    dff_index: int
    period: int
    phase: int
    jitter: int
    count: int
    container_id: int | None = None  # override to exercise unknown-container rejects


@dataclass(frozen=True)
class MachineConfig:
    stages: int = 1
    pool_compute: tuple = (4,)
    pool_memory: tuple = (13,)
    director_cost: int = 100
    scheduler_cost: int = 123
    director_queue_cap: int = 16
    ready_queue_cap: int = 32
    policy: str = FCFS
    max_parallel: int = 8
    schedule_ahead: bool = True
    dma_latency: int = 0
    inject: frozenset = frozenset()  # test hooks: leak-tokens, skip-run-clear


@dataclass(frozen=True)
class Scenario:
    machine: MachineConfig
    dffs: tuple        # CompiledDff
    sources: tuple     # SourceSpec
    timeout_override: int | None = None

    def timeout_of(self, dff_index):
        if self.timeout_override is not None:
            return self.timeout_override
        return self.dffs[dff_index].timeout_cc

    def known_container(self, container_id):
        return any(d.container_id == container_id for d in self.dffs)


class Fault(Exception):
    """Terminal machine fault (carries the stable error code)."""

    def __init__(self, code, detail):
        super().__init__(detail)
        self.code = code
        self.detail = detail


class Instance:
    __slots__ = ("gtag", "dff", "source", "phase", "kstate", "flags", "missing",
                 "tokens", "remaining")

    def __init__(self, gtag, dff_index, source_index, n_kernels):
        self.gtag = gtag
        self.dff = dff_index
        self.source = source_index
        self.phase = I_DIRQ
        self.kstate = [K_WAITING] * n_kernels
        self.flags = [0] * n_kernels
        self.missing = [0] * n_kernels
        self.tokens = 0  # bitmask over edge ids
        self.remaining = n_kernels

    def clone(self):
        other = Instance.__new__(Instance)
        other.gtag = self.gtag
        other.dff = self.dff
        other.source = self.source
        other.phase = self.phase
        other.kstate = self.kstate[:]
        other.flags = self.flags[:]
        other.missing = self.missing[:]
        other.tokens = self.tokens
        other.remaining = self.remaining
        return other

    def key(self):
        return (self.dff, self.phase, tuple(self.kstate), tuple(self.flags),
                tuple(self.missing), self.tokens, self.remaining)


class Stage:
    __slots__ = ("ready", "slot", "poolq", "running", "free_cu", "free_mu")

    def __init__(self, cu, mu):
        self.ready = []
        self.slot = None
        self.poolq = []
        self.running = []
        self.free_cu = cu
        self.free_mu = mu

    def clone(self):
        other = Stage.__new__(Stage)
        other.ready = self.ready[:]
        other.slot = self.slot
        other.poolq = self.poolq[:]
        other.running = self.running[:]
        other.free_cu = self.free_cu
        other.free_mu = self.free_mu
        return other

    def key(self):
        return (tuple(self.ready), self.slot, tuple(self.poolq),
                tuple(self.running), self.free_cu, self.free_mu)


class Core:
    """Mutable machine state plus the transition/settle rules."""

    def __init__(self, scenario: Scenario):
        self.scn = scenario
        mc = scenario.machine
        self.fault = None          # (code, detail) once terminal
        self.instances = [None] * mc.max_parallel
        self.stages = [Stage(mc.pool_compute[s], mc.pool_memory[s])
                       for s in range(mc.stages)]
        self.director_queue = []
        self.director_active = False
        self.director_work = 0
        self.emitted = [0] * len(scenario.sources)
        self.committed = [(0, 0)] * mc.stages  # admission-envelope accounting
        self.in_flight = 0
        self.sticky_run = []       # (inst, ltag) left set by skip-run-clear
        self.next_gtag = 0         # label only, excluded from state identity
        self.token_bytes = 0       # gauge for occupancy metrics
        self.leaked_bytes = 0

    # -- state identity ----------------------------------------------------

    def clone(self):
        other = Core.__new__(Core)
        other.scn = self.scn
        other.fault = self.fault
        other.instances = [i.clone() if i else None for i in self.instances]
        other.stages = [s.clone() for s in self.stages]
        other.director_queue = self.director_queue[:]
        other.director_active = self.director_active
        other.director_work = self.director_work
        other.emitted = self.emitted[:]
        other.committed = self.committed[:]
        other.in_flight = self.in_flight
        other.sticky_run = self.sticky_run[:]
        other.next_gtag = self.next_gtag
        other.token_bytes = self.token_bytes
        other.leaked_bytes = self.leaked_bytes
        return other

    def key(self):
        return (
            self.fault,
            tuple(i.key() if i else None for i in self.instances),
            tuple(s.key() for s in self.stages),
            tuple(self.director_queue),
            self.director_active,
            self.director_work,
            tuple(self.emitted),
            tuple(self.committed),
            tuple(self.sticky_run),
        )

    # -- helpers -------------------------------------------------------------

    def kernel_info(self, inst, ltag) -> KernelInfo:
        return self.scn.dffs[self.instances[inst].dff].kernels[ltag - 1]

    def dff_of(self, inst) -> CompiledDff:
        return self.scn.dffs[self.instances[inst].dff]

    def memory_in_use(self):
        mc = self.scn.machine
        return sum(mc.pool_memory[s] - st.free_mu for s, st in enumerate(self.stages))

    def live_work(self):
        return self.in_flight > 0

    def _fault(self, eng, kind, code, detail):
        self.fault = (kind, code, detail)
        eng.emit("fault", kind=kind, code=code, detail=detail)

    # -- timed-event entry points --------------------------------------------

    def ev_arrival(self, eng, source_index):
        """A control packet lands at the Director."""
        if self.fault:
            return
        src = self.scn.sources[source_index]
        k = self.emitted[source_index]
        self.emitted[source_index] = k + 1
        gtag = self.next_gtag
        self.next_gtag += 1
        container = (src.container_id if src.container_id is not None
                     else self.scn.dffs[src.dff_index].container_id)
        eng.emit("arrive", source=source_index, emission=k, gtag=gtag,
                 container=container)

        if not self.scn.known_container(container):
            eng.emit("reject", gtag=gtag, code=msg.E_DCT_UNSUPPORTED,
                     reason="DCT unsupported")
            eng.record_drop(msg.E_DCT_UNSUPPORTED)
            self._settle(eng)
            return
        if self.in_flight >= self.scn.machine.max_parallel:
            eng.emit("reject", gtag=gtag, code=msg.E_MAX_PARALLEL,
                     reason="max parallel DFFs")
            eng.record_drop(msg.E_MAX_PARALLEL)
            self._settle(eng)
            return
        if len(self.director_queue) >= self.scn.machine.director_queue_cap:
            self._fault(eng, "queue-overflow", msg.E_QUEUE_OVERFLOW,
                        "director queue overflow")
            return

        idx = next(i for i, slot in enumerate(self.instances) if slot is None)
        dff = self.scn.dffs[src.dff_index]
        self.instances[idx] = Instance(gtag, src.dff_index, source_index,
                                       len(dff.kernels))
        self.in_flight += 1
        self.director_queue.append(idx)
        eng.start_lifetime(idx)
        eng.emit("admit", gtag=gtag, inst=idx)
        self.director_work += self.scn.machine.director_cost
        if not self.director_active:
            self.director_active = True
            eng.start_director()
        else:
            eng.retarget_director()
        self._settle(eng)

    def ev_director_done(self, eng):
        """The Director drained its outstanding work: dispatch everything queued."""
        if self.fault:
            return
        self.director_active = False
        self.director_work = 0
        eng.stop_director()
        queue, self.director_queue = self.director_queue, []
        for idx in queue:
            self._dispatch(eng, idx)
            if self.fault:
                return
        self._settle(eng)

    def ev_slot_done(self, eng, stage_index):
        """The scheduler finished its per-kernel cost for the slotted kernel."""
        if self.fault:
            return
        st = self.stages[stage_index]
        inst, ltag = st.slot
        st.slot = None
        eng.stop_slot(stage_index)
        ent = self.instances[inst]
        eng.emit("slot-end", stage=stage_index, inst=inst, kernel=ltag)
        if ent.missing[ltag - 1] == 0:
            ent.kstate[ltag - 1] = K_POOLQ
            st.poolq.append((inst, ltag))
        else:
            ent.kstate[ltag - 1] = K_SCHEDULED
        self._settle(eng)

    def ev_complete(self, eng, inst, ltag):
        """A running kernel completed within its runtime window."""
        if self.fault:
            return
        ent = self.instances[inst]
        if ent is None or ent.kstate[ltag - 1] != K_RUNNING:
            self._fault(eng, "not-running", msg.E_RESOURCE,
                        f"completion for kernel not running: inst {inst} tag {ltag}")
            return
        info = self.kernel_info(inst, ltag)
        st = self.stages[info.stage]
        st.running.remove((inst, ltag))
        st.free_cu += info.cu
        st.free_mu += info.mu
        eng.stop_kernel(inst, ltag)
        ent.kstate[ltag - 1] = K_DONE
        ent.remaining -= 1
        if "skip-run-clear" in self.scn.machine.inject:
            if (inst, ltag) not in self.sticky_run:
                self.sticky_run.append((inst, ltag))
        else:
            ent.flags[ltag - 1] &= ~(F_RDY | F_SCHED | F_RUN)
        eng.emit("complete", stage=info.stage, inst=inst, kernel=ltag)

        dff = self.dff_of(inst)
        # consume input tokens (buffer release at completion)
        for eid in info.in_edges:
            if ent.tokens >> eid & 1:
                ent.tokens &= ~(1 << eid)
                self.token_bytes -= dff.edges[eid].token_bytes
        # produce output tokens
        for eid in info.out_edges:
            e = dff.edges[eid]
            if e.consumer_tag == 0:
                self._mark_token(eng, inst, eid)
                eng.emit("output-ready", inst=inst, port=eid)
                continue
            if (self.scn.machine.dma_latency > 0
                    and e.consumer_stage != e.producer_stage):
                eng.start_hop(inst, eid, self.scn.machine.dma_latency)
            else:
                self._mark_token(eng, inst, eid)
                if self.fault:
                    return
                self._resolve_consumer(eng, inst, eid)
        if ent.remaining == 0:
            self._release(eng, inst)
        self._settle(eng)

    def ev_hop_done(self, eng, inst, edge_id):
        """A cross-stage token transfer finished (fixed DMA latency)."""
        if self.fault:
            return
        self._mark_token(eng, inst, edge_id)
        if self.fault:
            return
        self._resolve_consumer(eng, inst, edge_id)
        self._settle(eng)

    def ev_timeout(self, eng, inst):
        """Simulator-side deadline enforcement: drop a DFF that ran past its
        timeout, freeing everything it holds. Flows never cascade."""
        if self.fault:
            return
        ent = self.instances[inst]
        if ent is None:
            return
        eng.emit("timeout-kill", inst=inst, gtag=ent.gtag, code=msg.E_TIMEOUT)
        eng.record_drop(msg.E_TIMEOUT)
        dff = self.dff_of(inst)
        if ent.phase == I_DIRQ:
            self.director_queue.remove(inst)
        else:
            for ki, state in enumerate(ent.kstate):
                ltag = ki + 1
                info = dff.kernels[ki]
                st = self.stages[info.stage]
                if state == K_QUEUED:
                    st.ready.remove((inst, ltag))
                elif state == K_SLOTTING:
                    st.slot = None
                    eng.stop_slot(info.stage)
                elif state == K_POOLQ:
                    st.poolq.remove((inst, ltag))
                elif state == K_RUNNING:
                    st.running.remove((inst, ltag))
                    st.free_cu += info.cu
                    st.free_mu += info.mu
                    eng.stop_kernel(inst, ltag)
            for s, cu, mu in dff.envelope:
                ccu, cmu = self.committed[s]
                self.committed[s] = (ccu - cu, cmu - mu)
        for eid, e in enumerate(dff.edges):
            if ent.tokens >> eid & 1:
                self.token_bytes -= e.token_bytes
        eng.stop_lifetime(inst, released=False)
        self.instances[inst] = None
        self.in_flight -= 1
        self._settle(eng)

    # -- internals -----------------------------------------------------------

    def _mark_token(self, eng, inst, edge_id):
        ent = self.instances[inst]
        dff = self.dff_of(inst)
        if ent.tokens >> edge_id & 1:
            self._fault(eng, "write-before-read", msg.E_WRITE_BEFORE_READ,
                        f"token {edge_id} of inst {inst} written while unread")
            return
        ent.tokens |= 1 << edge_id
        self.token_bytes += dff.edges[edge_id].token_bytes
        eng.emit("token", inst=inst, edge=edge_id)

    def _resolve_consumer(self, eng, inst, edge_id):
        """Dependency resolver: one token became available."""
        ent = self.instances[inst]
        dff = self.dff_of(inst)
        ctag = dff.edges[edge_id].consumer_tag
        if ctag == 0:
            return
        ki = ctag - 1
        ent.missing[ki] -= 1
        if ent.missing[ki] > 0:
            return
        ent.flags[ki] |= F_RDY
        eng.emit("ready", inst=inst, kernel=ctag)
        info = dff.kernels[ki]
        st = self.stages[info.stage]
        state = ent.kstate[ki]
        if state == K_WAITING:
            # strict mode: queue on readiness
            if len(st.ready) >= self.scn.machine.ready_queue_cap:
                self._fault(eng, "queue-overflow", msg.E_QUEUE_OVERFLOW,
                            f"ready queue overflow on stage {info.stage}")
                return
            ent.kstate[ki] = K_QUEUED
            st.ready.append((inst, ctag))
        elif state == K_SCHEDULED:
            ent.kstate[ki] = K_POOLQ
            st.poolq.append((inst, ctag))

    def _dispatch(self, eng, idx):
        """Director work done for this instance: play Tetris, write entries."""
        ent = self.instances[idx]
        dff = self.dff_of(idx)
        mc = self.scn.machine
        for s, cu, mu in dff.envelope:
            if s >= mc.stages:
                eng.emit("reject", gtag=ent.gtag, code=msg.E_DCT_UNSUPPORTED,
                         reason=f"no stage {s}")
                eng.record_drop(msg.E_DCT_UNSUPPORTED)
                self._evict(eng, idx)
                return
            ccu, cmu = self.committed[s]
            if ccu + cu > mc.pool_compute[s] or cmu + mu > mc.pool_memory[s]:
                eng.emit("reject", gtag=ent.gtag, code=msg.E_RESOURCE,
                         reason="no feature vector fits")
                eng.record_drop(msg.E_RESOURCE)
                self._evict(eng, idx)
                return
        for s, cu, mu in dff.envelope:
            ccu, cmu = self.committed[s]
            self.committed[s] = (ccu + cu, cmu + mu)
        ent.phase = I_ACTIVE
        eng.emit("dispatch", inst=idx, gtag=ent.gtag, kernels=len(dff.kernels))
        for ki, info in enumerate(dff.kernels):
            ent.missing[ki] = len(info.in_edges)
        # fragment input data is ready at dispatch
        for eid, e in enumerate(dff.edges):
            if e.producer_tag == 0:
                self._mark_token(eng, idx, eid)
                if self.fault:
                    return
                ctag = e.consumer_tag
                ent.missing[ctag - 1] -= 1
        for ki, info in enumerate(dff.kernels):
            if ent.missing[ki] == 0:
                ent.flags[ki] |= F_RDY
                eng.emit("ready", inst=idx, kernel=ki + 1)
        order = dff.dispatch_order if self.scn.machine.schedule_ahead else [
            t for t in dff.dispatch_order if ent.missing[t - 1] == 0
        ]
        for ltag in order:
            info = dff.kernels[ltag - 1]
            st = self.stages[info.stage]
            if len(st.ready) >= mc.ready_queue_cap:
                self._fault(eng, "queue-overflow", msg.E_QUEUE_OVERFLOW,
                            f"ready queue overflow on stage {info.stage}")
                return
            ent.kstate[ltag - 1] = K_QUEUED
            st.ready.append((idx, ltag))
        eng.emit("microflows-ready", inst=idx)

    def _evict(self, eng, idx):
        eng.stop_lifetime(idx, released=False)
        self.instances[idx] = None
        self.in_flight -= 1

    def _release(self, eng, inst):
        """All kernels done: stateless completion of the whole fragment."""
        ent = self.instances[inst]
        dff = self.dff_of(inst)
        leak = "leak-tokens" in self.scn.machine.inject
        for eid, e in enumerate(dff.edges):
            if ent.tokens >> eid & 1:
                if leak:
                    self.leaked_bytes += e.token_bytes
                else:
                    self.token_bytes -= e.token_bytes
        for s, cu, mu in dff.envelope:
            ccu, cmu = self.committed[s]
            self.committed[s] = (ccu - cu, cmu - mu)
        eng.emit("release", inst=inst, gtag=ent.gtag)
        eng.stop_lifetime(inst, released=True)
        self.instances[inst] = None
        self.in_flight -= 1

    def _pick(self, eng, stage_index):
        st = self.stages[stage_index]
        if self.scn.machine.policy == FCFS or len(st.ready) == 1:
            return 0
        # EDF: earliest absolute deadline first, FCFS on ties
        best = 0
        for i in range(1, len(st.ready)):
            if eng.edf_earlier(st.ready[i], st.ready[best]):
                best = i
        return best

    def _settle(self, eng):
        """Zero-time closure: pool allocations, then scheduler pops."""
        if self.fault:
            return
        mc = self.scn.machine
        for si, st in enumerate(self.stages):
            while st.poolq:
                inst, ltag = st.poolq[0]
                info = self.kernel_info(inst, ltag)
                if info.cu > mc.pool_compute[si] or info.mu > mc.pool_memory[si]:
                    self._fault(eng, "infeasible", msg.E_RESOURCE,
                                f"kernel demand ({info.cu}cu,{info.mu}mu) exceeds "
                                f"pool totals on stage {si}")
                    return
                if info.cu > st.free_cu or info.mu > st.free_mu:
                    break  # head-of-line: nothing behind may allocate
                st.poolq.pop(0)
                ent = self.instances[inst]
                if (inst, ltag) in self.sticky_run:
                    self._fault(eng, "double-assign", msg.E_RESOURCE,
                                f"double assignment: kernel ({inst},{ltag}) "
                                "activated while RUN still set")
                    return
                st.free_cu -= info.cu
                st.free_mu -= info.mu
                st.running.append((inst, ltag))
                ent.kstate[ltag - 1] = K_RUNNING
                ent.flags[ltag - 1] |= F_RUN
                eng.emit("run-start", stage=si, inst=inst, kernel=ltag)
                eng.start_kernel(inst, ltag, info.min_cc, info.max_cc)
        for si, st in enumerate(self.stages):
            if st.slot is None and st.ready:
                choice = self._pick(eng, si)
                inst, ltag = st.ready.pop(choice)
                ent = self.instances[inst]
                ent.kstate[ltag - 1] = K_SLOTTING
                ent.flags[ltag - 1] |= F_SCHED
                st.slot = (inst, ltag)
                eng.emit("slot-start", stage=si, inst=inst, kernel=ltag)
                eng.start_slot(si)
