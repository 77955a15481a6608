"""Core domain model: dataflow fragments, microflows, containers, tags.

A dataflow fragment (DFF) is a flat DAG of microflows. Microflow 0 is a
pseudo-node that stands for the fragment boundary: its "input ports" are the
fragment-level inputs internal microflows read from, and its "output ports"
receive the fragment-level results. All other microflows carry dense local
tags 1..N and execute on a single stage each.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

INPUT = "input"
OUTPUT = "output"


@dataclass(frozen=True)
class PortRef:
    """A (microflow, port, direction) endpoint."""

    owner_local_tag: int
    port_index: int
    direction: str  # INPUT or OUTPUT

    def __str__(self):
        arrow = "in" if self.direction == INPUT else "out"
        return f"{self.owner_local_tag}.{arrow}{self.port_index}"


@dataclass(frozen=True)
class MicroflowSpec:
    """One kernel (or tight kernel group) bound to a single stage.

    ``inputs`` lists (source endpoint, token bytes) pairs; each source is an
    output port of another microflow or an input port of microflow 0.
    ``outputs`` lists (sink endpoint, token bytes) pairs symmetrically. The
    position inside each list is the microflow's own port index.
    """

    local_tag: int
    kernel_name: str
    stage_id: int
    inputs: tuple = ()
    outputs: tuple = ()
    runtime: tuple = (0, 0)  # [min_cc, max_cc]; max None = unbounded (fault injection)
    compute_units: int = 0
    memory_units: int = 0
    deadline_meta: int | None = None

    @property
    def min_cc(self):
        return self.runtime[0]

    @property
    def max_cc(self):
        return self.runtime[1]


@dataclass(frozen=True)
class BoundaryPort:
    port_index: int
    token_bytes: int


@dataclass(frozen=True)
class Edge:
    """A resolved token arc between two microflows (or the boundary)."""

    producer: PortRef
    consumer: PortRef
    token_bytes: int


@dataclass(frozen=True)
class DffGraph:
    name: str
    container_id: int
    boundary_inputs: tuple = ()  # BoundaryPort, microflow-0 input ports
    boundary_outputs: tuple = ()
    microflows: tuple = ()
    timeout_cc: int = 100_000

    def microflow(self, tag):
        for m in self.microflows:
            if m.local_tag == tag:
                return m
        raise KeyError(tag)

    def edges(self):
        """All token arcs, derived from consumer-side input declarations."""
        out = []
        for m in self.microflows:
            for idx, (src, nbytes) in enumerate(m.inputs):
                out.append(Edge(src, PortRef(m.local_tag, idx, INPUT), nbytes))
        for p in self.boundary_outputs:
            for m in self.microflows:
                for idx, (sink, nbytes) in enumerate(m.outputs):
                    if sink.owner_local_tag == 0 and sink.port_index == p.port_index:
                        out.append(
                            Edge(PortRef(m.local_tag, idx, OUTPUT),
                                 PortRef(0, p.port_index, OUTPUT), nbytes)
                        )
        return out

    def total_input_bytes(self):
        return sum(p.token_bytes for p in self.boundary_inputs)

    def total_output_bytes(self):
        return sum(p.token_bytes for p in self.boundary_outputs)

    def stage_ids(self):
        return sorted({m.stage_id for m in self.microflows})


@dataclass(frozen=True)
class FeatureVector:
    """Per-stage worst-case envelope: (stage -> compute, memory, buffer bytes)."""

    per_stage: tuple  # of (stage_id, compute_units, memory_units, buffer_bytes)

    def stage_map(self):
        return {s: (c, m, b) for s, c, m, b in self.per_stage}


@dataclass(frozen=True)
class Container:
    container_id: int
    max_input_bytes: int
    max_output_bytes: int
    feature_vectors: tuple = ()  # one or more FeatureVector alternatives


@dataclass(frozen=True)
class InstanceId:
    """Identity of a live DFF instance: unique global tag + reusable index."""

    global_tag: int
    instance_index: int


def _adjacency(g: DffGraph):
    """tag -> set of successor tags (boundary edges excluded)."""
    succ = {m.local_tag: set() for m in g.microflows}
    for m in g.microflows:
        for src, _ in m.inputs:
            if src.owner_local_tag != 0:
                if src.owner_local_tag in succ:
                    succ[src.owner_local_tag].add(m.local_tag)
    return succ


def find_cycle(g: DffGraph):
    """Return a set of tags forming a dependency cycle, or None."""
    succ = _adjacency(g)
    color = {t: 0 for t in succ}
    stack = []

    def visit(t):
        color[t] = 1
        stack.append(t)
        for n in succ[t]:
            if color[n] == 1:
                return set(stack[stack.index(n):])
            if color[n] == 0:
                got = visit(n)
                if got:
                    return got
        stack.pop()
        color[t] = 2
        return None

    for t in sorted(succ):
        if color[t] == 0:
            got = visit(t)
            if got:
                return got
    return None


def validate_graph(g: DffGraph):
    """Structural validation; returns a list of human-readable errors.

    An empty list means the graph satisfies every structural invariant:
    dense tags 1..N, acyclic dependencies, well-formed port references,
    single producer per boundary output, consistent edge declarations.
    """
    errors = []
    if not g.microflows:
        errors.append("no microflows")
        return errors

    tags = [m.local_tag for m in g.microflows]
    if len(set(tags)) != len(tags):
        dupes = sorted({t for t in tags if tags.count(t) > 1})
        errors.append(f"duplicate local tags {dupes}")
    if 0 in tags:
        errors.append("local tag 0 is reserved for the fragment boundary")
    expect = list(range(1, len(tags) + 1))
    if sorted(tags) != expect and 0 not in tags and len(set(tags)) == len(tags):
        errors.append(f"local tags not dense 1..{len(tags)}: got {sorted(tags)}")

    if g.timeout_cc <= 0:
        errors.append(f"timeout must be positive, got {g.timeout_cc}")

    by_tag = {m.local_tag: m for m in g.microflows}
    in_ports = {p.port_index for p in g.boundary_inputs}
    out_ports = {p.port_index for p in g.boundary_outputs}

    for m in g.microflows:
        lo, hi = m.runtime
        if hi is not None and lo > hi:
            errors.append(f"mf {m.local_tag}: runtime min {lo} > max {hi}")
        if lo < 0:
            errors.append(f"mf {m.local_tag}: negative runtime")
        if m.compute_units < 0 or m.memory_units < 0:
            errors.append(f"mf {m.local_tag}: negative resource demand")
        for idx, (src, nbytes) in enumerate(m.inputs):
            if src.owner_local_tag == 0:
                if src.direction != INPUT or src.port_index not in in_ports:
                    errors.append(
                        f"mf {m.local_tag} input {idx}: no such fragment input port "
                        f"{src.port_index}")
            else:
                prod = by_tag.get(src.owner_local_tag)
                if prod is None:
                    errors.append(
                        f"mf {m.local_tag} input {idx}: unknown producer tag "
                        f"{src.owner_local_tag}")
                    continue
                if src.port_index >= len(prod.outputs):
                    errors.append(
                        f"mf {m.local_tag} input {idx}: producer {prod.local_tag} "
                        f"has no output port {src.port_index}")
                    continue
                sink, pbytes = prod.outputs[src.port_index]
                if sink != PortRef(m.local_tag, idx, INPUT):
                    errors.append(
                        f"edge mismatch: {prod.local_tag}.out{src.port_index} declares "
                        f"sink {sink} but {m.local_tag}.in{idx} claims it")
                elif pbytes != nbytes:
                    errors.append(
                        f"edge {prod.local_tag}.out{src.port_index}->"
                        f"{m.local_tag}.in{idx}: byte mismatch {pbytes} vs {nbytes}")
        for idx, (sink, nbytes) in enumerate(m.outputs):
            if sink.owner_local_tag == 0:
                if sink.direction != OUTPUT or sink.port_index not in out_ports:
                    errors.append(
                        f"mf {m.local_tag} output {idx}: no such fragment output port "
                        f"{sink.port_index}")
            else:
                cons = by_tag.get(sink.owner_local_tag)
                if cons is None:
                    errors.append(
                        f"mf {m.local_tag} output {idx}: unknown consumer tag "
                        f"{sink.owner_local_tag}")
                elif sink.port_index >= len(cons.inputs):
                    errors.append(
                        f"mf {m.local_tag} output {idx}: consumer {cons.local_tag} "
                        f"has no input port {sink.port_index}")

    # every boundary output must be produced exactly once
    for p in g.boundary_outputs:
        producers = [
            m.local_tag
            for m in g.microflows
            for sink, _ in m.outputs
            if sink.owner_local_tag == 0 and sink.port_index == p.port_index
        ]
        if len(producers) == 0:
            errors.append(f"fragment output port {p.port_index} has no producer")
        elif len(producers) > 1:
            errors.append(
                f"fragment output port {p.port_index} has multiple producers "
                f"{producers}")

    if not errors:
        cyc = find_cycle(g)
        if cyc:
            errors.append("cycle through tags {%s}" % ",".join(map(str, sorted(cyc))))
    return errors


def container_fit(g: DffGraph, c: Container):
    """True iff the fragment fits the container's byte and resource envelopes."""
    if g.total_input_bytes() > c.max_input_bytes:
        return False
    if g.total_output_bytes() > c.max_output_bytes:
        return False
    need = stage_maxima(g)
    for fv in c.feature_vectors:
        have = fv.stage_map()
        ok = True
        for stage, (cu, mu, nbytes) in need.items():
            if stage not in have:
                ok = False
                break
            hc, hm, hb = have[stage]
            if cu > hc or mu > hm or nbytes > hb:
                ok = False
                break
        if ok:
            return True
    return not c.feature_vectors and not need


def stage_maxima(g: DffGraph):
    """Per-stage maxima of (compute, memory, output token bytes) over microflows."""
    need = {}
    for m in g.microflows:
        nbytes = max((b for _, b in m.outputs), default=0)
        cu, mu, nb = need.get(m.stage_id, (0, 0, 0))
        need[m.stage_id] = (max(cu, m.compute_units), max(mu, m.memory_units),
                            max(nb, nbytes))
    return need


def derive_container(g: DffGraph):
    """Smallest container the graph fits in (one feature vector, exact maxima)."""
    fv = FeatureVector(tuple(
        (s, cu, mu, nb) for s, (cu, mu, nb) in sorted(stage_maxima(g).items())
    ))
    return Container(
        container_id=g.container_id,
        max_input_bytes=g.total_input_bytes(),
        max_output_bytes=g.total_output_bytes(),
        feature_vectors=(fv,),
    )


def topo_order(g: DffGraph):
    """Deterministic topological order of local tags.

    Kahn's algorithm; among ready nodes the one with the smallest
    (original tag, kernel name) wins, which makes the order total.
    Raises ValueError on a cycle.
    """
    succ = _adjacency(g)
    indeg = {t: 0 for t in succ}
    for t, ns in succ.items():
        for n in ns:
            indeg[n] += 1
    key = {m.local_tag: (m.local_tag, m.kernel_name) for m in g.microflows}
    ready = sorted((t for t, d in indeg.items() if d == 0), key=key.__getitem__)
    order = []
    while ready:
        t = ready.pop(0)
        order.append(t)
        for n in sorted(succ[t]):
            indeg[n] -= 1
            if indeg[n] == 0:
                ready.append(n)
        ready.sort(key=key.__getitem__)
    if len(order) != len(succ):
        cyc = find_cycle(g)
        raise ValueError(
            "cycle through tags {%s}" % ",".join(map(str, sorted(cyc or ()))))
    return order


def topo_local_tags(g: DffGraph):
    """Copy of ``g`` with local tags renumbered 1..N in topological order.

    Microflow 0 (the boundary) is untouched; all port references are
    rewritten consistently.
    """
    order = topo_order(g)
    mapping = {0: 0}
    for newtag, old in enumerate(order, start=1):
        mapping[old] = newtag

    def remap_ref(r: PortRef):
        return replace(r, owner_local_tag=mapping[r.owner_local_tag])

    new_mfs = []
    for m in g.microflows:
        new_mfs.append(replace(
            m,
            local_tag=mapping[m.local_tag],
            inputs=tuple((remap_ref(s), b) for s, b in m.inputs),
            outputs=tuple((remap_ref(s), b) for s, b in m.outputs),
        ))
    new_mfs.sort(key=lambda m: m.local_tag)
    return replace(g, microflows=tuple(new_mfs))
