"""Native textual fragment format (.dff): parser, renderer, diagnostics.

Grammar (one declaration per line, ``#`` starts a comment)::

    dff <name> container=<id> timeout=<cc>
    in <port> bytes=<n>
    out <port> bytes=<n>
    mf <tag> <kernel> stage=<n> rt=[min,max] cu=<n> mu=<n>
         in=<src>.<port>:<bytes>,...  out=<dst>.<port>:<bytes>,...
         [deadline=<cc>]

Port indices are positional: microflow X's k-th ``in=`` entry is its input
port k, and its k-th ``out=`` entry is its output port k. An entry
``S.P:B`` on the in-side names output port P of microflow S (S=0 means
fragment input port P); on the out-side it names input port P of microflow
D (0.P means fragment output port P). Each internal arc therefore appears
on both of its endpoints and the pair must agree.

``rt=[min,]`` leaves the kernel runtime unbounded above (only meaningful
for fault-injection models).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .graph import INPUT, OUTPUT, BoundaryPort, DffGraph, MicroflowSpec, PortRef, validate_graph


@dataclass
class Diagnostic:
    line: int
    column: int
    message: str

    def __str__(self):
        return f"{self.line}:{self.column}: {self.message}"


@dataclass
class GraphDocument:
    """A parse attempt: either a validated graph or diagnostics."""

    format: str  # "native-text" or "pi-xml"
    source: str
    graph: DffGraph | None = None
    diagnostics: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self):
        return self.graph is not None and not self.diagnostics


_KV = re.compile(r"^([a-z_]+)=(.*)$")
_RT = re.compile(r"^\[(\d+),(\d*)\]$")
_PORT = re.compile(r"^(\d+)\.(\d+):(\d+)$")


def _parse_ports(text, line, col, diags):
    if text in ("", "-"):
        return ()
    entries = []
    for chunk in text.split(","):
        m = _PORT.match(chunk)
        if not m:
            diags.append(Diagnostic(line, col, f"bad port entry '{chunk}'"))
            return None
        entries.append((int(m.group(1)), int(m.group(2)), int(m.group(3))))
    return tuple(entries)


def parse_dff_text(source: str) -> GraphDocument:
    """Parse the native format. Total: always returns a document."""
    doc = GraphDocument(format="native-text", source=source)
    diags = doc.diagnostics

    header = None
    boundary_in = []
    boundary_out = []
    raw_mfs = []  # (line, tag, kernel, kv dict, in entries, out entries)

    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        words = line.split()
        head = words[0]
        if head == "dff":
            if header is not None:
                diags.append(Diagnostic(lineno, 1, "duplicate dff header"))
                continue
            if len(words) < 2:
                diags.append(Diagnostic(lineno, 1, "dff header needs a name"))
                continue
            name = words[1]
            opts = {"container": "0", "timeout": "100000"}
            bad = False
            for w in words[2:]:
                m = _KV.match(w)
                if not m or m.group(1) not in opts:
                    diags.append(Diagnostic(lineno, raw.find(w) + 1,
                                            f"unknown header option '{w}'"))
                    bad = True
                    continue
                opts[m.group(1)] = m.group(2)
            if not bad:
                try:
                    header = (name, int(opts["container"]), int(opts["timeout"]))
                except ValueError:
                    diags.append(Diagnostic(lineno, 1, "header options must be integers"))
        elif head in ("in", "out"):
            if len(words) != 3 or not words[1].isdigit() or \
                    not words[2].startswith("bytes="):
                diags.append(Diagnostic(lineno, 1, f"expected '{head} <port> bytes=<n>'"))
                continue
            try:
                port = int(words[1])
                nbytes = int(words[2].split("=", 1)[1])
            except ValueError:
                diags.append(Diagnostic(lineno, 1, "ports and sizes must be integers"))
                continue
            (boundary_in if head == "in" else boundary_out).append(
                BoundaryPort(port, nbytes))
        elif head == "mf":
            if len(words) < 3 or not words[1].isdigit():
                diags.append(Diagnostic(lineno, 1, "expected 'mf <tag> <kernel> ...'"))
                continue
            tag = int(words[1])
            kernel = words[2]
            kv = {}
            ok = True
            for w in words[3:]:
                m = _KV.match(w)
                if not m:
                    diags.append(Diagnostic(lineno, raw.find(w) + 1,
                                            f"expected key=value, got '{w}'"))
                    ok = False
                    continue
                kv[m.group(1)] = (m.group(2), lineno, raw.find(w) + 1)
            if ok:
                raw_mfs.append((lineno, tag, kernel, kv))
        else:
            diags.append(Diagnostic(lineno, 1, f"unknown declaration '{head}'"))

    if header is None and not diags:
        diags.append(Diagnostic(1, 1, "missing dff header"))
    if diags:
        return doc

    microflows = []
    for lineno, tag, kernel, kv in raw_mfs:
        def take(key, default=None):
            if key in kv:
                return kv.pop(key)
            return (default, lineno, 1) if default is not None else None

        rt = take("rt", "[0,0]")
        stage = take("stage", "0")
        cu = take("cu", "0")
        mu = take("mu", "0")
        ins = take("in", "-")
        outs = take("out", "-")
        deadline = kv.pop("deadline", None)
        for stray in kv:
            diags.append(Diagnostic(lineno, 1, f"mf {tag}: unknown option '{stray}'"))

        m = _RT.match(rt[0])
        if not m:
            diags.append(Diagnostic(rt[1], rt[2], f"bad runtime range '{rt[0]}'"))
            continue
        lo = int(m.group(1))
        hi = int(m.group(2)) if m.group(2) else None

        in_entries = _parse_ports(ins[0], ins[1], ins[2], diags)
        out_entries = _parse_ports(outs[0], outs[1], outs[2], diags)
        if in_entries is None or out_entries is None:
            continue
        try:
            spec = MicroflowSpec(
                local_tag=tag,
                kernel_name=kernel,
                stage_id=int(stage[0]),
                runtime=(lo, hi),
                compute_units=int(cu[0]),
                memory_units=int(mu[0]),
                deadline_meta=int(deadline[0]) if deadline else None,
                inputs=tuple(
                    (PortRef(src, port, INPUT if src == 0 else OUTPUT), b)
                    for src, port, b in in_entries),
                outputs=tuple(
                    (PortRef(dst, port, OUTPUT if dst == 0 else INPUT), b)
                    for dst, port, b in out_entries),
            )
        except ValueError:
            diags.append(Diagnostic(lineno, 1, f"mf {tag}: non-integer field"))
            continue
        microflows.append(spec)

    if diags:
        return doc

    known = {m.local_tag for m in microflows} | {0}
    for m in microflows:
        for src, _ in m.inputs:
            if src.owner_local_tag not in known:
                diags.append(Diagnostic(1, 1,
                                        f"mf {m.local_tag}: unknown actor "
                                        f"{src.owner_local_tag}"))
        for dst, _ in m.outputs:
            if dst.owner_local_tag not in known:
                diags.append(Diagnostic(1, 1,
                                        f"mf {m.local_tag}: unknown actor "
                                        f"{dst.owner_local_tag}"))
    if diags:
        return doc

    name, container, timeout = header
    graph = DffGraph(
        name=name,
        container_id=container,
        boundary_inputs=tuple(sorted(boundary_in, key=lambda p: p.port_index)),
        boundary_outputs=tuple(sorted(boundary_out, key=lambda p: p.port_index)),
        microflows=tuple(sorted(microflows, key=lambda m: m.local_tag)),
        timeout_cc=timeout,
    )
    for err in validate_graph(graph):
        diags.append(Diagnostic(1, 1, err))
    if not diags:
        doc.graph = graph
    return doc


def _fmt_ports(entries):
    if not entries:
        return "-"
    return ",".join(f"{r.owner_local_tag}.{r.port_index}:{b}" for r, b in entries)


def render_dff_text(g: DffGraph) -> str:
    """Canonical rendering; parse(render(g)) == g for validated graphs."""
    lines = [f"dff {g.name} container={g.container_id} timeout={g.timeout_cc}"]
    for p in g.boundary_inputs:
        lines.append(f"in {p.port_index} bytes={p.token_bytes}")
    for p in g.boundary_outputs:
        lines.append(f"out {p.port_index} bytes={p.token_bytes}")
    for m in sorted(g.microflows, key=lambda m: m.local_tag):
        hi = "" if m.max_cc is None else str(m.max_cc)
        parts = [
            f"mf {m.local_tag} {m.kernel_name} stage={m.stage_id}",
            f"rt=[{m.min_cc},{hi}]",
            f"cu={m.compute_units} mu={m.memory_units}",
            f"in={_fmt_ports(m.inputs)} out={_fmt_ports(m.outputs)}",
        ]
        if m.deadline_meta is not None:
            parts.append(f"deadline={m.deadline_meta}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def load_dff(path) -> DffGraph:
    """Parse a .dff file, raising ValueError with diagnostics on failure."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = parse_dff_text(fh.read())
    if not doc.ok:
        msgs = "; ".join(str(d) for d in doc.diagnostics)
        raise ValueError(f"{path}: {msgs}")
    return doc.graph
