"""A graphml fragment parser compatible with PiMM-style exports (.pi.xml).

Accepted subset: ``actor`` nodes, ``src``/``snk`` interface nodes and
``fifo`` edges. Everything else (parameters, dependencies, delays, rates)
is skipped with a warning. Actor properties ride in ``<data>`` children:
``stage``, ``rt`` (``[min,max]``), ``cu``, ``mu``, ``deadline``;
interface nodes carry ``bytes`` and optionally ``port``. Graph-level
``container`` and ``timeout`` data are honoured.

Port numbering is positional: an actor's n-th incoming fifo (document
order) lands on its input port n, and its n-th outgoing fifo on output
port n, mirroring the native text format.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET

from .dfftext import Diagnostic, GraphDocument
from .graph import INPUT, OUTPUT, BoundaryPort, DffGraph, MicroflowSpec, PortRef, validate_graph

_LINE_KEY = "__line__"
_RT = re.compile(r"^\[(\d+),(\d*)\]$")


class _LineParser(ET.XMLParser):
    """Annotates elements with their source line (CPython expat detail)."""

    def _start(self, *args, **kwargs):
        elem = super()._start(*args, **kwargs)
        try:
            elem.set(_LINE_KEY, str(self.parser.CurrentLineNumber))
        except AttributeError:
            elem.set(_LINE_KEY, "1")
        return elem


def _local(tag):
    return tag.split("}")[-1]


def _line(elem):
    return int(elem.get(_LINE_KEY, "1"))


def _data(elem):
    out = {}
    for child in elem:
        if _local(child.tag) == "data" and child.get("key"):
            out[child.get("key")] = (child.text or "").strip()
    return out


def parse_pi_xml(source: str) -> GraphDocument:
    """Parse the XML subset. Total: returns diagnostics instead of raising."""
    doc = GraphDocument(format="pi-xml", source=source)
    diags = doc.diagnostics
    try:
        root = ET.fromstring(source, parser=_LineParser())
    except ET.ParseError as exc:
        line, col = exc.position
        diags.append(Diagnostic(line, col + 1, f"xml syntax error: {exc.msg.split(':')[0]}"))
        return doc

    graph = None
    for elem in root.iter():
        if _local(elem.tag) == "graph":
            graph = elem
            break
    if graph is None:
        diags.append(Diagnostic(_line(root), 1, "no <graph> element"))
        return doc

    gdata = _data(graph)
    name = gdata.get("name") or graph.get("id") or "unnamed"
    try:
        container = int(gdata.get("container", "0"))
        timeout = int(gdata.get("timeout", "100000"))
    except ValueError:
        diags.append(Diagnostic(_line(graph), 1, "container/timeout must be integers"))
        return doc

    actors = []     # (id, line, data)
    sources = {}    # id -> (port_index, bytes)
    sinks = {}
    fifos = []      # (line, source id, target id, bytes)

    for elem in graph:
        kind = _local(elem.tag)
        if kind == "data":
            continue
        if kind == "node":
            nid = elem.get("id")
            nkind = elem.get("kind", "actor")
            if nid is None:
                diags.append(Diagnostic(_line(elem), 1, "node without id"))
                continue
            ndata = _data(elem)
            if nkind == "actor":
                actors.append((nid, _line(elem), ndata))
            elif nkind in ("src", "snk"):
                table = sources if nkind == "src" else sinks
                try:
                    port = int(ndata.get("port", str(len(table))))
                    nbytes = int(ndata.get("bytes", "0"))
                except ValueError:
                    diags.append(Diagnostic(_line(elem), 1,
                                            f"node {nid}: bad port/bytes"))
                    continue
                table[nid] = (port, nbytes)
            else:
                doc.warnings.append(f"line {_line(elem)}: ignoring node kind '{nkind}'")
        elif kind == "edge":
            ekind = elem.get("kind", "fifo")
            if ekind != "fifo":
                doc.warnings.append(f"line {_line(elem)}: ignoring edge kind '{ekind}'")
                continue
            edata = _data(elem)
            try:
                nbytes = int(edata.get("bytes", edata.get("expr", "0")))
            except ValueError:
                diags.append(Diagnostic(_line(elem), 1, "bad fifo byte size"))
                continue
            fifos.append((_line(elem), elem.get("source"), elem.get("target"), nbytes))
        else:
            doc.warnings.append(f"line {_line(elem)}: ignoring element '{kind}'")

    tag_of = {nid: i for i, (nid, _, _) in enumerate(actors, start=1)}
    specs = {}
    for nid, line, ndata in actors:
        rt_text = ndata.get("rt", "[0,0]")
        m = _RT.match(rt_text)
        if not m:
            diags.append(Diagnostic(line, 1, f"actor {nid}: bad runtime '{rt_text}'"))
            continue
        try:
            specs[nid] = dict(
                local_tag=tag_of[nid],
                kernel_name=nid,
                stage_id=int(ndata.get("stage", "0")),
                runtime=(int(m.group(1)), int(m.group(2)) if m.group(2) else None),
                compute_units=int(ndata.get("cu", "0")),
                memory_units=int(ndata.get("mu", "0")),
                deadline_meta=int(ndata["deadline"]) if "deadline" in ndata else None,
                inputs=[],
                outputs=[],
            )
        except ValueError:
            diags.append(Diagnostic(line, 1, f"actor {nid}: non-integer property"))

    if diags:
        return doc

    for line, src, dst, nbytes in fifos:
        src_known = src in specs or src in sources
        dst_known = dst in specs or dst in sinks
        if not src_known:
            diags.append(Diagnostic(line, 1, f"unknown actor '{src}'"))
            continue
        if not dst_known:
            diags.append(Diagnostic(line, 1, f"unknown actor '{dst}'"))
            continue
        if src in sources and dst in specs:
            port, declared = sources[src]
            spec = specs[dst]
            spec["inputs"].append((PortRef(0, port, INPUT), nbytes or declared))
        elif src in specs and dst in sinks:
            port, declared = sinks[dst]
            spec = specs[src]
            spec["outputs"].append((PortRef(0, port, OUTPUT), nbytes or declared))
        elif src in specs and dst in specs:
            p, c = specs[src], specs[dst]
            p_out = len(p["outputs"])
            c_in = len(c["inputs"])
            p["outputs"].append((PortRef(c["local_tag"], c_in, INPUT), nbytes))
            c["inputs"].append((PortRef(p["local_tag"], p_out, OUTPUT), nbytes))
        else:
            diags.append(Diagnostic(line, 1, f"fifo {src}->{dst} links two interfaces"))

    if diags:
        return doc

    boundary_in = tuple(BoundaryPort(p, b) for p, b in sorted(sources.values()))
    boundary_out = tuple(BoundaryPort(p, b) for p, b in sorted(sinks.values()))
    g = DffGraph(
        name=name,
        container_id=container,
        boundary_inputs=boundary_in,
        boundary_outputs=boundary_out,
        microflows=tuple(
            MicroflowSpec(
                local_tag=s["local_tag"],
                kernel_name=s["kernel_name"],
                stage_id=s["stage_id"],
                runtime=s["runtime"],
                compute_units=s["compute_units"],
                memory_units=s["memory_units"],
                deadline_meta=s["deadline_meta"],
                inputs=tuple(s["inputs"]),
                outputs=tuple(s["outputs"]),
            )
            for _, s in sorted(specs.items(), key=lambda kv: kv[1]["local_tag"])
        ),
        timeout_cc=timeout,
    )
    for err in validate_graph(g):
        diags.append(Diagnostic(1, 1, err))
    if not diags:
        doc.graph = g
    return doc
