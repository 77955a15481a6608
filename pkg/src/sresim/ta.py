"""Behavioral automata for fragments, plus a timed-automata XML interchange.

Each fragment becomes one untimed automaton with two locations. A shared
``receive_dff`` handshake admits an instance, one ``fire_<kernel>`` edge
and one ``end_<kernel>`` edge per kernel drive execution with token
counters encoding the DAG order, and a ``terminate_dff`` handshake returns
the instance: 2*K + 2 edges for K kernels.

The XML layout mirrors the common timed-automata interchange format
(templates, locations, init, transitions with guard/sync/assignment
labels) so external checkers can load the output; the schema version is
pinned in the document header comment.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from .graph import DffGraph, topo_order

SCHEMA_HEADER = "sresim ta-xml v1"


@dataclass(frozen=True)
class TaLocation:
    loc_id: str
    committed: bool = False
    urgent: bool = False


@dataclass(frozen=True)
class TaEdge:
    source: str
    target: str
    guard: str = ""
    sync: str = ""
    update: str = ""


@dataclass(frozen=True)
class TaAutomaton:
    name: str
    declaration: str = ""
    locations: tuple = ()
    initial: str = ""
    edges: tuple = ()


@dataclass(frozen=True)
class TaModelDoc:
    declaration: str = ""
    automata: tuple = ()
    system: str = ""


def _sanitize(name):
    out = re.sub(r"\W", "_", name)
    return out if out and not out[0].isdigit() else "k_" + out


def kernel_labels(g: DffGraph):
    """Short per-kernel labels: the name prefix up to the first underscore,
    falling back to the full name when prefixes collide."""
    prefix = {m.local_tag: _sanitize(m.kernel_name.split("_")[0]) for m in g.microflows}
    counts = {}
    for p in prefix.values():
        counts[p] = counts.get(p, 0) + 1
    labels = {}
    for m in g.microflows:
        p = prefix[m.local_tag]
        labels[m.local_tag] = p if counts[p] == 1 else _sanitize(m.kernel_name)
    # final guard against pathological duplicates
    seen = {}
    for tag in sorted(labels):
        lab = labels[tag]
        if lab in seen:
            labels[tag] = f"{lab}_{tag}"
        seen[labels[tag]] = tag
    return labels


def export_ta(g: DffGraph) -> TaModelDoc:
    """Generate the behavioral automaton for one validated fragment."""
    labels = kernel_labels(g)
    order = topo_order(g)
    by_tag = {m.local_tag: m for m in g.microflows}

    chans = ["receive_dff", "terminate_dff"]
    for tag in order:
        chans.append(f"fire_{labels[tag]}")
        chans.append(f"end_{labels[tag]}")
    decl_lines = []
    for tag in order:
        decl_lines.append(f"int fired_{labels[tag]} = 0;")
        decl_lines.append(f"int done_{labels[tag]} = 0;")

    edges = [TaEdge("idle", "active", sync="receive_dff?")]
    for tag in order:
        m = by_tag[tag]
        lab = labels[tag]
        preds = sorted({src.owner_local_tag for src, _ in m.inputs
                        if src.owner_local_tag != 0})
        conds = [f"done_{labels[p]} == 1" for p in preds]
        conds.append(f"fired_{lab} == 0")
        edges.append(TaEdge(
            "active", "active",
            guard=" && ".join(conds),
            sync=f"fire_{lab}!",
            update=f"fired_{lab} = 1",
        ))
        edges.append(TaEdge(
            "active", "active",
            guard=f"done_{lab} == 0",
            sync=f"end_{lab}?",
            update=f"done_{lab} = 1",
        ))
    all_done = " && ".join(f"done_{labels[t]} == 1" for t in order)
    resets = ", ".join(
        part for t in order
        for part in (f"fired_{labels[t]} = 0", f"done_{labels[t]} = 0")
    )
    edges.append(TaEdge("active", "idle", guard=all_done,
                        sync="terminate_dff!", update=resets))

    auto = TaAutomaton(
        name=_sanitize(g.name),
        declaration="\n".join(decl_lines),
        locations=(TaLocation("idle"), TaLocation("active")),
        initial="idle",
        edges=tuple(edges),
    )
    return TaModelDoc(
        declaration="chan " + ", ".join(chans) + ";",
        automata=(auto,),
        system=f"system {auto.name};",
    )


def _esc(text):
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace('"', "&quot;"))


def render_ta_xml(doc: TaModelDoc) -> str:
    """Deterministic serialization; re-parsing yields an equal document."""
    out = ['<?xml version="1.0" encoding="utf-8"?>', f"<!-- {SCHEMA_HEADER} -->", "<nta>"]
    out.append(f"  <declaration>{_esc(doc.declaration)}</declaration>")
    for auto in doc.automata:
        out.append("  <template>")
        out.append(f"    <name>{_esc(auto.name)}</name>")
        if auto.declaration:
            out.append(f"    <declaration>{_esc(auto.declaration)}</declaration>")
        for loc in auto.locations:
            marks = ""
            if loc.committed:
                marks += "<committed/>"
            if loc.urgent:
                marks += "<urgent/>"
            if marks:
                out.append(f'    <location id="{_esc(loc.loc_id)}">{marks}</location>')
            else:
                out.append(f'    <location id="{_esc(loc.loc_id)}"/>')
        out.append(f'    <init ref="{_esc(auto.initial)}"/>')
        for e in auto.edges:
            out.append("    <transition>")
            out.append(f'      <source ref="{_esc(e.source)}"/>')
            out.append(f'      <target ref="{_esc(e.target)}"/>')
            if e.guard:
                out.append(f'      <label kind="guard">{_esc(e.guard)}</label>')
            if e.sync:
                out.append(f'      <label kind="synchronisation">{_esc(e.sync)}</label>')
            if e.update:
                out.append(f'      <label kind="assignment">{_esc(e.update)}</label>')
            out.append("    </transition>")
        out.append("  </template>")
    out.append(f"  <system>{_esc(doc.system)}</system>")
    out.append("</nta>")
    return "\n".join(out) + "\n"


def parse_ta_xml(text: str) -> TaModelDoc:
    """Inverse of render_ta_xml (for our own canonical output)."""
    root = ET.fromstring(text)
    if root.tag != "nta":
        raise ValueError("not a ta-xml document")
    decl = root.findtext("declaration", default="")
    automata = []
    for tmpl in root.findall("template"):
        locations = []
        for loc in tmpl.findall("location"):
            locations.append(TaLocation(
                loc_id=loc.get("id", ""),
                committed=loc.find("committed") is not None,
                urgent=loc.find("urgent") is not None,
            ))
        init = tmpl.find("init")
        edges = []
        for tr in tmpl.findall("transition"):
            labels = {lab.get("kind"): (lab.text or "")
                      for lab in tr.findall("label")}
            edges.append(TaEdge(
                source=tr.find("source").get("ref"),
                target=tr.find("target").get("ref"),
                guard=labels.get("guard", ""),
                sync=labels.get("synchronisation", ""),
                update=labels.get("assignment", ""),
            ))
        automata.append(TaAutomaton(
            name=tmpl.findtext("name", default=""),
            declaration=tmpl.findtext("declaration", default=""),
            locations=tuple(locations),
            initial=init.get("ref") if init is not None else "",
            edges=tuple(edges),
        ))
    return TaModelDoc(
        declaration=decl,
        automata=tuple(automata),
        system=root.findtext("system", default=""),
    )
