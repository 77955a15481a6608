"""Scenario configuration: machine parameters plus control-packet sources.

INI schema (paths are relative to the scenario file)::

    [machine]
    stages = 1
    compute = 4            ; per-stage pool sizes, comma-separated
    memory = 13
    director_cost = 100
    scheduler_cost = 123
    director_queue = 16
    ready_queue = 32
    policy = fcfs          ; or edf
    max_parallel = 8
    schedule_ahead = true
    dma_latency = 0

    [source.a]
    dff = dffs/chain2.dff  ; .dff or .pi.xml
    period = 5000
    phase = 0
    jitter = 0
    count = 3
    ; container = 99       ; override to exercise rejected requests
"""

from __future__ import annotations

import configparser
import os

from .core import CompiledDff, MachineConfig, Scenario, SourceSpec, compile_dff
from .dfftext import load_dff, parse_dff_text
from .graph import DffGraph
from .pixml import parse_pi_xml


class ScenarioError(ValueError):
    pass


def load_graph_file(path) -> DffGraph:
    """Dispatch on extension: .dff native text, .pi.xml / .xml subset."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if path.endswith(".dff"):
        doc = parse_dff_text(text)
    elif path.endswith(".xml") or path.endswith(".pi"):
        doc = parse_pi_xml(text)
    else:
        raise ScenarioError(f"{path}: unknown graph format (want .dff or .pi.xml)")
    if not doc.ok:
        msgs = "; ".join(str(d) for d in doc.diagnostics)
        raise ScenarioError(f"{path}: {msgs}")
    return doc.graph


def _ints(text):
    return tuple(int(x) for x in text.split(","))


def build_scenario(machine: MachineConfig, graphs, sources) -> Scenario:
    """Assemble and sanity-check a scenario from in-memory pieces."""
    dffs = tuple(compile_dff(g) if isinstance(g, DffGraph) else g for g in graphs)
    if machine.stages != len(machine.pool_compute) or \
            machine.stages != len(machine.pool_memory):
        raise ScenarioError("pool sizes must list one value per stage")
    for d in dffs:
        for s, _, _ in d.envelope:
            if s >= machine.stages:
                raise ScenarioError(
                    f"dff {d.name} maps microflows to stage {s}, machine has "
                    f"{machine.stages}")
    for src in sources:
        if not 0 <= src.dff_index < len(dffs):
            raise ScenarioError(f"source references unknown dff {src.dff_index}")
        if src.jitter < 0 or src.period <= 0 or src.count < 0:
            raise ScenarioError("source needs period > 0, jitter >= 0, count >= 0")
        if src.count > 1 and src.jitter >= src.period:
            raise ScenarioError("jitter must stay below the period")
    return Scenario(machine=machine, dffs=dffs, sources=tuple(sources))


def load_scenario(path) -> Scenario:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = cp.read(path)
    if not read:
        raise ScenarioError(f"cannot read scenario file {path}")
    if "machine" not in cp:
        raise ScenarioError(f"{path}: missing [machine] section")
    m = cp["machine"]
    try:
        machine = MachineConfig(
            stages=m.getint("stages", 1),
            pool_compute=_ints(m.get("compute", "4")),
            pool_memory=_ints(m.get("memory", "13")),
            director_cost=m.getint("director_cost", 100),
            scheduler_cost=m.getint("scheduler_cost", 123),
            director_queue_cap=m.getint("director_queue", 16),
            ready_queue_cap=m.getint("ready_queue", 32),
            policy=m.get("policy", "fcfs").lower(),
            max_parallel=m.getint("max_parallel", 8),
            schedule_ahead=m.getboolean("schedule_ahead", True),
            dma_latency=m.getint("dma_latency", 0),
        )
    except ValueError as exc:
        raise ScenarioError(f"{path}: bad machine value: {exc}") from exc
    if machine.policy not in ("fcfs", "edf"):
        raise ScenarioError(f"{path}: policy must be fcfs or edf")

    base = os.path.dirname(os.path.abspath(path))
    graphs = []
    graph_index = {}
    sources = []
    for section in cp.sections():
        if not section.startswith("source."):
            continue
        s = cp[section]
        dff_path = s.get("dff")
        if not dff_path:
            raise ScenarioError(f"{path}: [{section}] needs dff=")
        full = os.path.join(base, dff_path)
        if full not in graph_index:
            if not os.path.exists(full):
                raise ScenarioError(f"{path}: [{section}]: no such file {full}")
            graph_index[full] = len(graphs)
            graphs.append(load_graph_file(full))
        try:
            sources.append(SourceSpec(
                dff_index=graph_index[full],
                period=s.getint("period", 5000),
                phase=s.getint("phase", 0),
                jitter=s.getint("jitter", 0),
                count=s.getint("count", 3),
                container_id=s.getint("container") if s.get("container") else None,
            ))
        except ValueError as exc:
            raise ScenarioError(f"{path}: bad source value: {exc}") from exc
    if not sources:
        raise ScenarioError(f"{path}: no [source.*] sections")
    return build_scenario(machine, graphs, sources)
