"""sresim: dataflow-fragment simulator and exhaustive checker for one SRE."""

from .graph import (
    Container,
    DffGraph,
    FeatureVector,
    InstanceId,
    MicroflowSpec,
    PortRef,
    container_fit,
    derive_container,
    topo_local_tags,
    validate_graph,
)

__all__ = [
    "Container",
    "DffGraph",
    "FeatureVector",
    "InstanceId",
    "MicroflowSpec",
    "PortRef",
    "container_fit",
    "derive_container",
    "topo_local_tags",
    "validate_graph",
]

__version__ = "0.1.0"
