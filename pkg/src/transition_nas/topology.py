"""The searched cell DAG: nodes, edges, the outer/inner split, predecessors.

A cell has two input nodes (outputs of the two previous cells), four
intermediate nodes, and one output node that concatenates the
intermediates.  Edges from input nodes are "outer" (their operation
distributions are free variables); edges between intermediate nodes are
"inner" (their distributions are derived from predecessor edges).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple

__all__ = [
    "Edge",
    "CellTopology",
    "OpSpec",
    "OperationSet",
    "NORMAL",
    "REDUCTION",
    "CELL_KINDS",
    "K7_OP_NAMES",
    "build_topology",
    "topological_edge_order",
    "transition_keys",
    "transition_parameter_count",
    "default_op_set",
    "op_set_from_names",
]

NORMAL = "normal"
REDUCTION = "reduction"
CELL_KINDS = (NORMAL, REDUCTION)


class Edge(NamedTuple):
    """Directed edge (src, dst) with src < dst."""

    src: int
    dst: int

    def __str__(self) -> str:
        return f"({self.src},{self.dst})"


@dataclass(frozen=True)
class CellTopology:
    """Immutable cell DAG with the outer/inner partition and predecessor map."""

    num_inputs: int
    num_intermediate: int
    edges: tuple[Edge, ...]
    outer: tuple[Edge, ...]
    inner: tuple[Edge, ...]
    pred_edges: Mapping[Edge, tuple[Edge, ...]]

    @property
    def num_nodes(self) -> int:
        return self.num_inputs + self.num_intermediate

    @property
    def intermediate_nodes(self) -> tuple[int, ...]:
        return tuple(range(self.num_inputs, self.num_nodes))

    def incoming(self, node: int) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.dst == node)


def build_topology(num_inputs: int = 2, num_intermediate: int = 4) -> CellTopology:
    """Canonical cell topology; defaults to the 2-input, 4-intermediate cell.

    Edges are ordered by (dst, src), which is also a valid topological
    order: every predecessor of an inner edge ends at a lower node index.
    """
    if num_inputs < 1 or num_intermediate < 1:
        raise ValueError("topology needs at least one input and one intermediate node")
    first = num_inputs
    last = num_inputs + num_intermediate
    edges = tuple(
        Edge(i, j) for j in range(first, last) for i in range(j)
    )
    outer = tuple(e for e in edges if e.src < num_inputs)
    inner = tuple(e for e in edges if e.src >= num_inputs)
    preds = {
        e: (tuple(p for p in edges if p.dst == e.src) if e.src >= num_inputs else ())
        for e in edges
    }
    return CellTopology(
        num_inputs=num_inputs,
        num_intermediate=num_intermediate,
        edges=edges,
        outer=outer,
        inner=inner,
        pred_edges=preds,
    )


def topological_edge_order(topology: CellTopology) -> tuple[Edge, ...]:
    """All edges ordered so every inner edge follows its predecessor edges."""
    return tuple(sorted(topology.edges, key=lambda e: (e.dst, e.src)))


def transition_keys(topology: CellTopology) -> tuple[tuple[int, int, int], ...]:
    """Canonical (m, i, j) triples: one per (predecessor edge, inner edge) pair."""
    keys = []
    for e in topology.inner:
        for p in topology.pred_edges[e]:
            keys.append((p.src, e.src, e.dst))
    return tuple(keys)


def transition_parameter_count(topology: CellTopology, k: int) -> dict[str, int]:
    """Diagnostic count of transition-side learnables for one cell.

    For the canonical cell this is 16 matrices (one per predecessor /
    inner-edge pair) and 16 attention scores, i.e. ``16*k**2 + 16``
    unconstrained logits.
    """
    matrices = len(transition_keys(topology))
    attention = sum(len(topology.pred_edges[e]) for e in topology.inner)
    return {
        "matrices": matrices,
        "attention_scores": attention,
        "logits": matrices * k * k + attention,
    }


# ---------------------------------------------------------------------------
# candidate operation sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OpSpec:
    """One candidate operation: a name plus the structural attributes."""

    name: str
    kind: str  # sep_conv | dil_conv | avg_pool | max_pool | identity
    kernel: int = 0
    dilation: int = 1


_KNOWN_OPS = {
    "sep_conv_3x3": OpSpec("sep_conv_3x3", "sep_conv", kernel=3, dilation=1),
    "sep_conv_5x5": OpSpec("sep_conv_5x5", "sep_conv", kernel=5, dilation=1),
    "dil_conv_3x3": OpSpec("dil_conv_3x3", "dil_conv", kernel=3, dilation=2),
    "dil_conv_5x5": OpSpec("dil_conv_5x5", "dil_conv", kernel=5, dilation=2),
    "avg_pool_3x3": OpSpec("avg_pool_3x3", "avg_pool", kernel=3),
    "max_pool_3x3": OpSpec("max_pool_3x3", "max_pool", kernel=3),
    "identity": OpSpec("identity", "identity"),
}

K7_OP_NAMES = (
    "sep_conv_3x3",
    "sep_conv_5x5",
    "dil_conv_3x3",
    "dil_conv_5x5",
    "avg_pool_3x3",
    "max_pool_3x3",
    "identity",
)


@dataclass(frozen=True)
class OperationSet:
    """Ordered set of K candidate operations."""

    name: str
    ops: tuple[OpSpec, ...]

    def __post_init__(self):
        if len(self.ops) < 2:
            raise ValueError("operation set needs at least 2 candidates")
        names = [o.name for o in self.ops]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate operation names in {names}")

    @property
    def k(self) -> int:
        return len(self.ops)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(o.name for o in self.ops)

    def spec(self, name: str) -> OpSpec:
        for o in self.ops:
            if o.name == name:
                return o
        raise KeyError(f"unknown operation {name!r}")


def default_op_set() -> OperationSet:
    """The seven-operation search space."""
    return OperationSet("k7", tuple(_KNOWN_OPS[n] for n in K7_OP_NAMES))


def op_set_from_names(names: Iterable[str], set_name: str | None = None) -> OperationSet:
    """Build an operation set from known operation names (order preserved)."""
    names = tuple(names)
    unknown = [n for n in names if n not in _KNOWN_OPS]
    if unknown:
        raise ValueError(f"unknown operation names: {unknown}")
    if names == K7_OP_NAMES and set_name is None:
        return default_op_set()
    label = set_name if set_name is not None else "custom-k" + str(len(names))
    return OperationSet(label, tuple(_KNOWN_OPS[n] for n in names))
