"""Discretizing the searched cell: iterative transition-aware edge pruning.

Two strategies produce the final genotype (two retained edges with one
operation each per intermediate node):

* ``tiep``: node by node, re-derive each incoming inner edge's weight from
  the already-retained (one-hot) predecessor edges with attention
  renormalized over the survivors, then drop the weakest incoming edge one
  at a time until two remain, converting the winners to one-hot.  The
  ``alg1-batch`` variant retains the top-2 in one shot instead of pruning
  iteratively.
* ``hard``: the one-shot baseline; keep the top-2 incoming edges per node
  by largest operation weight, with no re-derivation.

Edge importance is the largest entry of the edge's operation distribution.
Tie rules are fixed: retention prefers lower source indices, pruning
removes the higher source index, operation argmax prefers the lower
operation index.  The low-level strategies report operations as indices
into the operation set; :func:`prune_arch` resolves them to names.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .relaxation import concrete_sample, hard_one_hot
from .topology import CELL_KINDS, NORMAL, CellTopology, Edge, OperationSet
from .transition import (
    CellArchParams,
    derive_inner_weights,
    materialize_attention,
    materialize_matrix,
)

__all__ = [
    "STRATEGIES",
    "Genotype",
    "PruneEvent",
    "PruneOutcome",
    "edge_importance",
    "prune_select",
    "tiep",
    "darts_hard_prune",
    "prune_cell",
    "prune_arch",
]

STRATEGIES = ("tiep", "hard", "alg1-batch")

NodePair = tuple[int, str]
NodeChoice = tuple[NodePair, NodePair]


@dataclass(frozen=True)
class Genotype:
    """The discrete architecture: per node, two (source, operation) pairs."""

    normal: tuple[NodeChoice, ...]
    reduction: tuple[NodeChoice, ...]
    op_set: OperationSet
    provenance: tuple[tuple[str, object], ...] = ()

    @staticmethod
    def make(normal, reduction, op_set, provenance: dict | None = None) -> "Genotype":
        prov = tuple(sorted((provenance or {}).items()))
        to_pairs = lambda half: tuple(tuple((int(s), str(o)) for s, o in pairs) for pairs in half)
        return Genotype(to_pairs(normal), to_pairs(reduction), op_set, prov)

    @property
    def provenance_dict(self) -> dict:
        return dict(self.provenance)

    def for_kind(self, kind: str) -> tuple[NodeChoice, ...]:
        return self.normal if kind == NORMAL else self.reduction


def edge_importance(z) -> float:
    """Importance of an edge: its largest operation weight."""
    return float(np.max(np.asarray(z)))


def prune_select(importances: Mapping[Edge, float]) -> Edge:
    """The incoming edge to prune: minimal importance, ties to the higher source."""
    if len(importances) < 3:
        raise ValueError(f"prune_select needs >= 3 incoming edges, got {len(importances)}")
    return min(importances, key=lambda e: (importances[e], -e.src))


@dataclass
class PruneEvent:
    """One prune step: which edge fell, and the renormalized attention of the
    inner edges leaving the affected node (full-length vectors, exact zeros
    at inactive predecessors)."""

    node: int
    pruned: Edge
    attention: dict[Edge, np.ndarray]


IndexChoice = tuple[tuple[int, int], tuple[int, int]]  # ((src, op_index), ...)


@dataclass
class PruneOutcome:
    """Retained (source, operation-index) pairs per node plus the bookkeeping."""

    choices: tuple[IndexChoice, ...]
    retained: dict[int, tuple[Edge, ...]]
    final_z: dict[Edge, np.ndarray]
    events: list[PruneEvent]


def _as_values(z) -> np.ndarray:
    return np.array(getattr(z, "values", z), dtype=np.float64)


def _choices_from(
    retained: dict[int, tuple[Edge, ...]],
    z: dict[Edge, np.ndarray],
    topology: CellTopology,
) -> tuple[IndexChoice, ...]:
    return tuple(
        tuple((e.src, int(np.argmax(z[e]))) for e in retained[j])
        for j in topology.intermediate_nodes
    )


def _initial_weights(
    outer_z: Mapping[Edge, np.ndarray],
    params: CellArchParams,
    topology: CellTopology,
) -> dict[Edge, np.ndarray]:
    """Outer weights plus the fully derived inner weights (all predecessors active)."""
    outer = {e: _as_values(outer_z[e]) for e in topology.outer}
    derived = derive_inner_weights(outer, params, topology)
    z = dict(outer)
    for e, t in derived.items():
        z[e] = t.values.copy()
    return z


def _rederive(
    e: Edge,
    z: dict[Edge, np.ndarray],
    params: CellArchParams,
    topology: CellTopology,
    surviving: set[Edge],
) -> np.ndarray:
    """Inner-edge weight from the surviving predecessors only (attention renormalized)."""
    preds = topology.pred_edges[e]
    mask = np.array([p in surviving for p in preds], dtype=bool)
    beta = materialize_attention(params.attention[e], mask).values
    acc = np.zeros(params.k)
    for idx, p in enumerate(preds):
        if mask[idx]:
            mat = materialize_matrix(params.transition[(p.src, e.src, e.dst)]).values
            acc += beta[idx] * (z[p] @ mat)
    return acc


def _attention_snapshot(
    node: int,
    surviving: set[Edge],
    params: CellArchParams,
    topology: CellTopology,
) -> dict[Edge, np.ndarray]:
    out = {}
    for e in topology.inner:
        if e.src == node:
            preds = topology.pred_edges[e]
            mask = np.array([p in surviving for p in preds], dtype=bool)
            out[e] = materialize_attention(params.attention[e], mask).values.copy()
    return out


def tiep(
    outer_z: Mapping[Edge, np.ndarray],
    params: CellArchParams,
    topology: CellTopology,
    batch_top2: bool = False,
) -> PruneOutcome:
    """Transition-aware iterative pruning of one cell.

    Node 2 keeps its two (only) incoming edges.  For each later node, the
    incoming inner edges are first re-derived from the retained, already
    one-hot predecessors with attention renormalized over the survivors;
    then the weakest incoming edges are pruned one at a time (or, with
    ``batch_top2``, the top two are kept in one shot).  Retained edges are
    converted to one-hot immediately so later derivations consume discrete
    predecessors.
    """
    z = _initial_weights(outer_z, params, topology)
    events: list[PruneEvent] = []
    retained: dict[int, tuple[Edge, ...]] = {}

    first = topology.num_inputs
    retained[first] = tuple(sorted(topology.incoming(first), key=lambda e: e.src))
    for e in retained[first]:
        z[e] = hard_one_hot(z[e])

    for j in topology.intermediate_nodes[1:]:
        incoming = list(topology.incoming(j))
        for e in incoming:
            if e.src >= topology.num_inputs:
                z[e] = _rederive(e, z, params, topology, set(retained[e.src]))
        if batch_top2:
            by_rank = sorted(incoming, key=lambda e: (-edge_importance(z[e]), e.src))
            survivors = by_rank[:2]
            for victim in by_rank[2:]:
                events.append(
                    PruneEvent(j, victim, _attention_snapshot(j, set(survivors), params, topology))
                )
        else:
            survivors = incoming
            while len(survivors) > 2:
                imp = {e: edge_importance(z[e]) for e in survivors}
                victim = prune_select(imp)
                survivors = [e for e in survivors if e != victim]
                events.append(
                    PruneEvent(j, victim, _attention_snapshot(j, set(survivors), params, topology))
                )
        retained[j] = tuple(sorted(survivors, key=lambda e: e.src))
        for e in retained[j]:
            z[e] = hard_one_hot(z[e])

    return PruneOutcome(
        choices=_choices_from(retained, z, topology),
        retained=retained,
        final_z=z,
        events=events,
    )


def darts_hard_prune(
    all_z: Mapping[Edge, np.ndarray], topology: CellTopology
) -> PruneOutcome:
    """One-shot baseline: per node keep the two most important incoming edges."""
    z = {e: _as_values(all_z[e]) for e in topology.edges}
    retained: dict[int, tuple[Edge, ...]] = {}
    for j in topology.intermediate_nodes:
        ranked = sorted(
            topology.incoming(j), key=lambda e: (-edge_importance(z[e]), e.src)
        )
        retained[j] = tuple(sorted(ranked[:2], key=lambda e: e.src))
    return PruneOutcome(
        choices=_choices_from(retained, z, topology),
        retained=retained,
        final_z=z,
        events=[],
    )


def prune_cell(
    params: CellArchParams,
    topology: CellTopology,
    tau: float,
    strategy: str,
) -> PruneOutcome:
    """Prune one cell kind from its parameters, using the deterministic
    (zero-noise) outer weights at temperature ``tau``."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    outer_z = {
        e: concrete_sample(params.outer[e].values, np.zeros(params.k), tau)
        for e in topology.outer
    }
    if strategy == "hard":
        return darts_hard_prune(_initial_weights(outer_z, params, topology), topology)
    return tiep(outer_z, params, topology, batch_top2=(strategy == "alg1-batch"))


def prune_arch(
    arch,
    topology: CellTopology,
    op_set: OperationSet,
    tau: float,
    strategy: str,
    provenance: dict | None = None,
) -> Genotype:
    """Prune both cell kinds of an :class:`~transition_nas.search.ArchParams`."""
    halves = {}
    for kind in CELL_KINDS:
        outcome = prune_cell(arch.for_kind(kind), topology, tau, strategy)
        halves[kind] = tuple(
            tuple((src, op_set.names[op_idx]) for src, op_idx in pairs)
            for pairs in outcome.choices
        )
    return Genotype.make(halves[CELL_KINDS[0]], halves[CELL_KINDS[1]], op_set, provenance)
