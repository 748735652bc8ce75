"""Inner-edge weight derivation through learnable probability transitions.

Each inner edge (i, j) owes its operation distribution to the edges
feeding node i.  For every predecessor edge (m, i) there is a learnable
K x K logit matrix, materialized row-stochastic by row softmax, and a
learnable attention logit.  The derived weight is the attention-convex
combination of the predecessors' distributions pushed through their
transition matrices:

    Z(i,j) = sum_m beta[m] * (Z(m,i) @ P(m,i,j))

The Markov orientation (``out_t = sum_s in_s * p[s, t]``) keeps every
derived weight on the probability simplex whenever the inputs are.
All steps are differentiable, so transition and attention logits train
jointly with the outer-edge logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, index, masked_softmax, smul, softmax, vecmat
from .topology import CellTopology, Edge, topological_edge_order, transition_keys

__all__ = [
    "CellArchParams",
    "init_cell_arch_params",
    "materialize_matrix",
    "materialize_attention",
    "transit",
    "derive_inner_weights",
]


@dataclass
class CellArchParams:
    """Architecture-side learnables for one cell kind.

    outer:      edge -> length-K logit vector (free operation weights)
    transition: (m, i, j) -> K x K logit matrix
    attention:  inner edge -> logit vector over its predecessor edges
    """

    k: int
    outer: dict[Edge, Tensor]
    transition: dict[tuple[int, int, int], Tensor]
    attention: dict[Edge, Tensor]

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        """Canonically ordered (name, tensor) pairs, for optimizers and IO."""
        out = []
        for e in sorted(self.outer, key=lambda e: (e.dst, e.src)):
            out.append((f"outer/{e.src}-{e.dst}", self.outer[e]))
        for key in sorted(self.transition):
            m, i, j = key
            out.append((f"transition/{m}-{i}-{j}", self.transition[key]))
        for e in sorted(self.attention, key=lambda e: (e.dst, e.src)):
            out.append((f"attention/{e.src}-{e.dst}", self.attention[e]))
        return out


def init_cell_arch_params(
    topology: CellTopology,
    k: int,
    rng: np.random.Generator,
    init_scale: float = 1e-3,
    requires_grad: bool = True,
) -> CellArchParams:
    """Fresh near-zero logits for one cell kind, drawn in canonical order."""
    outer = {
        e: Tensor(init_scale * rng.standard_normal(k), requires_grad=requires_grad)
        for e in topology.outer
    }
    transition = {
        key: Tensor(
            init_scale * rng.standard_normal((k, k)), requires_grad=requires_grad
        )
        for key in transition_keys(topology)
    }
    attention = {
        e: Tensor(
            init_scale * rng.standard_normal(len(topology.pred_edges[e])),
            requires_grad=requires_grad,
        )
        for e in topology.inner
    }
    return CellArchParams(k=k, outer=outer, transition=transition, attention=attention)


def materialize_matrix(logits) -> Tensor:
    """Row-stochastic transition matrix via row-wise softmax of the logits."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    if logits.values.ndim != 2 or logits.shape[0] != logits.shape[1]:
        raise ValueError(f"transition logits must be square, got shape {logits.shape}")
    return softmax(logits)


def materialize_attention(logits, active=None) -> Tensor:
    """Attention over predecessor edges: softmax restricted to active entries.

    Inactive entries come out exactly 0 and the active ones sum to 1,
    which is also how attention is renormalized after a predecessor is
    pruned away.
    """
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    if active is None:
        active = np.ones(logits.shape[0], dtype=bool)
    return masked_softmax(logits, active)


def transit(p: Tensor, z_in) -> Tensor:
    """Push a distribution through a transition matrix: ``out_t = sum_s z_s p[s,t]``."""
    z_in = z_in if isinstance(z_in, Tensor) else Tensor(z_in)
    return vecmat(z_in, p)


def derive_inner_weights(
    outer_z: dict[Edge, Tensor],
    params: CellArchParams,
    topology: CellTopology,
    order: tuple[Edge, ...] | None = None,
) -> dict[Edge, Tensor]:
    """Derive every inner edge's operation distribution in topological order.

    ``outer_z`` must supply all outer edges.  Returns a map over the inner
    edges; the result is differentiable with respect to the outer weights
    and all transition/attention logits.  Any topologically valid ``order``
    produces identical results.
    """
    for e in topology.outer:
        if e not in outer_z:
            raise ValueError(f"missing outer weight for edge {e}")
    if order is None:
        inner_order = [e for e in topological_edge_order(topology) if e in set(topology.inner)]
    else:
        inner_order = [e for e in order if e.src >= topology.num_inputs]
        if set(inner_order) != set(topology.inner):
            raise ValueError("order does not cover exactly the inner edges")

    z: dict[Edge, Tensor] = {
        e: (v if isinstance(v, Tensor) else Tensor(v)) for e, v in outer_z.items()
    }
    derived: dict[Edge, Tensor] = {}
    for e in inner_order:
        preds = topology.pred_edges[e]
        for p in preds:
            if p not in z:
                raise ValueError(
                    f"edge {e} derived before its predecessor {p}: order is not topological"
                )
        beta = materialize_attention(params.attention[e])
        acc = None
        for m_idx, p_edge in enumerate(preds):
            mat = materialize_matrix(params.transition[(p_edge.src, e.src, e.dst)])
            term = smul(index(beta, m_idx), transit(mat, z[p_edge]))
            acc = term if acc is None else add(acc, term)
        z[e] = acc
        derived[e] = acc
    return derived
