"""Weight-sharing supernet: mixed-operation edges over stacked DAG cells.

Every edge of every cell evaluates all K candidate operations and blends
them with the edge's operation distribution.  Reduction cells apply
stride 2 on edges leaving the two input nodes, halving the spatial size;
the per-node channel count doubles at each reduction cell.  Cell inputs
are the two previous cells' outputs (the stem feeds both inputs of the
first cell), aligned in channels/stride by pointwise projections.

Candidate operations (no normalization layers, desk scale):
  sep_conv_kxk   relu -> depthwise kxk -> pointwise 1x1 + bias
  dil_conv_kxk   same with dilation 2
  avg/max_pool   3x3, padding 1
  identity       pass-through; strided pointwise conv on reduction
                 edges that must halve the spatial size
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Tensor,
    add,
    affine,
    avg_pool3x3,
    concat_channels,
    dwconv2d,
    global_avg_pool,
    log_softmax,
    max_pool3x3,
    nll,
    pwconv2d,
    relu,
    weighted_sum,
)
from .topology import (
    NORMAL,
    REDUCTION,
    CellTopology,
    Edge,
    OperationSet,
    OpSpec,
    build_topology,
    default_op_set,
)

__all__ = [
    "SuperNetConfig",
    "CellPlan",
    "toy_config",
    "plan_cells",
    "mixed_edge_forward",
    "nll_loss",
    "SuperNet",
    "GenotypeNet",
]


@dataclass(frozen=True)
class SuperNetConfig:
    """Structural parameters of the stacked-cell network."""

    num_cells: int = 8
    reduction_positions: frozenset[int] = frozenset({3, 6})
    init_channels: int = 16
    num_classes: int = 10
    input_spatial: tuple[int, int] = (32, 32)
    input_channels: int = 3
    op_set: OperationSet = field(default_factory=default_op_set)
    toy: bool = False

    def __post_init__(self):
        if self.num_cells < 1:
            raise ValueError("need at least one cell")
        if self.init_channels < 1:
            raise ValueError("init_channels must be >= 1")
        bad = [p for p in self.reduction_positions if not 1 <= p <= self.num_cells]
        if bad:
            raise ValueError(f"reduction positions {bad} outside [1, {self.num_cells}]")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")

    def cell_kind(self, position: int) -> str:
        return REDUCTION if position in self.reduction_positions else NORMAL


def toy_config(op_set: OperationSet | None = None) -> SuperNetConfig:
    """Desk-scale preset: 2 cells (second one reduction), 8 channels, 16x16."""
    return SuperNetConfig(
        num_cells=2,
        reduction_positions=frozenset({2}),
        init_channels=8,
        num_classes=4,
        input_spatial=(16, 16),
        input_channels=3,
        op_set=op_set if op_set is not None else default_op_set(),
        toy=True,
    )


@dataclass(frozen=True)
class CellPlan:
    """Resolved shapes for one cell in the stack (positions are 1-based)."""

    position: int
    kind: str
    channels: int
    in0_channels: int
    in0_stride: int
    in1_channels: int
    in_spatial: tuple[int, int]
    out_spatial: tuple[int, int]

    @property
    def out_channels(self) -> int:
        return 4 * self.channels


def plan_cells(config: SuperNetConfig) -> list[CellPlan]:
    """Channel/spatial bookkeeping for the whole stack."""
    stem_ch = config.init_channels
    ch_pp = ch_p = stem_ch
    sp_pp = sp_p = tuple(config.input_spatial)
    c_curr = config.init_channels
    plans = []
    for pos in range(1, config.num_cells + 1):
        kind = config.cell_kind(pos)
        if kind == REDUCTION:
            c_curr *= 2
            if sp_p[0] % 2 or sp_p[1] % 2:
                raise ValueError(
                    f"reduction cell {pos} needs even input dims, got {sp_p}"
                )
            out_sp = (sp_p[0] // 2, sp_p[1] // 2)
        else:
            out_sp = sp_p
        stride0 = sp_pp[0] // sp_p[0]
        if (sp_pp[0], sp_pp[1]) != (sp_p[0] * stride0, sp_p[1] * stride0):
            raise ValueError(f"cell {pos}: inconsistent input spatial {sp_pp} vs {sp_p}")
        plans.append(
            CellPlan(
                position=pos,
                kind=kind,
                channels=c_curr,
                in0_channels=ch_pp,
                in0_stride=stride0,
                in1_channels=ch_p,
                in_spatial=sp_p,
                out_spatial=out_sp,
            )
        )
        ch_pp, ch_p = ch_p, 4 * c_curr
        sp_pp, sp_p = sp_p, out_sp
    return plans


# ---------------------------------------------------------------------------
# candidate operations
# ---------------------------------------------------------------------------


def _conv_padding(spec: OpSpec) -> int:
    return spec.dilation * (spec.kernel - 1) // 2


def _op_param_shapes(spec: OpSpec, channels: int, strided: bool) -> list[tuple[str, tuple[int, ...]]]:
    if spec.kind in ("sep_conv", "dil_conv"):
        return [
            ("dw", (channels, spec.kernel, spec.kernel)),
            ("pw", (channels, channels)),
            ("b", (channels,)),
        ]
    if spec.kind == "identity" and strided:
        return [("w", (channels, channels)), ("b", (channels,))]
    return []


def _op_forward(spec: OpSpec, x: Tensor, get, stride: int) -> Tensor:
    if spec.kind in ("sep_conv", "dil_conv"):
        y = relu(x)
        y = dwconv2d(
            y, get("dw"), stride=stride, dilation=spec.dilation, padding=_conv_padding(spec)
        )
        return pwconv2d(y, get("pw"), get("b"), stride=1)
    if spec.kind == "avg_pool":
        return avg_pool3x3(x, stride)
    if spec.kind == "max_pool":
        return max_pool3x3(x, stride)
    if spec.kind == "identity":
        if stride == 1:
            return x
        return pwconv2d(x, get("w"), get("b"), stride=stride)
    raise ValueError(f"unknown operation kind {spec.kind!r}")


def mixed_edge_forward(x: Tensor, z, candidates, hard: bool = False) -> Tensor:
    """Blend candidate outputs with the edge weight ``z`` (or pick argmax)."""
    zv = z.values if isinstance(z, Tensor) else np.asarray(z)
    if len(candidates) != zv.shape[0]:
        raise ValueError(f"{len(candidates)} candidates but weight length {zv.shape[0]}")
    if hard:
        return candidates[int(np.argmax(zv))](x)
    return weighted_sum(z, [fn(x) for fn in candidates])


def nll_loss(log_probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the true labels."""
    return nll(log_probs, labels)


def _kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class _NetBase:
    """Parameter store plus the stem/preprocess/head shared by both networks."""

    def __init__(self, config: SuperNetConfig, seed: int):
        self.config = config
        self.topology: CellTopology = build_topology()
        self.plans = plan_cells(config)
        self.params: dict[str, Tensor] = {}
        self._rng = np.random.default_rng((seed, 7))
        self._add("stem.w", (config.init_channels, config.input_channels), config.input_channels)
        self._add("stem.b", (config.init_channels,), None)
        for plan in self.plans:
            p = f"cell{plan.position}"
            self._add(f"{p}.pre0.w", (plan.channels, plan.in0_channels), plan.in0_channels)
            self._add(f"{p}.pre0.b", (plan.channels,), None)
            self._add(f"{p}.pre1.w", (plan.channels, plan.in1_channels), plan.in1_channels)
            self._add(f"{p}.pre1.b", (plan.channels,), None)
            self._add_cell_ops(plan)
        feat = self.plans[-1].out_channels
        # near-zero classifier: training starts close to the uniform predictor
        # regardless of the stack's output scale, but gradients still reach
        # everything upstream from the very first step
        self._add("head.w", (feat, config.num_classes), None, bound=0.01)
        self._add("head.b", (config.num_classes,), None)
        del self._rng

    def _add(
        self,
        name: str,
        shape: tuple[int, ...],
        fan_in: int | None,
        bound: float | None = None,
    ) -> None:
        if bound is not None:
            values = self._rng.uniform(-bound, bound, size=shape)
        elif fan_in is None:
            values = np.zeros(shape)
        else:
            values = _kaiming_uniform(self._rng, shape, fan_in)
        self.params[name] = Tensor(values, requires_grad=True)

    def _add_op(self, prefix: str, spec: OpSpec, channels: int, strided: bool) -> None:
        for suffix, shape in _op_param_shapes(spec, channels, strided):
            fan_in = shape[-1] * shape[-2] if suffix == "dw" else shape[-1]
            fan_in = None if suffix == "b" else fan_in
            self._add(f"{prefix}.{suffix}", shape, fan_in)

    def _add_cell_ops(self, plan: CellPlan) -> None:
        raise NotImplementedError

    def parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def _edge_stride(self, plan: CellPlan, src: int) -> int:
        return 2 if plan.kind == REDUCTION and src < self.topology.num_inputs else 1

    def _preprocess(self, plan: CellPlan, s0: Tensor, s1: Tensor) -> tuple[Tensor, Tensor]:
        p = f"cell{plan.position}"
        s0 = pwconv2d(s0, self.params[f"{p}.pre0.w"], self.params[f"{p}.pre0.b"], stride=plan.in0_stride)
        s1 = pwconv2d(s1, self.params[f"{p}.pre1.w"], self.params[f"{p}.pre1.b"], stride=1)
        return s0, s1

    def _head(self, x: Tensor) -> Tensor:
        feats = global_avg_pool(x)
        return log_softmax(affine(feats, self.params["head.w"], self.params["head.b"]))

    def _stem(self, images) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(images)
        return pwconv2d(x, self.params["stem.w"], self.params["stem.b"], stride=1)


class SuperNet(_NetBase):
    """The over-parameterized network: every edge carries all K candidates."""

    def _add_cell_ops(self, plan: CellPlan) -> None:
        for e in self.topology.edges:
            strided = self._edge_stride(plan, e.src) == 2
            for spec in self.config.op_set.ops:
                prefix = f"cell{plan.position}.edge{e.src}-{e.dst}.{spec.name}"
                self._add_op(prefix, spec, plan.channels, strided)

    def _candidates(self, plan: CellPlan, e: Edge, stride: int):
        fns = []
        for spec in self.config.op_set.ops:
            prefix = f"cell{plan.position}.edge{e.src}-{e.dst}.{spec.name}"

            def fn(x, spec=spec, prefix=prefix):
                return _op_forward(
                    spec, x, lambda s: self.params[f"{prefix}.{s}"], stride
                )

            fns.append(fn)
        return fns

    def cell_forward(
        self,
        plan: CellPlan,
        prev_prev: Tensor,
        prev: Tensor,
        edge_weights: dict[Edge, Tensor],
        hard: bool = False,
    ) -> Tensor:
        """One cell: intermediate nodes in index order, then channel concat."""
        missing = [e for e in self.topology.edges if e not in edge_weights]
        if missing:
            raise ValueError(f"missing edge weights for {missing}")
        s0, s1 = self._preprocess(plan, prev_prev, prev)
        states = [s0, s1]
        for j in self.topology.intermediate_nodes:
            node = None
            for e in self.topology.incoming(j):
                stride = self._edge_stride(plan, e.src)
                term = mixed_edge_forward(
                    states[e.src], edge_weights[e], self._candidates(plan, e, stride), hard
                )
                node = term if node is None else add(node, term)
            states.append(node)
        return concat_channels(states[self.topology.num_inputs :])

    def network_forward(
        self, images, weights_by_kind: dict[str, dict[Edge, Tensor]], hard: bool = False
    ) -> Tensor:
        """Stem, cells in sequence, global pooling, classifier log-probabilities."""
        x = self._stem(images)
        prev_prev = prev = x
        for plan in self.plans:
            out = self.cell_forward(plan, prev_prev, prev, weights_by_kind[plan.kind], hard)
            prev_prev, prev = prev, out
        return self._head(prev)


class GenotypeNet(_NetBase):
    """The discrete network induced by a genotype: two fixed edges per node."""

    def __init__(self, genotype, config: SuperNetConfig, seed: int):
        self.genotype = genotype
        super().__init__(config, seed)

    def _choices(self, plan: CellPlan):
        return self.genotype.normal if plan.kind == NORMAL else self.genotype.reduction

    def _add_cell_ops(self, plan: CellPlan) -> None:
        for node_idx, pairs in enumerate(self._choices(plan)):
            j = self.topology.num_inputs + node_idx
            for src, op_name in pairs:
                spec = self.config.op_set.spec(op_name)
                strided = self._edge_stride(plan, src) == 2
                prefix = f"cell{plan.position}.edge{src}-{j}.{spec.name}"
                self._add_op(prefix, spec, plan.channels, strided)

    def network_forward(self, images) -> Tensor:
        x = self._stem(images)
        prev_prev = prev = x
        for plan in self.plans:
            s0, s1 = self._preprocess(plan, prev_prev, prev)
            states = [s0, s1]
            for node_idx, pairs in enumerate(self._choices(plan)):
                j = self.topology.num_inputs + node_idx
                node = None
                for src, op_name in pairs:
                    spec = self.config.op_set.spec(op_name)
                    stride = self._edge_stride(plan, src)
                    prefix = f"cell{plan.position}.edge{src}-{j}.{spec.name}"
                    term = _op_forward(
                        spec,
                        states[src],
                        lambda s, prefix=prefix: self.params[f"{prefix}.{s}"],
                        stride,
                    )
                    node = term if node is None else add(node, term)
                states.append(node)
            out = concat_channels(states[self.topology.num_inputs :])
            prev_prev, prev = prev, out
        return self._head(prev)
