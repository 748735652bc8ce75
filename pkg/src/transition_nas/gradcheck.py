"""Finite-difference battery: every primitive plus the end-to-end loss paths.

Each item builds a deterministic scalar function of a few parameter
tensors (randomness frozen up front) and compares reverse-mode gradients
against central differences.  The battery is fixed-seed so results are
reproducible run to run.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, finite_diff_check
from .relaxation import concrete_sample, gumbel_noise
from .search import full_edge_weights, init_arch_params
from .supernet import SuperNet, SuperNetConfig, nll_loss
from .topology import CELL_KINDS, Edge, build_topology, op_set_from_names
from .transition import derive_inner_weights, init_cell_arch_params

__all__ = ["TOLERANCE", "run_battery"]

TOLERANCE = 1e-4


def _readout(out: Tensor, r: np.ndarray) -> Tensor:
    """Fixed random linear readout so every output element matters."""
    return ad.reduce_sum(ad.mul(out, Tensor(r)))


def _primitive_items(rng: np.random.Generator):
    def t(*shape, lo: float | None = None):
        v = rng.standard_normal(shape)
        if lo is not None:
            v = lo + np.abs(v)
        return Tensor(v, requires_grad=True)

    def r(*shape):
        return rng.standard_normal(shape)

    items = []

    x, y, ro = t(2, 3), t(2, 3), r(2, 3)
    items.append(("primitive/add", lambda: _readout(ad.add(x, y), ro), [x, y]))
    items.append(("primitive/mul", lambda: _readout(ad.mul(x, y), ro), [x, y]))
    items.append(("primitive/neg", lambda: _readout(ad.neg(x), ro), [x]))
    items.append(("primitive/scale", lambda: _readout(ad.scale(x, 1.7), ro), [x]))

    s = t(1)
    items.append(("primitive/smul", lambda: _readout(ad.smul(s, x), ro), [s, x]))

    xe, re_ = t(2, 3), r(2, 3)
    items.append(("primitive/exp", lambda: _readout(ad.exp(xe), re_), [xe]))
    xl = t(2, 3, lo=0.5)
    items.append(("primitive/log", lambda: _readout(ad.log(xl), re_), [xl]))
    items.append(("primitive/relu", lambda: _readout(ad.relu(x), ro), [x]))

    xs, rs = t(2, 5), r(2, 5)
    items.append(("primitive/softmax", lambda: _readout(ad.softmax(xs), rs), [xs]))
    items.append(("primitive/log_softmax", lambda: _readout(ad.log_softmax(xs), rs), [xs]))

    xm, rm = t(5), r(5)
    mask = np.array([True, False, True, True, False])
    items.append(
        ("primitive/masked_softmax", lambda: _readout(ad.masked_softmax(xm, mask), rm), [xm])
    )

    m, v, rv = t(3, 4), t(4), r(3)
    items.append(("primitive/matvec", lambda: _readout(ad.matvec(m, v), rv), [m, v]))
    v2, m2, rv2 = t(4), t(4, 3), r(3)
    items.append(("primitive/vecmat", lambda: _readout(ad.vecmat(v2, m2), rv2), [v2, m2]))
    a2, b2, rmm = t(2, 3), t(3, 4), r(2, 4)
    items.append(("primitive/matmul", lambda: _readout(ad.matmul(a2, b2), rmm), [a2, b2]))

    xa, wa, ba, ra = t(2, 4), t(4, 3), t(3), r(2, 3)
    items.append(("primitive/affine", lambda: _readout(ad.affine(xa, wa, ba), ra), [xa, wa, ba]))

    xc, wc, rc = t(2, 3, 6, 6), t(3, 3, 3), r(2, 3, 6, 6)
    items.append(
        ("primitive/dwconv2d", lambda: _readout(ad.dwconv2d(xc, wc, 1, 1, 1), rc), [xc, wc])
    )
    xc2, wc2, rc2 = t(2, 2, 8, 8), t(2, 3, 3), r(2, 2, 4, 4)
    items.append(
        (
            "primitive/dwconv2d-strided-dilated",
            lambda: _readout(ad.dwconv2d(xc2, wc2, stride=2, dilation=2, padding=2), rc2),
            [xc2, wc2],
        )
    )

    xp, wp, bp, rp = t(2, 3, 5, 5), t(4, 3), t(4), r(2, 4, 5, 5)
    items.append(
        ("primitive/pwconv2d", lambda: _readout(ad.pwconv2d(xp, wp, bp, 1), rp), [xp, wp, bp])
    )
    rp2 = r(2, 4, 3, 3)
    items.append(
        (
            "primitive/pwconv2d-strided",
            lambda: _readout(ad.pwconv2d(xp, wp, bp, 2), rp2),
            [xp, wp, bp],
        )
    )

    xq, rq1 = t(2, 2, 6, 6), r(2, 2, 6, 6)
    rq2 = r(2, 2, 3, 3)
    items.append(("primitive/avg_pool3x3", lambda: _readout(ad.avg_pool3x3(xq, 1), rq1), [xq]))
    items.append(
        ("primitive/avg_pool3x3-strided", lambda: _readout(ad.avg_pool3x3(xq, 2), rq2), [xq])
    )
    items.append(("primitive/max_pool3x3", lambda: _readout(ad.max_pool3x3(xq, 1), rq1), [xq]))
    items.append(
        ("primitive/max_pool3x3-strided", lambda: _readout(ad.max_pool3x3(xq, 2), rq2), [xq])
    )

    c1, c2, c3 = t(2, 2, 4, 4), t(2, 3, 4, 4), t(2, 1, 4, 4)
    rcat = r(2, 6, 4, 4)
    items.append(
        (
            "primitive/concat_channels",
            lambda: _readout(ad.concat_channels([c1, c2, c3]), rcat),
            [c1, c2, c3],
        )
    )

    xg, rg = t(2, 3, 4, 4), r(2, 3)
    items.append(("primitive/global_avg_pool", lambda: _readout(ad.global_avg_pool(xg), rg), [xg]))

    wmix = t(3)
    t1, t2, t3 = t(2, 4), t(2, 4), t(2, 4)
    rws = r(2, 4)
    items.append(
        (
            "primitive/weighted_sum",
            lambda: _readout(ad.weighted_sum(wmix, [t1, t2, t3]), rws),
            [wmix, t1, t2, t3],
        )
    )

    vix = t(5)
    items.append(("primitive/index", lambda: ad.index(vix, 2), [vix]))
    xsum = t(3, 3)
    items.append(("primitive/sum", lambda: ad.reduce_sum(ad.mul(xsum, xsum)), [xsum]))

    logits = t(3, 4)
    labels = np.array([1, 3, 0])
    items.append(("primitive/nll", lambda: ad.nll(ad.log_softmax(logits), labels), [logits]))

    return items


def _sampling_path_item(rng: np.random.Generator):
    a = Tensor(rng.standard_normal(5), requires_grad=True)
    noise = gumbel_noise(rng, 5)
    ro = rng.standard_normal(5)
    return ("sampling-path", lambda: _readout(concrete_sample(a, noise, 0.7), ro), [a])


def _derived_weights_item(rng: np.random.Generator):
    topo = build_topology()
    k = 3
    params = init_cell_arch_params(topo, k, rng, init_scale=0.5)
    outer_logits = {
        e: Tensor(rng.standard_normal(k), requires_grad=True) for e in topo.outer
    }
    noise = {e: gumbel_noise(rng, k) for e in topo.outer}
    readouts = {e: rng.standard_normal(k) for e in topo.inner}

    def f():
        outer_z = {e: concrete_sample(outer_logits[e], noise[e], 1.0) for e in topo.outer}
        derived = derive_inner_weights(outer_z, params, topo)
        total = None
        for e in sorted(derived, key=lambda e: (e.dst, e.src)):
            term = _readout(derived[e], readouts[e])
            total = term if total is None else ad.add(total, term)
        return total

    tensors = list(outer_logits.values())
    tensors += [params.transition[key] for key in sorted(params.transition)]
    tensors += [params.attention[e] for e in sorted(params.attention)]
    return ("derived-weights-path", f, tensors)


def _toy_loss_item(rng: np.random.Generator):
    ops = op_set_from_names(("sep_conv_3x3", "max_pool_3x3", "identity"))
    cfg = SuperNetConfig(
        num_cells=1,
        reduction_positions=frozenset(),
        init_channels=4,
        num_classes=3,
        input_spatial=(8, 8),
        input_channels=2,
        op_set=ops,
    )
    net = SuperNet(cfg, seed=5)
    arch = init_arch_params(net.topology, ops.k, seed=6)
    images = rng.standard_normal((2, 2, 8, 8))
    labels = np.array([0, 2])
    noise = {
        kind: {e: gumbel_noise(rng, ops.k) for e in net.topology.outer}
        for kind in CELL_KINDS
    }

    def f():
        weights = full_edge_weights(arch, net.topology, tau=1.0, noise=noise)
        log_probs = net.network_forward(images, weights)
        return nll_loss(log_probs, labels)

    tensors = [arch.normal.outer[e] for e in sorted(arch.normal.outer, key=lambda e: (e.dst, e.src))]
    tensors.append(arch.normal.transition[(0, 2, 3)])
    tensors.append(arch.normal.attention[Edge(2, 3)])
    tensors.append(net.params["stem.w"])
    tensors.append(net.params["cell1.edge0-2.sep_conv_3x3.dw"])
    tensors.append(net.params["cell1.edge0-2.sep_conv_3x3.pw"])
    tensors.append(net.params["head.b"])
    return ("toy-validation-loss", f, tensors)


def run_battery(h: float = 1e-5) -> list[tuple[str, float]]:
    """Run the whole battery; returns (item name, max relative error) pairs."""
    rng = np.random.default_rng(2024)
    items = _primitive_items(rng)
    items.append(_sampling_path_item(rng))
    items.append(_derived_weights_item(rng))
    items.append(_toy_loss_item(rng))
    return [(name, finite_diff_check(f, params, h=h)) for name, f, params in items]
