"""In-process property suites behind the ``selftest`` command.

Each check returns (ok, detail).  They exercise the load-bearing
invariants: simplex closure under optimization, sampling unbiasedness,
pruning postconditions, attention renormalization, schedule endpoints,
and the transition parameter counter.
"""

from __future__ import annotations

import numpy as np

from .data import SyntheticSpec, gen_synthetic
from .pruning import _initial_weights, darts_hard_prune, tiep
from .relaxation import TemperatureSchedule, concrete_sample, gumbel_noise, temperature_at
from .search import SearchConfig, cosine_lr, run_search
from .supernet import SuperNetConfig
from .topology import (
    CELL_KINDS,
    build_topology,
    op_set_from_names,
    transition_parameter_count,
)
from .transition import (
    derive_inner_weights,
    init_cell_arch_params,
    materialize_attention,
    materialize_matrix,
)

__all__ = [
    "arch_simplex_deviation",
    "random_cell_instance",
    "run_selftest",
]


def arch_simplex_deviation(arch, topology) -> float:
    """Worst simplex violation across matrices, attention, derived weights.

    Transition rows and attention vectors must sum to 1; every derived
    inner edge weight (zero-noise outer samples) must be a distribution.
    """
    worst = 0.0
    for kind in CELL_KINDS:
        params = arch.for_kind(kind)
        for t in params.transition.values():
            p = materialize_matrix(t).values
            worst = max(worst, float(np.abs(p.sum(axis=1) - 1.0).max()))
            worst = max(worst, max(0.0, float(p.max()) - 1.0), max(0.0, -float(p.min())))
        for t in params.attention.values():
            b = materialize_attention(t).values
            worst = max(worst, abs(float(b.sum()) - 1.0))
            worst = max(worst, max(0.0, -float(b.min())))
        outer = {
            e: concrete_sample(params.outer[e].values, np.zeros(params.k), 1.0)
            for e in topology.outer
        }
        for t in derive_inner_weights(outer, params, topology).values():
            z = t.values
            worst = max(worst, abs(float(z.sum()) - 1.0))
            worst = max(worst, max(0.0, float(z.max()) - 1.0), max(0.0, -float(z.min())))
    return worst


def _micro_setup(seed: int = 0):
    ops = op_set_from_names(("sep_conv_3x3", "avg_pool_3x3", "identity"))
    net_cfg = SuperNetConfig(
        num_cells=1,
        reduction_positions=frozenset(),
        init_channels=4,
        num_classes=3,
        input_spatial=(8, 8),
        input_channels=2,
        op_set=ops,
    )
    data = gen_synthetic(
        SyntheticSpec(
            class_count=3,
            samples_per_class=22,
            height=8,
            width=8,
            channels=2,
            contrast=1.0,
            noise_std=0.2,
            seed=seed,
        )
    )
    return net_cfg, data


def check_simplex_under_search(min_steps: int = 200) -> tuple[bool, str]:
    """Simplex invariants hold after every optimizer step of a toy search."""
    net_cfg, data = _micro_setup()
    epochs = 25  # 33 samples per half / batch 8 -> 5 pairs -> 10 steps per epoch
    cfg = SearchConfig(epochs=epochs, batch_size=8, seed=3)
    seen = {"steps": 0, "worst": 0.0}

    def callback(state, phase):
        seen["steps"] += 1
        dev = arch_simplex_deviation(state.arch, state.topology)
        seen["worst"] = max(seen["worst"], dev)

    run_search(cfg, net_cfg, data, step_callback=callback)
    ok = seen["steps"] >= min_steps and seen["worst"] <= 1e-9
    return ok, f"{seen['steps']} steps, worst simplex deviation {seen['worst']:.3e}"


def check_sampling_unbiasedness(samples: int = 100_000) -> tuple[bool, str]:
    """Low-temperature argmax frequencies match the normalized weights."""
    alpha = np.array([0.2, 0.3, 0.5])
    a = np.log(alpha)
    rng = np.random.default_rng(17)
    counts = np.zeros(3, dtype=np.int64)
    for _ in range(samples):
        z = concrete_sample(a, gumbel_noise(rng, 3), tau=0.05)
        counts[int(np.argmax(z))] += 1
    freq = counts / samples
    dev = float(np.abs(freq - alpha).max())
    return dev <= 0.01, f"frequencies {np.round(freq, 4).tolist()}, max deviation {dev:.4f}"


def random_cell_instance(seed: int, k: int, topology=None):
    """A random pruning instance: outer distributions plus cell parameters."""
    topo = topology if topology is not None else build_topology()
    rng = np.random.default_rng(seed)
    params = init_cell_arch_params(topo, k, rng, init_scale=1.0, requires_grad=False)
    outer_z = {}
    for e in sorted(topo.outer, key=lambda e: (e.dst, e.src)):
        logits = rng.standard_normal(k)
        ex = np.exp(logits - logits.max())
        outer_z[e] = ex / ex.sum()
    return outer_z, params


def check_pruning_postconditions(instances: int = 200) -> tuple[bool, str]:
    """Both strategies keep exactly 2 in-edges per node; retained weights one-hot."""
    topo = build_topology()
    for i in range(instances):
        k = (3, 5, 7)[i % 3]
        outer_z, params = random_cell_instance(1000 + i, k, topo)
        out_t = tiep(outer_z, params, topo)
        out_h = darts_hard_prune(_initial_weights(outer_z, params, topo), topo)
        for outcome, onehot in ((out_t, True), (out_h, False)):
            for j in topo.intermediate_nodes:
                kept = outcome.retained[j]
                if len(kept) != 2 or len({e.src for e in kept}) != 2:
                    return False, f"instance {i}: node {j} retained {kept}"
                if any(e.dst != j or e.src >= j for e in kept):
                    return False, f"instance {i}: node {j} has invalid edge in {kept}"
            if onehot:
                for j in topo.intermediate_nodes:
                    for e in outcome.retained[j]:
                        z = outcome.final_z[e]
                        if not (np.isclose(z.max(), 1.0) and np.isclose(z.sum(), 1.0)):
                            return False, f"instance {i}: edge {e} not one-hot: {z}"
        if out_t.retained[2] != tuple(topo.incoming(2)):
            return False, f"instance {i}: node 2 did not keep its two input edges"
    return True, f"{instances} instances, all postconditions held"


def check_attention_renormalization(instances: int = 50) -> tuple[bool, str]:
    """After each prune, surviving attention sums to 1 and the victim gets 0."""
    topo = build_topology()
    events_seen = 0
    for i in range(instances):
        outer_z, params = random_cell_instance(5000 + i, 4, topo)
        outcome = tiep(outer_z, params, topo)
        for event in outcome.events:
            for e, beta in event.attention.items():
                preds = topo.pred_edges[e]
                if abs(beta.sum() - 1.0) > 1e-12:
                    return False, f"instance {i}: attention on {e} sums to {beta.sum()}"
                if event.pruned in preds:
                    slot = preds.index(event.pruned)
                    if beta[slot] != 0.0:
                        return False, f"instance {i}: pruned slot {slot} got {beta[slot]}"
                events_seen += 1
    return True, f"{events_seen} renormalized attention vectors checked"


def check_schedule_endpoints() -> tuple[bool, str]:
    sched = TemperatureSchedule(5.0, 0.5, total_steps=49)
    taus = (temperature_at(sched, 0), temperature_at(sched, 49))
    lrs = (cosine_lr(0.025, 1e-3, 0, 50), cosine_lr(0.025, 1e-3, 49, 50))
    ok = taus == (5.0, 0.5) and lrs == (0.025, 1e-3)
    return ok, f"tau endpoints {taus}, lr endpoints {lrs}"


def check_parameter_counter() -> tuple[bool, str]:
    topo = build_topology()
    counts = transition_parameter_count(topo, 7)
    expected = {"matrices": 16, "attention_scores": 16, "logits": 16 * 49 + 16}
    return counts == expected, f"per-cell counts {counts}"


CHECKS = [
    ("simplex-under-search", check_simplex_under_search),
    ("sampling-unbiasedness", check_sampling_unbiasedness),
    ("pruning-postconditions", check_pruning_postconditions),
    ("attention-renormalization", check_attention_renormalization),
    ("schedule-endpoints", check_schedule_endpoints),
    ("parameter-counter", check_parameter_counter),
]


def run_selftest(print_fn=print) -> bool:
    """Run every property suite, printing one PASS/FAIL line per check."""
    all_ok = True
    for name, fn in CHECKS:
        ok, detail = fn()
        print_fn(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        all_ok = all_ok and ok
    return all_ok
