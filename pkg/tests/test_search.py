"""Bi-level loop: splits, schedules, step alternation, determinism."""

import math

import numpy as np
import pytest

from transition_nas.data import SyntheticSpec, gen_synthetic, batches
from transition_nas.relaxation import gumbel_noise
from transition_nas.search import (
    NumericError,
    SearchConfig,
    arch_step,
    cosine_lr,
    edge_logit_gradient_probe,
    format_history,
    full_edge_weights,
    init_search_state,
    run_search,
    split_train_val,
    weight_step,
)
from transition_nas.supernet import SuperNetConfig, nll_loss
from transition_nas.topology import CELL_KINDS, op_set_from_names
from transition_nas.transition import materialize_matrix


def micro_net_config(k: int = 3) -> SuperNetConfig:
    names = ("sep_conv_3x3", "avg_pool_3x3", "max_pool_3x3", "identity")[:k]
    if "identity" not in names:
        names = names[: k - 1] + ("identity",)
    return SuperNetConfig(
        num_cells=1,
        reduction_positions=frozenset(),
        init_channels=4,
        num_classes=3,
        input_spatial=(8, 8),
        input_channels=2,
        op_set=op_set_from_names(names),
    )


def micro_dataset(seed: int = 0, per_class: int = 10):
    return gen_synthetic(
        SyntheticSpec(
            class_count=3,
            samples_per_class=per_class,
            height=8,
            width=8,
            channels=2,
            contrast=1.0,
            noise_std=0.2,
            seed=seed,
        )
    )


class TestSplit:
    def test_even_split_disjoint_union(self):
        data = micro_dataset(per_class=10)  # 30 -> truncated to 15/15
        data.images = data.images[:28]
        data.labels = data.labels[:28]
        train, val = split_train_val(data, seed=0)
        assert len(train) == len(val) == 14

    def test_same_seed_reproduces(self):
        data = micro_dataset()
        t1, v1 = split_train_val(data, seed=5)
        t2, v2 = split_train_val(data, seed=5)
        np.testing.assert_array_equal(t1.images, t2.images)
        np.testing.assert_array_equal(v1.labels, v2.labels)

    def test_different_seeds_differ(self):
        data = micro_dataset()
        t1, _ = split_train_val(data, seed=1)
        t2, _ = split_train_val(data, seed=2)
        assert not np.array_equal(t1.images, t2.images)

    def test_odd_length_truncates_one(self):
        data = micro_dataset()
        data.images = data.images[:29]
        data.labels = data.labels[:29]
        train, val = split_train_val(data, seed=0)
        assert len(train) == len(val) == 14

    def test_empty_rejected(self):
        data = micro_dataset()
        data.images = data.images[:0]
        data.labels = data.labels[:0]
        with pytest.raises(ValueError):
            split_train_val(data, seed=0)


class TestSchedules:
    def test_cosine_endpoints_exact(self):
        assert cosine_lr(0.025, 1e-3, 0, 50) == 0.025
        assert cosine_lr(0.025, 1e-3, 49, 50) == 1e-3

    def test_cosine_midpoint(self):
        mid = cosine_lr(0.025, 1e-3, 25, 51)
        assert mid == pytest.approx(0.5 * (0.025 + 1e-3))

    def test_cosine_monotone_decreasing(self):
        vals = [cosine_lr(0.025, 1e-3, e, 50) for e in range(50)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_single_epoch_returns_start(self):
        assert cosine_lr(0.025, 1e-3, 0, 1) == 0.025


class TestSteps:
    def _state(self, seed=0):
        cfg = SearchConfig(epochs=4, batch_size=6, seed=seed)
        return init_search_state(cfg, micro_net_config())

    def _batch(self, seed=0):
        data = micro_dataset(seed)
        return batches(data, 6, seed, 0)[0]

    def test_weight_step_leaves_arch_untouched(self):
        state = self._state()
        before = {n: t.values.copy() for n, t in state.arch.named_tensors()}
        weight_step(state, self._batch(), lr=0.025, tau=3.0)
        for n, t in state.arch.named_tensors():
            np.testing.assert_array_equal(t.values, before[n])

    def test_arch_step_leaves_weights_untouched(self):
        state = self._state()
        before = {n: t.values.copy() for n, t in state.net.parameters()}
        arch_step(state, self._batch(), tau=3.0)
        for n, t in state.net.parameters():
            np.testing.assert_array_equal(t.values, before[n])

    def test_arch_step_reaches_transition_logits(self):
        state = self._state()
        arch_step(state, self._batch(), tau=3.0)
        moved = sum(
            float(np.abs(state.adam_m[n]).max()) > 0.0
            for n in state.adam_m
            if "/transition/" in n and n.startswith("normal")
        )
        assert moved == 16  # every normal-cell transition matrix got gradient

    def test_transition_rows_stochastic_after_step(self):
        state = self._state()
        arch_step(state, self._batch(), tau=3.0)
        for key, t in state.arch.normal.transition.items():
            rows = materialize_matrix(t).values.sum(axis=1)
            np.testing.assert_allclose(rows, np.ones(len(rows)), atol=1e-9)

    def test_repeated_weight_steps_descend_on_fixed_batch(self):
        state = self._state(seed=3)
        batch = self._batch(seed=3)
        first = weight_step(state, batch, lr=0.025, tau=4.0)
        losses = [weight_step(state, batch, lr=0.025, tau=4.0) for _ in range(5)]
        assert losses[-1] < first

    def test_non_finite_loss_raises(self):
        state = self._state()
        state.net.params["stem.w"].values[:] = np.nan
        with pytest.raises(NumericError):
            weight_step(state, self._batch(), lr=0.025, tau=3.0)


class TestRunSearch:
    def test_history_length_and_loss_decrease(self):
        cfg = SearchConfig(epochs=5, batch_size=6, seed=4)
        arch, history, state = run_search(cfg, micro_net_config(), micro_dataset(4))
        assert len(history) == 5
        assert history[-1].train_loss < history[0].train_loss

    def test_bitwise_determinism(self):
        cfg = SearchConfig(epochs=2, batch_size=6, seed=9)
        a1, h1, _ = run_search(cfg, micro_net_config(), micro_dataset(9))
        a2, h2, _ = run_search(cfg, micro_net_config(), micro_dataset(9))
        assert h1 == h2
        for (n1, t1), (n2, t2) in zip(a1.named_tensors(), a2.named_tensors()):
            assert n1 == n2
            np.testing.assert_array_equal(t1.values, t2.values)

    def test_callback_fires_per_optimizer_step(self):
        cfg = SearchConfig(epochs=1, batch_size=6, seed=1)
        phases = []
        run_search(
            cfg,
            micro_net_config(),
            micro_dataset(1),
            step_callback=lambda state, phase: phases.append(phase),
        )
        assert phases and phases[::2] == ["weight"] * (len(phases) // 2)
        assert phases[1::2] == ["arch"] * (len(phases) // 2)

    def test_perturbing_one_transition_logit_moves_val_loss(self):
        cfg = SearchConfig(epochs=1, batch_size=6, seed=2)
        state = init_search_state(cfg, micro_net_config())
        data = micro_dataset(2)
        batch = batches(data, 6, 2, 0)[0]
        noise = {
            kind: {e: gumbel_noise(np.random.default_rng(55), 3) for e in state.topology.outer}
            for kind in CELL_KINDS
        }

        def val_loss():
            weights = full_edge_weights(state.arch, state.topology, 2.0, noise=noise)
            out = state.net.network_forward(batch.images, weights)
            return nll_loss(out, batch.labels).item()

        base = val_loss()
        t = state.arch.normal.transition[(0, 2, 3)]
        t.values[0, 0] += 1e-3
        assert val_loss() != base

    def test_history_formatting(self):
        cfg = SearchConfig(epochs=2, batch_size=6, seed=7)
        _, history, _ = run_search(cfg, micro_net_config(), micro_dataset(7))
        text = format_history(history)
        lines = text.strip().split("\n")
        assert lines[0] == "epoch,tau,train_loss,val_loss"
        assert len(lines) == 3
        epoch, tau, tl, vl = lines[1].split(",")
        assert float(tau) == history[0].tau
        assert float(tl) == history[0].train_loss  # 17 digits survive round-trip


class TestGradientProbe:
    def test_probe_reports_both_gradients(self):
        out = edge_logit_gradient_probe(k=4, tau=1.0, seed=0)
        assert out["autodiff"].shape == (4,)
        assert out["formula"].shape == (4,)
        assert math.isfinite(out["max_abs_deviation"])


class TestLossGradientFidelity:
    def test_architecture_paths_meet_tight_tolerance(self):
        """Loss gradients through weights, sampling, and the derived-weight
        path all sit well inside 1e-5 of central differences."""
        from transition_nas.gradcheck import run_battery

        results = dict(run_battery())
        assert results["toy-validation-loss"] <= 1e-5
        assert results["derived-weights-path"] <= 1e-5
        assert results["sampling-path"] <= 1e-5
