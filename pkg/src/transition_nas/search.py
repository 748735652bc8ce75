"""Bi-level architecture search: alternate weight and architecture updates.

Network weights train on one half of the data with SGD + momentum under a
cosine learning-rate schedule; architecture parameters (outer-edge logits,
transition matrices, attention) train on the other half with Adam and
decoupled weight decay.  Each forward pass samples fresh Gumbel noise for
the outer edges and derives the inner-edge weights from them, so both
parameter groups receive gradients through the same loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .data import Batch, Dataset, batches
from .relaxation import TemperatureSchedule, concrete_sample, gumbel_noise, temperature_at
from .search_probe import edge_logit_gradient_probe  # re-export  # noqa: F401
from .supernet import SuperNet, SuperNetConfig, nll_loss
from .topology import CELL_KINDS, NORMAL, CellTopology, Edge
from .transition import CellArchParams, derive_inner_weights, init_cell_arch_params

__all__ = [
    "NumericError",
    "SearchConfig",
    "ArchParams",
    "SearchState",
    "EpochRecord",
    "init_arch_params",
    "cosine_lr",
    "split_train_val",
    "sample_outer_weights",
    "full_edge_weights",
    "init_search_state",
    "weight_step",
    "arch_step",
    "run_search",
    "format_history",
    "edge_logit_gradient_probe",
]


class NumericError(RuntimeError):
    """The run produced a non-finite loss and cannot continue."""


@dataclass(frozen=True)
class SearchConfig:
    """Hyperparameters of the alternating search loop."""

    epochs: int = 50
    batch_size: int = 64
    weight_lr_start: float = 0.025
    weight_lr_end: float = 1e-3
    weight_momentum: float = 0.9
    arch_lr: float = 3e-4
    arch_weight_decay: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 5.0  # global-norm clip on weight gradients; 0 disables
    tau_start: float = 5.0
    tau_end: float = 0.5
    tau_steps: int = 49  # annealing points of the full 50-epoch protocol
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.tau_steps < 1:
            raise ValueError("tau_steps must be >= 1")
        for name in ("batch_size", "weight_lr_start", "weight_lr_end", "arch_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def temperature_schedule(self) -> TemperatureSchedule:
        """One annealing point per epoch; runs shorter than the protocol walk
        the early (smooth) part of the schedule, runs at protocol length
        reach ``tau_end`` on their final epoch."""
        return TemperatureSchedule(self.tau_start, self.tau_end, total_steps=self.tau_steps)


@dataclass
class ArchParams:
    """Architecture parameters for both cell kinds (independent sets)."""

    normal: CellArchParams
    reduction: CellArchParams

    def for_kind(self, kind: str) -> CellArchParams:
        return self.normal if kind == NORMAL else self.reduction

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for kind in CELL_KINDS:
            for name, t in self.for_kind(kind).named_tensors():
                out.append((f"{kind}/{name}", t))
        return out


def init_arch_params(topology: CellTopology, k: int, seed: int) -> ArchParams:
    rng = np.random.default_rng((seed, 11))
    return ArchParams(
        normal=init_cell_arch_params(topology, k, rng),
        reduction=init_cell_arch_params(topology, k, rng),
    )


@dataclass
class SearchState:
    """Everything the alternating loop mutates."""

    config: SearchConfig
    net_config: SuperNetConfig
    net: SuperNet
    arch: ArchParams
    sgd_momentum: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_t: int = 0
    step_count: int = 0
    noise_rng: np.random.Generator = field(default_factory=np.random.default_rng)

    @property
    def topology(self) -> CellTopology:
        return self.net.topology


def init_search_state(config: SearchConfig, net_config: SuperNetConfig) -> SearchState:
    net = SuperNet(net_config, seed=config.seed)
    arch = init_arch_params(net.topology, net_config.op_set.k, config.seed)
    return SearchState(
        config=config,
        net_config=net_config,
        net=net,
        arch=arch,
        sgd_momentum={n: np.zeros_like(t.values) for n, t in net.parameters()},
        adam_m={n: np.zeros_like(t.values) for n, t in arch.named_tensors()},
        adam_v={n: np.zeros_like(t.values) for n, t in arch.named_tensors()},
        noise_rng=np.random.default_rng((config.seed, 13)),
    )


def cosine_lr(start: float, end: float, epoch: int, total_epochs: int) -> float:
    """Cosine annealing over epochs, hitting ``start`` and ``end`` exactly."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if epoch == 0 or total_epochs == 1:
        return start
    if epoch == total_epochs - 1:
        return end
    frac = epoch / (total_epochs - 1)
    return end + 0.5 * (start - end) * (1.0 + math.cos(math.pi * frac))


def split_train_val(dataset: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint equal halves by a seeded permutation (one item dropped if odd)."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    perm = np.random.default_rng((seed, 5)).permutation(n)
    if n % 2:
        perm = perm[:-1]
    half = len(perm) // 2
    return dataset.subset(perm[:half]), dataset.subset(perm[half:])


def sample_outer_weights(
    params: CellArchParams,
    topology: CellTopology,
    tau: float,
    rng: np.random.Generator | None = None,
    noise: dict[Edge, np.ndarray] | None = None,
) -> dict[Edge, Tensor]:
    """Concrete samples for all outer edges, in canonical edge order.

    Pass ``rng`` to draw fresh noise (search) or ``noise`` to replay a
    frozen draw; with neither, noise is zero (the deterministic mode used
    for evaluation and pruning).
    """
    out: dict[Edge, Tensor] = {}
    for e in sorted(topology.outer, key=lambda e: (e.dst, e.src)):
        if rng is not None:
            g = gumbel_noise(rng, params.k)
        elif noise is not None:
            g = noise[e]
        else:
            g = np.zeros(params.k)
        out[e] = concrete_sample(params.outer[e], g, tau)
    return out


def full_edge_weights(
    arch: ArchParams,
    topology: CellTopology,
    tau: float,
    rng: np.random.Generator | None = None,
    noise: dict[str, dict[Edge, np.ndarray]] | None = None,
) -> dict[str, dict[Edge, Tensor]]:
    """Sampled outer plus derived inner weights for both cell kinds.

    Noise is consumed in a fixed order (normal kind first, then reduction,
    canonical edge order within each) so runs are reproducible.
    """
    out: dict[str, dict[Edge, Tensor]] = {}
    for kind in CELL_KINDS:
        params = arch.for_kind(kind)
        outer = sample_outer_weights(
            params, topology, tau, rng=rng, noise=None if noise is None else noise[kind]
        )
        inner = derive_inner_weights(outer, params, topology)
        merged = dict(outer)
        merged.update(inner)
        out[kind] = merged
    return out


def _forward_loss(state: SearchState, batch: Batch, tau: float) -> Tensor:
    weights = full_edge_weights(state.arch, state.topology, tau, rng=state.noise_rng)
    log_probs = state.net.network_forward(batch.images, weights)
    return nll_loss(log_probs, batch.labels)


def _check_finite(loss_value: float, phase: str) -> None:
    if not math.isfinite(loss_value):
        raise NumericError(f"non-finite loss {loss_value!r} during {phase} step")


def _clip_scale(grads, tensors, max_norm: float) -> float:
    if max_norm <= 0:
        return 1.0
    total = 0.0
    for t in tensors:
        g = grads.get(t)
        if g is not None:
            total += float(np.sum(g * g))
    norm = math.sqrt(total)
    return 1.0 if norm <= max_norm else max_norm / norm


def weight_step(state: SearchState, batch: Batch, lr: float, tau: float) -> float:
    """One SGD-with-momentum update of the network weights only."""
    with Tape() as tape:
        loss = _forward_loss(state, batch, tau)
    value = loss.item()
    _check_finite(value, "weight")
    grads = tape.backward(loss)
    mom = state.config.weight_momentum
    clip = _clip_scale(grads, [t for _, t in state.net.parameters()], state.config.grad_clip)
    for name, t in state.net.parameters():
        buf = state.sgd_momentum[name]
        buf *= mom
        g = grads.get(t)
        if g is not None:
            buf += clip * g
        t.values -= lr * buf
    state.step_count += 1
    return value


def arch_step(state: SearchState, batch: Batch, tau: float) -> float:
    """One Adam update (decoupled weight decay) of all architecture parameters."""
    cfg = state.config
    with Tape() as tape:
        loss = _forward_loss(state, batch, tau)
    value = loss.item()
    _check_finite(value, "architecture")
    grads = tape.backward(loss)
    state.adam_t += 1
    t_step = state.adam_t
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    for name, tensor in state.arch.named_tensors():
        g = grads.get(tensor)
        if g is None:
            g = np.zeros_like(tensor.values)
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t_step)
        v_hat = v / (1.0 - b2**t_step)
        tensor.values -= cfg.arch_lr * (
            m_hat / (np.sqrt(v_hat) + eps) + cfg.arch_weight_decay * tensor.values
        )
    state.step_count += 1
    return value


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    tau: float
    train_loss: float
    val_loss: float


def run_search(
    config: SearchConfig,
    net_config: SuperNetConfig,
    dataset: Dataset,
    step_callback=None,
) -> tuple[ArchParams, list[EpochRecord], SearchState]:
    """The full alternating loop; returns final parameters and loss history.

    ``step_callback(state, phase)`` fires after every optimizer step with
    ``phase`` in {"weight", "arch"}.
    """
    train_half, val_half = split_train_val(dataset, config.seed)
    state = init_search_state(config, net_config)
    schedule = config.temperature_schedule()
    history: list[EpochRecord] = []
    for epoch in range(config.epochs):
        tau = temperature_at(schedule, min(epoch, schedule.total_steps))
        lr = cosine_lr(
            config.weight_lr_start, config.weight_lr_end, epoch, config.epochs
        )
        train_batches = batches(train_half, config.batch_size, config.seed, epoch)
        val_batches = batches(val_half, config.batch_size, config.seed + 1, epoch)
        train_losses = []
        val_losses = []
        for tb, vb in zip(train_batches, val_batches):
            train_losses.append(weight_step(state, tb, lr, tau))
            if step_callback is not None:
                step_callback(state, "weight")
            val_losses.append(arch_step(state, vb, tau))
            if step_callback is not None:
                step_callback(state, "arch")
        history.append(
            EpochRecord(
                epoch=epoch,
                tau=tau,
                train_loss=float(np.mean(train_losses)),
                val_loss=float(np.mean(val_losses)),
            )
        )
    return state.arch, history, state


def format_history(history) -> str:
    """Line-delimited history records with 17 significant digits."""
    lines = ["epoch,tau,train_loss,val_loss"]
    for rec in history:
        lines.append(
            f"{rec.epoch},{rec.tau:.17g},{rec.train_loss:.17g},{rec.val_loss:.17g}"
        )
    return "\n".join(lines) + "\n"
