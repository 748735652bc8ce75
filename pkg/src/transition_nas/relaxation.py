"""Annealed Gumbel-softmax relaxation of discrete operation choice.

Outer-edge logits ``a`` parameterize positive operation weights via
``alpha = exp(a)``, so the concrete sample is ``softmax((a + G) / tau)``
with standard Gumbel noise ``G``.  As ``tau`` anneals toward zero the
samples sharpen toward one-hot vectors whose argmax frequencies match
``alpha / sum(alpha)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, scale, softmax

__all__ = [
    "UNIFORM_EPS",
    "TemperatureSchedule",
    "gumbel_noise",
    "concrete_sample",
    "temperature_at",
    "hard_one_hot",
]

# uniform draws are clamped to (eps, 1 - eps) so the double log stays finite
UNIFORM_EPS = 1e-12


def gumbel_noise(rng: np.random.Generator, k: int) -> np.ndarray:
    """Draw ``k`` standard Gumbel variates ``-log(-log(U))``."""
    u = rng.random(k)
    np.clip(u, UNIFORM_EPS, 1.0 - UNIFORM_EPS, out=u)
    return -np.log(-np.log(u))


def concrete_sample(a, noise, tau: float):
    """Softened one-hot sample ``softmax((a + noise) / tau)``.

    With a :class:`Tensor` ``a`` the result stays differentiable with
    respect to ``a`` (the noise is a constant); with a plain array the
    computation runs directly in numpy.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    noise = np.asarray(noise, dtype=np.float64)
    if isinstance(a, Tensor):
        if a.values.shape != noise.shape:
            raise ValueError(f"logits shape {a.shape} vs noise shape {noise.shape}")
        return softmax(scale(add(a, Tensor(noise)), 1.0 / tau))
    a = np.asarray(a, dtype=np.float64)
    if a.shape != noise.shape:
        raise ValueError(f"logits shape {a.shape} vs noise shape {noise.shape}")
    t = (a + noise) / tau
    e = np.exp(t - t.max())
    return e / e.sum()


@dataclass(frozen=True)
class TemperatureSchedule:
    """Linear annealing from ``tau_start`` down to ``tau_end``."""

    tau_start: float = 5.0
    tau_end: float = 0.5
    total_steps: int = 49

    def __post_init__(self):
        if not (self.tau_start >= self.tau_end > 0):
            raise ValueError(
                f"need tau_start >= tau_end > 0, got {self.tau_start}, {self.tau_end}"
            )
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")


def temperature_at(schedule: TemperatureSchedule, step: int) -> float:
    """Temperature after ``step`` of ``total_steps`` annealing steps.

    The endpoints are returned exactly (no float drift from the linear
    interpolation formula).
    """
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(
            f"step {step} outside schedule range [0, {schedule.total_steps}]"
        )
    if step == 0:
        return schedule.tau_start
    if step == schedule.total_steps:
        return schedule.tau_end
    frac = step / schedule.total_steps
    return schedule.tau_start + (schedule.tau_end - schedule.tau_start) * frac


def hard_one_hot(z) -> np.ndarray:
    """One-hot at the argmax; ties resolve to the lowest index."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError(f"expected a vector, got shape {z.shape}")
    out = np.zeros_like(z)
    out[int(np.argmax(z))] = 1.0
    return out
