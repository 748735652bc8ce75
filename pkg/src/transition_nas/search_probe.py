"""Informational probe of a closed-form gradient guess for sampled mixtures.

For a mixture ``y = sum_k z_k * o_k(x)`` with ``z = softmax((a + G)/tau)``
and positive weights ``alpha = exp(a)``, a closed-form per-candidate
gradient estimate circulates in the form

    d loss / d alpha_k  ~=  <dL/dy, o_k(x)> * (delta(k, k0) - z_k) * z_k / (tau * alpha_k)

with ``k0`` the argmax of the sample.  The formula is not used anywhere in
training (reverse-mode differentiation is); this probe evaluates it on a
tiny frozen mixture and reports how far it lands from the autodiff
gradient, purely as a diagnostic.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tape, Tensor, mul, reduce_sum, weighted_sum
from .relaxation import concrete_sample, gumbel_noise

__all__ = ["edge_logit_gradient_probe"]


def edge_logit_gradient_probe(k: int = 4, tau: float = 1.0, seed: int = 0) -> dict:
    """Compare the closed-form guess against autodiff on a frozen mixture.

    Returns the two per-candidate gradient vectors (with respect to the
    positive weights ``alpha``) and their max absolute deviation.
    """
    rng = np.random.default_rng(seed)
    a = Tensor(rng.standard_normal(k), requires_grad=True)
    noise = gumbel_noise(rng, k)
    x = rng.standard_normal(8)
    candidate_gains = 0.5 + rng.random(k)  # k distinct linear "operations"
    candidate_outs = [g * x for g in candidate_gains]

    with Tape() as tape:
        z = concrete_sample(a, noise, tau)
        y = weighted_sum(z, [Tensor(o) for o in candidate_outs])
        loss = reduce_sum(mul(y, y))
    grads = tape.backward(loss)

    alpha = np.exp(a.values)
    # autodiff gives d loss / d a; translate to d loss / d alpha = (dL/da) / alpha
    autodiff = grads[a] / alpha

    z_vals = z.values
    k0 = int(np.argmax(z_vals))
    y_vals = y.values
    dl_dy = 2.0 * y_vals
    formula = np.empty(k)
    for idx in range(k):
        inner = float(np.sum(dl_dy * candidate_outs[idx]))
        delta = 1.0 if idx == k0 else 0.0
        formula[idx] = inner * (delta - z_vals[idx]) * z_vals[idx] / (tau * alpha[idx])

    return {
        "autodiff": autodiff,
        "formula": formula,
        "max_abs_deviation": float(np.max(np.abs(autodiff - formula))),
    }
