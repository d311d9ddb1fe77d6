"""Adam optimizer step over a NetworkState."""

from __future__ import annotations

import numpy as np

from .network import NetworkState

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(net: NetworkState, grads: dict[str, np.ndarray], lr: float) -> NetworkState:
    """One Adam update (bias-corrected) across all parameters, in place.

    ``grads`` maps parameter names to gradient arrays; missing names are
    treated as zero gradient (their moments still decay). The shared
    step counter increments once per call.
    """
    for name, g in grads.items():
        if name not in net.parameters:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != net.parameters[name].data.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter {name!r} "
                f"shape {net.parameters[name].data.shape}")

    net.step_count += 1
    t = net.step_count
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for name, p in net.parameters.items():
        g = grads.get(name)
        m = net.adam_m[name]
        v = net.adam_v[name]
        m *= ADAM_BETA1
        v *= ADAM_BETA2
        if g is not None:
            m += (1.0 - ADAM_BETA1) * g
            v += (1.0 - ADAM_BETA2) * np.square(g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return net
