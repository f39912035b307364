"""Finite-difference validation of the analytic backward pass.

Central differences with step h on a float64 network.  Relative error uses a
small absolute floor so near-zero gradient entries do not divide the FD
roundoff noise into fake blowups.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError
from .network import Network


@dataclass
class GradCheckReport:
    max_rel_error: float = 0.0
    per_layer: dict[str, float] = field(default_factory=dict)
    n_checked: int = 0

    def worst(self) -> str:
        if not self.per_layer:
            return "(nothing checked)"
        name = max(self.per_layer, key=self.per_layer.get)
        return f"{name}: {self.per_layer[name]:.3e}"


def grad_check(
    net: Network,
    x: np.ndarray,
    labels: np.ndarray,
    h: float = 1e-5,
    rel_floor: float = 1e-4,
) -> GradCheckReport:
    """Compare backward-pass gradients against central differences.

    Every parameter of every layer is perturbed individually, so cost grows
    with parameter count; intended for small nets only.
    """
    for layer in net.param_layers():
        for arr in layer.params().values():
            if arr.dtype != np.float64:
                raise NumericError(
                    f"gradient check requires float64 parameters, {layer.name} has {arr.dtype}"
                )
    if x.dtype != np.float64:
        x = x.astype(np.float64)

    loss, _ = net.loss(x, labels)
    if not np.isfinite(loss):
        raise NumericError("base loss is non-finite; cannot run gradient check")
    net.backward()
    analytic = {
        f"{l.name}.{k}": g.copy() for l in net.param_layers() for k, g in l.grads().items()
    }

    report = GradCheckReport()
    for layer in net.param_layers():
        layer_max = 0.0
        for key, arr in layer.params().items():
            ana = analytic[f"{layer.name}.{key}"].ravel()
            flat = arr.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                lp, _ = net.loss(x, labels)
                flat[i] = orig - h
                lm, _ = net.loss(x, labels)
                flat[i] = orig
                fd = (lp - lm) / (2.0 * h)
                denom = max(abs(fd), abs(ana[i]), rel_floor)
                layer_max = max(layer_max, abs(fd - ana[i]) / denom)
                report.n_checked += 1
        report.per_layer[layer.name] = layer_max
        report.max_rel_error = max(report.max_rel_error, layer_max)
    return report
