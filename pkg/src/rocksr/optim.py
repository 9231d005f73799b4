"""Adam with bias-corrected moment estimates.

State lives outside the parameters so it can be checkpointed and restored
independently; moments are keyed by parameter name.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter


class AdamState:
    """Optimizer hyperparameters plus per-parameter first/second moments."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if not 0 <= beta1 < 1 or not 0 <= beta2 < 1:
            raise ValueError(f"adam betas must lie in [0, 1), got {beta1}, {beta2}")
        if lr <= 0 or eps <= 0:
            raise ValueError(f"adam lr and eps must be positive, got {lr}, {eps}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def state_dict(self) -> dict:
        tensors = {}
        for name, (m, v) in self.moments.items():
            tensors[name + ".m"] = m
            tensors[name + ".v"] = v
        return {
            "hyper": {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                      "eps": self.eps, "step_count": self.step_count},
            "tensors": tensors,
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "AdamState":
        hyper = state["hyper"]
        out = cls(lr=hyper["lr"], beta1=hyper["beta1"], beta2=hyper["beta2"],
                  eps=hyper["eps"])
        out.step_count = int(hyper["step_count"])
        names = {k[:-2] for k in state["tensors"] if k.endswith(".m")}
        for name in names:
            out.moments[name] = (
                np.array(state["tensors"][name + ".m"]),
                np.array(state["tensors"][name + ".v"]),
            )
        return out


def adam_step(params, state: AdamState) -> None:
    """Apply one Adam update to every parameter and clear its gradient.

    update = lr * m_hat / (sqrt(v_hat) + eps), with m_hat and v_hat the
    bias-corrected running moments.  A non-finite gradient raises
    FloatingPointError naming the offending parameter before any update
    is applied to it.
    """
    params = list(params)
    state.step_count += 1
    t = state.step_count
    bc1 = 1 - state.beta1 ** t
    bc2 = 1 - state.beta2 ** t
    for p in params:
        if not isinstance(p, Parameter):
            raise TypeError(f"adam_step expects Parameters, got {type(p).__name__}")
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter '{p.name}'")
        pair = state.moments.get(p.name)
        if pair is None:
            pair = (np.zeros_like(p.data), np.zeros_like(p.data))
            state.moments[p.name] = pair
        m, v = pair
        if m.shape != p.data.shape:
            raise ValueError(
                f"adam moment shape {m.shape} does not match parameter "
                f"'{p.name}' shape {p.data.shape}"
            )
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * (g * g)
        p.data -= (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
        p.zero_grad()
