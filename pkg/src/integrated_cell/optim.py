"""Adam, written as a pure update plus a thin per-component wrapper."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import ShapeError


@dataclass
class AdamState:
    step: int = 0
    exp_avg: list = field(default_factory=list)
    exp_avg_sq: list = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls(0, [torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params])

    def to_dict(self) -> dict:
        return {"step": self.step, "exp_avg": self.exp_avg, "exp_avg_sq": self.exp_avg_sq}

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        return cls(int(d["step"]), list(d["exp_avg"]), list(d["exp_avg_sq"]))


def adam_step(params, grads, state: AdamState, lr=2e-4, betas=(0.5, 0.999), eps=1e-8):
    """One bias-corrected Adam update.

    Returns ``(new_params, new_state)``; neither input is modified.
    """
    if not (len(params) == len(grads) == len(state.exp_avg) == len(state.exp_avg_sq)):
        raise ShapeError("parameter, gradient and state lists differ in length")
    b1, b2 = betas
    t = state.step + 1
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    new_params, ms, vs = [], [], []
    for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        if p.shape != g.shape or p.shape != m.shape or p.shape != v.shape:
            raise ShapeError(f"shape mismatch in Adam update: {tuple(p.shape)} vs {tuple(g.shape)}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        new_params.append(p - lr * m_hat / (v_hat.sqrt() + eps))
        ms.append(m)
        vs.append(v)
    return new_params, AdamState(t, ms, vs)


class Adam:
    """Holds Adam state for one component's parameter list."""

    def __init__(self, params, lr=2e-4, betas=(0.5, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.state = AdamState.zeros_like([p.detach() for p in self.params])

    @torch.no_grad()
    def step(self, grads) -> None:
        current = [p.detach() for p in self.params]
        new, self.state = adam_step(current, list(grads), self.state, self.lr, self.betas, self.eps)
        for p, q in zip(self.params, new):
            p.copy_(q)

    def state_dict(self) -> dict:
        return self.state.to_dict()

    def load_state_dict(self, d: dict) -> None:
        self.state = AdamState.from_dict(d)
