from __future__ import annotations

import numpy as np

from .nn import Parameter


def zero_grad(params: list[Parameter]) -> None:
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        else:
            p.grad.fill(0.0)


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
              lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
              weight_decay: float = 0.0) -> None:
    """One in-place Adam update of ``param`` (moments ``m``, ``v`` updated too).

    ``t`` is the 1-based step count used for bias correction. Weight decay, when
    nonzero, is decoupled (AdamW style).
    """
    b1, b2 = betas
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    if weight_decay:
        param -= lr * weight_decay * param
    param -= lr * mhat / (np.sqrt(vhat) + eps)


class Adam:
    def __init__(self, params: list[Parameter], lr: float = 5e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def zero_grad(self) -> None:
        zero_grad(self.params)

    def step(self, lr: float | None = None) -> None:
        self.t += 1
        rate = self.lr if lr is None else lr
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            adam_step(p.data, g, self.m[p.name], self.v[p.name], self.t, rate,
                      self.betas, self.eps, self.weight_decay)

    def state(self) -> dict[str, np.ndarray]:
        out = {"opt.step": np.array(float(self.t))}
        for name in self.m:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["opt.step"])
        for name in self.m:
            self.m[name] = np.array(state[f"opt.m.{name}"], dtype=np.float64)
            self.v[name] = np.array(state[f"opt.v.{name}"], dtype=np.float64)
