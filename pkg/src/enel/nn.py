"""Two-layer feed-forward networks with hand-written backpropagation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


@dataclass
class MLP:
    """``y = out(tanh(x @ w1 + b1) @ w2 + b2)`` with ``out`` softplus or identity.

    Inputs may carry any number of leading batch dimensions.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    output: str = "softplus"

    @classmethod
    def init(cls, n_in: int, hidden: int, n_out: int, rng: np.random.Generator,
             output: str = "softplus", out_bias: float = 0.0) -> "MLP":
        return cls(
            w1=rng.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, hidden)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, n_out)),
            b2=np.full(n_out, out_bias),
            output=output,
        )

    @property
    def n_in(self) -> int:
        return self.w1.shape[0]

    @property
    def n_out(self) -> int:
        return self.w2.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def n_params(self) -> int:
        return sum(p.size for p in self.params().values())

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"expected input width {self.n_in}, got {x.shape[-1]}")
        h = np.tanh(x @ self.w1 + self.b1)
        pre = h @ self.w2 + self.b2
        y = softplus(pre) if self.output == "softplus" else pre
        return y, (x, h, pre)

    def backward(self, cache, dy: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        x, h, pre = cache
        dpre = dy * expit(pre) if self.output == "softplus" else dy
        x2 = x.reshape(-1, x.shape[-1])
        h2 = h.reshape(-1, h.shape[-1])
        dpre2 = dpre.reshape(-1, dpre.shape[-1])
        dh2 = (dpre2 @ self.w2.T) * (1.0 - h2 ** 2)
        grads = {"w2": h2.T @ dpre2, "b2": dpre2.sum(axis=0), "w1": x2.T @ dh2, "b1": dh2.sum(axis=0)}
        dx = (dh2 @ self.w1.T).reshape(x.shape)
        return dx, grads

    def copy(self) -> "MLP":
        return MLP(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(), self.output)

    def to_dict(self) -> dict:
        return {"w1": self.w1.tolist(), "b1": self.b1.tolist(), "w2": self.w2.tolist(),
                "b2": self.b2.tolist(), "output": self.output}

    @classmethod
    def from_dict(cls, d: dict) -> "MLP":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("w1", "b1", "w2", "b2")), output=d["output"])


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(np.sum(g ** 2) for g in grads.values())))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class Adam:
    def __init__(self, lr: float = 1e-2, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            mhat = self.m[k] / (1 - self.beta1 ** self.t)
            vhat = self.v[k] / (1 - self.beta2 ** self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class SGD:
    def __init__(self, lr: float = 1e-3):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            params[k] -= self.lr * g


def make_optimizer(name: str, lr: float):
    if name == "adam":
        return Adam(lr)
    if name == "gd":
        return SGD(lr)
    raise ValueError(f"unknown optimizer {name!r}")
