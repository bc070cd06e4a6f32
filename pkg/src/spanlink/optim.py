"""Optimization utilities: AdamW with decoupled weight decay, global
gradient-norm clipping, and a linear warmup/decay schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is <= max_norm.
    Returns the pre-clip norm."""
    total = 0.0
    for g in grads.values():
        total += float((g.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def linear_schedule(step: int, total_steps: int, warmup_ratio: float) -> float:
    """Learning-rate factor in [0, 1]: linear ramp over the warmup fraction,
    then linear decay to zero at total_steps.  ``step`` is 1-based."""
    warmup = int(warmup_ratio * total_steps)
    if warmup > 0 and step <= warmup:
        return step / warmup
    if total_steps <= warmup:
        return 1.0
    return max(0.0, (total_steps - step) / (total_steps - warmup))


def _decays(name: str) -> bool:
    # Decoupled weight decay applies to weight matrices and embedding tables,
    # not to biases or layernorm parameters.
    leaf = name.rsplit(".", 1)[-1]
    return leaf.startswith("w") or leaf.endswith("emb")


@dataclass
class AdamW:
    lr: float
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr_factor: float = 1.0) -> None:
        """One update, in place.  ``lr_factor`` is the schedule multiplier."""
        self.step_count += 1
        t = self.step_count
        lr = self.lr * lr_factor
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and _decays(name):
                update = update + self.weight_decay * p
            p -= (lr * update).astype(p.dtype)
