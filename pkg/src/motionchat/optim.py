"""AdamW over name->array parameter dicts, plus the cosine learning-rate schedule."""

import math

import numpy as np


class AdamW:
    """Decoupled weight decay Adam. ``weight_decay=0`` gives plain Adam."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float, trainable=None):
        """Update ``params`` in place from ``grads``; skips names not in grads.

        With lr == 0 parameters are left untouched bit-for-bit.
        """
        if lr == 0.0:
            self.t += 1
            return
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        names = trainable if trainable is not None else grads.keys()
        for name in names:
            if name not in grads:
                continue
            g = grads[name]
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p
            p -= (lr * update).astype(p.dtype, copy=False)

    def reset_rows(self, name: str, rows: np.ndarray):
        """Zero optimizer state for specific rows (codebook reseeding)."""
        if name in self.m:
            self.m[name][rows] = 0.0
            self.v[name][rows] = 0.0

    def state_arrays(self) -> dict:
        out = {}
        for name, arr in self.m.items():
            out[f"opt.m.{name}"] = arr
        for name, arr in self.v.items():
            out[f"opt.v.{name}"] = arr
        return out

    def load_state_arrays(self, arrays: dict, t: int):
        self.t = t
        self.m = {k[len("opt.m.") :]: v for k, v in arrays.items() if k.startswith("opt.m.")}
        self.v = {k[len("opt.v.") :]: v for k, v in arrays.items() if k.startswith("opt.v.")}


def cosine_lr(step: int, total_steps: int, base_lr: float, warmup_ratio: float = 0.01) -> float:
    """Linear warmup for ``warmup_ratio`` of training, then cosine decay to 0."""
    warmup = max(1, int(round(warmup_ratio * total_steps)))
    if step < warmup:
        return base_lr * (step + 1) / warmup
    if total_steps <= warmup:
        return base_lr
    progress = (step - warmup) / (total_steps - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))
