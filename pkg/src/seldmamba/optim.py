"""AdamW with decoupled weight decay.

Decay is applied only to matrix-shaped parameters (ndim >= 2); biases, norm
gains, and other vectors are exempt.
"""

from __future__ import annotations

import numpy as np


class AdamW:
    def __init__(self, named_params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01):
        self._params = list(named_params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self._step = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self._params}
        self._v = {name: np.zeros_like(p.data) for name, p in self._params}

    def zero_grad(self):
        for _, p in self._params:
            p.grad = None

    def step(self):
        self._step += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self._step
        bias2 = 1.0 - b2 ** self._step
        for name, p in self._params:
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if self.weight_decay and p.data.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update

    # -- checkpoint participation ------------------------------------------

    def state_arrays(self):
        state = {f"optim.m.{name}": m for name, m in self._m.items()}
        state.update({f"optim.v.{name}": v for name, v in self._v.items()})
        return state

    def load_state_arrays(self, arrays, step):
        for name, _ in self._params:
            for prefix, store in (("optim.m.", self._m), ("optim.v.", self._v)):
                key = prefix + name
                if key not in arrays:
                    raise ValueError(f"optimizer state missing {key}")
                arr = np.asarray(arrays[key])
                if arr.shape != store[name].shape:
                    raise ValueError(f"optimizer state {key} has shape {arr.shape}, "
                                     f"expected {store[name].shape}")
                store[name] = arr.astype(store[name].dtype, copy=True)
        self._step = int(step)

    @property
    def step_count(self):
        return self._step
