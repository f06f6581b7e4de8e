"""AdamW with linear warmup into cosine decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass
class OptimizerConfig:
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.01
    warmup_steps: int = 25
    total_steps: int = 2000
    eps: float = 1e-8


def schedule_lr(cfg: OptimizerConfig, step: int) -> float:
    """Learning rate at 1-based step: linear ramp to lr over the warmup,
    then cosine decay to zero at total_steps."""
    if step <= cfg.warmup_steps:
        return cfg.lr * step / max(cfg.warmup_steps, 1)
    if cfg.total_steps <= cfg.warmup_steps:
        return cfg.lr
    frac = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    frac = min(frac, 1.0)
    return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * frac))


@dataclass
class AdamW:
    """Decoupled-weight-decay Adam over a named parameter map."""

    cfg: OptimizerConfig
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def step(self, params: dict) -> float:
        """Apply one update from the gradients stored on the parameters.
        Returns the learning rate used."""
        self.step_count += 1
        lr = schedule_lr(self.cfg, self.step_count)
        b1, b2 = self.cfg.beta1, self.cfg.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for name, p in params.items():
            g = p.grad
            if g is None:
                raise ConfigError(f"parameter {name} has no gradient")
            g = g.astype(np.float64)
            if name not in self.first_moment:
                self.first_moment[name] = np.zeros_like(g)
                self.second_moment[name] = np.zeros_like(g)
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / bias1
            v_hat = v / bias2
            update = m_hat / (np.sqrt(v_hat) + self.cfg.eps)
            if self.cfg.weight_decay:
                update = update + self.cfg.weight_decay * p.values.astype(np.float64)
            p.values = (p.values.astype(np.float64) - lr * update).astype(p.values.dtype)
        return lr
