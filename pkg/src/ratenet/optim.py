"""Rectified Adam and the piecewise-linear learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import torch


@dataclass(frozen=True)
class LRSchedule:
    base_lr: float = 1e-4
    hold_cycles: int = 10000
    total_cycles: int = 40000

    def __post_init__(self):
        if self.base_lr < 0:
            raise ValueError("base_lr must be >= 0")
        if not 0 <= self.hold_cycles <= self.total_cycles:
            raise ValueError("need 0 <= hold_cycles <= total_cycles")


def lr_at(cycle: int, sched: LRSchedule) -> float:
    """Base rate up to the hold boundary, then linear decay to 0 at the end."""
    if cycle < 0 or cycle > sched.total_cycles:
        raise ValueError(f"cycle {cycle} outside [0, {sched.total_cycles}]")
    if cycle < sched.hold_cycles:
        return sched.base_lr
    if cycle >= sched.total_cycles:
        return 0.0
    span = sched.total_cycles - sched.hold_cycles
    return sched.base_lr * (sched.total_cycles - cycle) / span


def rho_inf(beta2: float) -> float:
    return 2.0 / (1.0 - beta2) - 1.0


def rho_t(t: int, beta2: float) -> float:
    b = beta2 ** t
    return rho_inf(beta2) - 2.0 * t * b / (1.0 - b)


def rectification(rt: float, rinf: float) -> float:
    return math.sqrt((rt - 4.0) * (rt - 2.0) * rinf
                     / ((rinf - 4.0) * (rinf - 2.0) * rt))


def radam_update(param: torch.Tensor, grad: torch.Tensor, m: torch.Tensor,
                 v: torch.Tensor, t: int, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place update; ``t`` is the 1-based count including this step.

    While the moment estimators warm up (variance not yet tractable, early
    steps) the update falls back to bias-corrected momentum alone; afterwards
    the variance-rectified adaptive step applies.
    """
    m.mul_(beta1).add_(grad, alpha=1.0 - beta1)
    v.mul_(beta2).addcmul_(grad, grad, value=1.0 - beta2)
    m_hat = m / (1.0 - beta1 ** t)
    rt = rho_t(t, beta2)
    if rt > 4.0:
        r = rectification(rt, rho_inf(beta2))
        denom = v.sqrt().add_(eps)
        param.sub_(lr * r * math.sqrt(1.0 - beta2 ** t) * m_hat / denom)
    else:
        param.sub_(lr * m_hat)


class RAdam:
    """Rectified Adam over named parameters.

    Parameters without a gradient are skipped and their step counters do not
    advance, so modules updated at different cadences keep honest bias
    corrections. Weight decay (decoupled) and gradient clipping (global norm)
    are available but default to off.
    """

    def __init__(self, named_params: Iterable[Tuple[str, torch.Tensor]],
                 lr: float, betas: Tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0,
                 grad_clip: Optional[float] = None):
        self.params = list(named_params)
        if not self.params:
            raise ValueError("no parameters to optimize")
        names = [n for n, _ in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.state = {n: {"step": 0,
                          "m": torch.zeros_like(p),
                          "v": torch.zeros_like(p)} for n, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    @torch.no_grad()
    def step(self) -> int:
        """Apply one update; returns how many parameters were touched."""
        live = [(n, p) for n, p in self.params if p.grad is not None]
        for name, p in live:
            if not torch.isfinite(p.grad).all():
                raise RuntimeError(f"non-finite gradient in parameter '{name}'")
        if self.grad_clip is not None and live:
            torch.nn.utils.clip_grad_norm_([p for _, p in live], self.grad_clip)
        for name, p in live:
            st = self.state[name]
            st["step"] += 1
            if self.weight_decay:
                p.mul_(1.0 - self.lr * self.weight_decay)
            radam_update(p, p.grad, st["m"], st["v"], st["step"],
                         self.lr, self.beta1, self.beta2, self.eps)
        return len(live)

    def state_dict(self) -> dict:
        return {
            "lr": self.lr,
            "betas": (self.beta1, self.beta2),
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "grad_clip": self.grad_clip,
            "state": {n: {"step": st["step"], "m": st["m"].clone(), "v": st["v"].clone()}
                      for n, st in self.state.items()},
        }

    def load_state_dict(self, blob: dict) -> None:
        saved = blob["state"]
        if set(saved) != set(self.state):
            raise ValueError("optimizer state does not match parameter set")
        self.lr = blob["lr"]
        self.beta1, self.beta2 = blob["betas"]
        self.eps = blob["eps"]
        self.weight_decay = blob["weight_decay"]
        self.grad_clip = blob["grad_clip"]
        for n, st in saved.items():
            mine = self.state[n]
            mine["step"] = st["step"]
            mine["m"].copy_(st["m"])
            mine["v"].copy_(st["v"])
