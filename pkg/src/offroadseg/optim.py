"""AdamW with decoupled decay, the poly learning-rate schedule, and EMA weights."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import torch


class NonFiniteGradientError(RuntimeError):
    """Raised when a step is rejected because a gradient is NaN/inf or missing."""


@dataclass
class ScheduleConfig:
    base_lr: float = 6e-5
    total_iters: int = 96_000
    power: float = 0.9

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be > 0, got {self.base_lr}")
        if self.total_iters < 0:
            raise ValueError(f"total_iters must be >= 0, got {self.total_iters}")
        if self.power <= 0:
            raise ValueError(f"power must be > 0, got {self.power}")


def poly_lr(t: int, cfg: ScheduleConfig) -> float:
    """base_lr * (1 - t/T)^power; non-increasing from base_lr at 0 to 0 at T."""
    if cfg.total_iters <= 0:
        raise ValueError("schedule is undefined for total_iters == 0")
    if not 0 <= t <= cfg.total_iters:
        raise ValueError(f"iteration {t} outside schedule range [0, {cfg.total_iters}]")
    return cfg.base_lr * (1.0 - t / cfg.total_iters) ** cfg.power


@dataclass
class OptimConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {b}")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


class AdamW:
    """Adam with decoupled weight decay over a named parameter set.

    step() validates every gradient before touching any state, so a bad batch
    rejects the whole step instead of poisoning the moments. The decay term is
    applied multiplicatively to the pre-step parameters.
    """

    def __init__(
        self,
        params: Mapping[str, torch.Tensor] | Iterable[tuple[str, torch.Tensor]],
        cfg: OptimConfig | None = None,
    ):
        self.params = dict(params)
        if not self.params:
            raise ValueError("no parameters to optimize")
        self.cfg = cfg or OptimConfig()
        self.step_count = 0
        self.exp_avg = {n: torch.zeros_like(p) for n, p in self.params.items()}
        self.exp_avg_sq = {n: torch.zeros_like(p) for n, p in self.params.items()}

    def step(self, lr: float, grads: Mapping[str, torch.Tensor] | None = None) -> None:
        """One update using `grads` (default: each parameter's .grad)."""
        if lr < 0:
            raise ValueError(f"lr must be >= 0, got {lr}")
        if grads is None:
            grads = {n: p.grad for n, p in self.params.items()}
        bad = [n for n in self.params if grads.get(n) is None]
        if bad:
            raise NonFiniteGradientError(f"missing gradients for {bad}")
        bad = [n for n in self.params if not torch.isfinite(grads[n]).all()]
        if bad:
            raise NonFiniteGradientError(f"non-finite gradients for {bad}; step rejected")

        self.step_count += 1
        beta1, beta2 = self.cfg.beta1, self.cfg.beta2
        bc1 = 1.0 - beta1**self.step_count
        bc2 = 1.0 - beta2**self.step_count
        with torch.no_grad():
            for name, p in self.params.items():
                g = grads[name]
                if g.shape != p.shape:
                    raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)} for {name}")
                m = self.exp_avg[name].mul_(beta1).add_(g, alpha=1.0 - beta1)
                v = self.exp_avg_sq[name].mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
                if self.cfg.weight_decay:
                    p.mul_(1.0 - lr * self.cfg.weight_decay)
                denom = (v / bc2).sqrt_().add_(self.cfg.eps)
                p.addcdiv_(m, denom, value=-lr / bc1)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "exp_avg": {n: t.detach().clone() for n, t in self.exp_avg.items()},
            "exp_avg_sq": {n: t.detach().clone() for n, t in self.exp_avg_sq.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        if set(state["exp_avg"]) != set(self.params):
            raise ValueError("optimizer state does not match the parameter set")
        self.step_count = int(state["step_count"])
        for n in self.params:
            self.exp_avg[n] = state["exp_avg"][n].detach().clone().to(self.params[n].dtype)
            self.exp_avg_sq[n] = state["exp_avg_sq"][n].detach().clone().to(self.params[n].dtype)


class EmaTracker:
    """Exponential moving average of parameters, blended each iteration.

    The shadow starts as an exact copy of the live parameters and relaxes
    toward them with factor (1 - decay) per update. Shadows are kept in at
    least float32 even if training runs in reduced precision.
    """

    def __init__(
        self,
        params: Mapping[str, torch.Tensor] | Iterable[tuple[str, torch.Tensor]],
        decay: float = 0.999,
    ):
        if not 0.0 < decay < 1.0:
            raise ValueError(f"decay must be in (0, 1), got {decay}")
        self.decay = decay
        self.updates = 0
        self.shadow: dict[str, torch.Tensor] = {}
        for name, p in dict(params).items():
            t = p.detach().clone()
            if t.is_floating_point() and torch.finfo(t.dtype).bits < 32:
                t = t.float()
            self.shadow[name] = t

    def update(self, params: Mapping[str, torch.Tensor]) -> None:
        if set(params) != set(self.shadow):
            raise ValueError("parameter names do not match the tracked set")
        with torch.no_grad():
            for name, p in params.items():
                s = self.shadow[name]
                if s.shape != p.shape:
                    raise ValueError(f"shape mismatch for {name}: {tuple(s.shape)} vs {tuple(p.shape)}")
                s.mul_(self.decay).add_(p.detach().to(s.dtype), alpha=1.0 - self.decay)
        self.updates += 1

    def snapshot(self) -> dict[str, torch.Tensor]:
        """Read-only copies of the shadow parameters; tracker state untouched."""
        if not self.shadow:
            raise RuntimeError("EMA tracker holds no parameters")
        return {n: t.detach().clone() for n, t in self.shadow.items()}

    def state_dict(self) -> dict:
        return {
            "decay": self.decay,
            "updates": self.updates,
            "shadow": {n: t.detach().clone() for n, t in self.shadow.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        if set(state["shadow"]) != set(self.shadow):
            raise ValueError("EMA state does not match the tracked parameter set")
        self.decay = float(state["decay"])
        self.updates = int(state["updates"])
        for n, t in state["shadow"].items():
            self.shadow[n] = t.detach().clone()
