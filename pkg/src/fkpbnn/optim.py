"""First-order optimisers and learning-rate schedules.

Every optimiser here *ascends*: ``step`` moves parameters along the supplied
direction, which is a log-likelihood gradient everywhere in this package.
Objectives that are minimised must be negated by the caller.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class Constant:
    lr: float

    def __call__(self, i: int) -> float:
        return float(self.lr)


@dataclass(frozen=True)
class ExpDecay:
    """``lr0 * rate ** (i / period)``."""

    lr0: float
    rate: float
    period: float

    def __call__(self, i: int) -> float:
        return float(self.lr0 * self.rate ** (i / self.period))


def schedule_value(schedule, i: int) -> float:
    if i < 0:
        raise ValueError("iteration must be non-negative")
    return schedule(i)


@dataclass(frozen=True)
class OptState:
    kind: str  # "sgd" or "adam"
    schedule: object
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0


def sgd(schedule) -> OptState:
    return OptState("sgd", schedule)


def adam(schedule, n_params: int, beta1=0.9, beta2=0.999, eps=1e-8) -> OptState:
    return OptState("adam", schedule, beta1, beta2, eps, np.zeros(n_params), np.zeros(n_params), 0)


def make_optimizer(name: str, schedule, n_params: int) -> OptState:
    name = name.lower()
    if name == "sgd":
        return sgd(schedule)
    if name == "adam":
        return adam(schedule, n_params)
    raise ValueError(f"unknown optimizer {name!r}")


def step(state: OptState, params, direction, i: int):
    """One ascent step at iteration ``i``; returns ``(new_state, new_params)``.

    Inputs are never modified.
    """
    params = np.asarray(params, dtype=float)
    g = np.asarray(direction, dtype=float)
    if g.shape != params.shape:
        raise ValueError(f"gradient shape {g.shape} does not match parameters {params.shape}")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("rejected step: non-finite gradient")
    lr = schedule_value(state.schedule, i)
    if state.kind == "sgd":
        return state, params + lr * g
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params + lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), new
