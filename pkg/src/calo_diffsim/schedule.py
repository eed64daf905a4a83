"""
Variance-preserving cosine schedule and the velocity-parameterization algebra.

alpha_t = cos(pi t / 2), sigma_t = sin(pi t / 2), so alpha^2 + sigma^2 = 1.
All functions accept Python floats or tensors for ``t``; tensor ``t`` of shape
``(B,)`` broadcasts against data of shape ``(B, ...)``.
"""

import math
from typing import Tuple, Union

import torch
from pydantic import BaseModel, ConfigDict, Field

from .errors import ContractError, ScheduleError

__all__ = [
    "DiffusionSchedule",
    "schedule_at",
    "perturb",
    "velocity_target",
    "score_from_velocity",
    "predict_x0",
    "ddim_update",
]

TimeLike = Union[float, torch.Tensor]


class DiffusionSchedule(BaseModel):
    """Time discretization of the sampler."""

    model_config = ConfigDict(frozen=True)

    n_steps: int = Field(default=512, ge=1, description="Number of DDIM steps")

    def times(self, dtype: torch.dtype = torch.float64) -> torch.Tensor:
        """Descending grid 1 = t_0 > ... > t_n = 0 with ``n_steps + 1`` points."""
        return torch.linspace(1.0, 0.0, self.n_steps + 1, dtype=dtype)

    def alpha(self, t: TimeLike) -> torch.Tensor:
        return schedule_at(self, t)[0]

    def sigma(self, t: TimeLike) -> torch.Tensor:
        return schedule_at(self, t)[1]


def _as_tensor(t: TimeLike, like: torch.Tensor = None) -> torch.Tensor:
    if isinstance(t, torch.Tensor):
        return t if like is None else t.to(like.dtype)
    dtype = like.dtype if like is not None else torch.float64
    return torch.tensor(float(t), dtype=dtype)


def schedule_at(sched: DiffusionSchedule, t: TimeLike) -> Tuple[torch.Tensor, torch.Tensor]:
    """(alpha_t, sigma_t) with exact endpoints."""
    t = _as_tensor(t)
    if torch.any((t < 0) | (t > 1)) or torch.any(torch.isnan(t)):
        raise ScheduleError("diffusion time must lie in [0, 1]")
    angle = 0.5 * math.pi * t
    alpha = torch.where(t == 1, torch.zeros_like(t), torch.cos(angle))
    sigma = torch.where(t == 0, torch.zeros_like(t), torch.sin(angle))
    return alpha, sigma


def _expand(coef: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    coef = coef.to(x.dtype)
    if coef.dim() == 0:
        return coef
    return coef.reshape(coef.shape + (1,) * (x.dim() - coef.dim()))


def perturb(sched: DiffusionSchedule, x: torch.Tensor, t: TimeLike,
            eps: torch.Tensor) -> torch.Tensor:
    """x_t = alpha_t x + sigma_t eps."""
    if x.shape != eps.shape:
        raise ContractError(f"x {tuple(x.shape)} and eps {tuple(eps.shape)} differ in shape")
    alpha, sigma = schedule_at(sched, _as_tensor(t, x))
    return _expand(alpha, x) * x + _expand(sigma, x) * eps


def velocity_target(sched: DiffusionSchedule, x: torch.Tensor, t: TimeLike,
                    eps: torch.Tensor) -> torch.Tensor:
    """v_t = alpha_t eps - sigma_t x."""
    if x.shape != eps.shape:
        raise ContractError("x and eps differ in shape")
    alpha, sigma = schedule_at(sched, _as_tensor(t, x))
    return _expand(alpha, x) * eps - _expand(sigma, x) * x


def score_from_velocity(sched: DiffusionSchedule, x_t: torch.Tensor, v_hat: torch.Tensor,
                        t: TimeLike) -> torch.Tensor:
    """Score of the perturbed marginal: -x_t - (alpha_t / sigma_t) v_hat."""
    alpha, sigma = schedule_at(sched, _as_tensor(t, x_t))
    if torch.any(sigma == 0):
        raise ScheduleError("score is singular at t = 0 (sigma_t = 0)")
    return -x_t - _expand(alpha / sigma, x_t) * v_hat


def predict_x0(sched: DiffusionSchedule, x_t: torch.Tensor, v_hat: torch.Tensor,
               t: TimeLike) -> torch.Tensor:
    """x_hat = alpha_t x_t - sigma_t v_hat."""
    alpha, sigma = schedule_at(sched, _as_tensor(t, x_t))
    return _expand(alpha, x_t) * x_t - _expand(sigma, x_t) * v_hat


def ddim_update(sched: DiffusionSchedule, x_t: torch.Tensor, x_hat: torch.Tensor,
                t: TimeLike, s: TimeLike) -> torch.Tensor:
    """
    Deterministic DDIM move from time t to an earlier time s.

    x_s = alpha_s x_hat + sigma_s (x_t - alpha_t x_hat) / sigma_t. ``s == t``
    returns ``x_t`` unchanged.
    """
    t = _as_tensor(t, x_t)
    s = _as_tensor(s, x_t)
    if torch.any(s > t):
        raise ScheduleError("DDIM step must move backwards in time (s <= t)")
    if torch.all(s == t):
        return x_t.clone()
    alpha_t, sigma_t = schedule_at(sched, t)
    if torch.any(sigma_t == 0):
        raise ScheduleError("DDIM step from t = 0 is undefined")
    alpha_s, sigma_s = schedule_at(sched, s)
    noise = (x_t - _expand(alpha_t, x_t) * x_hat) / _expand(sigma_t, x_t)
    return _expand(alpha_s, x_t) * x_hat + _expand(sigma_s, x_t) * noise
