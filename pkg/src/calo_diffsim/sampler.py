"""
Deterministic DDIM sampling over the cosine time grid.
"""

from typing import Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
from loguru import logger

from .errors import NumericError, ScheduleError
from .schedule import DiffusionSchedule, ddim_update, predict_x0

__all__ = ["initial_noise", "ddim_step", "sample"]


def initial_noise(event_shape: Tuple[int, ...], seed: int, indices: Sequence[int],
                  stream: int = 0, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Standard normal draws at t = 1, one independent stream per event index."""
    draws = [np.random.default_rng([int(seed), int(i), int(stream)]).standard_normal(event_shape)
             for i in indices]
    return torch.from_numpy(np.stack(draws)).to(dtype)


def _model_dtype(model: nn.Module) -> torch.dtype:
    for p in model.parameters():
        return p.dtype
    return torch.float32


def ddim_step(sched: DiffusionSchedule, model: nn.Module, x_t: torch.Tensor, t: float,
              s: float, cond: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """One deterministic DDIM update from time t to s <= t."""
    if s > t:
        raise ScheduleError(f"DDIM step must move backwards in time, got t={t} s={s}")
    if s == t:
        return x_t.clone()
    t_batch = torch.full((x_t.shape[0],), float(t), dtype=x_t.dtype)
    v_hat = model(x_t, t_batch, cond, mask)
    x_hat = predict_x0(sched, x_t, v_hat, t_batch)
    return ddim_update(sched, x_t, x_hat, t_batch, torch.full_like(t_batch, float(s)))


@torch.no_grad()
def sample(sched: DiffusionSchedule, model: nn.Module, cond: torch.Tensor, n: int, seed: int,
           event_shape: Tuple[int, ...], mask: Optional[torch.Tensor] = None,
           first_index: int = 0, stream: int = 0) -> torch.Tensor:
    """
    Generate ``n`` points in the model's normalized space.

    Starts from per-event noise at t = 1 and walks the descending time grid
    down to t = 0. The result is a pure function of (model, cond, seed, indices).
    """
    model.eval()
    dtype = _model_dtype(model)
    x = initial_noise(event_shape, seed, range(first_index, first_index + n), stream, dtype)
    cond = cond.to(dtype)
    if mask is not None:
        x = torch.where(mask[..., None], x, torch.zeros((), dtype=dtype))
    times = sched.times(torch.float64).tolist()
    for i, (t, s) in enumerate(zip(times[:-1], times[1:])):
        x = ddim_step(sched, model, x, t, s, cond, mask)
        if not torch.isfinite(x).all():
            raise NumericError(
                f"sampling produced non-finite values at step {i + 1} (t={t:.6f})",
                diagnostics={"step": i + 1, "t": t, "n_nonfinite": int((~torch.isfinite(x)).sum())},
            )
    logger.debug(f"Sampled {n} points over {sched.n_steps} DDIM steps")
    return x
