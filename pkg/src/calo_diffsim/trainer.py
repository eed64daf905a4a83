"""
Velocity-matching training loop and gradient verification.
"""

import copy
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import torch
import torch.nn as nn
import torch.optim as optim
from loguru import logger

from .errors import ContractError, DivergenceError, NumericError
from .models import GeometrySpec, GradCheckResult, ModelKind, TrainingHyper, TrainingLogEntry
from .networks import build_network, parameter_count
from .schedule import DiffusionSchedule, perturb, velocity_target

__all__ = [
    "TrainingSet",
    "TrainResult",
    "Trainer",
    "velocity_loss",
    "train",
    "grad_check",
    "fixed_velocity_loss",
]

HOLDOUT_SEED_OFFSET = 7919
FD_STEP = 1e-4
REL_ERROR_FLOOR = 1e-4


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Normalized training tensors; ``mask`` is set only for point clouds."""

    x: torch.Tensor
    cond: torch.Tensor
    mask: Optional[torch.Tensor] = None

    def __post_init__(self):
        if self.x.shape[0] == 0:
            raise ContractError("training set is empty")
        if self.cond.shape[0] != self.x.shape[0]:
            raise ContractError("x and cond disagree on the number of items")
        if self.mask is not None and self.mask.shape != self.x.shape[:2]:
            raise ContractError("mask must have shape (items, points)")

    def __len__(self) -> int:
        return int(self.x.shape[0])

    def subset(self, index: torch.Tensor) -> "TrainingSet":
        mask = None if self.mask is None else self.mask[index]
        return TrainingSet(x=self.x[index], cond=self.cond[index], mask=mask)

    def to(self, dtype: torch.dtype) -> "TrainingSet":
        return TrainingSet(x=self.x.to(dtype), cond=self.cond.to(dtype), mask=self.mask)

    def item_count(self) -> int:
        """Number of loss terms: unmasked points for sets, events otherwise."""
        return int(self.mask.sum()) if self.mask is not None else len(self)


@dataclass
class TrainResult:
    model: nn.Module
    log: List[TrainingLogEntry]
    n_parameters: int


def velocity_loss(model: nn.Module, x: torch.Tensor, cond: torch.Tensor,
                  sched: DiffusionSchedule, generator: Optional[torch.Generator] = None,
                  mask: Optional[torch.Tensor] = None, t: Optional[torch.Tensor] = None,
                  eps: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Mean squared velocity error.

    t is drawn uniform on (0, 1] and eps standard normal unless given. For
    masked sets the squared error is summed over unmasked points and divided by
    their number; otherwise it is summed per event and averaged over the batch.
    """
    if x.shape[0] == 0:
        raise ContractError("velocity loss needs a non-empty batch")
    batch = x.shape[0]
    if t is None:
        t = 1.0 - torch.rand(batch, generator=generator, dtype=x.dtype)
    if eps is None:
        eps = torch.randn(x.shape, generator=generator, dtype=x.dtype)
    if mask is not None:
        eps = torch.where(mask[..., None], eps, torch.zeros((), dtype=x.dtype))

    x_t = perturb(sched, x, t, eps)
    target = velocity_target(sched, x, t, eps)
    v_hat = model(x_t, t, cond, mask)
    if not torch.isfinite(v_hat).all():
        raise NumericError(
            "network produced non-finite velocity",
            diagnostics={
                "n_nonfinite": int((~torch.isfinite(v_hat)).sum()),
                "t_min": float(t.min()),
                "t_max": float(t.max()),
            },
        )

    sq = (target - v_hat) ** 2
    if mask is not None:
        per_point = sq.sum(dim=-1)
        count = mask.sum()
        if count == 0:
            raise ContractError("every point of the batch is masked")
        return per_point[mask].sum() / count
    return sq.reshape(batch, -1).sum(dim=1).mean()


def _snapshot(model: nn.Module) -> Dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


class Trainer:
    """
    Adam with cosine learning-rate decay on the velocity loss.

    Every random draw (batch indices, t, eps, holdout split) comes from one
    generator seeded at construction, so a fixed seed reproduces the loss
    trajectory.

    With ``hyper.shards > 1`` a batch is split into shards whose gradients are
    summed in a fixed order. Shards run one after another in this process; they
    pin the reduction order so that a data-parallel run can reproduce the same
    update, they do not spread work across devices.
    """

    def __init__(self, model: nn.Module, data: TrainingSet, hyper: TrainingHyper,
                 sched: DiffusionSchedule, seed: int,
                 checkpoint_fn: Optional[Callable[[int, nn.Module], None]] = None):
        self.model = model
        self.hyper = hyper
        self.sched = sched
        self.seed = seed
        self.checkpoint_fn = checkpoint_fn
        self.generator = torch.Generator().manual_seed(seed)

        self.train_set, self.holdout = self._split(data)
        self.optimizer = optim.Adam(self.model.parameters(), lr=hyper.learning_rate)
        self.scheduler = optim.lr_scheduler.CosineAnnealingLR(
            self.optimizer, T_max=max(hyper.steps, 1), eta_min=hyper.min_learning_rate
        )
        self.log: List[TrainingLogEntry] = []
        self.last_good_state = _snapshot(model)

        logger.info(f"🧮 Model parameters: {parameter_count(model):,}")
        logger.debug(
            f"Training on {len(self.train_set)} items, holdout "
            f"{0 if self.holdout is None else len(self.holdout)}"
        )

    def _split(self, data: TrainingSet):
        n = len(data)
        n_hold = int(round(n * self.hyper.holdout_fraction))
        if n_hold == 0 or n - n_hold < 1:
            return data, None
        perm = torch.randperm(n, generator=self.generator)
        return data.subset(perm[n_hold:]), data.subset(perm[:n_hold])

    def _shard_loss(self, batch: TrainingSet) -> torch.Tensor:
        """Accumulate gradients over fixed-order shards; returns the batch loss."""
        total_items = batch.item_count()
        bounds = torch.linspace(0, len(batch), self.hyper.shards + 1).round().long().tolist()
        loss_value = torch.zeros(())
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            if hi <= lo:
                continue
            shard = batch.subset(torch.arange(lo, hi))
            items = shard.item_count()
            if items == 0:
                continue
            loss = velocity_loss(self.model, shard.x, shard.cond, self.sched,
                                 self.generator, mask=shard.mask)
            weighted = loss * (items / total_items)
            weighted.backward()
            loss_value = loss_value + weighted.detach()
        return loss_value

    @torch.no_grad()
    def holdout_loss(self) -> Optional[float]:
        """Loss on the holdout split with a fixed draw of (t, eps)."""
        if self.holdout is None:
            return None
        self.model.eval()
        gen = torch.Generator().manual_seed(self.seed + HOLDOUT_SEED_OFFSET)
        total, items = 0.0, 0
        for lo in range(0, len(self.holdout), self.hyper.batch_size):
            part = self.holdout.subset(torch.arange(lo, min(lo + self.hyper.batch_size, len(self.holdout))))
            n = part.item_count()
            if n == 0:
                continue
            loss = velocity_loss(self.model, part.x, part.cond, self.sched, gen, mask=part.mask)
            total += float(loss) * n
            items += n
        self.model.train()
        return total / items if items else None

    def step(self, step: int) -> float:
        self.model.train()
        index = torch.randint(len(self.train_set), (self.hyper.batch_size,),
                              generator=self.generator)
        batch = self.train_set.subset(index)
        self.optimizer.zero_grad()
        try:
            loss = float(self._shard_loss(batch))
        except NumericError as e:
            raise DivergenceError(str(e), step=step, last_good_state=self.last_good_state,
                                  diagnostics=e.diagnostics) from e
        if not math.isfinite(loss):
            raise DivergenceError(f"loss became {loss} at step {step}", step=step,
                                  last_good_state=self.last_good_state,
                                  diagnostics={"loss": loss})
        self.optimizer.step()
        self.scheduler.step()
        return loss

    def fit(self) -> List[TrainingLogEntry]:
        hyper = self.hyper
        for step in range(1, hyper.steps + 1):
            lr = self.optimizer.param_groups[0]["lr"]
            loss = self.step(step)
            if step % hyper.eval_every == 0 or step == hyper.steps:
                held = self.holdout_loss()
                self.log.append(TrainingLogEntry(step=step, loss=loss, learning_rate=lr,
                                                 holdout_loss=held))
                held_text = "n/a" if held is None else f"{held:.4f}"
                logger.info(f"step {step}/{hyper.steps} loss {loss:.4f} holdout {held_text}")
            if step % hyper.checkpoint_every == 0:
                self.last_good_state = _snapshot(self.model)
                if self.checkpoint_fn is not None:
                    self.checkpoint_fn(step, self.model)
        return self.log


def train(data: TrainingSet, kind: ModelKind, hyper: TrainingHyper, g: GeometrySpec,
          seed: int, sched: Optional[DiffusionSchedule] = None,
          checkpoint_fn: Optional[Callable[[int, nn.Module], None]] = None) -> TrainResult:
    """Build a fresh network for ``kind`` and fit it to ``data``."""
    sched = sched or DiffusionSchedule()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = build_network(kind, hyper, g)
    data = data.to(torch.float32)
    trainer = Trainer(model, data, hyper, sched, seed, checkpoint_fn=checkpoint_fn)
    log = trainer.fit()
    model.eval()
    return TrainResult(model=model, log=log, n_parameters=parameter_count(model))


def fixed_velocity_loss(data: TrainingSet, sched: DiffusionSchedule,
                        seed: int = 0) -> Callable[[nn.Module], torch.Tensor]:
    """Velocity loss with (t, eps) drawn once, as a function of the model alone."""
    data = data.to(torch.float64)
    gen = torch.Generator().manual_seed(seed)
    t = 1.0 - torch.rand(len(data), generator=gen, dtype=torch.float64)
    eps = torch.randn(data.x.shape, generator=gen, dtype=torch.float64)

    def loss_fn(model: nn.Module) -> torch.Tensor:
        return velocity_loss(model, data.x, data.cond, sched, mask=data.mask, t=t, eps=eps)

    return loss_fn


def _central_difference(loss_fn, model: nn.Module, view: torch.Tensor, j: int,
                       original: float, h: float) -> float:
    view[j] = original + h
    plus = float(loss_fn(model))
    view[j] = original - h
    minus = float(loss_fn(model))
    view[j] = original
    return (plus - minus) / (2.0 * h)


def grad_check(model: nn.Module, loss_fn: Callable[[nn.Module], torch.Tensor],
               tolerance: float = 1e-4, n_coords: int = 200, seed: int = 0) -> GradCheckResult:
    """
    Compare autograd gradients with central finite differences in float64.

    Differences are taken at step 1e-4 and half of it, then extrapolated.

    Checks ``min(n_coords, n_parameters)`` randomly chosen coordinates; the
    relative error is ``|g_a - g_fd| / max(|g_a|, |g_fd|, 1e-4)``.
    """
    model = copy.deepcopy(model).double()
    model.eval()
    named = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
    model.zero_grad()
    loss_fn(model).backward()
    analytic = [p.grad.detach().reshape(-1).clone() if p.grad is not None
                else torch.zeros(p.numel(), dtype=torch.float64) for _, p in named]

    sizes = torch.tensor([p.numel() for _, p in named])
    offsets = torch.cumsum(sizes, 0) - sizes
    total = int(sizes.sum())
    gen = torch.Generator().manual_seed(seed)
    chosen = torch.randperm(total, generator=gen)[: min(n_coords, total)]

    worst, worst_name = 0.0, ""
    with torch.no_grad():
        for flat in chosen.tolist():
            which = int(torch.searchsorted(offsets, torch.tensor([flat]), right=True)[0]) - 1
            name, p = named[which]
            j = flat - int(offsets[which])
            view = p.data.view(-1)
            original = float(view[j])
            coarse = _central_difference(loss_fn, model, view, j, original, FD_STEP)
            fine = _central_difference(loss_fn, model, view, j, original, FD_STEP / 2)
            # Richardson step cancels the h^2 truncation term
            fd = (4.0 * fine - coarse) / 3.0
            ga = float(analytic[which][j])
            rel = abs(ga - fd) / max(abs(ga), abs(fd), REL_ERROR_FLOOR)
            if rel > worst or not worst_name:
                worst, worst_name = rel, name

    result = GradCheckResult(max_rel_error=worst, n_coordinates=len(chosen),
                             worst_parameter=worst_name, tolerance=tolerance)
    if result.passed:
        logger.debug(f"Gradient check passed: max rel error {worst:.2e} over {len(chosen)} coordinates")
    else:
        logger.warning(f"Gradient check failed: max rel error {worst:.2e} at {worst_name}")
    return result
