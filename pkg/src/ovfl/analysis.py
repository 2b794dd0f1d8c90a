"""Regret against a hindsight comparator and empirical assumption-constant probes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .environment import RoundDataset
from .errors import ConfigError, NumericDivergenceError
from .nn_core import SplitModel, init_split_model
from .protocol import GradientTrace, joint_gradients, round_loss

CHECKPOINTS = (75, 150, 225, 300)


@dataclass
class RegretRecord:
    learner_loss: np.ndarray
    comparator_loss: np.ndarray
    cumulative_regret: np.ndarray
    average_regret: np.ndarray

    def at(self, T: int) -> float:
        """Average regret after ``T`` rounds (1-based)."""
        return float(self.average_regret[T - 1])


@dataclass
class AssumptionProbe:
    L_hat: float  # max ||grad_k F_t||
    rho_hat: float  # max |G_hat - G| over elements
    beta_hat: float  # max |Theta element|
    D: int  # flattened Theta length
    epsilon_hat: float  # max ||dG_k|| / ||d theta_k|| within a round


@dataclass
class ComparatorFit:
    model: SplitModel
    pooled_loss: float
    iterations: int
    grad_norm: float


class PooledObjective:
    """All rounds' training rows stacked, so that the pooled loss (1/T) sum_t F_t
    is a single MSE (every round has the same number of rows)."""

    def __init__(self, rounds: Sequence[RoundDataset]):
        if not rounds:
            raise ConfigError("need at least one round", field="rounds")
        sizes = {r.n_train for r in rounds}
        if len(sizes) != 1:
            raise ConfigError("rounds must share the training-row count to pool them", field="rounds")
        self.features = [np.concatenate(blocks, axis=0) for blocks in zip(*(r.train_features for r in rounds))]
        self.labels = np.concatenate([r.train_labels for r in rounds], axis=0)

    def loss(self, model: SplitModel) -> float:
        return round_loss(model, self.features, self.labels)

    def grad(self, model: SplitModel):
        return joint_gradients(model, self.features, self.labels)


def pooled_loss(model: SplitModel, rounds: Sequence[RoundDataset]) -> float:
    return PooledObjective(rounds).loss(model)


def hindsight_optimum(rounds: Sequence[RoundDataset], budget: int, seed: int, template: SplitModel,
                      warm_starts: Iterable[SplitModel] = (), step: float = 1e-2, tol: float = 1e-6,
                      armijo: float = 1e-4) -> ComparatorFit:
    """Approximate argmin of the pooled loss by full-batch gradient descent.

    The starting point is the best (by pooled loss) of a seeded fresh model and
    any ``warm_starts``. Each iteration backtracks the step until the loss
    satisfies the Armijo condition, so the loss never increases; the step is
    doubled after every accepted move.
    """
    if budget < 1:
        raise ConfigError(f"must be >= 1, got {budget}", field="analysis.comparator_budget")
    pooled = PooledObjective(rounds)
    hidden = template.head.layer_sizes[1:-1]
    start = init_split_model(template.extractors[0].layer_sizes, hidden, template.num_sus,
                             template.head.out_size, seed)
    candidates = [start, *warm_starts]
    losses = [pooled.loss(m) for m in candidates]
    best = int(np.argmin(losses))
    theta = candidates[best].flatten()
    model = candidates[best]
    loss = losses[best]
    gnorm = np.inf
    it = 0
    while it < budget:
        cur_loss, grads = pooled.grad(model)
        g = np.concatenate([p.flatten() for p in grads])
        gnorm = float(np.linalg.norm(g))
        if not np.isfinite(gnorm):
            raise NumericDivergenceError("non-finite comparator gradient")
        if gnorm < tol:
            break
        it += 1
        while True:
            trial_theta = theta - step * g
            trial = model.from_flat(trial_theta)
            trial_loss = pooled.loss(trial)
            if trial_loss <= cur_loss - armijo * step * gnorm ** 2:
                theta, model, loss = trial_theta, trial, trial_loss
                step *= 2.0
                break
            step *= 0.5
            if step < 1e-16:
                return ComparatorFit(model, loss, it, gnorm)
    return ComparatorFit(model, loss, it, gnorm)


def regret_from_losses(learner_loss: Sequence[float], comparator_loss: Sequence[float]) -> RegretRecord:
    learner = np.asarray(learner_loss, dtype=np.float64)
    comp = np.asarray(comparator_loss, dtype=np.float64)
    if learner.shape != comp.shape:
        raise ConfigError(f"{learner.size} learner losses vs {comp.size} comparator losses", field="rounds")
    cum = np.cumsum(learner - comp)
    return RegretRecord(learner, comp, cum, cum / np.arange(1, len(cum) + 1))


def regret_curve(learner_loss: Sequence[float], comparator: SplitModel, rounds: Sequence[RoundDataset]) -> RegretRecord:
    """Regret of a run's per-round pre-update training losses against a fixed comparator.

    ``learner_loss[t]`` must be F_t at the round-start model, i.e. the
    ``train_loss`` column of a run log.
    """
    comp = [round_loss(comparator, r.train_features, r.train_labels) for r in rounds]
    return regret_from_losses(learner_loss, comp)


def sublinear_trend(record: RegretRecord, checkpoints: Sequence[int] = CHECKPOINTS) -> List[float]:
    """Average regret read at each checkpoint that the run reached."""
    return [record.at(c) for c in checkpoints if c <= len(record.average_regret)]


def probe_assumptions(trace: Optional[GradientTrace]) -> AssumptionProbe:
    if trace is None or not trace.iterations:
        raise ConfigError("gradient trace recording was not enabled for this run", field="analysis.trace")
    L = max(max(it.grad_norms) for it in trace.iterations)
    rho = max(it.max_gap for it in trace.iterations)
    beta = max(it.theta_max_abs for it in trace.iterations)
    eps = max(trace.smoothness_ratios) if trace.smoothness_ratios else 0.0
    return AssumptionProbe(float(L), float(rho), float(beta), int(trace.num_params), float(eps))
