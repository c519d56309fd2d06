"""Iterative multi-step prediction with randomized interval chains.

A chain is a sequence of step intervals summing to the target lead; each
step runs the model conditioned on its interval and feeds the predicted
hours back into the history.  Sampled chains repeat a single interval
(e.g. a 48-hour lead as two 24-hour steps or four 12-hour steps); callers
may pass arbitrary mixed chains explicitly.  The final forecast is the
arithmetic mean of the chain trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from .tide import ForecastTask
from .training import TideModel


def reachable_leads(interval_set, max_lead: int = 240) -> list[int]:
    """All lead times expressible as a sum of intervals from the set."""
    reach = np.zeros(max_lead + 1, dtype=bool)
    reach[0] = True
    for v in range(1, max_lead + 1):
        reach[v] = any(d <= v and reach[v - d] for d in interval_set)
    return [v for v in range(1, max_lead + 1) if reach[v]]


def sample_chains(interval_set, target_lead: int, n_chains: int, seed: int = 0) -> list[tuple[int, ...]]:
    """Draw homogeneous interval chains (one interval repeated) for a lead."""
    if n_chains < 1:
        raise ValidationError("n_chains must be >= 1")
    divisors = [d for d in sorted(set(interval_set)) if target_lead % d == 0 and d <= target_lead]
    if not divisors:
        feasible = reachable_leads(interval_set, max(240, int(target_lead)))
        raise ValidationError(
            f"lead {target_lead} h is not reachable from intervals {tuple(sorted(interval_set))}; "
            f"feasible leads: {feasible}"
        )
    rng = np.random.default_rng([seed, 211])
    picks = rng.choice(np.asarray(divisors), size=n_chains)
    return [tuple([int(d)] * (target_lead // int(d))) for d in picks]


def iterative_predict_chain(model: TideModel, history, covariates, static=None,
                            chain=()) -> np.ndarray:
    """Roll the model along one interval chain; returns the hourly trajectory.

    ``covariates`` must cover at least ``lookback + sum(chain)`` rows; when
    a step's window runs past the end, the final row is repeated.
    """
    L, H = model.lookback, model.horizon
    y_buf = np.asarray(history, dtype=np.float64).copy()
    x = np.asarray(covariates, dtype=np.float64)
    if y_buf.shape != (L,):
        raise ValidationError(f"history shape {y_buf.shape} != ({L},)")
    total = int(sum(chain))
    if total < 1:
        raise ValidationError("chain must contain at least one interval")
    if x.shape[0] < L + total:
        raise ValidationError(
            f"covariates cover {x.shape[0]} rows, need >= lookback + lead = {L + total}"
        )
    out = np.empty(total)
    pos = 0
    for step in chain:
        step = int(step)
        if step < 1 or step > H:
            raise ValidationError(f"chain interval {step} outside (0, horizon={H}]")
        window = x[pos:pos + L + H]
        if window.shape[0] < L + H:
            pad = np.repeat(x[-1:], L + H - window.shape[0], axis=0)
            window = np.concatenate([window, pad])
        pred = model.predict(y_buf[-L:], window, static, interval=step)
        out[pos:pos + step] = pred[:step]
        y_buf = np.concatenate([y_buf, pred[:step]])
        pos += step
    return out


@dataclass(frozen=True)
class IterativeForecast:
    lead_hours: int
    prediction: float              # mean-of-chains value at the target lead
    trajectory: np.ndarray         # mean-of-chains hourly path, [lead_hours]
    chains: tuple[tuple[int, ...], ...]
    chain_trajectories: np.ndarray  # [n_chains, lead_hours]


def randomized_iterative_predict(model: TideModel, task: ForecastTask,
                                 target_lead: int, n_chains: int = 4, *,
                                 seed: int = 0, chains=None) -> IterativeForecast:
    """Average autoregressive forecasts over interval chains.

    Chains are sampled from the model's interval set unless passed
    explicitly; each must sum to ``target_lead``.
    """
    if target_lead < 1:
        raise ValidationError("target_lead must be >= 1")
    if chains is None:
        usable = [v for v in model.config.interval_set if v <= model.horizon]
        chains = sample_chains(usable, target_lead, n_chains, seed=seed)
    chains = [tuple(int(s) for s in c) for c in chains]
    for c in chains:
        if sum(c) != target_lead:
            raise ValidationError(f"chain {c} sums to {sum(c)}, expected {target_lead}")

    trajectories = np.stack([
        iterative_predict_chain(model, task.history, task.covariates, task.static, c)
        for c in chains
    ])
    mean_traj = trajectories.mean(axis=0)
    return IterativeForecast(
        lead_hours=int(target_lead),
        prediction=float(mean_traj[-1]),
        trajectory=mean_traj,
        chains=tuple(chains),
        chain_trajectories=trajectories,
    )
