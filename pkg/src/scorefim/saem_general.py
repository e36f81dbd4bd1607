"""Stochastic approximation EM for general (non-exponential) latent models.

The functional objective Q_k(theta) = (1-gamma_k) Q_{k-1}(theta)
+ gamma_k sum_i log f(y_i, Z_i^k; theta) is represented exactly as a weighted
buffer of latent configurations: after iteration k the surviving entry l holds
weight gamma_l prod_{j=l+1..k} (1-gamma_j).  Entries below prune_epsilon are
dropped with their mass recorded.  The per-individual score relaxations
Delta_i^k = (1-gamma_k) Delta_i^{k-1} + gamma_k d/dtheta log f(y_i, Z_i^k;
theta_{k-1}) deliver the score-based FIM at the end, using the same draws that
feed the buffer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .data import Dataset
from .errors import (
    CapacityExceeded,
    ConfigError,
    DomainViolation,
    MStepFailure,
    OptimFailure,
)
from .fim import FimMatrix, score_outer_fim
from .modelbase import ExpoFamilyModel, LatentModel
from .params import ParamVector
from .rng import substream
from .saem import SaemConfig, _mh_sweep, step_size


@dataclass(frozen=True)
class WeightedSampleBuffer:
    """Closed-form unrolling of the Q_k recursion.

    ``latents[l]`` is the full latent configuration (n, d) of one retained
    simulation step; ``weights[l]`` its current mass.
    """

    latents: tuple = ()
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    prune_epsilon: float = 1e-6
    capacity: int = 500
    discarded_mass: float = 0.0  # missing mass of the exact unrolling (decays)
    dropped_cumulative: float = 0.0  # raw sum of weights at drop time

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "latents", tuple(self.latents))
        if self.prune_epsilon < 0:
            raise ConfigError("prune_epsilon must be nonnegative")
        if self.capacity < 1:
            raise ConfigError("capacity must be positive")

    def __len__(self):
        return len(self.latents)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())


def buffer_update(buffer: WeightedSampleBuffer, z_k: np.ndarray, gamma_k: float) -> WeightedSampleBuffer:
    """Scale existing weights by (1-gamma), append the new draw at gamma, prune."""
    if not 0.0 <= gamma_k <= 1.0:
        raise DomainViolation("gamma must lie in [0, 1]", component="gamma")
    weights = buffer.weights * (1.0 - gamma_k)
    latents = list(buffer.latents)
    if gamma_k > 0.0:
        latents.append(np.array(z_k, dtype=float))
        weights = np.append(weights, gamma_k)
    keep = weights >= buffer.prune_epsilon
    dropped = float(weights[~keep].sum())
    latents = tuple(l for l, k in zip(latents, keep) if k)
    weights = weights[keep]
    if len(latents) > buffer.capacity:
        raise CapacityExceeded(
            f"buffer holds {len(latents)} entries after pruning "
            f"(capacity {buffer.capacity}); raise prune_epsilon or capacity"
        )
    return WeightedSampleBuffer(
        latents=latents,
        weights=weights,
        prune_epsilon=buffer.prune_epsilon,
        capacity=buffer.capacity,
        discarded_mass=buffer.discarded_mass * (1.0 - gamma_k) + dropped,
        dropped_cumulative=buffer.dropped_cumulative + dropped,
    )


def buffer_objective(buffer: WeightedSampleBuffer, model: LatentModel, dataset: Dataset, theta: ParamVector) -> float:
    """Q(theta) = sum_l w_l sum_i log f(y_i, z_i^l; theta)."""
    return float(
        sum(
            w * model.complete_loglik(dataset, Z, theta).sum()
            for w, Z in zip(buffer.weights, buffer.latents)
        )
    )


def buffer_gradient(buffer: WeightedSampleBuffer, model: LatentModel, dataset: Dataset, theta: ParamVector) -> np.ndarray:
    return sum(
        w * model.complete_score(dataset, Z, theta).sum(axis=0)
        for w, Z in zip(buffer.weights, buffer.latents)
    )


def maximize_q(
    buffer: WeightedSampleBuffer,
    model: LatentModel,
    dataset: Dataset,
    theta_init: ParamVector,
    grad_tol: float = 1e-6,
    check_gradient: bool = False,
) -> ParamVector:
    """argmax_theta Q(theta), warm-started at theta_init.

    Exponential-family models collapse to theta-hat of the weighted
    statistics; models exposing ``maximize_weighted`` use their own nested
    closed-form / 1-D machinery; anything else goes through L-BFGS-B with the
    analytic gradient on positive-orthant bounds.
    """
    if len(buffer) == 0 or buffer.total_weight <= 0:
        raise MStepFailure("empty or massless sample buffer")

    if isinstance(model, ExpoFamilyModel):
        wn = buffer.weights / buffer.total_weight
        stats = sum(
            w * model.statistics(dataset, Z) for w, Z in zip(wn, buffer.latents)
        )
        theta = model.argmax_complete(dataset, stats)
    elif hasattr(model, "maximize_weighted"):
        theta = model.maximize_weighted(dataset, buffer.latents, buffer.weights, theta_init)
    else:
        theta = _maximize_q_numeric(buffer, model, dataset, theta_init, grad_tol)
    model.validate_params(theta)

    if check_gradient:
        q = buffer_objective(buffer, model, dataset, theta)
        g = buffer_gradient(buffer, model, dataset, theta)
        norm = float(np.linalg.norm(g))
        if norm >= grad_tol * (1.0 + abs(q)):
            raise OptimFailure(
                f"M-step gradient norm {norm:.3e} above tolerance", grad_norm=norm
            )
    return theta


def _maximize_q_numeric(buffer, model, dataset, theta_init, grad_tol):
    """Bounded quasi-Newton fallback on the raw parameter vector."""

    def negq(x):
        try:
            th = theta_init.replace_values(x)
            model.validate_params(th)
        except DomainViolation:
            return np.inf, np.zeros_like(x)
        q = buffer_objective(buffer, model, dataset, th)
        g = buffer_gradient(buffer, model, dataset, th)
        return -q, -g

    bounds = [(1e-10, None)] * theta_init.p
    res = minimize(
        negq, theta_init.values, jac=True, method="L-BFGS-B", bounds=bounds,
        options={"maxiter": 500, "ftol": 1e-14, "gtol": 1e-10},
    )
    theta = theta_init.replace_values(res.x)
    g = buffer_gradient(buffer, model, dataset, theta)
    q = buffer_objective(buffer, model, dataset, theta)
    if float(np.linalg.norm(g)) >= grad_tol * (1.0 + abs(q)):
        raise OptimFailure(
            f"line search collapsed; gradient norm {np.linalg.norm(g):.3e}",
            grad_norm=float(np.linalg.norm(g)),
        )
    return theta


def delta_update(delta_i: np.ndarray, score_i: np.ndarray, gamma_k: float) -> np.ndarray:
    """(1-gamma) Delta + gamma * score."""
    if not 0.0 <= gamma_k <= 1.0:
        raise DomainViolation("gamma must lie in [0, 1]", component="gamma")
    delta_i = np.asarray(delta_i, dtype=float)
    score_i = np.asarray(score_i, dtype=float)
    if delta_i.shape != score_i.shape:
        raise DomainViolation("delta/score dimensions differ")
    return (1.0 - gamma_k) * delta_i + gamma_k * score_i


@dataclass(frozen=True)
class GeneralSaemResult:
    theta: ParamVector
    fim: FimMatrix
    trajectories: dict
    buffer: WeightedSampleBuffer
    deltas: np.ndarray
    diagnostics: dict


def run_general_saem(
    model: LatentModel,
    dataset: Dataset,
    config: SaemConfig,
    theta0: ParamVector | None = None,
    prune_epsilon: float = 1e-6,
    capacity: int = 500,
) -> GeneralSaemResult:
    """General-algorithm driver: simulate, relax Q-buffer and Deltas, maximize.

    The same draws feed both the buffer and the Delta recursions; scores enter
    at theta_{k-1}, the value used for the simulation step.
    """
    rng = substream(config.seed, 0)
    theta = theta0 if theta0 is not None else model.initial_theta(dataset)
    model._check_dim(theta)
    model.validate_params(theta)

    n, p = dataset.n, model.p
    Z = model.initial_latents(dataset, theta, rng)
    deltas = np.zeros((n, p))
    buffer = WeightedSampleBuffer(prune_epsilon=prune_epsilon, capacity=capacity)

    scales = (
        np.array(config.proposal_scales, dtype=float)
        if config.proposal_scales is not None
        else model.default_proposal_scales(theta)
    )
    mult = 1.0
    use_exact = model.has_exact_conditional

    K, Kb = config.total_iterations, config.schedule.burn_in
    traj_iter, traj_gamma, traj_theta, traj_fim, traj_pruned = [], [], [], [], []
    acc_rates = []

    for k in range(1, K + 1):
        gamma = step_size(k, config.schedule)
        if use_exact:
            Z = model.sample_conditional(dataset, theta, rng)
        else:
            # theta moved since the last sweep: refresh the cached target values
            logf = model.complete_loglik(dataset, Z, theta)
            Z, logf, acc = _mh_sweep(
                model, dataset, Z, logf, theta, mult * scales, rng,
                config.mh_transitions_per_iter,
            )
            acc_rates.append(acc)
            if config.adapt_proposals and k <= Kb:
                mult = float(np.clip(mult * np.exp(0.1 * (acc - 0.4)), 1e-3, 1e3))

        scores = model.complete_score(dataset, Z, theta)
        deltas = delta_update(deltas, scores, gamma)
        buffer = buffer_update(buffer, Z, gamma)
        theta = maximize_q(buffer, model, dataset, theta)

        if k % config.thin == 0 or k == K:
            traj_iter.append(k)
            traj_gamma.append(gamma)
            traj_theta.append(theta.values.copy())
            traj_fim.append((deltas**2).mean(axis=0))
            traj_pruned.append(buffer.discarded_mass)

    fim = FimMatrix(
        score_outer_fim(deltas, provenance="sa-byproduct").entries,
        "sa-byproduct", n, model.param_names,
    )
    theta_traj = np.array(traj_theta)
    tail = max(1, len(theta_traj) // 10)
    diagnostics = {
        "theta_sd_last10pct": theta_traj[-tail:].std(axis=0),
        "acceptance_rate": float(np.mean(acc_rates)) if acc_rates else None,
        "proposal_multiplier": mult,
        "buffer_length": len(buffer),
        "pruned_mass": buffer.discarded_mass,
    }
    trajectories = {
        "iteration": np.array(traj_iter),
        "gamma": np.array(traj_gamma),
        "theta": theta_traj,
        "fim_diag": np.array(traj_fim),
        "pruned_mass": np.array(traj_pruned),
    }
    return GeneralSaemResult(
        theta=theta, fim=fim, trajectories=trajectories,
        buffer=buffer, deltas=deltas, diagnostics=diagnostics,
    )
