"""Stochastic approximation EM for curved-exponential latent models.

Each iteration simulates latent values from the current conditional (exactly,
or by continuing per-individual Metropolis-Hastings chains), relaxes the
per-individual statistics s_i^k = (1-gamma_k) s_i^{k-1} + gamma_k S_i(Z_i^k),
and re-maximizes theta_k = theta-hat(s^k).  At the final iteration the
score-based FIM estimate comes for free from the per-individual quantities
Delta_i = -dpsi_i(theta) + <s_i, dphi_i(theta)>.

A Louis-style comparator for the observed FIM runs on the same draws when
requested: it relaxes G_i (complete Hessian plus score outer product) and
D_i (complete score) and reports -(1/n) sum_i [G_i - D_i D_i^t].
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, IndividualRecord
from .errors import ConfigError, DomainViolation, MStepFailure
from .fim import FimMatrix, _symmetrize_exact, score_outer_fim
from .modelbase import ExpoFamilyModel, LatentModel
from .params import ParamVector
from .rng import substream


@dataclass(frozen=True)
class StepSchedule:
    """Burn-in at a constant step, then gamma_k = (k - burn_in)^(-exponent).

    exponent in (1/2, 1] keeps sum(gamma) divergent with sum(gamma^2) finite.
    """

    burn_in: int = 1000
    burn_value: float = 0.95
    exponent: float = 0.6

    def __post_init__(self):
        if self.burn_in < 0:
            raise ConfigError("burn_in must be nonnegative")
        if not 0.0 < self.burn_value <= 1.0:
            raise ConfigError("burn_value must lie in (0, 1]")
        if not 0.5 < self.exponent <= 1.0:
            raise ConfigError("exponent must lie in (1/2, 1]")


def step_size(k: int, schedule: StepSchedule) -> float:
    """gamma_k for 1-based iteration k."""
    if k < 1:
        raise ConfigError("iterations are 1-based")
    if k <= schedule.burn_in:
        return schedule.burn_value
    return float(k - schedule.burn_in) ** (-schedule.exponent)


@dataclass(frozen=True)
class SaemConfig:
    schedule: StepSchedule = StepSchedule()
    total_iterations: int = 3000
    mh_transitions_per_iter: int = 5
    proposal_scales: np.ndarray | None = None
    seed: int = 0
    averaging: str = "off"  # off | on_after_burn_in
    exact_estep: bool = False
    track_louis: bool = False
    thin: int = 1
    adapt_proposals: bool = True

    def __post_init__(self):
        if self.total_iterations <= self.schedule.burn_in:
            raise ConfigError("total_iterations must exceed the burn-in")
        if self.mh_transitions_per_iter < 1:
            raise ConfigError("mh_transitions_per_iter must be >= 1")
        if self.averaging not in ("off", "on_after_burn_in"):
            raise ConfigError(f"unknown averaging mode {self.averaging!r}")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.proposal_scales is not None:
            scales = np.asarray(self.proposal_scales, dtype=float)
            if np.any(scales < 0):
                raise ConfigError("proposal scales must be nonnegative")
            object.__setattr__(self, "proposal_scales", scales)


@dataclass
class SaemState:
    """Mutable per-iteration state of a run."""

    k: int
    theta: ParamVector
    stats: np.ndarray  # (n, m)
    latents: np.ndarray | None  # (n, d)
    stat_average: np.ndarray | None = None
    avg_count: int = 0
    stat_history_min: np.ndarray | None = None
    stat_history_max: np.ndarray | None = None


@dataclass(frozen=True)
class SaemResult:
    theta: ParamVector
    fim: FimMatrix
    theta_averaged: ParamVector | None
    fim_averaged: FimMatrix | None
    louis: FimMatrix | None
    trajectories: dict
    state: SaemState
    diagnostics: dict


def individual_delta(model: ExpoFamilyModel, dataset: Dataset, stats: np.ndarray, theta: ParamVector) -> np.ndarray:
    """Delta_i = -dpsi_i(theta) + <s_i, dphi_i(theta)>, shape (n, p)."""
    return -model.dpsi(dataset, theta) + np.einsum(
        "im,imp->ip", stats, model.dphi(dataset, theta)
    )


def mh_transition(
    model: LatentModel,
    record: IndividualRecord,
    z: np.ndarray,
    theta: ParamVector,
    proposal_scale,
    rng: np.random.Generator,
) -> np.ndarray:
    """One random-walk Metropolis step on p(z | y; theta) for a single record.

    Gaussian proposal centered at z; a non-finite proposal log-likelihood
    auto-rejects; the current z is returned on rejection.
    """
    ds = Dataset((record,))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    cur = model.complete_loglik(ds, z, theta)
    prop = z + rng.standard_normal(z.shape) * np.asarray(proposal_scale, dtype=float)
    new = model.complete_loglik(ds, prop, theta)
    new = np.where(np.isfinite(new), new, -np.inf)
    if np.log(rng.random()) < float(new[0] - cur[0]):
        return prop[0]
    return z[0]


def _mh_sweep(model, dataset, Z, logf, theta, scales, rng, n_steps):
    """n_steps vectorized random-walk updates across all individuals."""
    accepted = 0
    n = dataset.n
    for _ in range(n_steps):
        prop = Z + rng.standard_normal(Z.shape) * scales
        logf_prop = model.complete_loglik(dataset, prop, theta)
        logf_prop = np.where(np.isfinite(logf_prop), logf_prop, -np.inf)
        take = np.log(rng.random(n)) < logf_prop - logf
        Z[take] = prop[take]
        logf[take] = logf_prop[take]
        accepted += int(take.sum())
    return Z, logf, accepted / (n_steps * n)


def run_saem(
    model: ExpoFamilyModel,
    dataset: Dataset,
    config: SaemConfig,
    theta0: ParamVector | None = None,
) -> SaemResult:
    """Run K SAEM iterations; fully seed-deterministic.

    Non-convergence is not an error: the standard deviation of the last 10%
    of each theta trajectory is reported in the diagnostics instead.
    """
    if not isinstance(model, ExpoFamilyModel):
        raise ConfigError("run_saem needs a curved-exponential model")
    if config.exact_estep and not model.has_exact_estep:
        raise ConfigError(f"{model.name} has no analytic conditional expectations")
    if config.track_louis and not model.has_complete_hessian:
        raise ConfigError(f"{model.name} exposes no complete Hessian for the Louis comparator")
    if config.track_louis and config.exact_estep:
        raise ConfigError("the Louis comparator needs simulated draws, not exact E-steps")

    rng = substream(config.seed, 0)
    theta = theta0 if theta0 is not None else model.initial_theta(dataset)
    model._check_dim(theta)
    model.validate_params(theta)

    n, p = dataset.n, model.p
    Z = model.initial_latents(dataset, theta, rng)
    stats = model.statistics(dataset, Z)
    state = SaemState(
        k=0,
        theta=theta,
        stats=stats,
        latents=Z,
        stat_history_min=stats.copy(),
        stat_history_max=stats.copy(),
    )

    scales = (
        np.array(config.proposal_scales, dtype=float)
        if config.proposal_scales is not None
        else model.default_proposal_scales(theta)
    )
    mult = 1.0
    use_exact_sampler = model.has_exact_conditional and not config.exact_estep

    track_louis = config.track_louis
    G = np.zeros((n, p, p)) if track_louis else None
    D = np.zeros((n, p)) if track_louis else None

    K, Kb = config.total_iterations, config.schedule.burn_in
    averaging = config.averaging == "on_after_burn_in"
    traj_iter, traj_gamma, traj_theta, traj_fim = [], [], [], []
    traj_louis = [] if track_louis else None
    traj_fim_avg = [] if averaging else None
    acc_rates = []
    clamp_hits = 0

    for k in range(1, K + 1):
        gamma = step_size(k, config.schedule)
        if config.exact_estep:
            new_stats = model.conditional_stat_expectation(dataset, state.theta)
        elif use_exact_sampler:
            Z = model.sample_conditional(dataset, state.theta, rng)
            new_stats = model.statistics(dataset, Z)
        else:
            # theta moved since the last sweep: refresh the cached target values
            logf = model.complete_loglik(dataset, Z, state.theta)
            Z, logf, acc = _mh_sweep(
                model, dataset, Z, logf, state.theta,
                mult * scales, rng, config.mh_transitions_per_iter,
            )
            acc_rates.append(acc)
            if config.adapt_proposals and k <= Kb:
                # frozen after burn-in: adapting during the decreasing-step
                # phase would break the stochastic-approximation contract
                mult = float(np.clip(mult * np.exp(0.1 * (acc - 0.4)), 1e-3, 1e3))
            new_stats = model.statistics(dataset, Z)

        state.stats = (1.0 - gamma) * state.stats + gamma * new_stats
        state.stat_history_min = np.minimum(state.stat_history_min, new_stats)
        state.stat_history_max = np.maximum(state.stat_history_max, new_stats)

        if track_louis and not config.exact_estep:
            sc = model.complete_score(dataset, Z, state.theta)
            he = model.complete_hessian(dataset, Z, state.theta)
            G = (1.0 - gamma) * G + gamma * (he + np.einsum("ij,ik->ijk", sc, sc))
            D = (1.0 - gamma) * D + gamma * sc

        try:
            theta_new = model.argmax_complete(dataset, state.stats)
            model.validate_params(theta_new)
        except DomainViolation as exc:
            raise MStepFailure(
                f"M-step infeasible at iteration {k}: {exc}", stats=state.stats
            ) from exc
        if np.any(theta_new.values <= 1e-10):
            clamp_hits += 1
        state.theta = theta_new
        state.k = k

        if averaging and k > Kb:
            state.avg_count += 1
            if state.stat_average is None:
                state.stat_average = state.stats.copy()
            else:
                state.stat_average += (state.stats - state.stat_average) / state.avg_count
        state.latents = None if config.exact_estep else Z

        if k % config.thin == 0 or k == K:
            traj_iter.append(k)
            traj_gamma.append(gamma)
            traj_theta.append(state.theta.values.copy())
            delta = individual_delta(model, dataset, state.stats, state.theta)
            traj_fim.append((delta**2).mean(axis=0))
            if track_louis:
                louis_diag = -(
                    np.einsum("ill->il", G) - D**2  # type: ignore[index]
                ).mean(axis=0)
                traj_louis.append(louis_diag)
            if averaging and state.stat_average is not None:
                th_avg = model.argmax_complete(dataset, state.stat_average)
                d_avg = individual_delta(model, dataset, state.stat_average, th_avg)
                traj_fim_avg.append((d_avg**2).mean(axis=0))

    delta_final = individual_delta(model, dataset, state.stats, state.theta)
    fim = score_outer_fim(delta_final, names=model.param_names, provenance="sa-byproduct")
    fim = FimMatrix(fim.entries, "sa-byproduct", n, model.param_names)

    theta_avg = fim_avg = None
    if averaging and state.stat_average is not None:
        theta_avg = model.argmax_complete(dataset, state.stat_average)
        d_avg = individual_delta(model, dataset, state.stat_average, theta_avg)
        fim_avg = FimMatrix(
            score_outer_fim(d_avg, provenance="sa-byproduct").entries,
            "sa-byproduct", n, model.param_names,
        )

    louis = None
    if track_louis:
        entries = -(G - np.einsum("ij,ik->ijk", D, D)).mean(axis=0)
        louis = FimMatrix(_symmetrize_exact(entries), "louis-sa", n, model.param_names)

    theta_traj = np.array(traj_theta)
    tail = max(1, len(theta_traj) // 10)
    diagnostics = {
        "theta_sd_last10pct": theta_traj[-tail:].std(axis=0),
        "acceptance_rate": float(np.mean(acc_rates)) if acc_rates else None,
        "proposal_multiplier": mult,
        "clamp_hits": clamp_hits,
    }
    trajectories = {
        "iteration": np.array(traj_iter),
        "gamma": np.array(traj_gamma),
        "theta": theta_traj,
        "fim_diag": np.array(traj_fim),
    }
    if track_louis:
        trajectories["louis_diag"] = np.array(traj_louis)
    if averaging:
        trajectories["fim_diag_averaged"] = np.array(traj_fim_avg)

    return SaemResult(
        theta=state.theta,
        fim=fim,
        theta_averaged=theta_avg,
        fim_averaged=fim_avg,
        louis=louis,
        trajectories=trajectories,
        state=state,
        diagnostics=diagnostics,
    )


def saem_iteration(
    state: SaemState,
    model: ExpoFamilyModel,
    dataset: Dataset,
    config: SaemConfig,
    rng: np.random.Generator,
) -> SaemState:
    """One simulation / stochastic-approximation / maximisation cycle.

    Exposed for stepwise inspection; run_saem is the batch driver.
    """
    k = state.k + 1
    gamma = step_size(k, config.schedule)
    if config.exact_estep:
        new_stats = model.conditional_stat_expectation(dataset, state.theta)
        Z = state.latents
    elif model.has_exact_conditional:
        Z = model.sample_conditional(dataset, state.theta, rng)
        new_stats = model.statistics(dataset, Z)
    else:
        scales = (
            np.asarray(config.proposal_scales, dtype=float)
            if config.proposal_scales is not None
            else model.default_proposal_scales(state.theta)
        )
        Z = state.latents.copy()
        logf = model.complete_loglik(dataset, Z, state.theta)
        Z, _, _ = _mh_sweep(
            model, dataset, Z, logf, state.theta, scales, rng,
            config.mh_transitions_per_iter,
        )
        new_stats = model.statistics(dataset, Z)
    stats = (1.0 - gamma) * state.stats + gamma * new_stats
    try:
        theta = model.argmax_complete(dataset, stats)
        model.validate_params(theta)
    except DomainViolation as exc:
        raise MStepFailure(f"M-step infeasible at iteration {k}: {exc}", stats=stats) from exc
    hist_min = np.minimum(state.stat_history_min, new_stats) if state.stat_history_min is not None else None
    hist_max = np.maximum(state.stat_history_max, new_stats) if state.stat_history_max is not None else None
    return SaemState(
        k=k, theta=theta, stats=stats, latents=Z,
        stat_average=state.stat_average, avg_count=state.avg_count,
        stat_history_min=hist_min, stat_history_max=hist_max,
    )


def louis_observed_fim_sa(
    model: ExpoFamilyModel,
    dataset: Dataset,
    config: SaemConfig,
    theta0: ParamVector | None = None,
) -> FimMatrix:
    """Observed-FIM comparator by stochastic approximation on the same draws."""
    result = run_saem(model, dataset, replace(config, track_louis=True), theta0=theta0)
    return result.louis
