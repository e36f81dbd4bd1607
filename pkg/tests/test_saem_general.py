"""General (non-exponential) stochastic algorithm: buffer bookkeeping, the
weighted M-step against grid/closed-form oracles, and the Delta recursions."""

import numpy as np
import pytest

from scorefim import Design, simulate_dataset
from scorefim.errors import CapacityExceeded, DomainViolation, MStepFailure
from scorefim.rng import substream
from scorefim.saem import SaemConfig, StepSchedule, individual_delta, run_saem
from scorefim.saem_general import (
    WeightedSampleBuffer,
    buffer_gradient,
    buffer_objective,
    buffer_update,
    delta_update,
    maximize_q,
    run_general_saem,
)


def _z(val, n=3, d=1):
    return np.full((n, d), float(val))


def test_buffer_unrolling_example():
    buf = WeightedSampleBuffer(prune_epsilon=0.0)
    for g, v in [(1.0, 1), (0.5, 2), (0.5, 3)]:
        buf = buffer_update(buf, _z(v), g)
    np.testing.assert_allclose(buf.weights, [0.25, 0.25, 0.5])
    assert [l[0, 0] for l in buf.latents] == [1.0, 2.0, 3.0]


def test_buffer_gamma_one_keeps_newest():
    buf = WeightedSampleBuffer(prune_epsilon=1e-12)
    buf = buffer_update(buf, _z(1), 0.7)
    buf = buffer_update(buf, _z(2), 1.0)
    assert len(buf) == 1
    assert buf.latents[0][0, 0] == 2.0
    np.testing.assert_allclose(buf.weights, [1.0])


def test_buffer_gamma_zero_no_entry():
    buf = WeightedSampleBuffer()
    buf = buffer_update(buf, _z(1), 0.6)
    buf = buffer_update(buf, _z(2), 0.0)
    assert len(buf) == 1
    np.testing.assert_allclose(buf.weights, [0.6])


def test_buffer_weight_law_and_mass_accounting():
    rng = substream(81, 0)
    gammas = [1.0] + list(rng.uniform(0.05, 0.9, 40))
    buf = WeightedSampleBuffer(prune_epsilon=1e-4)
    for k, g in enumerate(gammas):
        buf = buffer_update(buf, _z(k), g)
    # surviving weight law: w_l = gamma_l prod_{j>l} (1 - gamma_j)
    for latent, w in zip(buf.latents, buf.weights):
        l = int(latent[0, 0])
        expect = gammas[l] * np.prod([1.0 - g for g in gammas[l + 1 :]])
        assert w == pytest.approx(expect, rel=1e-12)
    # with gamma_1 = 1 the retained mass plus discarded mass is exactly 1
    assert buf.total_weight + buf.discarded_mass == pytest.approx(1.0, abs=1e-12)


def test_buffer_capacity_error():
    buf = WeightedSampleBuffer(prune_epsilon=0.0, capacity=3)
    with pytest.raises(CapacityExceeded):
        for k in range(5):
            buf = buffer_update(buf, _z(k), 0.3)


def test_buffer_rejects_bad_gamma():
    with pytest.raises(DomainViolation):
        buffer_update(WeightedSampleBuffer(), _z(0), 1.5)


def test_delta_update_trivials():
    d = np.array([[1.0, 2.0]])
    s = np.array([[5.0, -2.0]])
    np.testing.assert_array_equal(delta_update(d, s, 1.0), s)
    np.testing.assert_array_equal(delta_update(d, s, 0.0), d)
    np.testing.assert_allclose(delta_update(d, s, 0.25), 0.75 * d + 0.25 * s)


def test_delta_recursion_matches_expo_delta_under_frozen_theta(lmm, lmm_data, lmm_theta):
    # on shared draws with theta held fixed, the general Delta recursion equals
    # Delta-hat evaluated at the identically-relaxed statistics (linearity)
    rng = substream(82, 0)
    gammas = [1.0] + list(rng.uniform(0.1, 0.9, 25))
    stats = None
    deltas = np.zeros((lmm_data.n, 3))
    for g in gammas:
        Z = lmm.sample_conditional(lmm_data, lmm_theta, rng)
        s_new = lmm.statistics(lmm_data, Z)
        stats = s_new if stats is None else (1 - g) * stats + g * s_new
        score = lmm.complete_score(lmm_data, Z, lmm_theta)
        deltas = delta_update(deltas, score, g)
    np.testing.assert_allclose(
        deltas, individual_delta(lmm, lmm_data, stats, lmm_theta), rtol=1e-12, atol=1e-12
    )


def test_maximize_q_quadratic_closed_form(lmm, lmm_data, lmm_theta):
    # expo-family model: weighted argmax equals theta-hat of weighted stats
    rng = substream(83, 0)
    buf = WeightedSampleBuffer(prune_epsilon=0.0)
    for g in (1.0, 0.6, 0.3):
        buf = buffer_update(buf, lmm.sample_conditional(lmm_data, lmm_theta, rng), g)
    theta = maximize_q(buf, lmm, lmm_data, lmm_theta, check_gradient=True)
    wn = buf.weights / buf.total_weight
    stats = sum(w * lmm.statistics(lmm_data, Z) for w, Z in zip(wn, buf.latents))
    expect = lmm.argmax_complete(lmm_data, stats)
    np.testing.assert_allclose(theta.values, expect.values, rtol=1e-12)


def test_maximize_q_single_entry_is_complete_mle(lmm, lmm_data, lmm_theta):
    rng = substream(84, 0)
    Z = lmm.sample_conditional(lmm_data, lmm_theta, rng)
    buf = buffer_update(WeightedSampleBuffer(), Z, 1.0)
    theta = maximize_q(buf, lmm, lmm_data, lmm_theta)
    expect = lmm.argmax_complete(lmm_data, lmm.statistics(lmm_data, Z))
    np.testing.assert_allclose(theta.values, expect.values, rtol=1e-12)


def test_maximize_q_empty_buffer(lmm, lmm_data, lmm_theta):
    with pytest.raises(MStepFailure):
        maximize_q(WeightedSampleBuffer(), lmm, lmm_data, lmm_theta)


def test_fixed_v_mstep_matches_grid_oracle(pk_fixed_v, pk_fixed_v_data, pk_fixed_v_theta):
    rng = substream(85, 0)
    buf = WeightedSampleBuffer(prune_epsilon=0.0)
    for g in (1.0, 0.5, 0.4, 0.3):
        Z = pk_fixed_v.initial_latents(pk_fixed_v_data, pk_fixed_v_theta, rng)
        buf = buffer_update(buf, Z, g)
    theta = maximize_q(buf, pk_fixed_v, pk_fixed_v_data, pk_fixed_v_theta, check_gradient=True)

    # 2001-point grid over [V/4, 4V] on the full weighted objective
    V0 = pk_fixed_v_theta.values[1]
    grid = np.linspace(V0 / 4.0, 4.0 * V0, 2001)
    best, best_q = None, -np.inf
    vals = theta.values.copy()
    for V in grid:
        vals[1] = V
        # profile sigma2 in closed form at each grid V
        rss = 0.0
        Jtot = pk_fixed_v_data.n_obs().sum()
        wn = buf.weights / buf.total_weight
        from scorefim.models.pk import _rss_per_individual
        rss = sum(
            w * _rss_per_individual(pk_fixed_v_data, Z, V_fixed=V).sum()
            for w, Z in zip(wn, buf.latents)
        )
        vals[5] = max(rss / Jtot, 1e-10)
        q = buffer_objective(buf, pk_fixed_v, pk_fixed_v_data, pk_fixed_v.make_params(vals))
        if q > best_q:
            best_q, best = q, V
    resolution = grid[1] - grid[0]
    assert abs(theta.values[1] - best) <= resolution


def test_mstep_gradient_postcondition(pk_fixed_v, pk_fixed_v_data, pk_fixed_v_theta):
    rng = substream(86, 0)
    buf = WeightedSampleBuffer(prune_epsilon=0.0)
    for g in (1.0, 0.5):
        Z = pk_fixed_v.initial_latents(pk_fixed_v_data, pk_fixed_v_theta, rng)
        buf = buffer_update(buf, Z, g)
    theta = maximize_q(buf, pk_fixed_v, pk_fixed_v_data, pk_fixed_v_theta)
    g = buffer_gradient(buf, pk_fixed_v, pk_fixed_v_data, theta)
    q = buffer_objective(buf, pk_fixed_v, pk_fixed_v_data, theta)
    assert np.linalg.norm(g) < 1e-6 * (1.0 + abs(q))


def test_mstep_never_decreases_current_objective(pk_fixed_v, pk_fixed_v_theta):
    ds = simulate_dataset(
        pk_fixed_v, pk_fixed_v_theta,
        Design(n=20, times=np.array([0.5, 1, 2, 5, 9, 24.0]), dose=320.0), seed=87,
    )
    cfg = SaemConfig(schedule=StepSchedule(20, 0.95, 0.6), total_iterations=60, seed=3)
    rng = substream(88, 0)
    theta = pk_fixed_v.initial_theta(ds)
    Z = pk_fixed_v.initial_latents(ds, theta, rng)
    buf = WeightedSampleBuffer()
    from scorefim.saem import _mh_sweep, step_size

    logf = pk_fixed_v.complete_loglik(ds, Z, theta)
    for k in range(1, 40):
        gamma = step_size(k, cfg.schedule)
        logf = pk_fixed_v.complete_loglik(ds, Z, theta)
        Z, logf, _ = _mh_sweep(pk_fixed_v, ds, Z, logf, theta, 0.3 * np.ones(2), rng, 3)
        buf = buffer_update(buf, Z, gamma)
        q_old = buffer_objective(buf, pk_fixed_v, ds, theta)
        theta = maximize_q(buf, pk_fixed_v, ds, theta)
        q_new = buffer_objective(buf, pk_fixed_v, ds, theta)
        assert q_new >= q_old - 1e-8


def test_general_run_point_mass_is_deterministic_em(lmm):
    tiny = lmm.make_params([3.0, 1e-14, 5.0])
    ds = simulate_dataset(lmm, tiny, Design(n=20, n_obs=12), seed=89)
    cfg1 = SaemConfig(schedule=StepSchedule(3, 1.0, 1.0), total_iterations=5, seed=1)
    cfg2 = SaemConfig(schedule=StepSchedule(3, 1.0, 1.0), total_iterations=5, seed=2)
    r1 = run_general_saem(lmm, ds, cfg1, theta0=tiny)
    r2 = run_general_saem(lmm, ds, cfg2, theta0=tiny)
    np.testing.assert_allclose(
        r1.trajectories["theta"], r2.trajectories["theta"], rtol=1e-6, atol=1e-12
    )
    assert r1.fim.is_psd()


def test_general_seed_determinism(pk_fixed_v, pk_fixed_v_data):
    cfg = SaemConfig(schedule=StepSchedule(15, 0.95, 0.6), total_iterations=45, seed=5)
    theta0 = pk_fixed_v.initial_theta(pk_fixed_v_data)
    a = run_general_saem(pk_fixed_v, pk_fixed_v_data, cfg, theta0=theta0)
    b = run_general_saem(pk_fixed_v, pk_fixed_v_data, cfg, theta0=theta0)
    np.testing.assert_array_equal(a.trajectories["theta"], b.trajectories["theta"])
    np.testing.assert_array_equal(a.fim.entries, b.fim.entries)


def test_general_fim_psd_and_trajectories(pk_fixed_v, pk_fixed_v_data):
    cfg = SaemConfig(schedule=StepSchedule(25, 0.95, 0.6), total_iterations=80, seed=6)
    res = run_general_saem(
        pk_fixed_v, pk_fixed_v_data, cfg, theta0=pk_fixed_v.initial_theta(pk_fixed_v_data)
    )
    assert res.fim.provenance == "sa-byproduct"
    assert res.fim.is_psd()
    assert "pruned_mass" in res.trajectories
    assert res.trajectories["pruned_mass"][-1] >= 0.0


def test_cross_algorithm_consistency(pk, pk_theta):
    # run the exponential PK model through BOTH engines; estimates must agree
    # within their own convergence bands
    times = np.array([0.25, 0.5, 1, 2, 3.5, 5, 7, 9, 12, 24.0])
    ds = simulate_dataset(pk, pk_theta, Design(n=40, times=times, dose=320.0), seed=90)
    theta0 = pk.initial_theta(ds)
    sched = StepSchedule(300, 0.95, 0.6)
    res_core = run_saem(
        pk, ds, SaemConfig(schedule=sched, total_iterations=900, seed=7), theta0=theta0
    )
    res_gen = run_general_saem(
        pk, ds, SaemConfig(schedule=sched, total_iterations=900, seed=8), theta0=theta0
    )
    rel_theta = np.abs(res_core.theta.values - res_gen.theta.values) / np.abs(res_core.theta.values)
    assert np.max(rel_theta) < 0.1
    d_core = np.diag(res_core.fim.entries)
    d_gen = np.diag(res_gen.fim.entries)
    assert np.max(np.abs(d_core - d_gen) / d_core) < 0.3
