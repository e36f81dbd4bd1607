"""The conditional-moment Monte-Carlo oracle against LMM closed forms."""

import numpy as np
import pytest

from scorefim import Design, conditional_score_fim, simulate_dataset
from scorefim.condoracle import conditional_moments, reference_fims


def test_oracle_matches_lmm_closed_forms(lmm, lmm_theta):
    ds = simulate_dataset(lmm, lmm_theta, Design(n=15, n_obs=12), seed=301)
    mom = conditional_moments(lmm, ds, lmm_theta, n_draws=60_000, seed=4)
    exact_score = lmm.conditional_expected_score(ds, lmm_theta)
    assert np.max(np.abs(mom.escore - exact_score)) < 0.02
    assert mom.ess.min() > 5000

    i_sco, i_obs = reference_fims(mom, lmm.param_names, ds.n)
    exact_sco = conditional_score_fim(lmm, ds, lmm_theta).entries
    np.testing.assert_allclose(i_sco.entries, exact_sco, atol=0.01)
    exact_obs = -(lmm.marginal_hessian(ds, lmm_theta)).mean(axis=0)
    np.testing.assert_allclose(i_obs.entries, exact_obs, atol=0.01)


def test_oracle_seed_deterministic(lmm, lmm_theta):
    ds = simulate_dataset(lmm, lmm_theta, Design(n=5, n_obs=12), seed=302)
    a = conditional_moments(lmm, ds, lmm_theta, n_draws=5_000, seed=9)
    b = conditional_moments(lmm, ds, lmm_theta, n_draws=5_000, seed=9)
    np.testing.assert_array_equal(a.escore, b.escore)
    np.testing.assert_array_equal(a.ehessian, b.ehessian)
