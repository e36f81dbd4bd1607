"""Monte-Carlo conditional-expectation oracle for reference FIM values.

For a fixed dataset and reference theta, estimates per individual the
conditional moments of the complete score and Hessian given y_i via
self-normalized importance sampling from a multivariate-t proposal centered
at the conditional mode (Laplace fit).  These feed the reference matrices the
stochastic-approximation trajectories are judged against:

    I_sco_ref = (1/n) sum_i E[s_i|y_i] E[s_i|y_i]^t
    I_obs_ref = -(1/n) sum_i (E[H_i|y_i] + Cov[s_i|y_i])
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln

from .data import Dataset
from .errors import NumericalError
from .fim import FimMatrix, _symmetrize_exact
from .modelbase import LatentModel
from .params import ParamVector
from .rng import substream


@dataclass(frozen=True)
class ConditionalMoments:
    escore: np.ndarray  # (n, p)   E[score | y]
    escore_outer: np.ndarray  # (n, p, p) E[score score^t | y]
    ehessian: np.ndarray | None  # (n, p, p) E[H | y]
    ess: np.ndarray  # (n,) importance-sampling effective sample sizes


def _laplace_fit(model, dataset, i, theta, z0):
    """Conditional mode and curvature for one individual."""
    ds1 = dataset.subset([i])

    def neg(z):
        return -float(model.complete_loglik(ds1, z[None, :], theta)[0])

    res = minimize(neg, z0, method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 2000})
    mode = res.x
    d = mode.size
    h = 1e-4 * np.maximum(1.0, np.abs(mode))
    H = np.zeros((d, d))
    f0 = neg(mode)
    for a in range(d):
        for b in range(a, d):
            ea = np.eye(d)[a] * h[a]
            eb = np.eye(d)[b] * h[b]
            if a == b:
                H[a, a] = (neg(mode + ea) - 2.0 * f0 + neg(mode - ea)) / h[a] ** 2
            else:
                H[a, b] = H[b, a] = (
                    neg(mode + ea + eb) - neg(mode + ea - eb)
                    - neg(mode - ea + eb) + neg(mode - ea - eb)
                ) / (4.0 * h[a] * h[b])
    w, v = np.linalg.eigh(H)
    w = np.maximum(w, 1e-4)
    cov = (v / w) @ v.T
    return mode, cov


def _mvt_draws(mode, cov, df, size, rng):
    d = mode.size
    L = np.linalg.cholesky(cov * 1.5)  # inflate for tail cover
    g = rng.standard_normal((size, d))
    chi = rng.chisquare(df, size=size)
    draws = mode + (g @ L.T) / np.sqrt(chi / df)[:, None]
    dev = draws - mode
    sol = np.linalg.solve(L, dev.T).T
    maha = (sol**2).sum(axis=1)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    logq = (
        gammaln((df + d) / 2.0) - gammaln(df / 2.0) - 0.5 * d * np.log(df * np.pi)
        - 0.5 * logdet - 0.5 * (df + d) * np.log1p(maha / df)
    )
    return draws, logq


def conditional_moments(
    model: LatentModel,
    dataset: Dataset,
    theta: ParamVector,
    n_draws: int = 100_000,
    seed: int = 0,
    df: float = 5.0,
    min_ess: float = 200.0,
    with_hessian: bool = True,
) -> ConditionalMoments:
    """Per-individual conditional moments at theta by Laplace-IS."""
    n, p = dataset.n, theta.p
    escore = np.empty((n, p))
    eouter = np.empty((n, p, p))
    ehess = np.empty((n, p, p)) if with_hessian and model.has_complete_hessian else None
    ess_all = np.empty(n)
    z_center = model.initial_latents(dataset, theta, substream(seed, 12345))
    for i in range(n):
        rng = substream(seed, 2, i)
        mode, cov = _laplace_fit(model, dataset, i, theta, z_center[i])
        draws, logq = _mvt_draws(mode, cov, df, n_draws, rng)
        rep = Dataset(tuple([dataset.records[i]] * n_draws))
        logf = model.complete_loglik(rep, draws, theta)
        lw = logf - logq
        lw -= lw.max()
        w = np.exp(lw)
        w /= w.sum()
        ess = 1.0 / float((w**2).sum())
        if ess < min_ess:
            raise NumericalError(
                f"importance sampling degenerate for individual {i} (ESS {ess:.1f})"
            )
        ess_all[i] = ess
        sc = model.complete_score(rep, draws, theta)
        escore[i] = w @ sc
        eouter[i] = np.einsum("b,bj,bk->jk", w, sc, sc)
        if ehess is not None:
            ehess[i] = np.einsum("b,bjk->jk", w, model.complete_hessian(rep, draws, theta))
    return ConditionalMoments(escore, eouter, ehess, ess_all)


def reference_fims(moments: ConditionalMoments, names, n: int):
    """(I_sco_ref, I_obs_ref or None) from conditional moments."""
    es = moments.escore
    sco = _symmetrize_exact(es.T @ es / es.shape[0])
    i_sco = FimMatrix(sco, "mc-reference", n, tuple(names))
    i_obs = None
    if moments.ehessian is not None:
        cov = moments.escore_outer - np.einsum("ij,ik->ijk", es, es)
        entries = -(moments.ehessian + cov).mean(axis=0)
        i_obs = FimMatrix(_symmetrize_exact(entries), "mc-reference", n, tuple(names))
    return i_sco, i_obs
