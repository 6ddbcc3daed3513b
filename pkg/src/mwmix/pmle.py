"""Penalized maximum likelihood for location-scale mixtures, fitted by EM.

The penalized log-likelihood is

    pl(G) = l(G) - a_N sum_k (s^2 / sigma_k^2 + log sigma_k^2)

which stays bounded as any sigma_k -> 0.  The M-step for a normal family is
closed form; other families solve a two-variable problem per component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize

from .distributions import (
    Family,
    MixingDistribution,
    MixtureError,
    as_sample,
    get_family,
    log_likelihood,
    responsibilities,
)
from .mwde import FitReport, initial_points


class ComponentStarvationError(ArithmeticError):
    """A component received zero total responsibility."""


@dataclass(frozen=True)
class PenaltyConfig:
    a_n: float
    scale_stat: float

    def __post_init__(self):
        if not self.a_n > 0:
            raise ValueError("penalty strength a_n must be positive")
        if not self.scale_stat > 0:
            raise ValueError("scale statistic must be positive")

    @classmethod
    def default(cls, sample, a_n: Optional[float] = None, scale_stat: str = "variance"):
        """a_N = N^{-1/2} and the sample variance unless told otherwise."""
        sample = as_sample(sample)
        a = sample.N ** -0.5 if a_n is None else float(a_n)
        if scale_stat == "variance":
            s = sample.var_s
        elif scale_stat == "iqr":
            q1, q3 = np.quantile(sample.values, [0.25, 0.75])
            s = float(q3 - q1) ** 2
        else:
            raise ValueError(f"unknown scale statistic {scale_stat!r}")
        return cls(a, s)


@dataclass
class PmleConfig:
    n_starts: int = 5
    max_iter: int = 2000
    tol: float = 1e-8
    seed: int = 0
    a_n: Optional[float] = None  # None means N^{-1/2}
    scale_stat: str = "variance"

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")


def penalty_value(G: MixingDistribution, penalty: PenaltyConfig) -> float:
    s2 = G.scales**2
    return penalty.a_n * float(np.sum(penalty.scale_stat / s2 + np.log(s2)))


def penalized_loglik(G: MixingDistribution, sample, family, penalty: PenaltyConfig) -> float:
    """Returns -inf when any scale is zero."""
    if not G.is_continuous:
        return -math.inf
    x = as_sample(sample).values
    return log_likelihood(G, family, x) - penalty_value(G, penalty)


def _mstep_normal(x, r, nk, penalty):
    mu = (r.T @ x) / nk
    ss = np.einsum("nk,nk->k", r, (x[:, None] - mu) ** 2)
    var = (ss + 2 * penalty.a_n * penalty.scale_stat) / (nk + 2 * penalty.a_n)
    return mu, np.sqrt(var)


def _component_criterion(theta, x, r, fam: Family, penalty: PenaltyConfig):
    """Negative penalized Q for one component in (mu, log sigma) and its gradient."""
    mu, u = theta
    sigma = math.exp(u)
    z = (x - mu) / sigma
    lp = fam.logpdf(z)
    sc = fam.score(z)
    a, s2 = penalty.a_n, penalty.scale_stat
    val = -(r @ lp) + r.sum() * u + a * (s2 * math.exp(-2 * u) + 2 * u)
    g_mu = (r @ sc) / sigma
    g_u = r.sum() + r @ (sc * z) + a * (2 - 2 * s2 * math.exp(-2 * u))
    return val, np.array([g_mu, g_u])


def _mstep_numeric(x, r, G, fam, penalty):
    mus = np.empty(G.K)
    sigmas = np.empty(G.K)
    for k in range(G.K):
        theta0 = np.array([G.locations[k], math.log(G.scales[k])])
        f0, _ = _component_criterion(theta0, x, r[:, k], fam, penalty)
        res = optimize.minimize(
            _component_criterion, theta0, args=(x, r[:, k], fam, penalty),
            jac=True, method="BFGS", options={"gtol": 1e-9, "maxiter": 200},
        )
        theta = res.x if res.fun <= f0 else theta0
        mus[k], sigmas[k] = theta[0], math.exp(theta[1])
    return mus, sigmas


def em_step(G: MixingDistribution, sample, family, penalty: PenaltyConfig) -> MixingDistribution:
    """One EM update; never decreases the penalized log-likelihood."""
    fam = get_family(family)
    x = as_sample(sample).values
    if not G.is_continuous:
        raise MixtureError("EM needs strictly positive scales")
    r = responsibilities(G, fam, x)
    nk = r.sum(axis=0)
    if np.any(nk <= 0):
        starving = [int(k) + 1 for k in np.nonzero(nk <= 0)[0]]
        raise ComponentStarvationError(f"component(s) {starving} received no responsibility")
    w = nk / x.size
    w = w / w.sum()
    if fam.name == "normal":
        mu, sigma = _mstep_normal(x, r, nk, penalty)
    else:
        mu, sigma = _mstep_numeric(x, r, G, fam, penalty)
    return MixingDistribution(w, mu, sigma)


def _run_em(G, sample, fam, penalty, config):
    trace = [penalized_loglik(G, sample, fam, penalty)]
    it = 0
    for it in range(1, config.max_iter + 1):
        G = em_step(G, sample, fam, penalty)
        trace.append(penalized_loglik(G, sample, fam, penalty))
        if trace[-1] - trace[-2] < config.tol:
            return G, trace, it, True
    return G, trace, it, False


def fit_pmle(sample, family, K: int, config: Optional[PmleConfig] = None) -> FitReport:
    """Multi-start EM; returns the start with the largest penalized log-likelihood."""
    fam = get_family(family)
    sample = as_sample(sample)
    config = config or PmleConfig()
    if sample.N < 2 or K < 1:
        raise MixtureError("need N >= 2 and K >= 1")
    if sample.var_s == 0:
        raise MixtureError("all observations are equal")
    penalty = PenaltyConfig.default(sample, config.a_n, config.scale_stat)
    best = None
    start_values = []
    diagnostics = []
    for i, G0 in enumerate(initial_points(sample, K, config.n_starts, config.seed)):
        try:
            G, trace, it, conv = _run_em(G0, sample, fam, penalty, config)
        except ComponentStarvationError as exc:
            diagnostics.append(f"start {i}: {exc}")
            start_values.append(-math.inf)
            continue
        start_values.append(trace[-1])
        if best is None or trace[-1] > best[1][-1]:
            best = (G, trace, it, conv)
    if best is None:
        raise ComponentStarvationError("every start starved a component")
    G, trace, it, conv = best
    return FitReport(
        g_hat=G,
        family=fam,
        method="pmle",
        objective=float(trace[-1]),
        starts_tried=config.n_starts,
        converged=conv,
        iterations=it,
        trace=[float(v) for v in trace],
        start_objectives=[float(v) for v in start_values],
        diagnostics=diagnostics,
    )
