"""Minimum squared-W2 estimation of finite location-scale mixtures.

The squared 2-Wasserstein distance between the empirical distribution of a
sorted sample x_(1..N) and F(.|G) is evaluated in closed form from the
mixture quantiles xi_n = F^{-1}(n/N | G):

    W_N(G) = mean(x^2) + sum_k w_k E_k[X^2]
             - 2 sum_k w_k sum_n x_(n) (mu_k dF_nk + sigma_k dT_nk)

where dF and dT are increments of the component CDF and of the partial mean
T(z) = int_{-inf}^z t f0(t) dt between consecutive quantiles.  The solver
works on unconstrained parameters (mu, tau = log sigma, softmax logits t)
and runs BFGS from several starting points.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import optimize

from .distributions import (
    Family,
    MixingDistribution,
    MixtureError,
    SortedSample,
    _solve_quantiles,
    as_sample,
    get_family,
)
from .rng import substream

log = logging.getLogger(__name__)


class DegenerateSampleError(MixtureError):
    """The sample cannot identify the requested number of components."""


@dataclass
class UnconstrainedParams:
    """(mu, tau, t) with sigma = exp(tau) and w = softmax(t)."""

    mus: np.ndarray
    taus: np.ndarray
    ts: np.ndarray

    @classmethod
    def from_mixing(cls, G: MixingDistribution) -> "UnconstrainedParams":
        if not G.is_continuous:
            raise MixtureError("unconstrained form needs strictly positive scales")
        with np.errstate(divide="ignore"):
            lw = np.log(G.weights)
        lw = np.maximum(lw, -745.0)
        return cls(G.locations.copy(), np.log(G.scales), lw - lw[-1])

    @classmethod
    def from_vector(cls, v) -> "UnconstrainedParams":
        v = np.asarray(v, dtype=float)
        K = v.size // 3
        return cls(v[:K].copy(), v[K:2 * K].copy(), v[2 * K:].copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.mus, self.taus, self.ts])

    def weights(self) -> np.ndarray:
        e = np.exp(self.ts - self.ts.max())
        return e / e.sum()

    def to_mixing(self) -> MixingDistribution:
        w = self.weights()
        return MixingDistribution(w / w.sum(), self.mus, np.exp(self.taus))


@dataclass
class QuantileWorkspace:
    """Mixture quantiles and the per-interval increments they induce.

    ``xi`` has N+1 entries with xi[0] = -inf and xi[N] = +inf; ``delta_F`` and
    ``delta_T`` are N x K.
    """

    xi: np.ndarray
    delta_F: np.ndarray
    delta_T: np.ndarray
    F_inner: np.ndarray  # component CDFs at xi_1..xi_{N-1}, (N-1) x K


@dataclass
class MwdeConfig:
    n_starts: int = 5
    max_iter: int = 500
    grad_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")


@dataclass
class FitReport:
    g_hat: MixingDistribution
    family: Family
    method: str
    objective: float
    starts_tried: int
    converged: bool
    iterations: int
    trace: List[float] = field(default_factory=list)
    start_objectives: List[float] = field(default_factory=list)
    diagnostics: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "g_hat": self.g_hat.to_dict(self.family),
            "objective": float(self.objective),
            "objective_name": "w2_squared" if self.method == "mwde" else "penalized_loglik",
            "starts_tried": int(self.starts_tried),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "trace": [float(v) for v in self.trace],
            "start_objectives": [float(v) for v in self.start_objectives],
            "diagnostics": list(self.diagnostics),
        }


def _check_sample(sample: SortedSample, K: int):
    if sample.N <= K:
        raise DegenerateSampleError(
            f"need more observations than components (N={sample.N}, K={K}); "
            "otherwise the infimum is attained by point masses on the data"
        )


def build_workspace(G: MixingDistribution, x: np.ndarray, family: Family) -> QuantileWorkspace:
    """Quantiles and increments for sorted data ``x`` (already in solver coordinates)."""
    N = x.size
    levels = np.arange(1, N) / N
    inner = _solve_quantiles(G, family, levels, 0.0, 200) if N > 1 else np.empty(0)
    z = (inner[:, None] - G.locations) / G.scales
    K = G.K
    Fz = np.vstack([np.zeros((1, K)), family.cdf(z), np.ones((1, K))])
    Tz = np.vstack([np.zeros((1, K)), family.partial_mean(z), np.full((1, K), family.mu0)])
    xi = np.concatenate([[-np.inf], inner, [np.inf]])
    return QuantileWorkspace(xi, np.diff(Fz, axis=0), np.diff(Tz, axis=0), Fz[1:-1])


def _second_moments(G: MixingDistribution, fam: Family) -> np.ndarray:
    mu, s = G.locations, G.scales
    return mu**2 + s**2 * (fam.mu0**2 + fam.sigma0_sq) + 2 * mu * s * fam.mu0


def _value_and_grads(G: MixingDistribution, sample: SortedSample, fam: Family, need_grad: bool):
    """Objective and raw partials (d/dmu, d/dsigma, d/dw) in centered coordinates."""
    c = sample.mean
    x = sample.values - c
    Gc = MixingDistribution(G.weights, G.locations - c, G.scales)
    ws = build_workspace(Gc, x, fam)
    w, mu, s = Gc.weights, Gc.locations, Gc.scales
    xF = x @ ws.delta_F
    xT = x @ ws.delta_T
    ek2 = _second_moments(Gc, fam)
    cross = mu * xF + s * xT
    mean_sq = float(np.mean(x * x))
    value = mean_sq + float(w @ ek2) - 2.0 * float(w @ cross)
    if not need_grad:
        return value, None
    m2 = fam.mu0**2 + fam.sigma0_sq
    g_mu = 2 * w * (mu + s * fam.mu0 - xF)
    g_sigma = 2 * w * (s * m2 + mu * fam.mu0 - xT)
    # boundary term from moving quantiles when w is perturbed
    xi_inner = ws.xi[1:-1]
    gaps = np.diff(x)
    bnd = (gaps * xi_inner) @ ws.F_inner if x.size > 1 else np.zeros_like(w)
    g_w = ek2 - 2 * cross - 2 * bnd
    return value, (g_mu, g_sigma, g_w)


def objective_w2(G: MixingDistribution, sample, family) -> float:
    """Squared W2 distance between the empirical distribution and F(.|G)."""
    fam = get_family(family)
    sample = as_sample(sample)
    _check_sample(sample, G.K)
    if not G.is_continuous:
        raise MixtureError("objective_w2 needs strictly positive scales")
    value, _ = _value_and_grads(G, sample, fam, need_grad=False)
    return max(value, 0.0)


def gradient_w2(params: UnconstrainedParams, sample, family) -> np.ndarray:
    """Gradient with respect to (mu_1..K, tau_1..K, t_1..K)."""
    return _objective_and_gradient(params.to_vector(), as_sample(sample), get_family(family))[1]


def _objective_and_gradient(v: np.ndarray, sample: SortedSample, fam: Family):
    p = UnconstrainedParams.from_vector(v)
    w = p.weights()
    sigma = np.exp(p.taus)
    if not (np.all(np.isfinite(sigma)) and np.all(sigma > 0)):
        return math.inf, np.zeros_like(v)
    G = MixingDistribution(w / w.sum(), p.mus, sigma)
    value, (g_mu, g_sigma, g_w) = _value_and_grads(G, sample, fam, need_grad=True)
    g_tau = g_sigma * sigma
    g_t = w * (g_w - w @ g_w)
    return value, np.concatenate([g_mu, g_tau, g_t])


def initial_points(sample: SortedSample, K: int, n_starts: int, seed: int) -> List[MixingDistribution]:
    """Start 0 uses equally spaced sample quantiles; later starts use random levels."""
    x = sample.values
    sd = math.sqrt(sample.var_s) if sample.var_s > 0 else 1.0
    scales = np.full(K, sd / K)
    w = np.full(K, 1.0 / K)
    starts = [MixingDistribution(w, np.quantile(x, (np.arange(K) + 0.5) / K), scales)]
    for s in range(1, n_starts):
        levels = np.sort(substream(seed, s).random(K))
        starts.append(MixingDistribution(w, np.quantile(x, levels), scales))
    return starts


def _bfgs(v0, sample, fam, config: MwdeConfig):
    trace = []

    def record(intermediate_result):
        trace.append(float(intermediate_result.fun))

    f0, _ = _objective_and_gradient(v0, sample, fam)
    trace.append(float(f0))
    res = optimize.minimize(
        _objective_and_gradient,
        v0,
        args=(sample, fam),
        jac=True,
        method="BFGS",
        callback=record,
        options={"gtol": config.grad_tol, "maxiter": config.max_iter, "c1": 1e-4, "c2": 0.9},
    )
    return res, trace


def fit_mwde(sample, family, K: int, config: Optional[MwdeConfig] = None) -> FitReport:
    """Multi-start BFGS minimization of the squared W2 objective."""
    fam = get_family(family)
    sample = as_sample(sample)
    config = config or MwdeConfig()
    if K < 1:
        raise ValueError("K must be at least 1")
    _check_sample(sample, K)
    if sample.var_s == 0:
        raise DegenerateSampleError("all observations are equal")
    best = None
    start_values = []
    for G0 in initial_points(sample, K, config.n_starts, config.seed):
        v0 = UnconstrainedParams.from_mixing(G0).to_vector()
        res, trace = _bfgs(v0, sample, fam, config)
        val = float(res.fun)
        start_values.append(val)
        if best is None or val < best[0].fun:
            best = (res, trace)
    res, trace = best
    p = UnconstrainedParams.from_vector(res.x)
    p.ts = p.ts - p.ts[-1]
    G = p.to_mixing()
    _, grad = _objective_and_gradient(res.x, sample, fam)
    converged = bool(np.max(np.abs(grad)) < config.grad_tol)
    diagnostics = []
    if np.any(G.weights < 1e-10):
        diagnostics.append("weight_collapse")
    if not converged:
        diagnostics.append(f"gradient_norm={float(np.max(np.abs(grad))):.3e}")
    return FitReport(
        g_hat=G,
        family=fam,
        method="mwde",
        objective=max(float(res.fun), 0.0),
        starts_tried=config.n_starts,
        converged=converged,
        iterations=int(res.nit),
        trace=trace,
        start_objectives=start_values,
        diagnostics=diagnostics,
    )


def fit_homogeneous_mwde(sample, family):
    """Closed-form K=1 minimizer. Returns ``(mu, sigma)``.

    With s = sum_n x_(n) {T(q_n) - T(q_{n-1})} over standard quantiles
    q_n = F0^{-1}(n/N), the stationarity equations are
    mu + mu0 sigma = mean(x) and mu0 mu + (mu0^2 + sigma0^2) sigma = s.
    """
    fam = get_family(family)
    sample = as_sample(sample)
    if sample.N < 2:
        raise DegenerateSampleError("need at least two observations")
    x = sample.values
    N = x.size
    q = fam.ppf(np.arange(1, N) / N)
    Tq = np.concatenate([[0.0], fam.partial_mean(q), [fam.mu0]])
    s = float(x @ np.diff(Tq))
    xbar = sample.mean
    if fam.mu0 == 0.0:
        mu, sigma = xbar, s / fam.sigma0_sq
    else:
        denom = fam.mu0**2 + fam.sigma0_sq
        r = fam.mu0 / denom
        t_bar = s / denom
        mu = (xbar - fam.mu0 * t_bar) / (1.0 - fam.mu0 * r)
        sigma = t_bar - r * mu
    if sample.var_s == 0:
        log.warning("all observations equal; homogeneous MWDE scale is zero")
        sigma = 0.0
    return float(mu), float(max(sigma, 0.0))
