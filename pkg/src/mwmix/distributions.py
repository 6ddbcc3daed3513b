"""Location-scale families, finite mixtures, quantiles and sampling.

A mixture is described by a :class:`MixingDistribution` (weights, locations,
scales) together with a :class:`Family` supplying the standard density f0.
Component ``k`` has density ``f0((x - mu_k) / sigma_k) / sigma_k``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import special

from .rng import as_generator

EULER_GAMMA = float(np.euler_gamma)

ArrayLike = Union[float, Sequence[float], np.ndarray]


class MixtureError(ValueError):
    """Base class for invalid mixture input."""


class DomainError(MixtureError):
    pass


class UnsupportedMixtureError(MixtureError):
    pass


# --------------------------------------------------------------------------
# standard families
# --------------------------------------------------------------------------

def _gumbel_partial_mean(x):
    # T(x) = x exp(-a) - E1(a), a = exp(-x).  For small a the two terms are
    # both ~x, so use the E1 series: T = x expm1(-a) + gamma + sum (-a)^k/(k k!).
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    with np.errstate(over="ignore"):
        a = np.exp(-x)
    small = a < 1.0
    if np.any(small):
        s = a[small]
        xs = x[small]
        acc = np.zeros_like(s)
        term = np.ones_like(s)
        for k in range(1, 30):
            term = term * (-s) / k
            acc += term / k
        with np.errstate(invalid="ignore"):
            out[small] = xs * np.expm1(-s) + EULER_GAMMA + acc
    big = ~small
    if np.any(big):
        s = a[big]
        xs = x[big]
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            val = xs * np.exp(-s) - special.exp1(s)
        out[big] = np.where(np.isfinite(s), val, 0.0)
    out[np.isposinf(x)] = EULER_GAMMA
    out[np.isneginf(x)] = 0.0
    return out


def _logistic_partial_mean(x):
    # T is even for a symmetric f0 with zero mean; evaluate on the left half.
    x = -np.abs(np.asarray(x, dtype=float))
    with np.errstate(invalid="ignore"):
        out = x * special.expit(x) - np.log1p(np.exp(x))
    return np.where(np.isneginf(x), 0.0, out)


@dataclass(frozen=True)
class Family:
    """A standard location-scale density f0 with its mean and variance."""

    name: str
    mu0: float
    sigma0_sq: float

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.name == "normal":
            return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        if self.name == "logistic":
            return special.expit(z) * special.expit(-z)
        with np.errstate(over="ignore"):
            return np.exp(-z - np.exp(-z))

    def logpdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.name == "normal":
            return -0.5 * z * z - 0.5 * math.log(2.0 * math.pi)
        if self.name == "logistic":
            return -np.abs(z) - 2.0 * np.log1p(np.exp(-np.abs(z)))
        with np.errstate(over="ignore"):
            return -z - np.exp(-z)

    def score(self, z):
        """Derivative of ``logpdf`` with respect to ``z``."""
        z = np.asarray(z, dtype=float)
        if self.name == "normal":
            return -z
        if self.name == "logistic":
            return -np.tanh(0.5 * z)
        with np.errstate(over="ignore"):
            return np.expm1(-z)

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.name == "normal":
            return special.ndtr(z)
        if self.name == "logistic":
            return special.expit(z)
        with np.errstate(over="ignore"):
            return np.exp(-np.exp(-z))

    def sf(self, z):
        z = np.asarray(z, dtype=float)
        if self.name == "normal":
            return special.ndtr(-z)
        if self.name == "logistic":
            return special.expit(-z)
        with np.errstate(over="ignore"):
            return -np.expm1(-np.exp(-z))

    def ppf(self, t):
        t = np.asarray(t, dtype=float)
        if self.name == "normal":
            return special.ndtri(t)
        if self.name == "logistic":
            return special.logit(t)
        with np.errstate(divide="ignore"):
            return -np.log(-np.log(t))

    def partial_mean(self, z):
        """T(z) = integral of t f0(t) over (-inf, z]; accepts +-inf."""
        z = np.asarray(z, dtype=float)
        if self.name == "normal":
            return np.where(np.isfinite(z), -self.pdf(np.where(np.isfinite(z), z, 0.0)), 0.0)
        if self.name == "logistic":
            return _logistic_partial_mean(z)
        return _gumbel_partial_mean(z)

    def standard_sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        # normal: numpy's ziggurat; others: inverse CDF of open-interval uniforms
        if self.name == "normal":
            return rng.standard_normal(n)
        u = rng.random(n)
        u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
        return self.ppf(u)


NORMAL = Family("normal", 0.0, 1.0)
LOGISTIC = Family("logistic", 0.0, math.pi**2 / 3.0)
GUMBEL = Family("gumbel", EULER_GAMMA, math.pi**2 / 6.0)

FAMILIES = {f.name: f for f in (NORMAL, LOGISTIC, GUMBEL)}


def get_family(name: Union[str, Family]) -> Family:
    if isinstance(name, Family):
        return name
    try:
        return FAMILIES[name.lower()]
    except KeyError:
        raise MixtureError(f"unknown family {name!r}; expected one of {sorted(FAMILIES)}") from None


def standard_T(family: Union[str, Family], x: ArrayLike):
    """Partial mean of the standard density; scalar in, scalar out."""
    out = get_family(family).partial_mean(x)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# mixing distribution
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MixingDistribution:
    """K weighted (location, scale) atoms. A zero scale is a point mass."""

    weights: np.ndarray
    locations: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float)).copy()
        mu = np.atleast_1d(np.asarray(self.locations, dtype=float)).copy()
        sigma = np.atleast_1d(np.asarray(self.scales, dtype=float)).copy()
        if not (w.ndim == mu.ndim == sigma.ndim == 1) or not (len(w) == len(mu) == len(sigma)):
            raise MixtureError("weights, locations and scales must be 1-D of equal length")
        if len(w) < 1:
            raise MixtureError("a mixing distribution needs at least one atom")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise MixtureError("mixing distribution parameters must be finite")
        if np.any(w < 0) or np.any(w > 1):
            raise MixtureError("weights must lie in [0, 1]")
        if abs(w.sum() - 1.0) > 1e-12:
            raise MixtureError(f"weights sum to {w.sum():.15g}, not 1")
        if np.any(sigma < 0):
            raise MixtureError("scales must be nonnegative")
        for name, arr in (("weights", w), ("locations", mu), ("scales", sigma)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def is_continuous(self) -> bool:
        return bool(np.all(self.scales > 0))

    @classmethod
    def normalized(cls, weights, locations, scales) -> "MixingDistribution":
        """Build from weights that are only approximately normalized."""
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum(), locations, scales)

    def sorted_by_location(self) -> "MixingDistribution":
        order = np.lexsort((self.scales, self.locations))
        return MixingDistribution(self.weights[order], self.locations[order], self.scales[order])

    def affine(self, c: float, m: float) -> "MixingDistribution":
        """Mixing distribution of ``c X + m`` when X ~ this mixture (c > 0)."""
        return MixingDistribution(self.weights, c * self.locations + m, c * self.scales)

    def mean(self, family) -> float:
        fam = get_family(family)
        return float(np.sum(self.weights * (self.locations + self.scales * fam.mu0)))

    def variance(self, family) -> float:
        fam = get_family(family)
        m = self.locations + self.scales * fam.mu0
        second = self.scales**2 * fam.sigma0_sq + m**2
        return float(np.sum(self.weights * second) - self.mean(fam) ** 2)

    def to_dict(self, family) -> dict:
        return {
            "family": get_family(family).name,
            "weights": [float(v) for v in self.weights],
            "locations": [float(v) for v in self.locations],
            "scales": [float(v) for v in self.scales],
        }

    def to_json(self, family, **kw) -> str:
        return json.dumps(self.to_dict(family), **kw)

    @staticmethod
    def from_dict(d: dict):
        """Inverse of :meth:`to_dict`; returns ``(G, family)``."""
        if not isinstance(d, dict):
            raise MixtureError("mixing distribution JSON must be an object")
        try:
            fam = get_family(d.get("family", "normal"))
            g = MixingDistribution(d["weights"], d["locations"], d["scales"])
        except KeyError as exc:
            raise MixtureError(f"mixing distribution JSON is missing {exc}") from None
        return g, fam

    @staticmethod
    def from_json(text: str):
        return MixingDistribution.from_dict(json.loads(text))


def single(location: float = 0.0, scale: float = 1.0) -> MixingDistribution:
    return MixingDistribution([1.0], [location], [scale])


# --------------------------------------------------------------------------
# sorted sample
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SortedSample:
    """Order statistics with the moments both estimators need."""

    values: np.ndarray
    mean: float = field(init=False)
    mean_sq: float = field(init=False)
    var_s: float = field(init=False)

    def __post_init__(self):
        x = np.sort(np.asarray(self.values, dtype=float).ravel())
        if x.size < 1:
            raise MixtureError("sample must contain at least one value")
        if not np.all(np.isfinite(x)):
            raise MixtureError("sample contains non-finite values")
        x.setflags(write=False)
        object.__setattr__(self, "values", x)
        m = float(x.mean())
        object.__setattr__(self, "mean", m)
        # mean of squares via the centered form, clamped so mean_sq >= mean**2
        cvar = float(np.mean((x - m) ** 2))
        object.__setattr__(self, "mean_sq", m * m + cvar)
        object.__setattr__(self, "var_s", cvar * x.size / (x.size - 1) if x.size > 1 else 0.0)

    @property
    def N(self) -> int:
        return self.values.size

    def __len__(self):
        return self.values.size


def as_sample(x) -> SortedSample:
    return x if isinstance(x, SortedSample) else SortedSample(x)


# --------------------------------------------------------------------------
# mixture evaluation
# --------------------------------------------------------------------------

def component_pdf(G: MixingDistribution, family, x) -> np.ndarray:
    """Matrix of f(x_i | theta_k); shape ``x.shape + (K,)``. Requires sigma > 0."""
    fam = get_family(family)
    x = np.asarray(x, dtype=float)[..., None]
    z = (x - G.locations) / G.scales
    return fam.pdf(z) / G.scales


def component_logpdf(G: MixingDistribution, family, x) -> np.ndarray:
    fam = get_family(family)
    x = np.asarray(x, dtype=float)[..., None]
    z = (x - G.locations) / G.scales
    return fam.logpdf(z) - np.log(G.scales)


def mixture_pdf(G: MixingDistribution, family, x):
    if not G.is_continuous:
        raise UnsupportedMixtureError("density is undefined for point-mass atoms")
    out = component_pdf(G, family, x) @ G.weights
    return float(out) if np.ndim(out) == 0 else out


def _component_cdf(G, fam, x):
    x = np.asarray(x, dtype=float)[..., None]
    cont = G.scales > 0
    safe = np.where(cont, G.scales, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cdf = fam.cdf((x - G.locations) / safe)
    return np.where(cont, cdf, (x >= G.locations).astype(float))


def mixture_cdf(G: MixingDistribution, family, x):
    """F(x | G); point-mass atoms contribute ``w_k 1{x >= mu_k}``."""
    fam = get_family(family)
    out = _component_cdf(G, fam, x) @ G.weights
    out = np.clip(out, 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def quantile_bracket(G: MixingDistribution, family, t):
    """``(min_k, max_k)`` of the component t-quantiles; always contains F^{-1}(t|G)."""
    fam = get_family(family)
    t = np.asarray(t, dtype=float)
    q = G.locations + G.scales * fam.ppf(t)[..., None]
    return q.min(axis=-1), q.max(axis=-1)


_GRID_LEVELS = special.ndtr(np.linspace(-8.0, 8.0, 33))


def _solve_quantiles(G, fam, t, tol, max_iter):
    """Safeguarded Newton inside the bisection bracket, vectorized over t.

    ``tol`` is the target |F(x) - t|; ``tol=0`` iterates to machine precision.
    """
    lo, hi = quantile_bracket(G, fam, t)
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    # narrow the bracket with a coarse grid of component quantiles
    grid = np.unique((G.locations[:, None] + G.scales[:, None] * fam.ppf(_GRID_LEVELS)).ravel())
    Fg = mixture_cdf(G, fam, grid)
    pos = np.searchsorted(Fg, t, side="right")
    has_lo = pos > 0
    has_hi = pos < grid.size
    lo = np.where(has_lo, np.maximum(lo, grid[np.maximum(pos - 1, 0)]), lo)
    hi = np.where(has_hi, np.minimum(hi, grid[np.minimum(pos, grid.size - 1)]), hi)
    F_lo = np.where(has_lo, Fg[np.maximum(pos - 1, 0)], 0.0)
    F_hi = np.where(has_hi, Fg[np.minimum(pos, grid.size - 1)], 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.clip((t - F_lo) / (F_hi - F_lo), 0.0, 1.0)
    x = np.where(np.isfinite(frac), lo + frac * (hi - lo), 0.5 * (lo + hi))
    active = hi > lo
    eps = np.finfo(float).eps
    w, mu, sigma = G.weights, G.locations, G.scales
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        xa = x[idx]
        z = (xa[:, None] - mu) / sigma
        r = fam.cdf(z) @ w - t[idx]
        dens = (fam.pdf(z) / sigma) @ w
        neg = r < 0
        lo[idx] = np.where(neg, xa, lo[idx])
        hi[idx] = np.where(neg, hi[idx], xa)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            step = r / dens
        xn = xa - step
        bad = ~np.isfinite(xn) | (xn <= lo[idx]) | (xn >= hi[idx])
        xn = np.where(bad, 0.5 * (lo[idx] + hi[idx]), xn)
        scale = np.abs(xa) + sigma.min()
        hit = (r == 0) | (np.abs(r) <= tol)
        if tol == 0:
            # newton correction below machine precision
            hit |= np.abs(step) <= 2 * eps * scale
        x[idx] = np.where(hit, xa, xn)
        done = hit | (hi[idx] - lo[idx] <= 4 * eps * scale)
        active[idx[done]] = False
    return x


def mixture_quantile(G: MixingDistribution, family, t, tol: float = 1e-12, max_iter: int = 200):
    """t-quantile of the mixture by bracketed root finding.

    The search starts from the bracket formed by the smallest and largest
    component quantiles, which always contains the mixture quantile.
    Pure point-mass mixtures return the generalized inverse.
    """
    fam = get_family(family)
    t_arr = np.asarray(t, dtype=float)
    if np.any(~(t_arr > 0) | ~(t_arr < 1)):
        raise DomainError("quantile level must lie in the open interval (0, 1)")
    scalar = t_arr.ndim == 0
    t_arr = np.atleast_1d(t_arr)
    if np.all(G.scales == 0):
        order = np.argsort(G.locations, kind="stable")
        cum = np.cumsum(G.weights[order])
        pos = np.searchsorted(cum, t_arr - 1e-15, side="left")
        out = G.locations[order][np.minimum(pos, G.K - 1)]
    elif not G.is_continuous:
        raise UnsupportedMixtureError(
            "quantiles of mixtures mixing point masses and continuous atoms are not supported"
        )
    else:
        out = _solve_quantiles(G, fam, t_arr, tol, max_iter)
    return float(out[0]) if scalar else out


# --------------------------------------------------------------------------
# sampling and classification
# --------------------------------------------------------------------------

def sample(G: MixingDistribution, family, n: int, seed=None, return_labels: bool = False):
    """Draw ``n`` observations: pick component k w.p. w_k, return mu_k + sigma_k Y."""
    fam = get_family(family)
    if n < 1:
        raise MixtureError("n must be at least 1")
    rng = as_generator(seed)
    labels = rng.choice(G.K, size=n, p=G.weights)
    y = fam.standard_sample(rng, n)
    x = G.locations[labels] + G.scales[labels] * y
    return (x, labels) if return_labels else x


def map_classify(G: MixingDistribution, family, x):
    """Index of the component maximizing w_k f(x|theta_k); ties go to the smallest index."""
    if not G.is_continuous:
        raise UnsupportedMixtureError("classification needs strictly positive scales")
    with np.errstate(divide="ignore"):
        score = component_logpdf(G, family, x) + np.log(G.weights)
    out = np.argmax(score, axis=-1)
    return int(out) if np.ndim(out) == 0 else out


def responsibilities(G: MixingDistribution, family, x) -> np.ndarray:
    """Posterior membership probabilities, shape ``(N, K)``; rows sum to one."""
    with np.errstate(divide="ignore"):
        score = component_logpdf(G, family, x) + np.log(G.weights)
    score -= special.logsumexp(score, axis=-1, keepdims=True)
    return np.exp(score)


def log_likelihood(G: MixingDistribution, family, x) -> float:
    if not G.is_continuous:
        return -math.inf
    with np.errstate(divide="ignore"):
        score = component_logpdf(G, family, x) + np.log(G.weights)
    return float(np.sum(special.logsumexp(score, axis=-1)))
