"""Accuracy measures for fitted mixtures and overlap-controlled scenario design."""

from __future__ import annotations

import math
from collections import Counter
from fractions import Fraction
from typing import Sequence, Tuple

import numpy as np
from scipy import integrate

from .distributions import Family, MixingDistribution, MixtureError, get_family


class QuadratureError(ArithmeticError):
    pass


class NoSolutionError(ValueError):
    pass


# --------------------------------------------------------------------------
# L2 distance between mixture densities
# --------------------------------------------------------------------------

def _product_integral(fam: Family, m1, s1, m2, s2) -> float:
    """int f(x|m1,s1) f(x|m2,s2) dx."""
    if fam.name == "normal":
        v = s1 * s1 + s2 * s2
        d = m1 - m2
        return math.exp(-0.5 * d * d / v) / math.sqrt(2 * math.pi * v)

    def integrand(x):
        return float(fam.pdf((x - m1) / s1) * fam.pdf((x - m2) / s2)) / (s1 * s2)

    # break at both modes so narrow peaks sit on interval ends
    a, b = sorted((float(m1), float(m2)))
    pieces = [(-np.inf, a), (b, np.inf)]
    if b > a:
        pieces.insert(1, (a, b))
    val, err = 0.0, 0.0
    for lo, hi in pieces:
        v, e = integrate.quad(integrand, lo, hi, epsabs=1e-13, epsrel=1e-10, limit=400)
        val += v
        err += e
    if not math.isfinite(val) or err > 1e-8 * max(abs(val), 1.0):
        raise QuadratureError(f"product integral did not converge (estimate {val}, error {err})")
    return val


def product_moment_matrix(G1: MixingDistribution, G2: MixingDistribution, family) -> np.ndarray:
    fam = get_family(family)
    if not (G1.is_continuous and G2.is_continuous):
        raise MixtureError("L2 distance needs strictly positive scales")
    S = np.empty((G1.K, G2.K))
    for i in range(G1.K):
        for j in range(G2.K):
            S[i, j] = _product_integral(fam, G1.locations[i], G1.scales[i], G2.locations[j], G2.scales[j])
    return S


def l2_mixture_distance(G1: MixingDistribution, G2: MixingDistribution, family) -> float:
    """L2 distance between the two mixture densities."""
    fam = get_family(family)
    w1, w2 = G1.weights, G2.weights
    sq = (w1 @ product_moment_matrix(G1, G1, fam) @ w1
          - 2 * w1 @ product_moment_matrix(G1, G2, fam) @ w2
          + w2 @ product_moment_matrix(G2, G2, fam) @ w2)
    return math.sqrt(max(float(sq), 0.0))


# --------------------------------------------------------------------------
# adjusted Rand index
# --------------------------------------------------------------------------

def _comb2(n: int) -> int:
    return n * (n - 1) // 2


def ari_fraction(labels_a: Sequence, labels_b: Sequence) -> Fraction:
    """Adjusted Rand index as an exact rational number."""
    a = list(np.asarray(labels_a).tolist())
    b = list(np.asarray(labels_b).tolist())
    if len(a) != len(b):
        raise ValueError(f"label vectors differ in length ({len(a)} vs {len(b)})")
    n = len(a)
    if n < 2:
        raise ValueError("ARI needs at least two items")
    sum_ij = sum(_comb2(c) for c in Counter(zip(a, b)).values())
    sum_a = sum(_comb2(c) for c in Counter(a).values())
    sum_b = sum(_comb2(c) for c in Counter(b).values())
    expected = Fraction(sum_a * sum_b, _comb2(n))
    max_index = Fraction(sum_a + sum_b, 2)
    if max_index == expected:
        # both partitions trivial in the same way; agreement is perfect
        return Fraction(1)
    return (sum_ij - expected) / (max_index - expected)


def ari(labels_a: Sequence, labels_b: Sequence) -> float:
    return float(ari_fraction(labels_a, labels_b))


# --------------------------------------------------------------------------
# overlap
# --------------------------------------------------------------------------

def _directed_overlap(G: MixingDistribution, fam: Family, i: int, j: int, resolution: int) -> float:
    levels = (np.arange(1, resolution + 1) - 0.5) / resolution
    x = G.locations[i] + G.scales[i] * fam.ppf(levels)
    li = math.log(G.weights[i]) + fam.logpdf((x - G.locations[i]) / G.scales[i]) - math.log(G.scales[i])
    lj = math.log(G.weights[j]) + fam.logpdf((x - G.locations[j]) / G.scales[j]) - math.log(G.scales[j])
    return float(np.count_nonzero(li < lj)) / resolution


def pairwise_overlap(G: MixingDistribution, family, i: int, j: int,
                     resolution: int = 200_000) -> Tuple[float, float, float]:
    """``(o_{j|i}, o_{i|j}, o_ij)`` on a mid-quantile grid of ``resolution`` points.

    o_{j|i} is the probability that a draw from component i is assigned to
    component j by the maximum-posterior rule (ties count as correct).
    """
    fam = get_family(family)
    if i == j:
        raise ValueError("overlap needs two distinct components")
    if not G.is_continuous:
        raise MixtureError("overlap needs strictly positive scales")
    if np.any(G.weights <= 0):
        raise MixtureError("overlap needs strictly positive weights")
    oji = _directed_overlap(G, fam, i, j, resolution)
    oij = _directed_overlap(G, fam, j, i, resolution)
    return oji, oij, oji + oij


def overlap_report(G: MixingDistribution, family, resolution: int = 200_000):
    """Symmetric matrix of o_ij and their mean over i < j (MeanOmega)."""
    o = np.zeros((G.K, G.K))
    for i in range(G.K):
        for j in range(i + 1, G.K):
            o[i, j] = o[j, i] = pairwise_overlap(G, family, i, j, resolution)[2]
    iu = np.triu_indices(G.K, 1)
    mean_omega = float(o[iu].mean()) if G.K > 1 else 0.0
    return o, mean_omega


def two_component(p: float, a: float, b: float) -> MixingDistribution:
    """p {(0, a)} + (1 - p) {(b, 1)}."""
    return MixingDistribution([p, 1.0 - p], [0.0, b], [a, 1.0])


def solve_b_for_overlap(p: float, a: float, family, target_o12: float,
                        resolution: int = 200_000, b_max: float = 50.0, tol: float = 1e-5) -> float:
    """Location b > 0 such that the two-component mixture has o_12 = target."""
    fam = get_family(family)
    if not 0 < target_o12 < 1:
        raise ValueError("target overlap must lie in (0, 1)")
    if not 0 < p < 1 or not a > 0:
        raise ValueError("need p in (0, 1) and a > 0")

    def o12(b):
        return pairwise_overlap(two_component(p, a, b), fam, 0, 1, resolution)[2]

    # b = 0 with equal components has no misclassification at all, so the
    # search starts just off zero
    b_lo = 1e-6
    grid = np.linspace(b_lo, b_max, 41)
    vals = np.array([o12(b) for b in grid])
    if np.any(np.diff(vals) > 2.0 / resolution):
        raise NoSolutionError("o_12 is not monotone in b over the search range")
    if not (vals[-1] <= target_o12 <= vals[0]):
        raise NoSolutionError(
            f"target {target_o12} outside attainable range [{vals[-1]:.4g}, {vals[0]:.4g}]"
        )
    k = int(np.searchsorted(-vals, -target_o12))
    lo, hi = grid[max(k - 1, 0)], grid[min(k, len(grid) - 1)]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if o12(mid) > target_o12:
            lo = mid
        else:
            hi = mid
    b = 0.5 * (lo + hi)
    if abs(o12(b) - target_o12) >= 1e-4:
        raise NoSolutionError(f"bisection ended at b={b:.6g} with o_12={o12(b):.6g}")
    return b
