"""Seeded simulation scenarios and the replication harness.

Each replication's dataset is drawn from a substream keyed by
``(master_seed, N, r)`` only, so every estimator in a cell sees the same data.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .distributions import (
    NORMAL,
    Family,
    MixingDistribution,
    get_family,
    map_classify,
    sample as sample_mixture,
)
from .metrics import ari, l2_mixture_distance, solve_b_for_overlap, two_component
from .mwde import MwdeConfig, fit_homogeneous_mwde, fit_mwde
from .pmle import PmleConfig, fit_pmle
from .rng import substream

KINDS = (
    "two_component",
    "three_component",
    "outliers",
    "contaminated",
    "misspecified_1",
    "misspecified_2",
    "homogeneous",
)
ROBUSTNESS_KINDS = ("outliers", "contaminated", "misspecified_1", "misspecified_2")
ESTIMATORS = ("mwde", "pmle")

THIRD = 1.0 / 3.0
THREE_COMPONENT = {
    "I": ([0.4, 0.5, 0.1], [-2, 0, 1], [0.3, 2, 0.4]),
    "II": ([0.4, 0.5, 0.1], [-2, 0, 1], [0.3, 1, 0.4]),
    "III": ([0.3, 0.5, 0.2], [-3, 0, 3], [1, 1, 1]),
    "IV": ([0.3, 0.5, 0.2], [-2, 0, 2], [1, 1, 1]),
    "V": ([THIRD, THIRD, THIRD], [-1, 0, 1], [1.5, 0.1, 0.5]),
    "VI": ([THIRD, THIRD, THIRD], [-0.5, 0, 0.5], [1.5, 0.1, 0.5]),
    "VII": ([THIRD, THIRD, THIRD], [-3, 0, 3], [1, 1, 1]),
    "VIII": ([THIRD, THIRD, THIRD], [-2, 0, 2], [1, 1, 1]),
}
REFERENCE_MEAN_OMEGA = {"I": 0.288, "II": 0.367, "III": 0.097, "IV": 0.249,
                        "V": 0.148, "VI": 0.267, "VII": 0.091, "VIII": 0.226}


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioSpec:
    """A data-generating process plus the mixture used to score fits against it.

    For the robustness kinds ``true_g`` is the uncontaminated two-component
    normal part; the contaminant and Student-t components never enter scoring.
    """

    kind: str
    true_g: MixingDistribution
    family: Family = NORMAL
    p: float = math.nan
    a: float = math.nan
    b: float = math.nan
    alpha: float = 0.0
    extra: Dict[str, float] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if not 0 <= self.alpha < 1:
            raise ConfigError("alpha must lie in [0, 1)")
        if not self.name:
            self.name = self.kind

    @property
    def K(self) -> int:
        return self.true_g.K

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "name": self.name, "family": self.family.name,
             "true_g": self.true_g.to_dict(self.family)}
        for key in ("p", "a", "b"):
            v = getattr(self, key)
            if not math.isnan(v):
                d[key] = v
        if self.alpha:
            d["alpha"] = self.alpha
        if self.extra:
            d["extra"] = dict(self.extra)
        return d


def _two_part(p, a, b, o12, family):
    if b is None:
        if o12 is None:
            raise ConfigError("two-component scenarios need b or o12")
        b = solve_b_for_overlap(p, a, family, o12)
    return float(b)


def make_scenario(kind: str, family="normal", p: float = 0.5, a: float = 1.0,
                  b: Optional[float] = None, o12: Optional[float] = None,
                  alpha: Optional[float] = None, row: Optional[str] = None,
                  name: str = "") -> ScenarioSpec:
    fam = get_family(family)
    if kind == "three_component":
        if row not in THREE_COMPONENT:
            raise ConfigError(f"three_component row must be one of {list(THREE_COMPONENT)}")
        w, m, s = THREE_COMPONENT[row]
        g = MixingDistribution.normalized(w, m, s)
        return ScenarioSpec("three_component", g, NORMAL, name=name or f"three_component-{row}",
                            extra={"mean_omega": REFERENCE_MEAN_OMEGA[row]})
    if kind == "homogeneous":
        return ScenarioSpec("homogeneous", MixingDistribution([1.0], [0.0], [1.0]), fam,
                            name=name or f"homogeneous-{fam.name}")
    if kind == "two_component":
        bb = _two_part(p, a, b, o12, fam)
        return ScenarioSpec(kind, two_component(p, a, bb), fam, p, a, bb, name=name,
                            extra={} if o12 is None else {"o12": o12})
    if kind in ROBUSTNESS_KINDS:
        # robustness data is always scored against a normal mixture
        bb = _two_part(p, a, b, o12, NORMAL)
        al = 0.01 if alpha is None else float(alpha)
        extra: Dict[str, float] = {} if o12 is None else {"o12": o12}
        if kind == "outliers":
            extra.update(outlier_location=8.0, outlier_scale=1.0)
        elif kind == "contaminated":
            extra.update(contaminant_location=bb / 2, contaminant_scale=7.0)
        elif kind == "misspecified_1":
            extra.update(df1=4.0, df2=4.0)
            al = 0.0
        else:
            extra.update(df1=2.0, df2=4.0)
            al = 0.0
        return ScenarioSpec(kind, two_component(p, a, bb), NORMAL, p, a, bb, al, extra, name)
    raise ConfigError(f"unknown scenario kind {kind!r}")


def scenario_from_dict(d: dict) -> ScenarioSpec:
    d = dict(d)
    try:
        kind = d.pop("kind")
    except KeyError:
        raise ConfigError("scenario needs a 'kind'") from None
    allowed = {"family", "p", "a", "b", "o12", "alpha", "row", "name"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown scenario fields {sorted(unknown)}")
    return make_scenario(kind, **d)


def generate_dataset(spec: ScenarioSpec, n: int, seed, return_source: bool = False):
    """Draw ``n`` observations.

    ``return_source`` also returns the generating component of each draw
    (index K marks the contaminant); estimators never see it.
    """
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed)
    kind = spec.kind
    if kind in ("two_component", "three_component", "homogeneous"):
        x, src = sample_mixture(spec.true_g, spec.family, n, rng, return_labels=True)
    elif kind in ("outliers", "contaminated"):
        x, src = sample_mixture(spec.true_g, NORMAL, n, rng, return_labels=True)
        hit = rng.random(n) < spec.alpha
        if kind == "outliers":
            loc, sc = spec.extra["outlier_location"], spec.extra["outlier_scale"]
        else:
            loc, sc = spec.extra["contaminant_location"], spec.extra["contaminant_scale"]
        bad = loc + sc * rng.standard_normal(n)
        x = np.where(hit, bad, x)
        src = np.where(hit, spec.K, src)
    else:
        g = spec.true_g
        src = rng.choice(2, size=n, p=g.weights)
        y1 = rng.standard_t(spec.extra["df1"], size=n)
        y2 = rng.standard_t(spec.extra["df2"], size=n)
        y = np.where(src == 0, y1, y2)
        x = g.locations[src] + g.scales[src] * y
    return (x, src) if return_source else x


@dataclass
class ExperimentConfig:
    scenario: ScenarioSpec
    sample_sizes: List[int]
    replications: int = 100
    estimators: Sequence[str] = ESTIMATORS
    master_seed: int = 0
    n_starts: int = 5

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not self.sample_sizes:
            raise ConfigError("need at least one sample size")
        for n in self.sample_sizes:
            if n < self.scenario.K + 1:
                raise ConfigError(f"sample size {n} too small for K={self.scenario.K}")
        bad = set(self.estimators) - set(ESTIMATORS) - {"mle"}
        if bad:
            raise ConfigError(f"unknown estimators {sorted(bad)}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            scen = scenario_from_dict(d["scenario"])
            return cls(
                scenario=scen,
                sample_sizes=[int(n) for n in d["sample_sizes"]],
                replications=int(d.get("replications", 100)),
                estimators=tuple(d.get("estimators", ESTIMATORS)),
                master_seed=int(d.get("master_seed", 0)),
                n_starts=int(d.get("n_starts", 5)),
            )
        except KeyError as exc:
            raise ConfigError(f"experiment config is missing {exc}") from None

    def to_dict(self) -> dict:
        return {"scenario": self.scenario.to_dict(), "sample_sizes": list(self.sample_sizes),
                "replications": self.replications, "estimators": list(self.estimators),
                "master_seed": self.master_seed, "n_starts": self.n_starts}


@dataclass
class ResultRow:
    scenario: str
    estimator: str
    n: int
    replication: int
    l2: float
    ari: float
    wall_ms: float = 0.0
    converged: bool = True
    min_scale: float = math.nan
    error: str = ""

    def key(self):
        return (self.scenario, self.estimator, self.n, self.replication)


RESULT_COLUMNS = ["scenario", "estimator", "n", "replication", "l2", "ari", "converged", "min_scale", "error"]


def _fit(estimator, x, family, K, n_starts, seed):
    if estimator == "mwde":
        return fit_mwde(x, family, K, MwdeConfig(n_starts=n_starts, seed=seed))
    return fit_pmle(x, family, K, PmleConfig(n_starts=n_starts, seed=seed))


def _replicate(config: ExperimentConfig, n: int, r: int) -> List[ResultRow]:
    spec = config.scenario
    data_rng = substream(config.master_seed, n, r)
    x = generate_dataset(spec, n, data_rng)
    fam = NORMAL if spec.kind in ROBUSTNESS_KINDS else spec.family
    true_labels = map_classify(spec.true_g, fam, x)
    rows = []
    for est in config.estimators:
        t0 = time.perf_counter()
        try:
            rep = _fit(est, x, fam, spec.K, config.n_starts, config.master_seed)
            g = rep.g_hat
            l2 = l2_mixture_distance(g, spec.true_g, fam)
            a = ari(true_labels, map_classify(g, fam, x)) if g.is_continuous else math.nan
            row = ResultRow(spec.name, est, n, r, l2, a, converged=rep.converged,
                            min_scale=float(g.scales.min()))
        except (ArithmeticError, ValueError) as exc:
            row = ResultRow(spec.name, est, n, r, math.nan, math.nan, converged=False,
                            error=f"{type(exc).__name__}: {exc}")
        row.wall_ms = 1000.0 * (time.perf_counter() - t0)
        rows.append(row)
    return rows


def _replicate_args(args):
    return _replicate(*args)


def run_experiment(config: ExperimentConfig, threads: int = 1) -> List[ResultRow]:
    """One row per (N, replication, estimator), sorted by key."""
    if config.scenario.kind == "homogeneous":
        raise ConfigError("use homogeneous_study for the homogeneous scenario")
    tasks = [(config, n, r) for n in config.sample_sizes for r in range(config.replications)]
    rows: List[ResultRow] = []
    if threads <= 1:
        for t in tasks:
            rows.extend(_replicate(*t))
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for chunk in pool.map(_replicate_args, tasks, chunksize=max(1, len(tasks) // (4 * threads))):
                rows.extend(chunk)
    rows.sort(key=ResultRow.key)
    return rows


@dataclass
class SummaryRow:
    scenario: str
    estimator: str
    n: int
    count: int
    failures: int
    ml2: float
    ml2_se: Optional[float]
    mari: float
    mari_se: Optional[float]


def _mean_se(v: np.ndarray):
    v = v[np.isfinite(v)]
    if v.size == 0:
        return math.nan, None
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else None
    return float(v.mean()), se


def aggregate(rows: Iterable[ResultRow]) -> List[SummaryRow]:
    """Mean and standard error of l2 and ari per (scenario, estimator, N)."""
    rows = list(rows)
    if not rows:
        raise ValueError("nothing to aggregate")
    cells: Dict[tuple, List[ResultRow]] = {}
    for row in rows:
        cells.setdefault((row.scenario, row.estimator, row.n), []).append(row)
    out = []
    for key in sorted(cells):
        # sort within the cell so float sums do not depend on input order
        cell = sorted(cells[key], key=ResultRow.key)
        l2 = np.array([r.l2 for r in cell], dtype=float)
        ar = np.array([r.ari for r in cell], dtype=float)
        ml2, ml2_se = _mean_se(l2)
        mari, mari_se = _mean_se(ar)
        failures = sum(1 for r in cell if r.error)
        out.append(SummaryRow(*key, len(cell), failures, ml2, ml2_se, mari, mari_se))
    return out


# --------------------------------------------------------------------------
# homogeneous model
# --------------------------------------------------------------------------

def homogeneous_mle(x, family):
    """MLE of (mu, sigma) for K = 1; closed form for normal, numeric otherwise."""
    from scipy import optimize

    fam = get_family(family)
    x = np.asarray(x, dtype=float)
    if fam.name == "normal":
        return float(x.mean()), float(x.std())

    def nll(theta):
        mu, u = theta
        z = (x - mu) * math.exp(-u)
        val = -np.sum(fam.logpdf(z)) + x.size * u
        sc = fam.score(z)
        return val, np.array([np.sum(sc) * math.exp(-u), x.size + np.sum(sc * z)])

    start_mu, start_sigma = fit_homogeneous_mwde(x, fam)
    res = optimize.minimize(nll, [start_mu, math.log(max(start_sigma, 1e-8))], jac=True,
                            method="BFGS", options={"gtol": 1e-10})
    return float(res.x[0]), float(math.exp(res.x[1]))


@dataclass
class HomogeneousRow:
    family: str
    estimator: str
    n: int
    mse_mu: float
    mse_sigma: float


def homogeneous_study(family, sample_sizes: Sequence[int], replications: int, master_seed: int = 0):
    """MSE of (mu, sigma) for MLE and MWDE on samples from the standard family.

    Returns the per-cell rows and the log-log slopes of MSE against N.
    """
    fam = get_family(family)
    g = MixingDistribution([1.0], [0.0], [1.0])
    err = {(e, n): [] for e in ("mle", "mwde") for n in sample_sizes}
    for n in sample_sizes:
        for r in range(replications):
            x = sample_mixture(g, fam, n, substream(master_seed, n, r))
            for est, fn in (("mle", homogeneous_mle), ("mwde", fit_homogeneous_mwde)):
                mu, sigma = fn(x, fam)
                err[(est, n)].append((mu * mu, (sigma - 1.0) ** 2))
    rows = []
    for (est, n), v in sorted(err.items()):
        v = np.array(v)
        rows.append(HomogeneousRow(fam.name, est, n, float(v[:, 0].mean()), float(v[:, 1].mean())))
    slopes = {}
    logn = np.log(np.asarray(sample_sizes, dtype=float))
    for est in ("mle", "mwde"):
        for par in ("mu", "sigma"):
            mse = [getattr(r, f"mse_{par}") for r in rows if r.estimator == est]
            by_n = dict(zip([r.n for r in rows if r.estimator == est], mse))
            y = np.log([by_n[n] for n in sample_sizes])
            slopes[(est, par)] = float(np.polyfit(logn, y, 1)[0])
    return rows, slopes


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    if v is None:
        return ""
    return str(v)


def rows_to_csv(rows: Sequence, columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        d = asdict(row)
        w.writerow([_fmt(d[c]) for c in columns])
    return buf.getvalue()


def summary_to_json(summary: Sequence[SummaryRow]) -> str:
    def clean(v):
        return None if isinstance(v, float) and math.isnan(v) else v

    return json.dumps([{k: clean(v) for k, v in asdict(s).items()} for s in summary], indent=2, sort_keys=True)
