"""Fits and scaling summaries: truncated discrete power-law MLE,
exponential/Rayleigh recurrence-time fits, KS model comparison, the
g(r) data collapse, regime labels and the largest-cluster envelope.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import optimize, special, stats

from gelshatter.observables import SizeHistogram

__all__ = [
    "FitError",
    "InsufficientDataError",
    "DegenerateFitError",
    "PowerLawFit",
    "ScalingPoint",
    "Regime",
    "fit_truncated_powerlaw",
    "powerlaw_series",
    "median_snapshot",
    "fit_exponential",
    "fit_rayleigh",
    "rayleigh_cdf",
    "exponential_cdf",
    "ks_distance",
    "compare_recurrence_models",
    "collapse",
    "classify_regime",
    "scaling_point",
    "largest_cluster_scale",
    "loglog_slope",
    "write_scaling_table",
]

ALPHA_BOUNDS = (1.01, 6.0)
MIN_SAMPLES = 50


class FitError(ValueError):
    pass


class InsufficientDataError(FitError):
    pass


class DegenerateFitError(FitError):
    pass


@dataclass(frozen=True)
class PowerLawFit:
    alpha: float
    k_min: int
    k_max_fit: int
    n: float
    loglik: float


def _harmonic(alpha: float, k_min: int, k_max: int) -> float:
    # sum_{k=k_min}^{k_max} k^-alpha via Hurwitz zeta differences
    return float(special.zeta(alpha, k_min) - special.zeta(alpha, k_max + 1))


def fit_truncated_powerlaw(h: SizeHistogram, k_min: int = 1, k_max_fit: int | None = None,
                           min_samples: int = MIN_SAMPLES, xtol: float = 1e-6) -> PowerLawFit:
    """Maximum-likelihood exponent of p(k) ~ k^-alpha on [k_min, k_max_fit].

    Defaults to the full window from 1 to the largest observed size.
    """
    if k_min < 1:
        raise ValueError("k_min must be >= 1")
    if h.sizes.size == 0:
        raise InsufficientDataError("empty histogram")
    if k_max_fit is None:
        k_max_fit = int(h.sizes[-1])
    sel = (h.sizes >= k_min) & (h.sizes <= k_max_fit)
    k = h.sizes[sel].astype(np.float64)
    c = h.counts[sel].astype(np.float64)
    n = float(c.sum())
    if n < min_samples:
        raise InsufficientDataError(f"{n:g} samples in [{k_min}, {k_max_fit}], need {min_samples}")
    if k.size < 2:
        raise DegenerateFitError("all samples at a single size; likelihood is unbounded")
    slog = float(np.dot(c, np.log(k)))

    def negll(a):
        return a * slog + n * math.log(_harmonic(a, k_min, k_max_fit))

    res = optimize.minimize_scalar(negll, bounds=ALPHA_BOUNDS, method="bounded",
                                   options={"xatol": xtol})
    return PowerLawFit(float(res.x), int(k_min), int(k_max_fit), n, float(-res.fun))


def powerlaw_series(hists: Sequence[SizeHistogram], k_min: int = 1,
                    min_samples: int = MIN_SAMPLES) -> np.ndarray:
    """alpha-hat for each histogram; NaN where the fit is impossible."""
    out = np.full(len(hists), np.nan)
    for i, h in enumerate(hists):
        try:
            out[i] = fit_truncated_powerlaw(h, k_min=k_min, min_samples=min_samples).alpha
        except FitError:
            pass
    return out


def median_snapshot(hists: Sequence[SizeHistogram], window: tuple[int, int] | None = None,
                    k_min: int = 1) -> tuple[int, float]:
    """Index and exponent of the snapshot whose alpha-hat is closest to the median.

    ``window`` restricts the search to hists[window[0]:window[1]].
    """
    lo, hi = window if window is not None else (0, len(hists))
    alphas = powerlaw_series(hists[lo:hi], k_min=k_min)
    ok = np.flatnonzero(np.isfinite(alphas))
    if ok.size == 0:
        raise InsufficientDataError("no fittable snapshot")
    med = np.median(alphas[ok])
    best = ok[np.argmin(np.abs(alphas[ok] - med))]
    return lo + int(best), float(alphas[best])


def _positive_samples(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.size < 2:
        raise InsufficientDataError("need at least two samples")
    if np.any(t <= 0):
        raise DegenerateFitError("samples must be positive")
    return t


def fit_exponential(t) -> float:
    """MLE rate; the fitted mean is 1/rate."""
    t = _positive_samples(t)
    return t.size / t.sum()


def fit_rayleigh(t) -> float:
    """MLE scale sigma; the fitted mean is sigma * sqrt(pi/2)."""
    t = _positive_samples(t)
    return math.sqrt(np.dot(t, t) / (2 * t.size))


def rayleigh_mean(sigma: float) -> float:
    return sigma * math.sqrt(math.pi / 2)


def exponential_cdf(rate: float) -> Callable:
    return lambda x: -np.expm1(-rate * np.asarray(x, dtype=np.float64))


def rayleigh_cdf(sigma: float) -> Callable:
    return lambda x: -np.expm1(-np.asarray(x, dtype=np.float64) ** 2 / (2 * sigma * sigma))


def ks_distance(samples, model_cdf: Callable) -> float:
    """Sup distance between the empirical CDF of ``samples`` and ``model_cdf``."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    if n == 0:
        raise ValueError("need at least one sample")
    # stats.kstest evaluates both one-sided gaps at every order statistic
    return float(stats.kstest(x, model_cdf).statistic)


@dataclass(frozen=True)
class RecurrenceComparison:
    n: int
    mean: float
    rate: float
    sigma: float
    ks_exponential: float
    ks_rayleigh: float

    @property
    def preferred(self) -> str:
        return "exponential" if self.ks_exponential < self.ks_rayleigh else "rayleigh"


def compare_recurrence_models(t_r) -> RecurrenceComparison:
    t = _positive_samples(t_r)
    rate, sigma = fit_exponential(t), fit_rayleigh(t)
    return RecurrenceComparison(
        n=int(t.size), mean=float(t.mean()), rate=rate, sigma=sigma,
        ks_exponential=ks_distance(t, exponential_cdf(rate)),
        ks_rayleigh=ks_distance(t, rayleigh_cdf(sigma)),
    )


def rayleigh_growth_constant(M: int, K_hat: float, F_hat: float, mean_tr: float) -> float:
    """c in m(t) = c K_hat t implied by a measured mean recurrence time."""
    return math.pi * M / (2 * F_hat * K_hat * mean_tr**2)


# --------------------------------------------------------------------------
# scaling


class Regime(Enum):
    FORCED_CYCLES = "ForcedCycles"
    UNFORCED_GEL_SHATTER = "UnforcedGelShatter"
    FRAGMENTATION_DOMINANCE = "FragmentationDominance"


def classify_regime(r: float, low: float = 0.1, high: float = 1e3) -> Regime:
    if r <= 0:
        raise ValueError("r must be positive")
    if r < low:
        return Regime.FORCED_CYCLES
    if r <= high:
        return Regime.UNFORCED_GEL_SHATTER
    return Regime.FRAGMENTATION_DOMINANCE


@dataclass(frozen=True)
class ScalingPoint:
    M: int
    K_hat: float
    F_hat: float
    r: float
    mean_tr: float
    g: float
    cyclicity: float
    n_cycles: int

    @classmethod
    def make(cls, M, K_hat, F_hat, mean_tr, cyclicity, n_cycles) -> "ScalingPoint":
        r = F_hat * M / K_hat
        return cls(int(M), float(K_hat), float(F_hat), r, float(mean_tr),
                   F_hat * mean_tr, float(cyclicity), int(n_cycles))

    @property
    def regime(self) -> Regime:
        return classify_regime(self.r)


def scaling_point(trajs) -> ScalingPoint:
    """Pool replicas sharing one configuration into a ScalingPoint.

    Cyclicity is pooled over all steps of all replicas.
    """
    cfg = trajs[0].config
    t_r = np.concatenate([t.recurrence_times() for t in trajs])
    steps = sum(t.n_steps for t in trajs)
    kappa = sum(t.n_up - t.n_down for t in trajs) / steps
    mean_tr = float(t_r.mean()) if t_r.size else float("nan")
    return ScalingPoint.make(cfg.M, cfg.K_hat, cfg.F_hat, mean_tr, kappa, t_r.size)


def loglog_slope(x, y) -> tuple[float, float, float]:
    """Least-squares slope, intercept and RMS residual of log y against log x."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icpt)
    return float(slope), float(icpt), float(np.sqrt(np.mean(resid**2)))


@dataclass(frozen=True)
class CollapseSummary:
    slope: float
    intercept: float
    residual: float
    n_window: int
    plateau: float
    n_plateau: int


def collapse(points: Sequence[ScalingPoint], window: tuple[float, float] = (1.0, 100.0),
             plateau_below: float = 0.05, min_points: int = 3) -> CollapseSummary:
    """log g vs log r slope inside ``window`` and mean g for r < ``plateau_below``."""
    r = np.array([p.r for p in points])
    g = np.array([p.g for p in points])
    ok = np.isfinite(g) & (g > 0)
    win = ok & (r >= window[0]) & (r <= window[1])
    low = ok & (r < plateau_below)
    if win.sum() < min_points:
        raise InsufficientDataError(f"{int(win.sum())} points in r-window {window}, need {min_points}")
    if low.sum() < 1:
        raise InsufficientDataError(f"no points with r < {plateau_below}")
    slope, icpt, res = loglog_slope(r[win], g[win])
    return CollapseSummary(slope, icpt, res, int(win.sum()), float(g[low].mean()), int(low.sum()))


@dataclass(frozen=True)
class EnvelopePoint:
    M: int
    K_hat: float
    F_hat: float
    r: float
    envelope: float
    max_kmax: int
    predicted: float
    ratio: float
    n_cycles: int
    in_regime_ii: bool


def largest_cluster_scale(groups: dict | Iterable) -> list[EnvelopePoint]:
    """Observed largest-cluster envelope against M r^(-1/2), per parameter point.

    The envelope is the mean size of the largest cluster at the moment it
    shatters, over all cycles after the first. ``groups`` maps (M, F, K) to
    replica lists, or is an iterable of replica lists.
    """
    lists = groups.values() if isinstance(groups, dict) else groups
    out = []
    for trajs in lists:
        cfg = trajs[0].config
        peaks = []
        mx = 0
        for t in trajs:
            sizes = t.shatter_size[t.shatter_largest]
            peaks.append(sizes[1:])
            mx = max(mx, int(t.sample_kmax.max()), int(sizes.max()) if sizes.size else 0)
        peaks = np.concatenate(peaks) if peaks else np.zeros(0)
        r = cfg.F_hat * cfg.M / cfg.K_hat
        pred = cfg.M / math.sqrt(r)
        env = float(peaks.mean()) if peaks.size else float("nan")
        out.append(EnvelopePoint(cfg.M, cfg.K_hat, cfg.F_hat, r, env, mx, pred, env / pred,
                                 int(peaks.size),
                                 classify_regime(r) is Regime.UNFORCED_GEL_SHATTER))
    return out


SCALING_HEADER = ["M", "K_hat", "F_hat", "r", "mean_tr", "g", "cyclicity", "n_cycles"]


def write_scaling_table(points: Sequence[ScalingPoint], csv_path: str | Path,
                        json_path: str | Path | None = None, meta: dict | None = None) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCALING_HEADER)
        for p in points:
            w.writerow([p.M, repr(p.K_hat), repr(p.F_hat), repr(p.r), repr(p.mean_tr),
                        repr(p.g), repr(p.cyclicity), p.n_cycles])
    if json_path is not None:
        doc = {
            "points": [dict(asdict(p), regime=p.regime.value) for p in points],
            "recurrence_convention": "first interval after t=0 discarded per replica",
            **(meta or {}),
        }
        Path(json_path).write_text(json.dumps(doc, indent=1))
