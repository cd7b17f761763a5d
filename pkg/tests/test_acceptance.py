"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line through the ``report`` fixture; the lines
are printed in an "acceptance criteria" section at the end of the run.
"""
import math
from dataclasses import replace

import numpy as np
import pytest

from gelshatter.analysis import (
    collapse,
    compare_recurrence_models,
    fit_truncated_powerlaw,
    largest_cluster_scale,
    loglog_slope,
    powerlaw_series,
    scaling_point,
)
from gelshatter.campaign import Campaign, CampaignSpec, auto_budget, run_points
from gelshatter.engine import Simulation, run, run_ensemble
from gelshatter.meanfield import (
    catalan_steady_state,
    fixed_point_steady_state,
    integrate,
    monomer_start,
)
from gelshatter.observables import SizeHistogram, cyclicity, mean_cluster_density
from gelshatter.population import ClusterPopulation, SimulationConfig
from gelshatter.population import _locate

pytestmark = pytest.mark.slow

SWEEP_M = [100, 1000, 10_000]
SWEEP_F = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1]


def _cfg(M, F, steps, seed, K=None, **kw):
    return SimulationConfig(M=M, K_hat=1 - F if K is None else K, F_hat=F, seed=seed,
                            max_steps=int(steps), **kw)


def _burned_in(t):
    first = t.shatter_step[t.shatter_largest][0]
    return [h for s, h in zip(t.hist_step, t.histograms) if s > first]


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    spec = CampaignSpec(M=SWEEP_M, F_hat=SWEEP_F, replicas=4, seed=2024, target_cycles=100)
    camp = Campaign(spec, out, workers=1)
    camp.run()
    points = camp.scaling_points()
    # no grid point reaches r >= 1e4; one extra point covers that end
    extra_cfg = _cfg(100_000, 0.1, auto_budget(100_000, 0.9, 0.1, 100), 0)
    extra = scaling_point(run_points([extra_cfg], 4, 2024, point_ids=[len(points)])[0])
    return points + [extra]


def test_c01_forced_cycles_exponential(report):
    F = 1e-4
    trajs = run_ensemble(_cfg(100, F, 1e6, 101, sample_interval=10_000), 4)
    t_r = np.concatenate([t.recurrence_times() for t in trajs])
    cmp_ = compare_recurrence_models(t_r)
    g = F * cmp_.mean
    ok = t_r.size >= 200 and abs(g - 1.0) <= 0.15 and cmp_.ks_exponential < cmp_.ks_rayleigh
    report(1, ok, f"cycles={t_r.size} F<t_r>={g:.3f} KS exp={cmp_.ks_exponential:.3f} "
                  f"rayleigh={cmp_.ks_rayleigh:.3f}")
    assert ok


def test_c02_sqrt_m_recurrence(report):
    F, K = 0.01, 0.99
    res = {}
    for M in (1000, 10_000):
        steps = auto_budget(M, K, F, target_cycles=100)
        trajs = run_ensemble(_cfg(M, F, steps, 202, K=K, sample_interval=10_000), 4)
        res[M] = compare_recurrence_models(np.concatenate([t.recurrence_times() for t in trajs]))
    ratio = res[10_000].mean / res[1000].mean
    big = res[10_000]
    ok = (min(r.n for r in res.values()) >= 100
          and abs(ratio / math.sqrt(10) - 1) <= 0.2 and big.ks_rayleigh < big.ks_exponential)
    report(2, ok, f"ratio={ratio:.3f} (sqrt10={math.sqrt(10):.3f}) cycles={res[1000].n},{big.n} "
                  f"KS@1e4 rayleigh={big.ks_rayleigh:.3f} exp={big.ks_exponential:.3f}")
    assert ok


def test_c03_data_collapse(report, sweep):
    c = collapse(sweep)
    ok = abs(c.slope - 0.5) <= 0.1 and abs(c.plateau - 1.0) <= 0.15
    report(3, ok, f"slope={c.slope:.3f} over {c.n_window} pts, plateau={c.plateau:.3f} "
                  f"over {c.n_plateau} pts")
    assert ok


def test_c04_cyclicity_hump(report, sweep):
    r = np.array([p.r for p in sweep])
    k = np.array([p.cyclicity for p in sweep])
    r_peak = r[np.argmax(k)]
    mid = (r >= 1) & (r <= 100)
    # r = F M / K puts the nominal r = 0.01 point a hair above 0.01
    low, high = r <= 0.01 * (1 + 1e-3), r >= 1e4
    ok = (1 <= r_peak <= 100 and bool(np.all(k[mid] > 0.1))
          and bool(np.all(k[low] < 0.1)) and bool(np.all(k[high] < 0.1))
          and low.any() and high.any())
    report(4, ok, f"peak K={k.max():.3f} at r={r_peak:.3g}; min K on [1,100]={k[mid].min():.3f}; "
                  f"max K at r<=0.01={k[low].max():.3f}; at r>=1e4={k[high].max():.3f}")
    assert ok


def test_c05_exponent_cycling(report):
    t = run(_cfg(100_000, 0.01, 1e6, 505, K=0.99, sample_interval=500, record_histograms=True))
    alphas = powerlaw_series(_burned_in(t))
    a = alphas[np.isfinite(alphas)]
    lo, hi, mean = np.percentile(a, 5), np.percentile(a, 95), a.mean()
    ok = t.n_cycles >= 20 and lo >= 2.6 and hi <= 3.0 and 2.7 <= mean <= 2.9
    report(5, ok, f"cycles={t.n_cycles} alpha 5-95%=[{lo:.3f},{hi:.3f}] mean={mean:.3f} "
                  f"n={a.size}")
    assert ok


def test_c06_time_averaged_exponent(report):
    t = run(_cfg(100_000, 0.01, 3e6, 606, K=0.99, frag_threshold=10_000,
                 sample_interval=2000, record_histograms=True))
    dens = mean_cluster_density(_burned_in(t))
    a2 = fit_truncated_powerlaw(dens, k_min=2).alpha
    a1 = fit_truncated_powerlaw(dens, k_min=1).alpha
    ok = abs(a2 - 2.5) <= 0.2
    report(6, ok, f"alpha(k_min=2)={a2:.3f} [k_min=1 gives {a1:.3f}]")
    assert ok


def test_c07_meanfield_matches_closed_form(report):
    K, F, K_c = 0.1, 0.9, 1000
    start = monomer_start(K_c)
    end = integrate(start, K, F, 0.002, 30.0)
    ss = catalan_steady_state(K, F, K_c)
    rel = np.max(np.abs(end.rho[:20] - ss.rho[:20]) / ss.rho[:20])
    drift = abs(end.mass - start.mass) / start.mass
    fp = fixed_point_steady_state(K, F, 60)
    d_rho1 = abs(fp.rho1 - ss.rho1)
    ok = rel < 1e-3 and drift < 1e-8 and d_rho1 < 1e-10
    report(7, ok, f"max rel err k<=20={rel:.2e} drift={drift:.1e} |rho1 - fixed point|={d_rho1:.1e}")
    assert ok


def test_c08_asymptotic_exponent(report):
    ss = catalan_steady_state(1.0, 1e-8, 1000)
    k = np.arange(100, 1001)
    rho = ss.rho[99:1000]
    s_rho = loglog_slope(k, rho)[0]
    s_n = loglog_slope(k, rho / k)[0]
    ok = abs(s_rho + 1.5) <= 0.05 and abs(s_n + 2.5) <= 0.05
    report(8, ok, f"4 gamma rho1={ss.convergence:.12f} slope rho={s_rho:.4f} n={s_n:.4f}")
    assert ok


def test_c09_property_suite(report, tmp_path):
    details = []
    # mass conservation over 1e7 events
    cfg = _cfg(1000, 0.05, 1e7, 909, sample_interval=100_000)
    sim = Simulation(cfg).advance(cfg.max_steps)
    sim.pop.check()
    sizes = sim.pop.cluster_sizes()
    # stored clusters plus the pooled monomers
    mass_ok = sim.pop.monomer_count + int(np.sum(sizes)) == cfg.M and sim.pop.total_mass == cfg.M
    mass_ok = mass_ok and sim.step == 10**7
    details.append(f"mass={'exact' if mass_ok else 'LOST'}")

    # size-biased sampling
    rng = np.random.default_rng(9)
    mix = [1] * 13 + [2, 2, 3, 7, 11, 25, 40]
    pop = ClusterPopulation.from_sizes(sum(mix), mix)
    u = rng.integers(pop.M, size=10**5)
    slots = np.array([_locate(pop.meta, pop.fen, x) for x in u])
    keys = [-1] + [e.slot for e in pop.handles()]
    w = np.array([pop.monomer_count] + [e.size for e in pop.handles()], float)
    obs = np.array([np.count_nonzero(slots == key) for key in keys])
    exp = w / pop.M * u.size
    chi2 = float(((obs - exp) ** 2 / exp).sum())
    dof = len(keys) - 1
    chi_ok = abs(chi2 - dof) < 3 * math.sqrt(2 * dof)
    details.append(f"chi2={chi2:.1f} (dof {dof})")

    # cyclicity bounds and antisymmetry on recorded k_max series
    t = run(_cfg(300, 0.05, 50_000, 19, sample_interval=1))
    kappa = cyclicity(t.sample_kmax)
    cyc_ok = (-1 <= kappa <= 1 and math.isclose(cyclicity(t.sample_kmax[::-1]), -kappa)
              and math.isclose(kappa, t.cyclicity))
    details.append(f"cyclicity={kappa:.4f}")

    # determinism: same seed byte-identical; 1 vs 2 workers identical
    base = _cfg(500, 0.02, 100_000, 77, sample_interval=100)
    a, b = run(base).to_json(), run(base).to_json()
    e1 = [x.to_json() for x in run_ensemble(base, 3, workers=1)]
    e2 = [x.to_json() for x in run_ensemble(base, 3, workers=2)]
    det_ok = a == b and e1 == e2
    details.append(f"deterministic={det_ok}")

    # MLE recovery
    k = np.arange(1, 10_001, dtype=float)
    cdf = np.cumsum(k**-2.5)
    cdf /= cdf[-1]
    draws = np.searchsorted(cdf, rng.random(100_000)) + 1
    alpha = fit_truncated_powerlaw(SizeHistogram.from_samples(draws), k_max_fit=10_000).alpha
    mle_ok = abs(alpha - 2.5) <= 0.02
    details.append(f"alpha={alpha:.4f}")

    ok = mass_ok and chi_ok and cyc_ok and det_ok and mle_ok
    report(9, ok, " ".join(details))
    assert ok


def _envelope(M, r, seed):
    F = r / (M + r)
    K = 1 - F
    steps = auto_budget(M, K, F, target_cycles=200)
    trajs = run_ensemble(_cfg(M, F, steps, seed, K=K, sample_interval=max(1, steps // 20_000)), 4)
    return largest_cluster_scale([trajs])[0]


def test_c10_largest_cluster_envelope(report):
    rs = [3, 10, 30, 100, 300]
    pts_r = [_envelope(10_000, r, 1000 + i) for i, r in enumerate(rs)]
    slope_r = loglog_slope([p.r for p in pts_r], [p.envelope for p in pts_r])[0]
    Ms = [1000, 3000, 10_000, 30_000]
    pts_m = [_envelope(M, 10, 2000 + i) for i, M in enumerate(Ms)]
    slope_m = loglog_slope(Ms, [p.envelope for p in pts_m])[0]
    ok = abs(slope_m - 1.0) <= 0.15 and abs(slope_r + 0.5) <= 0.1
    report(10, ok, f"M exponent={slope_m:.3f} (r=10), r exponent={slope_r:.3f} (M=1e4, r 3..300)")
    assert ok
