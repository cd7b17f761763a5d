"""Recurrence times in the two cycling regimes.

Small r: shattering happens as soon as the gel forms, so intervals are
exponential with mean 1/F. Intermediate r: the gel has to grow first and
intervals look Rayleigh, with the mean growing like sqrt(M).
"""
import numpy as np

from gelshatter import SimulationConfig, run_ensemble
from gelshatter.analysis import compare_recurrence_models
from gelshatter.campaign import auto_budget

cases = [(100, 1e-4), (1000, 0.01), (10_000, 0.01)]
for M, F in cases:
    K = 1 - F
    steps = auto_budget(M, K, F, target_cycles=100)
    cfg = SimulationConfig(M=M, K_hat=K, F_hat=F, seed=7, max_steps=steps,
                           sample_interval=10_000)
    trajs = run_ensemble(cfg, replicas=4)
    c = compare_recurrence_models(np.concatenate([t.recurrence_times() for t in trajs]))
    print(f"M={M:>6d} F={F:g} r={cfg.r:8.2f}  cycles={c.n:4d}  F<t_r>={F * c.mean:6.2f}  "
          f"KS exp={c.ks_exponential:.3f} rayleigh={c.ks_rayleigh:.3f} -> {c.preferred}")
