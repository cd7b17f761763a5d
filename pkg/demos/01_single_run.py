"""Watch one system build a gel and shatter it.

Starts from M monomers, runs the discrete-step process and prints the
largest cluster at each shattering of the largest cluster.
"""
from gelshatter import SimulationConfig, run

cfg = SimulationConfig(M=10_000, K_hat=0.99, F_hat=0.01, seed=1,
                       max_steps=400_000, sample_interval=1000)
traj = run(cfg)

print(f"r = F M / K = {cfg.r:.1f}")
print(f"{traj.n_steps} steps, {traj.tally['shattered']} shatterings, "
      f"{traj.n_cycles} complete cycles, cyclicity {traj.cyclicity:.3f}")
gels = [(s, k) for s, k, largest in traj.shatter_events if largest and k > 100]
for step, size in gels[:10]:
    print(f"  step {step:>7d}: gel of {size} shattered")

traj.write_csv("single-run")
print("wrote single-run/samples.csv and single-run/shatters.csv")
