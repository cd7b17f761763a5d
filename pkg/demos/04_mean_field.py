"""Mean-field kinetics against the Catalan steady state.

Integrates the truncated rate equations from all monomers and compares
the late-time mass fractions with the closed form.
"""
import numpy as np

from gelshatter.meanfield import catalan_steady_state, integrate, monomer_start

K, F = 0.1, 0.9
state = monomer_start(K_c=200)
for T in (1.0, 5.0, 20.0):
    state = integrate(state, K, F, dt=0.01, T=T - state.t)
    ss = catalan_steady_state(K, F, 200)
    err = np.max(np.abs(state.rho[:20] - ss.rho[:20]) / ss.rho[:20])
    print(f"t={state.t:5.1f}  rho_1={state.rho[0]:.6f}  max rel. deviation (k<=20) {err:.2e}")

print(f"closed form: gamma={ss.gamma:.4f} rho_1={ss.rho1:.6f} 4 gamma rho_1={ss.convergence:.4f}")

# near 4 gamma rho_1 = 1 the tail turns into k^-3/2
crit = catalan_steady_state(1.0, 1e-8, 1000)
k = np.arange(100, 1001)
slope = np.polyfit(np.log(k), np.log(crit.rho[99:1000]), 1)[0]
print(f"tail slope of rho_k near criticality: {slope:.3f}")
