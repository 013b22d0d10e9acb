#!/usr/bin/env python3
"""Five ways to differentiate through a fixed point, on one small tanh network.

h' = tanh(W h + U x + b) is run to its steady state h*; the loss reads
y = V h* + c. BPTT walks back through the whole stored run, TBPTT through its
last K steps. RBP, CG-RBP and Neumann-RBP only need h* itself.
"""

import numpy as np

from rbp.dynamics import iterate, spectral_estimate
from rbp.experiments.gradcheck import random_tanh_system
from rbp.gradients import bptt, cg_rbp, linearize, neumann_rbp, rbp, tbptt, truncation_error_bound

system, x, y_bar = random_tanh_system(n=12, input_dim=4, contraction=0.8, seed=0)
fr = iterate(system, x, max_steps=2000, tol=1e-14, store_trajectory=True, extra_steps=30)
print(f"forward pass: {fr.steps_taken} steps, converged={fr.converged}")

lin = linearize(system, x, y_bar, fr)
est = spectral_estimate(lin.jacobian)
print(f"contraction: rho ~ {est.rho_hat:.3f}, mu <= {est.mu_bound:.3f}")

exact = bptt(system, x, y_bar, fr).flat()

# %% truncation: error against BPTT shrinks like mu^(K+1)
print("\n  K   tbptt      neumann    bound")
for K in (1, 2, 5, 10, 20):
    e_t = np.linalg.norm(tbptt(system, x, y_bar, fr, K).flat() - exact) / np.linalg.norm(exact)
    e_n = np.linalg.norm(neumann_rbp(lin, K).flat() - exact) / np.linalg.norm(exact)
    print(f"{K:3d}   {e_t:.2e}   {e_n:.2e}   {truncation_error_bound(est, K):.2e}")

# %% the iterative solvers, run to convergence
for name, report in (("rbp", rbp(lin, epsilon=1e-12, max_iter=500)),
                     ("cg-rbp", cg_rbp(lin, max_iter=200, tol=1e-12)),
                     ("neumann-rbp", neumann_rbp(lin, 500, tol=1e-14))):
    err = np.linalg.norm(report.flat() - exact) / np.linalg.norm(exact)
    print(f"{name:12s} iterations {report.k_used:4d}  rel err vs bptt {err:.1e}")
