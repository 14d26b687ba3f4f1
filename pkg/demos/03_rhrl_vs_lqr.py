"""The horizon actor-critic solver on a linear plant, next to the LQR answer it should reproduce.

Run: python3 demos/03_rhrl_vs_lqr.py
"""

import numpy as np

from vflpc import lpc as L

A = np.array([[1, .1, 0, 0], [0, .95, 0, 0], [0, 0, 1, .1], [0, 0, 0, .95]])
B = np.array([[.005, 0], [.1, 0], [0, .005], [0, .1]])
Q, R = np.eye(4), np.eye(2)
N = 5

P = L.terminal_penalty(A, B, Q, R)
K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
fs = L.KernelFeatureSet(np.random.default_rng(0).normal(scale=0.05, size=(8, 4)), 0.2)
cfg = L.RhrlConfig(N, Q, R, np.ones(2), P=P, gamma=1.0, eta_a=0.1, eta_c=0.1, i_max=200, tol_w=1e-4)
prob = L.LinearProblem(A, B)
ctl = L.RhrlController(fs, cfg, P)

x = np.array([0.02, -0.01, 0.015, 0.01])
print(" k   iters   |u - u_lqr|    value      x'Px")
for k in range(10):
    r = ctl.solve(x, prob)
    print(f"{k:2d}   {r.iterations:4d}   {np.abs(r.u + K @ x).max():.2e}   {r.value:.3e}  {x @ P @ x:.3e}")
    x = A @ x + B @ r.u
# the warm start makes later cycles converge in a handful of sweeps

# an obstacle barrier on the position coordinates bends the plan away
bar = L.LinearProblem(A, B, barriers=[(0.5, np.array([0.05, 0.01]))] * (N + 1), pos_idx=(0, 2))
x = np.array([0.02, -0.01, 0.015, 0.01])
r0 = L.RhrlController(fs, cfg, P).solve(x, prob)
r1 = L.RhrlController(fs, cfg, P).solve(x, bar)
print(f"\nfirst control without barrier {np.round(r0.u, 4)}, with barrier {np.round(r1.u, 4)}")
