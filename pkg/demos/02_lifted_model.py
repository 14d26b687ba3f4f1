"""Fit a lifted linear model of the bicycle from random-input data and check how well it predicts.

Run: python3 demos/02_lifted_model.py
"""

import numpy as np

from vflpc import koopman as km
from vflpc.sim import MISMATCH, NOMINAL, excitation_dataset

trajs = excitation_dataset(30, 80, NOMINAL, seed=0)
data = km.TrajectoryDataset.from_trajectories(trajs, 0.1)
train, hold = data.split_by_trajectory(0.8, seed=0)

print("one-step RMSE on held-out trajectories (x, y, psi, vx, vy, omega):")
for label, d in [("identity", km.identity_dictionary(6)), ("vehicle ", km.vehicle_dictionary(centered=True))]:
    m = km.fit_edmd(train, d, ridge=1e-8)
    err = km.one_step_rmse(m, hold)
    print(f"  {label} n_K={m.A.shape[0]:2d}  rmse {err:.2e}")

# the same model on the mismatched plant: this gap is what the residual GP learns online
m = km.fit_edmd(train, km.vehicle_dictionary(centered=True))
mis = km.TrajectoryDataset.from_trajectories(excitation_dataset(10, 80, MISMATCH, seed=5), 0.1)
print(f"\nnominal model on mismatch plant data: rmse {km.one_step_rmse(m, mis):.2e}")

# multi-step open-loop prediction from one initial state
x, us = trajs[0]
up = km.lift(m.dictionary, x[0])
for k, u in enumerate(us[:20]):
    up = km.predict_lifted(m, up, u)
print(f"20-step open-loop position error: {np.linalg.norm(up[:2] - x[20, :2]):.3f} m")
