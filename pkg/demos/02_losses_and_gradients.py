"""The regularization triad on toy matrices, plus the gradient-check harness.

Run:  python demos/02_losses_and_gradients.py
"""

import numpy as np

from vicspeech import covariance, grad_check, invariance, variance
from vicspeech.analysis import gradcheck_suite

rng = np.random.default_rng(0)

# --- closed-form sanity values ------------------------------------------
z = np.array([[0.0, 0.0], [1.0, 1.0]])
zp = np.array([[3.0, 4.0], [1.0, 1.0]])
s, _ = invariance(z, zp)
print(f"invariance of rows (0,0),(1,1) vs (3,4),(1,1): s = {s}   (expected 12.5)")

v, _ = variance(np.full((4, 1), 2.5), gamma=1.0, epsilon=1e-4)
print(f"variance hinge on a constant column:          v = {v}  (expected 0.99)")

c, _ = covariance(np.array([[1.0, 2.0], [-1.0, -2.0]]))
print(f"covariance penalty on rows (1,2),(-1,-2):     c = {c}  (expected 16.0)")

# --- each term's gradient against central differences ---------------------
zp = rng.standard_normal((8, 5))
z_fixed = rng.standard_normal((8, 5))
_, g = invariance(z_fixed, zp)
rep = grad_check(lambda x: invariance(z_fixed, x.reshape(8, 5))[0], g.ravel(), zp.ravel())
print(f"\ninvariance gradient vs finite differences: max rel error {rep.max_rel_error:.2e}")

_, g = covariance(zp)
rep = grad_check(lambda x: covariance(x.reshape(8, 5))[0], g.ravel(), zp.ravel())
print(f"covariance gradient vs finite differences: max rel error {rep.max_rel_error:.2e}")

# --- the whole suite, including the full encoder under the total objective --
print("\nfull gradient-check suite:")
for name, rep in gradcheck_suite(seed=0):
    print(f"  {name:<20} max rel error {rep.max_rel_error:.3e}")

# --- gradient descent on free Z' shows each term's fixed point -------------
print("\ngradient descent on free Z' (64x8), teacher Z fixed:")
z_t = rng.standard_normal((64, 8))
zp_gd = rng.standard_normal((64, 8))
for step in range(200):
    s, grad = invariance(z_t, zp_gd)
    zp_gd -= 16.0 * grad
print(f"  invariance alone: s after 200 steps = {invariance(z_t, zp_gd)[0]:.2e}")

zp_gd = 0.05 * rng.standard_normal((64, 8))
for step in range(3000):
    _, grad = variance(zp_gd, 1.0, 1e-4)
    zp_gd -= 1.0 * grad
stds = np.sqrt(zp_gd.var(axis=0, ddof=1) + 1e-4)
print(f"  variance alone: min column std = {stds.min():.4f} (threshold 1.0)")

zp_gd = rng.standard_normal((64, 8)) @ (np.eye(8) + 0.4 * rng.standard_normal((8, 8)))
for step in range(3000):
    _, grad = covariance(zp_gd)
    zp_gd -= 2.0 * grad
dev = zp_gd - zp_gd.mean(axis=0)
cov = dev.T @ dev / 63.0
off = cov - np.diag(np.diag(cov))
print(f"  covariance alone: max |off-diagonal| = {np.abs(off).max():.2e}")
