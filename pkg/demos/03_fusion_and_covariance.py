"""
Score fusion and class covariance
=================================

Compare the four score-level fusion rules on made-up grain scores and
compute the class covariance of the fused distributions.
"""

import numpy as np

from agos.mil import FusionStrategy, classic_bag_label, covariance_matrix, fit_least_squares, fuse

rng = np.random.default_rng(2)

# A bag is positive as soon as one instance is.
print("bag labels:", classic_bag_label([0, 0, 0]), classic_bag_label([0, 1, 0]))

# 50 samples, 4 grains, 3 classes. Grain 2 is the informative one.
labels = rng.integers(0, 3, size=50)
scores = rng.standard_normal((50, 4, 3))
scores[:, 2] += 3.0 * np.eye(3)[labels]

weights = fit_least_squares(scores, labels)
print("least-squares grain weights:", np.round(weights, 3))

per_grain = list(scores.transpose(1, 0, 2))
for kind in ("mean", "max", "majority-vote", "least-squares"):
    probs = fuse(per_grain, FusionStrategy(kind, weights if kind == "least-squares" else None))
    print(f"{kind:>14}: accuracy {np.mean(probs.argmax(axis=1) == labels):.2f}")
    if kind == "least-squares":
        cov = covariance_matrix(probs)

print("covariance of least-squares outputs:\n", np.round(cov, 4))
print("smallest eigenvalue:", np.linalg.eigvalsh(cov).min())
