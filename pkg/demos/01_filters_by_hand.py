"""
Stage II and Stage III on hand-made updates
===========================================

Twelve clients in 12 dimensions. Seven are honest and noisy, three collude by
sending the same vector, and two honest-looking clients flip their sign.
We push them through the colluding filter, then through the spectral
filter, and look at what each one catches.
"""
import numpy as np

from fpd.defense import colluding_scores, spectral_filter
from fpd.vecmath import cosine, normalize

rng = np.random.default_rng(3)
d = 12
true_direction = normalize(rng.standard_normal(d))

updates = {k: true_direction + 0.3 * rng.standard_normal(d) for k in range(7)}
updates[7] = updates[8] = updates[9] = true_direction - 2.0 * rng.standard_normal(d)  # colluders
updates[10] = -(true_direction + 0.3 * rng.standard_normal(d))                       # sign flippers
updates[11] = -(true_direction + 0.3 * rng.standard_normal(d))

# %% honest pairs stay under the 0.8 cosine threshold
honest = [cosine(updates[i], updates[j]) for i in range(7) for j in range(i + 1, 7)]
print(f"largest honest pairwise cosine: {max(honest):.3f}")

# %% Stage II: anyone too close to someone else goes
scores, removed = colluding_scores(updates, gamma=0.8)
print("colluding scores:", scores)
print("removed by Stage II:", sorted(removed))

# %% Stage III: directions only, so normalize first
normed = {k: normalize(v) for k, v in updates.items() if k not in removed}
flagged = spectral_filter(normed, delta=-0.1, seed=0)
print("removed by Stage III:", sorted(flagged))

kept = sorted(set(normed) - flagged)
mean_dir = normalize(np.mean([normed[k] for k in kept], axis=0))
print(f"kept {kept}; cosine of their mean with the true direction: {cosine(mean_dir, true_direction):.3f}")
