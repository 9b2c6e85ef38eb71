"""
Dilated and differential multi-grain features
=============================================

Walk one feature map through the base branch and the differential dilated
branches, then look at what each grain responds to.
"""

import numpy as np

from agos.mgp import init_mgp, mgp_forward, mgp_params
from agos.tensor import Tensor
from agos.params import ModelParams

rng = np.random.default_rng(1)
grains = 3

params = ModelParams()
init_mgp(params, cin=4, channels=8, grains=grains, std=0.5, rng=rng, dtype=np.float64, tie_weights=False)
mp = mgp_params(params, grains, tie_weights=False)
print("dilations of D_0..D_T:", [k.dilation for k in mp.dilated])

# A bright square on a dark field.
x = np.zeros((1, 24, 24, 4))
x[0, 8:16, 8:16] = 1.0
feats = mgp_forward(Tensor(x), mp)
for t, f in enumerate(feats):
    energy = np.abs(f.data).mean()
    print(f"grain {t}: shape {f.shape}, mean |response| {energy:.4f}")

# With one kernel shared across dilations, a constant input gives no
# difference response away from the border.
tied = ModelParams()
init_mgp(tied, 4, 8, grains, 0.5, rng, np.float64, tie_weights=True)
flat = mgp_forward(Tensor(np.full((1, 24, 24, 4), 0.3)), mgp_params(tied, grains, True))
r = 2 * grains - 1
print("tied, constant input, interior max:", max(np.abs(f.data[:, r:-r, r:-r]).max() for f in flat[1:]))
