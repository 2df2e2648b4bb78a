# %% [markdown]
# # Where does a feature end up after high -> low -> high?
#
# An impulse goes through the H->L path with an all-ones 3x3 kernel and is
# upsampled back. Average pooling keeps the centroid in place; strided
# convolution samples the top-left pixel of every 2x2 cell, so after nearest
# upsampling the mass drifts half a pixel down and to the right.

# %%
import numpy as np

from octconv.diagnostics import centroid, misalignment_probe, round_trip

for s in ("avg", "max", "stride"):
    print(misalignment_probe(s))

# %%
x = np.zeros((1, 1, 12, 12))
x[0, 0, 6, 6] = 1.0
for s in ("avg", "stride"):
    out = round_trip(x, s)[0, 0]
    print(s, "centroid", centroid(out))
    print(np.round(out[3:10, 3:10], 2))

# %% [markdown]
# The shift does not depend on where the impulse sits, away from the borders.

# %%
print(misalignment_probe("stride", size=24, center=(6, 16)))
