# %% [markdown]
# # Training a toy network and looking at its spectra
#
# Four classes: an oriented grating is planted in one quadrant of a noisy
# 3x32x32 image, and the quadrant is the label. A vanilla network and its
# octave conversion train with the same budget and seeds.

# %%
from importlib.resources import files

from octconv.diagnostics import band_fractions, freq_analyze
from octconv.netspec import load_spec, octify
from octconv.train import ToyTask, train_toy

EPOCHS = 30  # lower this for a quick look
spec = load_spec(files("octconv") / "specs" / "toy.spec")
task = ToyTask(seed=0)

vanilla = train_toy(spec, task, epochs=EPOCHS)
octave = train_toy(octify(spec, 0.25), task, epochs=EPOCHS)
print("vanilla", vanilla.final_accuracy, "octave", octave.final_accuracy)

# %% [markdown]
# Layer 3 is the ReLU after the entry octave layer. The low group lives on a
# 16x16 grid; the fraction of its power outside the central band is compared
# with the same fraction for the 32x32 high group.

# %%
x, _ = task.generate(octave.net.dtype)
_, feats = octave.net.forward(x, capture=3)
print(band_fractions(feats))
maps = freq_analyze(feats)
print({g: m.shape for g, m in maps.items()})
