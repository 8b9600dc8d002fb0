"""
Gaussian glimpses on a synthetic pair
=====================================

A glimpse resamples an image with two row-stochastic filter banks,
``g = A_y I A_x^T``.  Each row of a bank is a normalised Gaussian whose
center moves by ``d`` pixels from one row to the next, starting at
``u * (C - 1)``.
"""

import sys
from pathlib import Path

import numpy as np

from siamcd import GlimpseParams, gaussian_mask, preprocess_pair, synth_generate
from siamcd.data import write_label_png, write_png

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "glimpse_demo")
out_dir.mkdir(exist_ok=True)

# With a tiny width and unit spacing the bank is the identity.
sharp = gaussian_mask(GlimpseParams(u=0.0, s=1e-3, d=1, rows=5, cols=5)).values
print("s -> 0 gives the identity:", np.allclose(sharp, np.eye(5), atol=1e-6))

# The first rows of the default bank on a 16-pixel axis.
bank = gaussian_mask(GlimpseParams(rows=16, cols=16)).values
np.set_printoptions(precision=2, suppress=True, linewidth=120)
print("first rows of the u=0.1, s=0.5, d=2 bank:\n", bank[:4])
print("row sums:", bank.sum(axis=1)[:4])

# Rows whose Gaussian falls past the edge have nothing to normalise and
# become uniform averages.
uniform_rows = int(np.sum(np.isclose(bank, 1 / 16).all(axis=1)))
print(f"{uniform_rows} of 16 rows centred beyond the image are uniform")

# Apply the default glimpse to one synthetic pair and save before/after.
(pair,) = synth_generate(seed=1, count=1, size=64, change_fraction=0.1)
for params in (GlimpseParams(), GlimpseParams(u=0.0, s=1.0, d=1.0)):
    glimpsed = preprocess_pair(pair, params)
    tag = f"u{params.u}_s{params.s}_d{params.d}"
    write_png(out_dir / f"t1_{tag}.png", glimpsed.t1)
    write_png(out_dir / f"t2_{tag}.png", glimpsed.t2)
write_png(out_dir / "t1_original.png", pair.t1)
write_label_png(out_dir / "label.png", pair.label)
print("wrote", sorted(p.name for p in out_dir.iterdir()))
