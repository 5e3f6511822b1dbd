"""
Vector quantization with EMA k-means
====================================

The bottleneck replaces each encoder frame by its nearest codebook row. The
codebook itself is not trained by gradient: it follows exponentially averaged
cluster statistics. Here the quantizer recovers four planted clusters.
"""

import numpy as np

from enhancodec.quantizer import Codebook, codebook_perplexity

# Seed chosen so the initial code draw covers all four clusters. Codes are
# seeded from random batch rows; a cluster missed at init stays a dead code
# forever, because EMA only moves codes that win assignments.
rng = np.random.default_rng(2)

# Four well-separated centers in 8 dimensions, plus a small codebook.
centers = rng.normal(size=(4, 8)) * 3.0
book = Codebook(size=4, dim=8, decay=0.9)


def draw_batch(n=256):
    picks = rng.integers(0, 4, size=n)
    return centers[picks] + 0.05 * rng.normal(size=(n, 8))


# Codes start as random rows of the first batch, then EMA pulls each code
# toward the mean of the vectors assigned to it.
batch = draw_batch()
book.initialize_from(batch, rng)

for step in range(100):
    batch = draw_batch()
    indices, _ = book.quantize(batch)
    book.ema_update(batch, indices)
    if step % 20 == 0 or step == 99:
        # Worst distance from any planted center to its closest code.
        d = np.linalg.norm(centers[:, None, :] - book.codes[None, :, :], axis=-1)
        worst = d.min(axis=1).max()
        perp = codebook_perplexity(indices, book.size)
        print(f"step {step:3d}  worst center distance {worst:.4f}  "
              f"perplexity {perp:.2f} of {book.size}")

# Perplexity near 4 means all four codes carry load; a collapsed codebook
# would sit near 1.
indices, quantized = book.quantize(draw_batch())
print("\nfinal assignment counts:", np.bincount(indices, minlength=4))
print("quantization is idempotent:",
      np.array_equal(book.quantize(quantized)[1], quantized))
