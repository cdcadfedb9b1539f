"""
Landmark attention against exact softmax attention
==================================================

Segment means of Q and K act as landmarks.  More landmarks give a better
approximation; the memory for intermediates stays linear in sequence length.
"""

import numpy as np

from laficmil.attention import AttentionConfig, ElementCounter, exact_attention, nystrom_attention
from laficmil.linalg import frobenius_rel_error

rng = np.random.default_rng(1)
n, d = 64, 8
q, k, v = (rng.standard_normal((n, d)) for _ in range(3))
reference = exact_attention(q, k, v)

for m in (2, 4, 8, 16, 32, 64):
    approx = nystrom_attention(q, k, v, AttentionConfig(d, 1, m))
    print(f"m={m:3d}  rel err {frobenius_rel_error(approx, reference):.4f}")

# with m = n the factorisation is exact up to the pseudoinverse; give it
# enough steps and the two agree
full = nystrom_attention(q, k, v, AttentionConfig(d, 1, n, pinv_iterations=25))
print("m=n, 25 pinv steps:", frobenius_rel_error(full, reference))

# count the elements held by intermediates at the high-water mark
for n in (256, 1024, 4096):
    x = rng.standard_normal((n, d))
    ny, ex = ElementCounter(), ElementCounter()
    nystrom_attention(x, x, x, AttentionConfig(d, 1, 8), counter=ny)
    exact_attention(x, x, x, counter=ex)
    print(f"n={n:5d}  nystrom peak {ny.peak:9d}  exact peak {ex.peak:10d}")
