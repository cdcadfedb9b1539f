"""
Entropy of a bag versus its parts
=================================

For any joint distribution the joint entropy is at most the sum of the
marginal entropies, with equality under independence.
"""

import numpy as np

from laficmil.corpus import JointDistribution, entropy_inequality_check

coins = JointDistribution(np.full((2, 2), 0.25))
linked = JointDistribution([[0.5, 0.0], [0.0, 0.5]])
for name, dist in [("independent", coins), ("linked", linked)]:
    r = entropy_inequality_check(dist)
    print(f"{name:12s} H={r.joint:.3f}  sum H_t={r.sum_marginals:.3f}  chain={r.chain_rule_sum:.3f}")

rng = np.random.default_rng(3)
gaps = []
for _ in range(300):
    sizes = rng.integers(2, 5, size=rng.integers(2, 5))
    r = entropy_inequality_check(JointDistribution.random(sizes, rng))
    gaps.append(r.sum_marginals - r.joint)
print("smallest gap", min(gaps), "largest gap", max(gaps))
