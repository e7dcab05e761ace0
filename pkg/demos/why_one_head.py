"""Why a generator sample yields exactly one feasible head.

The soft adjacency is a column softmax of a symmetric score matrix S = M M^T,
so A[i, j] / A[j, i] = Z[i] / Z[j] with Z the column normalizers. Keeping the
larger entry of every pair orients each pair from larger Z to smaller Z: a
total order, hence no cycles, and only the top node can be the head.

Run:  python demos/why_one_head.py
"""
import numpy as np

from synthfeeder.gan import GanModel, TrainConfig
from synthfeeder.reconstruct import SoftGraph, head_candidates, permute_feeder_head, reconstruct_adjacency
from synthfeeder.validate import random_soft_graph

m, trials = 40, 100
rng = np.random.default_rng(0)
model = GanModel(TrainConfig(seed=0))

gen_counts, rand_counts = [], []
for _ in range(trials):
    soft = SoftGraph.from_generated(model.generate(m, rng))
    a_tilde = reconstruct_adjacency(soft.a_soft)
    cands = permute_feeder_head(a_tilde)
    z_ratio = soft.a_soft[:, 0] / soft.a_soft[0, :]
    assert [c.head for c in cands] == [int(np.argmax(z_ratio))]
    gen_counts.append(len(cands))
    rand_counts.append(len(permute_feeder_head(reconstruct_adjacency(random_soft_graph(m, rng).a_soft))))

print(f"generator: heads per sample {sorted(set(gen_counts))}, connected rate {np.mean(gen_counts) / m:.3f}")
print(f"random:    heads per sample {min(rand_counts)}..{max(rand_counts)}, "
      f"connected rate {np.mean(rand_counts) / m:.3f}, "
      f"samples with any feasible tree {np.mean(np.array(rand_counts) > 0):.0%}")
