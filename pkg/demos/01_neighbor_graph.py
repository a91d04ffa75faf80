"""Neighbour graphs over penultimate features and the topology loss.

Run: python3 demos/01_neighbor_graph.py
"""
import numpy as np

from topotrain import cosine_distances, make_rng, neighbor_graph, offsets, topology_loss
from topotrain.topology import topology_loss_and_grads

rng = make_rng(0)
F = rng.standard_normal((6, 4))

D = cosine_distances(F)
print("cosine distances\n", np.round(D, 3))
print("rho (nearest-neighbour distance per sample):", np.round(offsets(D), 3))

# column j holds p(i | j); every column is a distribution over the other samples
P = neighbor_graph(F)
print("graph\n", np.round(P, 3))
print("column sums:", P.sum(axis=0))

# cosine geometry ignores feature scale
print("max change under 7x scaling:", np.abs(neighbor_graph(7 * F) - P).max())

# the loss is zero when both graphs agree and grows as Q drifts from P
for noise in (0.0, 0.1, 0.5, 1.0):
    Q = neighbor_graph(F + noise * rng.standard_normal(F.shape))
    print(f"feature noise {noise}: L_TP = {topology_loss(P, Q):.5f}")

# only the Q side receives gradient: P is a fixed target
loss, g_std, g_adv = topology_loss_and_grads(F, F + 0.3 * rng.standard_normal(F.shape))
print("loss", round(loss, 5), "| grad on P side all zero:", not g_std.any(), "| grad norm on Q side:",
      round(float(np.linalg.norm(g_adv)), 5))
