"""FGSM and PGD inside the L-inf ball on a small MLP.

Run: python3 demos/02_attacks.py
"""
import dataclasses

import numpy as np

from topotrain import AttackConfig, fgsm, forward, init_mlp, make_rng, pgd, two_moons
from topotrain.losses import predict

data = two_moons(200, 0.1, seed=0)
model = init_mlp((2, 32, 32, 2), make_rng(1))

cfg = AttackConfig(epsilon=0.05, step_size=0.0125, iterations=10, random_start=True)
print("attack:", cfg.label, cfg)

X_fgsm = fgsm(model, data.X, data.y, cfg)
X_pgd = pgd(model, data.X, data.y, cfg, seed=0)
for name, X in (("fgsm", X_fgsm), ("pgd", X_pgd)):
    print(f"{name}: max |X'-X| = {np.abs(X - data.X).max():.4f}, range [{X.min():.3f}, {X.max():.3f}]")

# budget 0 and zero iterations without random start leave the inputs alone
print("eps=0 identity:", np.array_equal(pgd(model, data.X, data.y, dataclasses.replace(cfg, epsilon=0.0)), data.X))
no_steps = dataclasses.replace(cfg, iterations=0, random_start=False)
print("K=0 identity:", np.array_equal(pgd(model, data.X, data.y, no_steps), data.X))

# random starts are drawn per sample, so splitting a batch changes nothing
ids = np.arange(len(data.y))
whole = pgd(model, data.X, data.y, cfg, seed=3, sample_ids=ids)
halves = np.vstack([pgd(model, data.X[:100], data.y[:100], cfg, seed=3, sample_ids=ids[:100]),
                    pgd(model, data.X[100:], data.y[100:], cfg, seed=3, sample_ids=ids[100:])])
print("batch split invariant:", np.array_equal(whole, halves))

for objective in ("cross_entropy", "margin"):
    atk = dataclasses.replace(cfg, random_start=False, objective=objective)
    acc = np.mean(predict(forward(model, pgd(model, data.X, data.y, atk)).logits) == data.y)
    print(f"{atk.label}: accuracy under attack {acc:.3f}")
