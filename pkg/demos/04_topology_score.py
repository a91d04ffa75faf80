"""kNN topology score of trained models, and a small TRADES beta sweep.

Run: python3 demos/04_topology_score.py   (a few minutes)
"""
import dataclasses

from topotrain import (
    AttackConfig,
    MethodSpec,
    TopologyScoreConfig,
    TrainConfig,
    pgd20,
    topology_score,
    train,
    two_moons,
)
from topotrain.experiments import beta_sweep

train_data, test_data = two_moons(1000, 0.1, seed=100), two_moons(500, 0.1, seed=200)
base = TrainConfig(epochs=15, attack=AttackConfig(0.05, 0.0125, 10, True))
support_attack = pgd20(0.05, 0.00625)

sweep = beta_sweep(base, train_data, test_data, betas=[1, 2, 4, 6], seeds=[0, 1],
                   eval_attack=support_attack, ks=(5, 30))
for row in sweep.rows:
    print(f"beta {row.beta:g} seed {row.seed}: natural {row.natural_acc:.3f} robust {row.robust_acc:.3f} "
          f"topology k=5 {row.topology[5]:.3f} k=30 {row.topology[30]:.3f}")
for k in (5, 30):
    print(f"k={k}: mean per-seed Spearman {sweep.mean_spearman(k)}, pooled {sweep.pooled_spearman(k)}")

# the same score computed directly for one model, with and without adversarial support points
model = train(dataclasses.replace(base, method=MethodSpec(robust_kind="trades", use_train_regularizer=False)),
              train_data).adv
for adv_support in (False, True):
    cfg = TopologyScoreConfig(k=30, include_adversarial_support=adv_support, support_attack=support_attack)
    print(f"adversarial support {adv_support}: natural queries {topology_score(model, train_data, test_data, cfg):.3f},"
          f" attacked queries {topology_score(model, train_data, test_data, cfg, attack_test=support_attack):.3f}")
