"""Train a standard / adversarial model pair with several robust objectives.

Run: python3 demos/03_training_methods.py   (about a minute)
"""
import dataclasses

from topotrain import (
    AttackConfig,
    MethodSpec,
    TrainConfig,
    accuracy,
    lambda_at,
    pgd20,
    robust_accuracy,
    train,
    two_moons,
)

train_data, test_data = two_moons(1000, 0.1, seed=100), two_moons(500, 0.1, seed=200)
base = TrainConfig(epochs=15, attack=AttackConfig(0.05, 0.0125, 10, True))
evaluate_with = pgd20(0.05, 0.00625)

methods = {
    "standard": MethodSpec(robust_kind="standard_only", use_train_regularizer=False),
    "vanilla AT": MethodSpec(robust_kind="vanilla_at", use_train_regularizer=False),
    "TRADES": MethodSpec(robust_kind="trades", use_train_regularizer=False),
    "TRADES + TRAIN": MethodSpec(robust_kind="trades", lambda_base=1.0),
    # the default gamma = 1 diverges at lr 0.1 here: the squared logit gap is unbounded
    "AT + LBGAT + TRAIN": MethodSpec(robust_kind="vanilla_at+lbgat", lambda_base=1.0, lbgat_gamma=0.1),
}
for name, method in methods.items():
    result = train(dataclasses.replace(base, method=method), train_data)
    model = result.std if method.robust_kind == "standard_only" else result.adv
    last = result.records[-1]
    print(f"{name:20s} natural {accuracy(model, test_data):.3f}  PGD-20 {robust_accuracy(model, test_data, evaluate_with):.3f}"
          f"  last-epoch L_TP {last.loss_tp:.4f}")

# the optional ramp for the regularizer weight
print("sigmoid ramp, base 5, T=30:", [round(lambda_at(t, 30, 5.0, "sigmoid_ramp"), 2) for t in (0, 5, 10, 29)])
