"""
Hierarchical behaviour cloning
==============================

The backbone policy has two levels. The high level predicts where the agent
should be ``k`` steps ahead; the low level outputs the action that heads for
that subgoal. Both are plain MLPs fitted by regression on expert data, with
hindsight relabelled goals for the high level.
"""
from hispo.envs import gen_dataset, make_env
from hispo.gcrl import HierActor, TrainConfig, default_shapes, high_loss, low_loss, train_bc, train_hbc
from hispo.metrics import success_rate

env = make_env("U", "N")
data = gen_dataset(env, 100, seed=0)

# A short budget keeps the demo fast; the acceptance suite uses 100 epochs.
cfg = TrainConfig(epochs=20)
print("waystep for U:", cfg.k_for("U"))

hbc = train_hbc(data, default_shapes(), cfg)
print("high loss", round(high_loss(hbc, data), 4), "low loss", round(low_loss(hbc, data), 4))

# Flat BC is the same low-level network conditioned on the final goal.
bc = train_bc(data, default_shapes()[1], cfg)

for name, policy in (("HBC", hbc), ("BC", bc)):
    print(name, "success on U:", success_rate(HierActor(policy), env, 50, seed=3))
