"""
Growing subspaces over a task stream
====================================

Each level keeps a convex hull of anchor networks. For a new task a fresh
anchor is trained; if some point of the old hull already does almost as
well, the anchor is dropped and only a weight vector is stored. The
kinematic stream below inverts the actions, which the low level cannot
absorb while the high level can.
"""
from hispo.gcrl import TrainConfig, default_shapes
from hispo.streams import EvalConfig, StreamSpec
from hispo.subspace import SubspaceConfig, learn_stream

# Pruning needs converged anchors: with a short budget the new anchor keeps
# improving on the old hull for reasons unrelated to the task change.
stream = StreamSpec.parse("U-N -> U-IA", episodes=200, seed=0)
train = TrainConfig(epochs=100)

model, report = learn_stream(stream, SubspaceConfig(epsilon=0.25), train, default_shapes(),
                             EvalConfig(50, 0), seed=0)

for d in report.extra["decisions"]:
    ratio = "" if d["l_prev"] is None else f"  L_prev/L_curr = {d['l_prev'] / d['l_curr']:.2f}"
    print(f"task {d['task']} {d['level']:>4}: {d['decision']}{ratio}")

print("anchors per level:", report.extra["anchors"])
print("success matrix (row = after task):")
print(report.matrix.sigma.round(2))
print(report.metrics)

# LoRA anchors store a low-rank update per layer instead of a full vector.
_, lora = learn_stream(stream, SubspaceConfig(epsilon=0.25, lora_rank=4), train, default_shapes(),
                       EvalConfig(50, 0), seed=0)
print("HiLOW MEM", round(lora.metrics.mem, 3), "vs HiSPO MEM", round(report.metrics.mem, 3))
