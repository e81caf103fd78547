"""
Baselines and the memory/forgetting trade-off
=============================================

The classic continual-learning strategies on a two-task stream. Single-policy
strategies keep memory at one network but can forget; per-task strategies
never forget but pay for a network per task; progressive networks pay more
still because of their lateral links.
"""
from hispo.baselines import StrategyConfig, run_strategy
from hispo.gcrl import TrainConfig, default_shapes
from hispo.streams import EvalConfig, StreamSpec

stream = StreamSpec.parse("U-N -> U-IA", episodes=100, seed=0)
train = TrainConfig(epochs=20)
ev = EvalConfig(50, 0)

print(f"{'strategy':8s} {'PER':>6s} {'BWT':>6s} {'MEM':>6s}")
for kind in ("SC1", "FT1", "L2", "EWC", "FZ", "SCN", "FTN", "PNN"):
    _, rep = run_strategy(kind, stream, train, StrategyConfig(lam=1.0, fisher_samples=128),
                          default_shapes(), ev, seed=0)
    m = rep.metrics
    print(f"{kind:8s} {m.per:6.2f} {m.bwt:+6.2f} {m.mem:6.2f}")
