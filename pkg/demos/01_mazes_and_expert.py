"""
Mazes, transforms and the scripted expert
=========================================

A tour of the environment side: the three grid mazes, the task transforms
that change how the agent perceives or acts, and the expert that produces
the offline datasets.
"""
import numpy as np

from hispo.envs import ExpertActor, gen_dataset, get_layout, make_env
from hispo.metrics import success_rate

# Each layout is an ASCII grid; '#' cells are walls, one cell is one unit.
for name in ("U", "M", "L"):
    layout = get_layout(name)
    print(name, layout.size, "cells,", len(layout.free_cells()), "free")
print(get_layout("M").grid.astype(int))

# A transform changes the I/O channel only. IA inverts the action,
# PO permutes the observation, and so on. Goals stay in maze coordinates.
env = make_env("U", "IA")
state = env.reset(np.random.default_rng(0))
print("start", state.position, "goal", state.goal, "first observation", env.observe(state))

# The expert plans over grid cells with BFS and tracks the waypoints.
# It solves every start/goal pair, whatever the transform.
for t in ("N", "IA", "PO"):
    print(t, "expert success:", success_rate(ExpertActor(), make_env("M", t), 50, seed=1))

# Datasets are lists of expert episodes with a provenance header.
data = gen_dataset(make_env("U", "N"), 20, seed=0)
print(len(data), "episodes, mean length", round(data.mean_length(), 1))
