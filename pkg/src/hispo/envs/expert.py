"""Scripted expert: BFS over grid cells, then waypoint tracking."""
from __future__ import annotations

from collections import deque

import numpy as np

from .maze import V_MAX, EnvState, MazeEnv, MazeLayout, reached
from .data import Dataset, Episode, splitmix64
from .transforms import inverse_obs, transform_action

WAYPOINT_RADIUS = 0.4
POSITION_GAIN = 0.25
VELOCITY_GAIN = 2.0


class UnreachableGoal(ValueError):
    pass


def bfs_cells(layout: MazeLayout, start_cell, goal_cell) -> list[tuple[int, int]]:
    start_cell, goal_cell = tuple(start_cell), tuple(goal_cell)
    h, w = layout.grid.shape
    prev = {start_cell: None}
    queue = deque([start_cell])
    while queue:
        cell = queue.popleft()
        if cell == goal_cell:
            break
        r, c = cell
        for nxt in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= nxt[0] < h and 0 <= nxt[1] < w and not layout.grid[nxt] and nxt not in prev:
                prev[nxt] = cell
                queue.append(nxt)
    if goal_cell not in prev:
        raise UnreachableGoal(f"no path from {start_cell} to {goal_cell}")
    path = []
    cell = goal_cell
    while cell is not None:
        path.append(cell)
        cell = prev[cell]
    return path[::-1]


def plan_waypoints(layout: MazeLayout, start, goal) -> list[np.ndarray]:
    """Cell centers along the BFS path (start cell excluded), ending at the goal itself."""
    s_cell = tuple(int(v) for v in layout.cell_of(start))
    g_cell = tuple(int(v) for v in layout.cell_of(goal))
    cells = bfs_cells(layout, s_cell, g_cell)
    wps = [layout.cell_center(c) for c in cells[1:-1]]
    wps.append(np.asarray(goal, dtype=float))
    return wps


class WaypointController:
    """Proportional velocity tracking of successive waypoints, in the native frame."""

    def __init__(self, waypoints, v_max: float = V_MAX):
        self.waypoints = list(waypoints)
        self.index = 0
        self.v_max = v_max

    def act(self, pos, vel) -> np.ndarray:
        while (self.index < len(self.waypoints) - 1
               and np.linalg.norm(self.waypoints[self.index] - pos) < WAYPOINT_RADIUS):
            self.index += 1
        target = self.waypoints[self.index]
        desired = np.clip(POSITION_GAIN * (target - pos), -self.v_max, self.v_max)
        return np.clip((desired + VELOCITY_GAIN * (desired - vel)) / self.v_max, -1.0, 1.0)


def expert_episode(env: MazeEnv, rng=None, start=None, goal=None) -> Episode:
    """Roll out the scripted expert and record transitions through the task transform."""
    rng = env.rng if rng is None else rng
    if start is None or goal is None:
        s, g = env.sample_start_goal(rng)
        start = s if start is None else start
        goal = g if goal is None else goal
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    ctrl = WaypointController(plan_waypoints(env.layout, start, goal), env.v_max)
    state = EnvState(start, np.zeros(2), goal, 0)
    obs, acts, rews, nobs = [], [], [], []
    done = False
    while not done:
        native = ctrl.act(state.position, state.velocity)
        action = transform_action(env.transform, native)
        o = env.observe(state)
        state, r, done = env.step(state, action)
        obs.append(o)
        acts.append(action)
        rews.append(r)
        nobs.append(env.observe(state))
    return Episode(obs, acts, rews, nobs, goal)


class ExpertActor:
    """Batched actor interface around the scripted expert (native positions required)."""

    def __init__(self):
        self.env = None
        self._ctrls = []

    def begin(self, env: MazeEnv, starts, goals):
        self.env = env
        self._ctrls = [WaypointController(plan_waypoints(env.layout, s, g), env.v_max)
                       for s, g in zip(starts, goals)]

    def act(self, obs, goals, t):
        raw = inverse_obs(self.env.transform, obs)
        native = np.array([c.act(o[:2], o[2:]) for c, o in zip(self._ctrls, raw)])
        return transform_action(self.env.transform, native)


def gen_dataset(env: MazeEnv, n_episodes: int, seed: int = 0, max_attempts: int = 100) -> Dataset:
    """``n_episodes`` successful expert episodes.

    Episode ``i`` draws from its own generator seeded with
    ``splitmix64(seed, i)``; failed or unreachable draws are resampled from
    the same generator, so each episode is independent of generation order.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    episodes = []
    for i in range(n_episodes):
        rng = np.random.default_rng(splitmix64(seed, i))
        for _ in range(max_attempts):
            try:
                ep = expert_episode(env, rng)
            except UnreachableGoal:
                continue
            if ep.success:
                episodes.append(ep)
                break
        else:
            raise RuntimeError(f"episode {i}: no successful expert rollout in {max_attempts} draws")
    meta = {"layout": env.layout.id, "transform": env.transform.value, "seed": int(seed),
            "horizon": env.horizon}
    return Dataset(episodes, meta)
