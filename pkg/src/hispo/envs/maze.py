"""Kinematic 2-D point agent in a grid maze with a sparse goal reward."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .transforms import TaskTransform, inverse_action, transform_obs

GOAL_RADIUS = 0.5
V_MAX = 0.1
OBS_DIM = 4
ACTION_DIM = 2
GOAL_DIM = 2

_ASCII = {
    "U": """
#####
#...#
###.#
#...#
#####
""",
    "M": """
########
#..##..#
#..#...#
##...###
#..#...#
#.#..#.#
#...#..#
########
""",
    "L": """
############
#....#.....#
#.##.#.#.#.#
#......#...#
#.####.###.#
#..#.#.....#
##.#.#.#.###
#..#...#...#
############
""",
}

DEFAULT_HORIZON = {"U": 300, "M": 600, "L": 900}


@dataclass(frozen=True)
class MazeLayout:
    id: str
    grid: np.ndarray  # bool, True = wall; indexed [row, col]
    cell_size: float = 1.0

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=bool)
        if grid.ndim != 2 or min(grid.shape) < 3:
            raise ValueError("maze grid must be 2-D and at least 3x3")
        if not (grid[0].all() and grid[-1].all() and grid[:, 0].all() and grid[:, -1].all()):
            raise ValueError(f"maze {self.id!r}: border cells must be walls")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @classmethod
    def from_ascii(cls, id: str, text: str, cell_size: float = 1.0) -> "MazeLayout":
        rows = [line for line in text.strip().splitlines() if line.strip()]
        if len({len(r) for r in rows}) != 1:
            raise ValueError("ragged maze rows")
        grid = np.array([[ch == "#" for ch in row] for row in rows])
        return cls(id, grid, cell_size)

    @property
    def size(self) -> tuple[int, int]:
        """(width, height) in cells."""
        return self.grid.shape[1], self.grid.shape[0]

    def free_cells(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(~self.grid)
        return list(zip(rows.tolist(), cols.tolist()))

    def cell_of(self, pos) -> tuple[np.ndarray, np.ndarray]:
        pos = np.asarray(pos, dtype=float)
        col = np.floor(pos[..., 0] / self.cell_size).astype(int)
        row = np.floor(pos[..., 1] / self.cell_size).astype(int)
        return row, col

    def is_wall(self, pos) -> np.ndarray:
        row, col = self.cell_of(pos)
        h, w = self.grid.shape
        outside = (row < 0) | (row >= h) | (col < 0) | (col >= w)
        return outside | self.grid[np.clip(row, 0, h - 1), np.clip(col, 0, w - 1)]

    def cell_center(self, cell) -> np.ndarray:
        r, c = cell
        return np.array([(c + 0.5) * self.cell_size, (r + 0.5) * self.cell_size])


LAYOUTS = {k: MazeLayout.from_ascii(k, v) for k, v in _ASCII.items()}


def get_layout(layout) -> MazeLayout:
    if isinstance(layout, MazeLayout):
        return layout
    try:
        return LAYOUTS[str(layout)]
    except KeyError:
        raise ValueError(f"unknown layout {layout!r}; expected one of {sorted(LAYOUTS)}") from None


@dataclass(frozen=True)
class EnvState:
    position: np.ndarray
    velocity: np.ndarray
    goal: np.ndarray
    t: int = 0

    def raw_obs(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])


def move(layout: MazeLayout, pos, vel, native_action, v_max: float = V_MAX):
    """Vectorized kinematics with axis-separated wall sliding.

    ``pos``, ``vel`` and ``native_action`` are (..., 2) arrays; returns the
    new (pos, vel).
    """
    a = np.clip(native_action, -1.0, 1.0)
    vel = np.clip(0.8 * vel + 0.2 * a * v_max, -v_max, v_max)
    pos = np.array(pos, dtype=float, copy=True)
    vel = np.array(vel, dtype=float, copy=True)
    for axis in (0, 1):
        trial = pos.copy()
        trial[..., axis] += vel[..., axis]
        blocked = layout.is_wall(trial)
        pos[..., axis] = np.where(blocked, pos[..., axis], trial[..., axis])
        vel[..., axis] = np.where(blocked, 0.0, vel[..., axis])
    return pos, vel


def reached(pos, goal) -> np.ndarray:
    return np.linalg.norm(np.asarray(pos) - np.asarray(goal), axis=-1) <= GOAL_RADIUS


class MazeEnv:
    """One task MDP: a layout, a transform on the agent channel, a horizon."""

    def __init__(self, layout, transform="N", horizon: int | None = None, seed=0,
                 v_max: float = V_MAX):
        self.layout = get_layout(layout)
        self.transform = TaskTransform.parse(transform)
        self.horizon = int(horizon or DEFAULT_HORIZON.get(self.layout.id, 600))
        self.v_max = v_max
        self.seed = seed
        self._free = self.layout.free_cells()
        if not self._free:
            raise ValueError(f"layout {self.layout.id!r} has no free cells")
        self.rng = np.random.default_rng(seed)

    def sample_start_goal(self, rng=None, n: int | None = None):
        """Start and goal positions jittered around the centers of two distinct free cells."""
        rng = self.rng if rng is None else rng
        m = 1 if n is None else n
        free = np.array(self._free)
        if len(free) > 1:
            idx = np.array([rng.choice(len(free), size=2, replace=False) for _ in range(m)])
        else:
            idx = np.zeros((m, 2), dtype=int)
        cs = self.layout.cell_size
        centers = (free[idx][..., ::-1] + 0.5) * cs  # (m, 2, 2) as (x, y)
        pts = centers + rng.uniform(-0.25, 0.25, size=centers.shape) * cs
        start, goal = pts[:, 0], pts[:, 1]
        if n is None:
            return start[0], goal[0]
        return start, goal

    def reset(self, rng=None) -> EnvState:
        start, goal = self.sample_start_goal(rng)
        return EnvState(start, np.zeros(2), goal, 0)

    def observe(self, state: EnvState) -> np.ndarray:
        return transform_obs(self.transform, state.raw_obs())

    def step(self, state: EnvState, action):
        """Agent-frame action -> (next state, reward, done)."""
        action = np.asarray(action, dtype=float)
        if action.shape != (ACTION_DIM,) or not np.all(np.isfinite(action)):
            raise ValueError(f"action must be a finite 2-vector, got {action!r}")
        native = inverse_action(self.transform, np.clip(action, -1.0, 1.0))
        pos, vel = move(self.layout, state.position, state.velocity, native, self.v_max)
        reward = int(reached(pos, state.goal))
        t = state.t + 1
        done = bool(reward == 1 or t >= self.horizon)
        return EnvState(pos, vel, state.goal.copy(), t), reward, done


def make_env(layout, transform="N", horizon: int | None = None, seed=0) -> MazeEnv:
    return MazeEnv(layout, transform, horizon, seed)
