"""Goal-conditioned imitation: flat BC, hierarchical BC, HER relabeling, rollout actors."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import nnet
from .envs import ACTION_DIM, GOAL_DIM, GOAL_RADIUS, OBS_DIM, Dataset, Episode, goal_map
from .nnet import AdamState, NetShape

CHECKPOINT_VERSION = 1

# Benchmark-scale architecture: 64-unit high level, 256-unit low level, dropout 0.1.
REFERENCE_HIGH_SHAPE = NetShape(OBS_DIM + GOAL_DIM, (64, 64), GOAL_DIM, True, 0.1)
REFERENCE_LOW_SHAPE = NetShape(OBS_DIM + GOAL_DIM, (256, 256), ACTION_DIM, True, 0.1)

# PointMaze benchmark way steps, rescaled to the desk agent (see default_waystep).
REFERENCE_WAYSTEP = {"U": 50, "M": 25, "L": 25}
REFERENCE_U_EPISODE_LENGTH = 63.8
DESK_U_EPISODE_LENGTH = 25.7  # mean scripted-expert length, 500 U-maze episodes


def default_waystep(layout: str = "U") -> int:
    """Benchmark way step scaled by the ratio of desk to benchmark U-maze expert episode lengths."""
    k = REFERENCE_WAYSTEP.get(layout, REFERENCE_WAYSTEP["U"])
    return max(3, round(k * DESK_U_EPISODE_LENGTH / REFERENCE_U_EPISODE_LENGTH))


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 3e-4
    her_temperature: float = 20.0
    her_fraction: float = 0.8
    waystep: int | None = None  # None: per-layout default_waystep
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.her_temperature <= 0:
            raise ValueError(f"invalid training config {self}")
        if not 0.0 <= self.her_fraction <= 1.0:
            raise ValueError("her_fraction must lie in [0, 1]")
        if self.waystep is not None and self.waystep < 1:
            raise ValueError("waystep must be >= 1")

    def k_for(self, layout: str = "U") -> int:
        return self.waystep if self.waystep is not None else default_waystep(layout)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets differ in row count")

    def __len__(self):
        return len(self.inputs)


class TransitionTable:
    """Flat, indexable view of a dataset used by the batch builders."""

    def __init__(self, dataset: Dataset):
        if len(dataset) == 0:
            raise ValueError("empty dataset")
        eps = dataset.episodes
        transform = dataset.transform
        lens = np.array([len(ep) for ep in eps])
        self.n_rows = int(lens.sum())
        self.obs = np.vstack([ep.obs for ep in eps])
        self.actions = np.vstack([ep.actions for ep in eps])
        self.goals = np.repeat(np.vstack([ep.goal for ep in eps]), lens, axis=0)
        self.ep_len = np.repeat(lens, lens)
        self.t = np.concatenate([np.arange(n) for n in lens])
        # positions phi(s_0..s_T) for every episode, concatenated
        self.positions = np.vstack([ep.positions(transform) for ep in eps])
        pos_off = np.concatenate([[0], np.cumsum(lens + 1)[:-1]])
        self.pos_offset = np.repeat(pos_off, lens)
        self.ep_index = np.repeat(np.arange(len(eps)), lens)

    def future_position(self, rows, offset) -> np.ndarray:
        """phi(s_{t+offset}), clamped to the episode's final state."""
        steps = np.minimum(self.t[rows] + offset, self.ep_len[rows])
        return self.positions[self.pos_offset[rows] + steps]


_TABLES: dict[int, tuple[Dataset, TransitionTable]] = {}


def table_for(dataset) -> TransitionTable:
    if isinstance(dataset, TransitionTable):
        return dataset
    hit = _TABLES.get(id(dataset))
    if hit is not None and hit[0] is dataset:
        return hit[1]
    table = TransitionTable(dataset)
    _TABLES[id(dataset)] = (dataset, table)
    return table


def sample_her_offsets(remaining, temperature: float, rng) -> np.ndarray:
    """Draw offsets in {1..remaining} with P(d) proportional to exp(-d / temperature).

    Uses the inverse CDF of the truncated geometric law, vectorized over rows.
    """
    remaining = np.asarray(remaining)
    u = rng.random(remaining.shape)
    mass = -np.expm1(-remaining / temperature)
    d = np.ceil(-temperature * np.log1p(-u * mass))
    return np.clip(d, 1, remaining).astype(int)


def her_relabel(episode: Episode, t: int, temperature: float, rng, fraction: float = 1.0,
                transform="N") -> np.ndarray:
    """Goal for step ``t``: phi(s_{t+d}) with exponentially decaying d, or the original goal."""
    T = len(episode)
    if not 0 <= t < T:
        raise IndexError(f"step {t} outside episode of length {T}")
    if fraction < 1.0 and rng.random() >= fraction:
        return episode.goal.copy()
    d = int(sample_her_offsets(np.array([T - t]), temperature, rng)[0])
    return episode.positions(transform)[t + d]


def _her_goals(table: TransitionTable, rows, rng, temperature, fraction):
    goals = table.goals[rows].copy()
    if temperature is None or fraction <= 0.0:
        return goals
    remaining = table.ep_len[rows] - table.t[rows]
    relabel = rng.random(len(rows)) < fraction
    d = sample_her_offsets(remaining, temperature, rng)
    future = table.positions[table.pos_offset[rows] + table.t[rows] + d]
    goals[relabel] = future[relabel]
    return goals


def high_batch_rows(dataset, rows, k: int, rng=None, her_temperature=None, her_fraction=0.8) -> Batch:
    table = table_for(dataset)
    goals = _her_goals(table, rows, rng, her_temperature, her_fraction)
    return Batch(np.hstack([table.obs[rows], goals]), table.future_position(rows, k))


def low_batch_rows(dataset, rows, k: int) -> Batch:
    table = table_for(dataset)
    return Batch(np.hstack([table.obs[rows], table.future_position(rows, k)]), table.actions[rows])


def flat_batch_rows(dataset, rows, rng=None, her_temperature=None, her_fraction=0.8) -> Batch:
    table = table_for(dataset)
    goals = _her_goals(table, rows, rng, her_temperature, her_fraction)
    return Batch(np.hstack([table.obs[rows], goals]), table.actions[rows])


def make_high_batch(dataset, k: int, batch_size: int, rng, her_temperature=None,
                    her_fraction: float = 0.8) -> Batch:
    """Rows (s_t + g, phi(s_{t+k})); goals relabeled by HER when a temperature is given."""
    table = table_for(dataset)
    rows = rng.integers(0, table.n_rows, size=batch_size)
    return high_batch_rows(table, rows, k, rng, her_temperature, her_fraction)


def make_low_batch(dataset, k: int, batch_size: int, rng) -> Batch:
    """Rows (s_t + phi(s_{t+k}), a_t)."""
    table = table_for(dataset)
    rows = rng.integers(0, table.n_rows, size=batch_size)
    return low_batch_rows(table, rows, k)


def epoch_row_batches(n_rows: int, batch_size: int, rng):
    perm = rng.permutation(n_rows)
    for i in range(0, n_rows, batch_size):
        yield perm[i:i + batch_size]


@dataclass
class HierPolicy:
    """High level (obs + goal -> subgoal) and low level (obs + subgoal -> action).

    With ``theta_h`` set to None the policy is flat BC: the low level is
    conditioned on the final goal directly.
    """

    shape_h: NetShape | None
    theta_h: np.ndarray | None
    shape_l: NetShape
    theta_l: np.ndarray
    k: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("waystep must be >= 1")

    @property
    def flat(self) -> bool:
        return self.theta_h is None

    def n_params(self) -> int:
        return self.theta_l.size + (0 if self.flat else self.theta_h.size)

    def subgoal(self, obs, goal) -> np.ndarray:
        if self.flat:
            return np.array(goal, dtype=float)
        return nnet.forward(self.shape_h, self.theta_h, np.hstack([obs, goal]))

    def low_action(self, obs, subgoal) -> np.ndarray:
        a = nnet.forward(self.shape_l, self.theta_l, np.hstack([obs, subgoal]))
        return np.clip(a, -1.0, 1.0)

    def copy(self) -> "HierPolicy":
        return HierPolicy(self.shape_h, None if self.flat else self.theta_h.copy(),
                          self.shape_l, self.theta_l.copy(), self.k)


def needs_refresh(t: int, k: int, position, subgoal) -> np.ndarray:
    near = np.linalg.norm(np.asarray(position) - np.asarray(subgoal), axis=-1) <= GOAL_RADIUS
    return np.logical_or(t % k == 0, near)


def hier_act(policy: HierPolicy, obs, goal, t: int, subgoal=None, transform="N"):
    """One control step. Returns ``(action, subgoal)``; pass the subgoal back in next step."""
    obs = np.asarray(obs, dtype=float)
    if policy.flat:
        subgoal = np.asarray(goal, dtype=float)
    elif subgoal is None or needs_refresh(t, policy.k, goal_map(transform, obs), subgoal):
        subgoal = policy.subgoal(obs, goal)
    return policy.low_action(obs, subgoal), subgoal


class HierActor:
    """Batched rollout actor with per-episode subgoal caches."""

    def __init__(self, policy: HierPolicy):
        self.policy = policy
        self.transform = "N"
        self._subgoals = None

    def begin(self, env, starts, goals):
        self.transform = env.transform
        self._subgoals = None

    def act(self, obs, goals, t):
        p = self.policy
        if p.flat:
            return p.low_action(obs, goals)
        if self._subgoals is None:
            self._subgoals = p.subgoal(obs, goals)
        else:
            refresh = needs_refresh(t, p.k, goal_map(self.transform, obs), self._subgoals)
            if refresh.any():
                fresh = p.subgoal(obs[refresh], goals[refresh])
                self._subgoals[refresh] = fresh
        return p.low_action(obs, self._subgoals)


def _adam_train(shape, theta, batch_fn, n_epochs, n_rows, cfg: TrainConfig, rng, penalty=None):
    """Generic epoch loop. ``batch_fn(rows) -> Batch``; ``penalty(theta) -> (loss, grad)``."""
    state = AdamState.zeros(theta.size)
    for _ in range(n_epochs):
        for rows in epoch_row_batches(n_rows, cfg.batch_size, rng):
            b = batch_fn(rows)
            _, g = nnet.loss_and_grad(shape, theta, b.inputs, b.targets, "train", rng)
            if penalty is not None:
                g = g + penalty(theta)[1]
            state, theta = nnet.adam_step(state, theta, g, cfg.lr)
    return theta


def dataset_waystep(dataset, cfg: TrainConfig) -> int:
    return cfg.k_for(dataset.meta.get("layout", "U") if isinstance(dataset, Dataset) else "U")


def train_high(dataset, shape, theta, cfg: TrainConfig, rng, penalty=None):
    table = table_for(dataset)
    k = dataset_waystep(dataset, cfg)
    return _adam_train(shape, theta,
                       lambda rows: high_batch_rows(table, rows, k, rng,
                                                    cfg.her_temperature, cfg.her_fraction),
                       cfg.epochs, table.n_rows, cfg, rng, penalty)


def train_low(dataset, shape, theta, cfg: TrainConfig, rng, penalty=None):
    table = table_for(dataset)
    k = dataset_waystep(dataset, cfg)
    return _adam_train(shape, theta, lambda rows: low_batch_rows(table, rows, k),
                       cfg.epochs, table.n_rows, cfg, rng, penalty)


def train_flat(dataset, shape, theta, cfg: TrainConfig, rng, penalty=None):
    table = table_for(dataset)
    return _adam_train(shape, theta,
                       lambda rows: flat_batch_rows(table, rows, rng, cfg.her_temperature,
                                                    cfg.her_fraction),
                       cfg.epochs, table.n_rows, cfg, rng, penalty)


def default_shapes(hidden_h=(64, 64), hidden_l=(64, 64), dropout=0.1):
    return (NetShape(OBS_DIM + GOAL_DIM, tuple(hidden_h), GOAL_DIM, True, dropout),
            NetShape(OBS_DIM + GOAL_DIM, tuple(hidden_l), ACTION_DIM, True, dropout))


def init_policy(shapes, k: int, seed, flat: bool = False) -> HierPolicy:
    shape_h, shape_l = shapes
    rng = np.random.default_rng(seed)
    theta_h = None if flat else nnet.init_params(shape_h, rng)
    theta_l = nnet.init_params(shape_l, rng)
    return HierPolicy(None if flat else shape_h, theta_h, shape_l, theta_l, k)


def train_hbc(dataset, shapes, cfg: TrainConfig, init: HierPolicy | None = None,
              penalty_h=None, penalty_l=None) -> HierPolicy:
    """Fit both levels independently by minimizing their NLL losses."""
    rng = np.random.default_rng(cfg.seed)
    k = dataset_waystep(dataset, cfg)
    policy = init.copy() if init is not None else init_policy(shapes, k, rng)
    theta_h = train_high(dataset, policy.shape_h, policy.theta_h, cfg, rng, penalty_h)
    theta_l = train_low(dataset, policy.shape_l, policy.theta_l, cfg, rng, penalty_l)
    return HierPolicy(policy.shape_h, theta_h, policy.shape_l, theta_l, k)


def train_bc(dataset, shape_l, cfg: TrainConfig, init: HierPolicy | None = None) -> HierPolicy:
    """Flat goal-conditioned BC, the hierarchy-free baseline."""
    rng = np.random.default_rng(cfg.seed)
    policy = init.copy() if init is not None else init_policy((None, shape_l), 1, rng, flat=True)
    theta_l = train_flat(dataset, policy.shape_l, policy.theta_l, cfg, rng)
    return HierPolicy(None, None, policy.shape_l, theta_l, 1)


def high_loss(policy: HierPolicy, dataset, k=None) -> float:
    table = table_for(dataset)
    b = high_batch_rows(table, np.arange(table.n_rows), k or policy.k)
    return nnet.nll_loss(policy.shape_h, policy.theta_h, b.inputs, b.targets)


def low_loss(policy: HierPolicy, dataset, k=None) -> float:
    table = table_for(dataset)
    b = low_batch_rows(table, np.arange(table.n_rows), k or policy.k)
    return nnet.nll_loss(policy.shape_l, policy.theta_l, b.inputs, b.targets)


def policy_to_json(policy: HierPolicy) -> dict:
    return {
        "header": {
            "format_version": CHECKPOINT_VERSION,
            "shape_h": None if policy.flat else policy.shape_h.to_dict(),
            "shape_l": policy.shape_l.to_dict(),
            "k": policy.k,
        },
        "theta_h": None if policy.flat else policy.theta_h.tolist(),
        "theta_l": policy.theta_l.tolist(),
    }


def save_policy(policy: HierPolicy, path) -> None:
    Path(path).write_text(json.dumps(policy_to_json(policy)), encoding="utf-8")


def policy_from_json(doc: dict) -> HierPolicy:
    head = doc["header"]
    if head.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {head.get('format_version')}")
    shape_h = None if head["shape_h"] is None else NetShape.from_dict(head["shape_h"])
    theta_h = None if doc["theta_h"] is None else np.array(doc["theta_h"], dtype=float)
    return HierPolicy(shape_h, theta_h, NetShape.from_dict(head["shape_l"]),
                      np.array(doc["theta_l"], dtype=float), int(head["k"]))


def load_policy(path) -> HierPolicy:
    return policy_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
