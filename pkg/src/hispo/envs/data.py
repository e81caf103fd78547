"""Episodes, datasets and their JSON Lines persistence."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .transforms import goal_map

FORMAT_VERSION = 1
GENERATOR = "hispo-expert/1"

_MASK64 = (1 << 64) - 1


def splitmix64(seed: int, index: int = 0) -> int:
    """Derive an independent 64-bit seed for stream ``index`` from a master seed."""
    z = (int(seed) * 0x9E3779B97F4A7C15 + (int(index) + 1) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class DatasetFormatError(ValueError):
    pass


class Episode:
    """Task-frame transitions that share one goal."""

    def __init__(self, obs, actions, rewards, next_obs, goal):
        self.obs = np.asarray(obs, dtype=float).reshape(-1, 4)
        self.actions = np.asarray(actions, dtype=float).reshape(-1, 2)
        self.rewards = np.asarray(rewards, dtype=int).reshape(-1)
        self.next_obs = np.asarray(next_obs, dtype=float).reshape(-1, 4)
        self.goal = np.asarray(goal, dtype=float).reshape(2)

    def __len__(self):
        return len(self.rewards)

    @property
    def success(self) -> bool:
        return len(self) > 0 and self.rewards[-1] == 1

    def states(self) -> np.ndarray:
        """s_0 .. s_T as task-frame observations."""
        return np.vstack([self.obs, self.next_obs[-1:]])

    def positions(self, transform) -> np.ndarray:
        """phi(s_0) .. phi(s_T)."""
        return goal_map(transform, self.states())

    def __eq__(self, other):
        return (isinstance(other, Episode)
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("obs", "actions", "rewards", "next_obs", "goal")))

    def to_json(self) -> dict:
        steps = [{"o": o, "a": a, "r": int(r), "no": no}
                 for o, a, r, no in zip(self.obs.tolist(), self.actions.tolist(),
                                        self.rewards.tolist(), self.next_obs.tolist())]
        return {"goal": self.goal.tolist(), "steps": steps}

    @classmethod
    def from_json(cls, d: dict) -> "Episode":
        steps = d["steps"]
        if not steps:
            raise ValueError("episode has no steps")
        return cls([s["o"] for s in steps], [s["a"] for s in steps], [s["r"] for s in steps],
                   [s["no"] for s in steps], d["goal"])


class Dataset:
    def __init__(self, episodes, meta: dict | None = None):
        self.episodes = list(episodes)
        self.meta = dict(meta or {})

    def __len__(self):
        return len(self.episodes)

    def __iter__(self):
        return iter(self.episodes)

    def __getitem__(self, i):
        return self.episodes[i]

    def __eq__(self, other):
        return (isinstance(other, Dataset) and self.meta == other.meta
                and self.episodes == other.episodes)

    @property
    def transform(self) -> str:
        return self.meta.get("transform", "N")

    @property
    def n_transitions(self) -> int:
        return sum(len(ep) for ep in self.episodes)

    def mean_length(self) -> float:
        return float(np.mean([len(ep) for ep in self.episodes]))

    def header(self) -> dict:
        head = {"format_version": FORMAT_VERSION, "generator": GENERATOR}
        head.update(self.meta)
        head["n_episodes"] = len(self.episodes)
        return head


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps(dataset.header(), sort_keys=True) + "\n")
        for ep in dataset.episodes:
            f.write(json.dumps(ep.to_json(), separators=(",", ":")) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: line 1: empty file, expected a header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{path}: line 1: bad header JSON ({e.msg})") from None
    if not isinstance(header, dict) or header.get("format_version") != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: line 1: unsupported header {header!r}")
    episodes = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            episodes.append(Episode.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DatasetFormatError(f"{path}: line {lineno}: malformed episode ({e})") from None
    if header.get("n_episodes") != len(episodes):
        raise DatasetFormatError(f"{path}: header announces {header.get('n_episodes')} "
                                 f"episodes, found {len(episodes)}")
    meta = {k: v for k, v in header.items() if k not in ("format_version", "generator", "n_episodes")}
    return Dataset(episodes, meta)
