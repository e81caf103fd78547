"""Task and stream specifications, dataset resolution, and shared evaluation settings."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import (DEFAULT_HORIZON, Dataset, MazeEnv, TaskTransform, gen_dataset, get_layout,
                   load_dataset, make_env, save_dataset, splitmix64)
from .gcrl import HierActor, TrainConfig, train_hbc
from .metrics import success_rate


@dataclass(frozen=True)
class TaskSpec:
    layout: str
    transform: str = "N"
    episodes: int = 500
    seed: int = 0
    dataset_path: str | None = None
    horizon: int | None = None

    def __post_init__(self):
        get_layout(self.layout)
        object.__setattr__(self, "transform", TaskTransform.parse(self.transform).value)
        if self.episodes < 1:
            raise ValueError("a task needs at least one episode")

    @property
    def name(self) -> str:
        return f"{self.layout}-{self.transform}"

    def env(self, seed=0) -> MazeEnv:
        return make_env(self.layout, self.transform, self.horizon or DEFAULT_HORIZON.get(self.layout),
                        seed)

    def to_dict(self) -> dict:
        d = {"layout": self.layout, "transform": self.transform, "episodes": self.episodes,
             "seed": self.seed}
        if self.dataset_path:
            d["dataset_path"] = self.dataset_path
        if self.horizon:
            d["horizon"] = self.horizon
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        gen = d.get("generate", {})
        return cls(d["layout"], d.get("transform", "N"),
                   int(gen.get("episodes", d.get("episodes", 500))),
                   int(gen.get("seed", d.get("seed", 0))),
                   d.get("dataset_path"), d.get("horizon"))


_TOKEN = re.compile(r"^\s*([A-Za-z]+)-([A-Za-z]+)(?:\[(\d+)\])?\s*$")


@dataclass
class StreamSpec:
    name: str
    tasks: list[TaskSpec] = field(default_factory=list)

    def __post_init__(self):
        if not self.tasks:
            raise ValueError(f"stream {self.name!r} has no tasks")

    def __len__(self):
        return len(self.tasks)

    @classmethod
    def parse(cls, text: str, name: str | None = None, episodes: int = 500, seed: int = 0) -> "StreamSpec":
        """Parse ``"U-N[500] -> L-N[500] -> U-PO"``; every task gets its own data seed."""
        tasks = []
        for i, tok in enumerate(re.split(r"->|→|,", text)):
            m = _TOKEN.match(tok)
            if not m:
                raise ValueError(f"bad task token {tok!r}")
            n = int(m.group(3)) if m.group(3) else episodes
            tasks.append(TaskSpec(m.group(1).upper(), m.group(2), n, splitmix64(seed, i) % 2**31))
        return cls(name or text.strip(), tasks)

    def scaled(self, factor: float) -> "StreamSpec":
        tasks = [TaskSpec(t.layout, t.transform, max(1, round(t.episodes * factor)), t.seed,
                          t.dataset_path, t.horizon) for t in self.tasks]
        return StreamSpec(self.name, tasks)

    def to_dict(self) -> dict:
        return {"name": self.name, "tasks": [t.to_dict() for t in self.tasks]}

    @classmethod
    def from_dict(cls, d: dict) -> "StreamSpec":
        horizons = d.get("horizon_overrides", {})
        tasks = []
        for t in d["tasks"]:
            spec = TaskSpec.from_dict(t)
            if spec.horizon is None and spec.layout in horizons:
                spec = TaskSpec(spec.layout, spec.transform, spec.episodes, spec.seed,
                                spec.dataset_path, int(horizons[spec.layout]))
            tasks.append(spec)
        return cls(d.get("name", "stream"), tasks)


# Stream listings of the PointMaze/AntMaze benchmarks, plus the structural probes.
CANNED_STREAMS = {
    "maze-1": "U-N[500] -> L-N[500] -> U-PO[500] -> M-IO[500]",
    "maze-2": "U-PA[500] -> M-PO[500] -> M-N[500] -> M-N[500]",
    "kinematic": "U-N[500] -> U-IA[500]",
    "topological": "U-N[500] -> M-N[500]",
}


def canned_stream(name: str, episodes_scale: float = 1.0) -> StreamSpec:
    try:
        text = CANNED_STREAMS[name]
    except KeyError:
        raise ValueError(f"unknown stream {name!r}; expected one of {sorted(CANNED_STREAMS)}") from None
    return StreamSpec.parse(text, name).scaled(episodes_scale)


_DATA_CACHE: dict[tuple, Dataset] = {}


def resolve_dataset(task: TaskSpec, cache_dir=None) -> Dataset:
    """Load the task's dataset file, or generate (and optionally cache) it."""
    if task.dataset_path:
        return load_dataset(task.dataset_path)
    key = (task.layout, task.transform, task.episodes, task.seed, task.horizon)
    if key in _DATA_CACHE:
        return _DATA_CACHE[key]
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"{task.layout}-{task.transform}-{task.episodes}-s{task.seed}.jsonl"
        if path.exists():
            ds = load_dataset(path)
            _DATA_CACHE[key] = ds
            return ds
    ds = gen_dataset(task.env(task.seed), task.episodes, task.seed)
    if path is not None:
        save_dataset(ds, path)
    _DATA_CACHE[key] = ds
    return ds


@dataclass
class EvalConfig:
    n_episodes: int = 100
    seed: int = 0
    fwt_reference: bool = False

    def task_seed(self, task_index: int) -> int:
        """Evaluation seed of a task; fixed across the stream so frozen policies score identically."""
        return splitmix64(self.seed, 1000 + task_index) % 2**31


def evaluate_lower_triangle(matrix, after: int, actor_for, stream: StreamSpec, ev: EvalConfig):
    """Fill ``matrix.sigma[after, 0..after]`` using ``actor_for(task_index)``."""
    for j in range(after + 1):
        env = stream.tasks[j].env()
        matrix.set(after, j, success_rate(actor_for(j), env, ev.n_episodes, ev.task_seed(j)))


def stream_rng(seed: int, *tags: int) -> np.random.Generator:
    s = int(seed)
    for tag in tags:
        s = splitmix64(s, tag)
    return np.random.default_rng(s)


_REF_CACHE: dict[tuple, float] = {}


def reference_success(stream: StreamSpec, shapes, cfg: TrainConfig, ev: EvalConfig, seed: int) -> np.ndarray:
    """Success of a from-scratch HBC trained on each task alone (the FWT reference)."""
    out = np.empty(len(stream))
    for j, task in enumerate(stream.tasks):
        key = (task, shapes, tuple(sorted(cfg.to_dict().items())), ev.n_episodes, ev.seed, seed)
        if key not in _REF_CACHE:
            tcfg = TrainConfig(**{**cfg.to_dict(), "seed": splitmix64(seed, 500 + j) % 2**31})
            policy = train_hbc(resolve_dataset(task), shapes, tcfg)
            _REF_CACHE[key] = success_rate(HierActor(policy), task.env(), ev.n_episodes,
                                           ev.task_seed(j))
        out[j] = _REF_CACHE[key]
    return out
