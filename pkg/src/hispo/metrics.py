"""Rollout success rates and the continual-learning metrics PER, BWT, FWT and MEM."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envs import MazeEnv, inverse_action, move, reached, transform_obs

REPORT_VERSION = 1


def rollout(actor, env: MazeEnv, n_episodes: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Run ``n_episodes`` seeded episodes in lockstep.

    ``actor`` must provide ``begin(env, starts, goals)`` and
    ``act(obs, goals, t) -> actions`` over the whole batch. Returns the
    per-episode success flags and lengths.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    rng = np.random.default_rng(seed)
    starts, goals = env.sample_start_goal(rng, n_episodes)
    actor.begin(env, starts, goals)
    pos = starts.copy()
    vel = np.zeros_like(pos)
    active = np.ones(n_episodes, dtype=bool)
    success = np.zeros(n_episodes, dtype=bool)
    lengths = np.full(n_episodes, env.horizon)
    for t in range(env.horizon):
        obs = transform_obs(env.transform, np.hstack([pos, vel]))
        a = np.nan_to_num(np.asarray(actor.act(obs, goals, t), dtype=float))
        native = inverse_action(env.transform, np.clip(a, -1.0, 1.0))
        new_pos, new_vel = move(env.layout, pos, vel, native, env.v_max)
        pos = np.where(active[:, None], new_pos, pos)
        vel = np.where(active[:, None], new_vel, vel)
        hit = active & reached(pos, goals)
        success |= hit
        lengths[hit] = t + 1
        active &= ~hit
        if not active.any():
            break
    return success, lengths


def success_rate(actor, env: MazeEnv, n_episodes: int = 100, seed=0) -> float:
    return float(rollout(actor, env, n_episodes, seed)[0].mean())


@dataclass
class CrlMetrics:
    per: float
    bwt: float
    fwt: float
    mem: float

    def as_dict(self) -> dict:
        return {"per": self.per, "bwt": self.bwt, "fwt": self.fwt, "mem": self.mem}


class SuccessMatrix:
    """``sigma[j, k]`` = success on task k after learning task j (0-based)."""

    def __init__(self, n_tasks: int):
        self.sigma = np.full((n_tasks, n_tasks), np.nan)
        self.ref_sigma = np.full(n_tasks, np.nan)

    @property
    def n_tasks(self) -> int:
        return self.sigma.shape[0]

    def set(self, after: int, task: int, value: float):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"success rate {value} outside [0, 1]")
        self.sigma[after, task] = value

    def to_json(self) -> dict:
        def clean(a):
            return [None if np.isnan(v) else float(v) for v in np.ravel(a)]

        n = self.n_tasks
        return {"n_tasks": n,
                "sigma": [clean(row) for row in self.sigma],
                "ref_sigma": clean(self.ref_sigma)}

    @classmethod
    def from_json(cls, d: dict) -> "SuccessMatrix":
        m = cls(int(d["n_tasks"]))
        m.sigma = np.array([[np.nan if v is None else v for v in row] for row in d["sigma"]],
                           dtype=float)
        m.ref_sigma = np.array([np.nan if v is None else v for v in d["ref_sigma"]], dtype=float)
        return m


def compute_metrics(m: SuccessMatrix, stored_params: float, single_policy_params: float) -> CrlMetrics:
    """PER/BWT/FWT from the success matrix; MEM = stored / single-policy parameter count."""
    n = m.n_tasks
    final = m.sigma[n - 1]
    diag = np.diag(m.sigma)
    if np.isnan(final).any() or np.isnan(diag).any():
        raise ValueError("success matrix is missing final-row or diagonal entries")
    per = float(final.mean())
    bwt = float(np.mean(final - diag))
    if np.isnan(m.ref_sigma).any():
        fwt = float("nan")
    else:
        fwt = float(np.mean(diag - m.ref_sigma))
    if single_policy_params <= 0:
        raise ValueError("single-policy parameter count must be positive")
    return CrlMetrics(per, bwt, fwt, float(stored_params) / float(single_policy_params))


@dataclass
class EvalReport:
    strategy: str
    stream: str
    seed: int
    matrix: SuccessMatrix
    metrics: CrlMetrics
    extra: dict | None = None

    def row(self) -> dict:
        return {"strategy": self.strategy, "stream": self.stream, "seed": self.seed,
                **self.metrics.as_dict()}

    def to_json(self) -> dict:
        return {"format_version": REPORT_VERSION, "strategy": self.strategy, "stream": self.stream,
                "seed": self.seed, "metrics": self.metrics.as_dict(),
                "matrix": self.matrix.to_json(), "extra": self.extra or {}}

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        if d.get("format_version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('format_version')}")
        return cls(d["strategy"], d["stream"], int(d["seed"]),
                   SuccessMatrix.from_json(d["matrix"]), CrlMetrics(**d["metrics"]), d.get("extra"))


CSV_FIELDS = ["strategy", "stream", "seed", "per", "bwt", "fwt", "mem"]


def write_csv(reports, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.row().items()})


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        r["seed"] = int(r["seed"])
        for k in ("per", "bwt", "fwt", "mem"):
            r[k] = float(r[k])
    return rows


def write_json(reports, path) -> None:
    Path(path).write_text(json.dumps([r.to_json() for r in reports], indent=1), encoding="utf-8")


def read_json(path) -> list[EvalReport]:
    return [EvalReport.from_json(d) for d in json.loads(Path(path).read_text(encoding="utf-8"))]
