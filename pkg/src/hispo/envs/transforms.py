"""Task transforms acting on the agent's observation/action channel.

A transform maps the agent's native frame to the task frame. Goals are
never transformed.
"""
from __future__ import annotations

from enum import Enum

import numpy as np


class TaskTransform(str, Enum):
    N = "N"    # identity
    IA = "IA"  # inverse actions
    IO = "IO"  # inverse observations
    PA = "PA"  # permute actions
    PO = "PO"  # permute observations

    @classmethod
    def parse(cls, value) -> "TaskTransform":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown transform {value!r}; expected one of "
                             f"{[t.value for t in cls]}") from None


def transform_obs(kind, obs):
    kind = TaskTransform.parse(kind)
    obs = np.asarray(obs, dtype=float)
    if kind is TaskTransform.IO:
        return -obs
    if kind is TaskTransform.PO:
        return np.roll(obs, 1, axis=-1)
    return obs.copy()


def inverse_obs(kind, obs):
    kind = TaskTransform.parse(kind)
    obs = np.asarray(obs, dtype=float)
    if kind is TaskTransform.IO:
        return -obs
    if kind is TaskTransform.PO:
        return np.roll(obs, -1, axis=-1)
    return obs.copy()


def transform_action(kind, action):
    kind = TaskTransform.parse(kind)
    action = np.asarray(action, dtype=float)
    if kind is TaskTransform.IA:
        return -action
    if kind is TaskTransform.PA:
        return np.roll(action, 1, axis=-1)
    return action.copy()


def inverse_action(kind, action):
    """Task-frame action -> native action actually fed to the dynamics."""
    kind = TaskTransform.parse(kind)
    action = np.asarray(action, dtype=float)
    if kind is TaskTransform.IA:
        return -action
    if kind is TaskTransform.PA:
        return np.roll(action, -1, axis=-1)
    return action.copy()


def apply_transform(kind, obs, action):
    """Native (obs, action) -> task-frame (obs', action')."""
    return transform_obs(kind, obs), transform_action(kind, action)


def goal_map(kind, obs):
    """phi: recover the achieved position (x, y) from a task-frame observation."""
    return inverse_obs(kind, obs)[..., :2]
