from .data import Dataset, DatasetFormatError, Episode, load_dataset, save_dataset, splitmix64
from .expert import ExpertActor, UnreachableGoal, expert_episode, gen_dataset, plan_waypoints
from .maze import (ACTION_DIM, DEFAULT_HORIZON, GOAL_DIM, GOAL_RADIUS, LAYOUTS, OBS_DIM, EnvState,
                   MazeEnv, MazeLayout, get_layout, make_env, move, reached)
from .transforms import (TaskTransform, apply_transform, goal_map, inverse_action, inverse_obs,
                         transform_action, transform_obs)
