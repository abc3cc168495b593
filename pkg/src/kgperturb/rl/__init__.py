"""Learned perturbation policies (RL-RR, RL-ER)."""

from .env import KgEnv, RewardEvent, RewardTracker, compute_reward, select_action
from .policy import DqnPolicy, PolicyShape, load_policy, q1_scores, q2_scores, save_policy, state_embed
from .train import RlTrainConfig, TrainResult, bellman_update, greedy_rollout, train_on_env, train_policy, write_reward_curve
