"""Planar push-to-pose manipulation: simulator, recurrent dynamics model,
sampling-based controller, model-free baseline, and benchmarks."""

from .config import Config, ConfigError, default_config, load_config
from .control import (ControllerConfig, GoalSpec, HistoryBuffer, control_episode,
                      mppi_update, rollout_costs, sample_rollouts, warm_up)
from .dataset import (EPISODE_STEP_LIMIT, Episode, Terminal, TrainingSequence,
                      build_training_set, collect_episode, dataset_stats,
                      load_episodes, run_episode, sample_object, save_episodes)
from .evaluate import (FIXTURES, BenchmarkReport, ObjectResult, benchmark_scenario,
                       format_report, make_model_controller, make_policy_controller,
                       random_controller, run_benchmark, save_report, sweep_kt)
from .geometry import Pose2D, wrap_angle
from .metrics import (LOOSE, MID, TIERS, TIGHT, FinalError, ThresholdTier,
                      final_error, score, success)
from .model import (DivergenceError, ModelWeights, TrainConfig, TrainResult, forward,
                    init_weights, load_weights, predict_batch, predict_next,
                    save_weights, train)
from .policy import (AgentWeights, PolicyTrainConfig, ReplayBuffer, Transition,
                     ddpg_update, her_relabel, load_agent, mdp_state, policy_action,
                     reward, save_agent, scripted_action, train_policy)
from .sim import (GRAVITY, ObjectParams, PushAction, PushEnv, SimConfig, SimError,
                  StateTuple, WorldState, behind_boundary_offset,
                  characteristic_radius, motion_model, observe_state_tuple, reset,
                  step)

__version__ = "0.1.0"
