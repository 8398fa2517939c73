"""Closed-loop driving simulator with a staged reasoning pipeline and evaluation harness."""

from .catalog import catalog, get_scenario
from .control import ControlConfig, compute_action
from .cot import HistoryBuffer, Observation, PromptBundle, render_prompts, run_pipeline, update_history
from .harness import RunConfig, run_episode, run_suite
from .metrics import ade_fde, aggregate_suite, detection_summary, iou3d, match_boxes, score_episode
from .parse import parse_boxes, parse_decision, parse_waypoints
from .policies import AblationPolicy, OraclePolicy, RemoteConfig, RemotePolicy, oracle_decide, oracle_plan
from .scenario import ScenarioSpec, parse_scenario, serialize_scenario
from .world import Action, Box3, Pose, WorldState, ground_truth_scene, route_progress, step

__version__ = "0.1.0"
