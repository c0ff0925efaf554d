"""Billiards simulator, renderer and dataset persistence."""

from .dataset import Dataset, decode_episode, encode_episode, gen_dataset, load_dataset, verify_dataset
from .physics import (SUBSTEPS, Action, BallState, Episode, SimConfig, WorldState, apply_action, check_state,
                      generate_episode, init_random, rollout, step, step_with_contacts)
from .render import (BACKGROUND, BALL_COLORS, MASK_SIZE, gt_box, gt_boxes, gt_mask, gt_masks, render,
                     render_arrays)

__all__ = [
    "Action", "BallState", "WorldState", "SimConfig", "Episode", "SUBSTEPS", "init_random", "step",
    "step_with_contacts", "rollout", "apply_action", "check_state", "generate_episode", "render",
    "render_arrays", "gt_box", "gt_boxes", "gt_mask", "gt_masks", "MASK_SIZE", "BACKGROUND", "BALL_COLORS",
    "gen_dataset", "load_dataset", "verify_dataset", "Dataset", "encode_episode", "decode_episode",
]
