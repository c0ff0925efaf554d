"""One-shot action selection for the billiard target-state and hitting tasks."""

from .planning import (ANGLES, HORIZON, MAGNITUDES, TARGET_WINDOW, TASKS, PlanResult, PlanSummary, PlanTask, Seeds,
                       all_outcomes, candidate_actions, dist_hitting, dist_target, evaluate_plans, execute,
                       hit_success, make_seeds, make_task, make_tasks, model_predictor, oracle_predictor, outcome,
                       plan, resting_state, score_candidates, seed_frames)

__all__ = [
    "ANGLES", "HORIZON", "MAGNITUDES", "TARGET_WINDOW", "TASKS", "PlanResult", "PlanSummary", "PlanTask", "Seeds",
    "all_outcomes", "candidate_actions", "dist_hitting", "dist_target", "evaluate_plans", "execute", "hit_success",
    "make_seeds", "make_task", "make_tasks", "model_predictor", "oracle_predictor", "outcome", "plan",
    "resting_state", "score_candidates", "seed_frames",
]
