"""One-shot planning: score every candidate impulse with a predictor, take the best.

Timestep convention: frame 0 is the resting configuration with the chosen
impulse applied; frame t is the state after t simulator steps. The first N
frames are simulated and rendered, the predictor supplies the rest up to the
task horizon (frame 40 for target-state, frame 50 for hitting).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .. import numcore as nc
from ..numcore import Rng
from ..simworld import Action, SimConfig, WorldState, apply_action, gt_boxes, init_random, render_arrays, rollout

MAGNITUDES = (2, 3, 4, 5, 6)
ANGLES = 12
TASKS = ("target_state", "hitting")
HORIZON = {"target_state": 40, "hitting": 50}
TARGET_WINDOW = (35, 45)  # inclusive frame range for the executed-outcome distance
MAX_TASK_ATTEMPTS = 1000


def candidate_actions(actor: int = 0) -> list[Action]:
    """All 60 (angle, magnitude) impulses, magnitude-major: index = 12 * mag_index + angle."""
    return [Action(i, float(mag), actor, ANGLES) for mag in MAGNITUDES for i in range(ANGLES)]


@dataclass
class PlanTask:
    kind: str
    state: WorldState  # all balls at rest
    actor: int
    goal: np.ndarray | None = None  # [m, 2] pixel centers at frame 40 (target_state only)
    seed: int | None = None
    hidden_action: int | None = None

    def __post_init__(self):
        if self.kind not in TASKS:
            raise ValueError(f"task kind must be one of {TASKS}, got {self.kind!r}")
        if not self.state.at_rest():
            raise ValueError("plan tasks start with every ball at rest")
        if (self.kind == "target_state") != (self.goal is not None):
            raise ValueError("target_state tasks carry goal centers; hitting tasks carry none")
        if not 0 <= self.actor < self.state.m:
            raise ValueError(f"actor index {self.actor} out of range for {self.state.m} balls")

    def to_dict(self) -> dict:
        arr = self.state.as_array()
        return {"kind": self.kind, "seed": self.seed, "actor": self.actor,
                "positions": arr[:, :2].tolist(), "radii": arr[:, 4].tolist(),
                "width": self.state.width, "height": self.state.height,
                "goal": None if self.goal is None else np.asarray(self.goal).tolist(),
                "hidden_action": self.hidden_action}


@dataclass
class Seeds:
    """N simulated frames for each of A candidate actions."""
    images: np.ndarray  # [A, N, 3, H, W]
    boxes: np.ndarray  # [A, N, m, 4] pixels
    starts: list[WorldState]  # frame-0 state per action
    width: int
    height: int

    @property
    def centers(self) -> np.ndarray:
        return self.boxes[..., :2]


# A predictor maps (seeds, H) to predicted pixel centers [A, H, m, 2] for frames N .. N+H-1.
Predictor = Callable[[Seeds, int], np.ndarray]


def _trajectory(state: WorldState, T: int) -> np.ndarray:
    return np.stack([s.as_array() for s in rollout(state, T).states])


def seed_frames(state: WorldState, action: Action, N: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Apply ``action`` to the resting ``state``, simulate and render frames 0..N-1 -> (images, pixel boxes)."""
    start = apply_action(state, action.actor, action)
    arr = _trajectory(start, N)
    return render_arrays(arr[..., :2], arr[..., 4], state.width, state.height), gt_boxes(arr)


def make_seeds(state: WorldState, actions: list[Action], N: int = 4) -> Seeds:
    frames = [seed_frames(state, a, N) for a in actions]
    return Seeds(np.stack([f[0] for f in frames]), np.stack([f[1] for f in frames]),
                 [apply_action(state, a.actor, a) for a in actions], state.width, state.height)


def model_predictor(model, batch_size: int = 60) -> Predictor:
    """Learned predictor: rollout in eval mode, boxes rescaled to pixels."""
    def predict(seeds: Seeds, H: int) -> np.ndarray:
        model.eval()
        scale = np.array([seeds.width, seeds.height], dtype=np.float64)
        out = []
        with nc.no_grad():
            for s in range(0, len(seeds.images), batch_size):
                pred = model.rollout(seeds.images[s:s + batch_size], seeds.boxes[s:s + batch_size], H,
                                     with_masks=False)
                out.append(pred.boxes.data[..., :2].astype(np.float64) * scale)
        return np.concatenate(out)
    return predict


def oracle_predictor(seeds: Seeds, H: int) -> np.ndarray:
    """The true simulator as a perfect predictor."""
    N = seeds.boxes.shape[1]
    return np.stack([_trajectory(s, N + H)[N:, :, :2] for s in seeds.starts])


def dist_target(centers, goal, window: tuple[int, int] | None = None) -> float:
    """Summed squared pixel distance to the goal centers.

    Without ``window``: at the final step of ``centers`` [T, m, 2]. With an
    inclusive ``window`` (a, b): the minimum over steps a..b.
    """
    c = np.asarray(centers, dtype=np.float64)
    g = np.asarray(goal, dtype=np.float64)
    if c.shape[-2:] != g.shape:
        raise ValueError(f"dist_target: centers {c.shape} do not match goal {g.shape}")
    if window is None:
        return float(((c[-1] - g) ** 2).sum())
    a, b = window
    if c.shape[0] <= b:
        raise ValueError(f"dist_target: trajectory of {c.shape[0]} steps does not cover steps {a}..{b}")
    return float(((c[a:b + 1] - g) ** 2).sum(axis=(-2, -1)).min())


def dist_hitting(centers, initial, actor: int) -> float:
    """Minus the smallest (over non-actor balls) largest squared displacement from the start.

    Lower is better: a negative score means every other ball moved.
    """
    c = np.asarray(centers, dtype=np.float64)
    x0 = np.asarray(initial, dtype=np.float64)
    m = c.shape[-2]
    if m < 2:
        raise ValueError("dist_hitting needs at least two balls")
    disp = ((c - x0) ** 2).sum(axis=-1).max(axis=0)  # [m]
    others = [i for i in range(m) if i != actor]
    return float(-disp[others].min())


@dataclass
class PlanResult:
    task: PlanTask
    table: np.ndarray  # [60] score per candidate
    best: int
    action: Action

    def table_rows(self) -> list[dict]:
        return [{"index": k, "angle_index": a.angle_index, "magnitude": a.magnitude, "score": float(self.table[k])}
                for k, a in enumerate(candidate_actions(self.task.actor))]


def score_candidates(task: PlanTask, predictor: Predictor, N: int = 4) -> np.ndarray:
    actions = candidate_actions(task.actor)
    seeds = make_seeds(task.state, actions, N)
    H = HORIZON[task.kind] + 1 - N  # predicted frames N .. horizon
    pred = np.asarray(predictor(seeds, H), dtype=np.float64)
    traj = np.concatenate([seeds.centers, pred], axis=1)  # [60, horizon + 1, m, 2]
    if task.kind == "target_state":
        return np.array([dist_target(t, task.goal) for t in traj])
    x0 = task.state.as_array()[:, :2]
    return np.array([dist_hitting(t, x0, task.actor) for t in traj])


def plan(task: PlanTask, predictor, N: int = 4) -> PlanResult:
    """Score all 60 candidates and return the argmin (lowest index on ties)."""
    if hasattr(predictor, "rollout"):
        N = predictor.config.k
        predictor = model_predictor(predictor)
    table = score_candidates(task, predictor, N)
    best = int(np.argmin(table))
    return PlanResult(task, table, best, candidate_actions(task.actor)[best])


# ---------------------------------------------------------------- task generation and evaluation

def resting_state(config: SimConfig, rng: Rng) -> WorldState:
    s = init_random(config, rng)
    return WorldState(tuple(replace(b, vx=0.0, vy=0.0) for b in s.balls), s.width, s.height, 0)


def execute(state: WorldState, action: Action, T: int) -> tuple[np.ndarray, list[list[tuple[int, int]]]]:
    """True outcome: centers for frames 0..T-1 and the contact pairs of each step."""
    ep = rollout(apply_action(state, action.actor, action), T)
    return np.stack([s.as_array()[:, :2] for s in ep.states]), ep.contacts


def hit_success(contacts: list[list[tuple[int, int]]], actor: int, m: int) -> bool:
    """Every non-actor ball took part in a ball-ball contact."""
    touched = {k for step in contacts for pair in step for k in pair}
    return all(i in touched for i in range(m) if i != actor)


def outcome(task: PlanTask, action: Action) -> float:
    """Executed metric: 1/0 hit success, or min-window target distance in pixels^2."""
    if task.kind == "hitting":
        T = HORIZON["hitting"] + 1
        _, contacts = execute(task.state, action, T)
        return float(hit_success(contacts, task.actor, task.state.m))
    T = TARGET_WINDOW[1] + 1
    centers, _ = execute(task.state, action, T)
    return dist_target(centers, task.goal, TARGET_WINDOW)


def all_outcomes(task: PlanTask) -> np.ndarray:
    return np.array([outcome(task, a) for a in candidate_actions(task.actor)])


def make_task(kind: str, seed: int, config: SimConfig | None = None) -> PlanTask:
    """A feasible task: target goals come from a hidden candidate; hitting tasks are resampled until solvable."""
    config = SimConfig() if config is None else config
    rng = Rng(seed)
    for _ in range(MAX_TASK_ATTEMPTS):
        state = resting_state(config, rng)
        actor = int(rng.integers(0, config.m))
        if kind == "target_state":
            hidden = int(rng.integers(0, len(MAGNITUDES) * ANGLES))
            centers, _ = execute(state, candidate_actions(actor)[hidden], HORIZON["target_state"] + 1)
            return PlanTask(kind, state, actor, centers[-1], seed, hidden)
        if kind == "hitting":
            task = PlanTask(kind, state, actor, None, seed)
            if all_outcomes(task).max() > 0:
                return task
            continue
        raise ValueError(f"task kind must be one of {TASKS}, got {kind!r}")
    raise RuntimeError(f"no solvable {kind} configuration found in {MAX_TASK_ATTEMPTS} attempts (seed {seed})")


def make_tasks(kind: str, n_tasks: int, seed: int, config: SimConfig | None = None) -> list[PlanTask]:
    if n_tasks < 1:
        raise ValueError(f"n_tasks must be >= 1, got {n_tasks}")
    base = Rng(seed)
    return [make_task(kind, base.spawn(i).seed, config) for i in range(n_tasks)]


@dataclass
class PlanSummary:
    kind: str
    n_tasks: int
    seed: int
    metric: float  # hitting accuracy or mean min-window target distance (pixels^2)
    random_metric: float  # exact expectation of a uniformly random candidate
    ceiling: float  # best achievable with the candidate set (brute force)
    results: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        name = "hitting_accuracy" if self.kind == "hitting" else "target_state_error"
        return {"kind": self.kind, "n_tasks": self.n_tasks, "seed": self.seed, name: self.metric,
                "metric": self.metric, "random_metric": self.random_metric, "ceiling": self.ceiling,
                "results": self.results}


def evaluate_plans(predictor, kind: str, n_tasks: int, seed: int, config: SimConfig | None = None,
                   N: int = 4, tasks: list[PlanTask] | None = None, log=None) -> PlanSummary:
    """Plan each task with ``predictor``, execute the chosen action in the simulator, and aggregate."""
    tasks = make_tasks(kind, n_tasks, seed, config) if tasks is None else tasks
    chosen, randoms, ceilings, results = [], [], [], []
    for k, task in enumerate(tasks):
        res = plan(task, predictor, N)
        outs = all_outcomes(task)
        got = float(outs[res.best])
        chosen.append(got)
        randoms.append(float(outs.mean()))
        ceilings.append(float(outs.max() if kind == "hitting" else outs.min()))
        results.append({"task": task.to_dict(), "table": res.table_rows(), "chosen": res.best,
                        "action": {"angle_index": res.action.angle_index, "magnitude": res.action.magnitude,
                                   "actor": res.action.actor},
                        "outcome": {"success": bool(got > 0)} if kind == "hitting" else {"min_distance": got}})
        if log is not None:
            log(k, got)
    return PlanSummary(kind, len(tasks), seed, float(np.mean(chosen)), float(np.mean(randoms)),
                       float(np.mean(ceilings)), results)
