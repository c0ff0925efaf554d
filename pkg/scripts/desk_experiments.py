"""Produce the trained models and planning runs read by tests/test_acceptance.py.

Every step goes through the ``rpin`` command line and is skipped when its
output already exists, so the script can be stopped and restarted. On one CPU
core the full protocol takes days; ``--main-iters`` and ``--iters`` shorten it.

    python scripts/desk_experiments.py --runs /root/runs [--main-iters 2000] [--iters 400] [--only main,plan]
"""

import argparse
import sys
from pathlib import Path

from rpin.cli import main as rpin

# Episode k of a dataset uses seed + k, so the seed ranges below must not overlap.
DATASETS = {  # name: (episodes, balls, first seed)
    "overfit16": (16, 3, 100),
    "train200": (200, 3, 1),
    "test100": (100, 3, 10_000),
    "test5": (100, 5, 20_000),
}
COMPARE_RUNS = [(kind, seed) for seed in (0, 1, 2) for kind in ("cin", "in")]


def call(*argv) -> None:
    argv = [str(a) for a in argv]
    print("+ rpin " + " ".join(argv), flush=True)
    code = rpin(argv)
    if code != 0:
        sys.exit(f"rpin {argv[0]} failed with exit code {code}")


def gen_data(runs: Path) -> None:
    for name, (episodes, balls, seed) in DATASETS.items():
        out = runs / "data" / name
        if not (out / "manifest.json").exists():
            call("gen-data", "--out", out, "--episodes", episodes, "--balls", balls, "--seed", seed)


def train(out: Path, *argv) -> None:
    if (out / "model.ckpt").exists():
        return
    resume = ["--resume"] if (out / "snapshots").exists() else []
    call("train", "--out", out, *argv, *resume)


def overfit(runs: Path, lr: float) -> None:
    train(runs / "overfit", "--data", runs / "data" / "overfit16", "--max-iter", 2000, "--set", f"base_lr={lr}",
          "--set", "T_train=10", "--set", "eval_interval=200", "--set", "eval_episodes=16",
          "--set", "snapshot_interval=0")


def train_200(out: Path, runs: Path, kind: str, seed: int, iters: int, lr: float) -> None:
    train(out, "--data", runs / "data" / "train200", "--eval-data", runs / "data" / "test100",
          "--kind", kind, "--seed", seed, "--max-iter", iters, "--set", f"base_lr={lr}",
          "--set", f"eval_interval={max(iters // 20, 1)}", "--set", f"snapshot_interval={max(iters // 4, 1)}")


def main_model(runs: Path, iters: int, lr: float) -> None:
    """The CIN model behind the horizon, object-count and planning evaluations."""
    train_200(runs / "main", runs, "cin", 0, iters, lr)


def compare(runs: Path, iters: int, lr: float, only: set[str] | None = None) -> None:
    """CIN against the vector IN, three seeds each, one shared budget."""
    for kind, seed in COMPARE_RUNS:
        name = f"{kind}_s{seed}"
        if not only or name in only:
            train_200(runs / "compare" / name, runs, kind, seed, iters, lr)


def plans(runs: Path) -> None:
    ckpt = runs / "main" / "model.ckpt"
    for task in ("hitting", "target"):
        if not (runs / "plan_oracle" / f"plan_{task}.json").exists():
            call("plan", "--ckpt", "oracle", "--task", task, "--n-tasks", 100, "--seed", 0,
                 "--out", runs / "plan_oracle")
        if ckpt.exists() and not (runs / "plan" / f"plan_{task}.json").exists():
            call("plan", "--ckpt", ckpt, "--task", task, "--n-tasks", 100, "--seed", 0, "--out", runs / "plan")


def reports(runs: Path) -> None:
    ckpt = runs / "main" / "model.ckpt"
    if ckpt.exists():
        call("eval", "--ckpt", ckpt, "--data", runs / "data" / "test100", "--out", runs / "reports" / "test100")
        call("eval", "--ckpt", ckpt, "--data", runs / "data" / "test5", "--protocol", "generalization",
             "--out", runs / "reports" / "test5")


STEPS = ("main", "plan", "reports", "overfit", "compare")


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--runs", type=Path, default=Path("/root/runs"))
    p.add_argument("--main-iters", type=int, default=20000, help="iterations for the main CIN model")
    p.add_argument("--iters", type=int, default=20000, help="iterations per comparison run")
    p.add_argument("--lr", type=float, default=5e-4, help="base learning rate (batch 8)")
    p.add_argument("--only", default=",".join(STEPS), help="comma-separated steps, run in the given order: "
                   + ",".join(STEPS))
    p.add_argument("--compare-runs", help="comma-separated subset of comparison runs, e.g. cin_s0,in_s0")
    args = p.parse_args()
    gen_data(args.runs)
    for name in args.only.split(","):
        if name == "overfit":
            overfit(args.runs, args.lr)
        elif name == "main":
            main_model(args.runs, args.main_iters, args.lr)
        elif name == "compare":
            compare(args.runs, args.iters, args.lr, set(args.compare_runs.split(",")) if args.compare_runs else None)
        elif name == "plan":
            plans(args.runs)
        elif name == "reports":
            reports(args.runs)
        elif name:
            p.error(f"unknown step {name!r}")


if __name__ == "__main__":
    main()
