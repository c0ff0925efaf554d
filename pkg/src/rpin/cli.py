"""Command-line entry point: gen-data, train, eval, rollout, plan.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3, 4


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


# ---------------------------------------------------------------- config handling

def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"config file {p} must hold a JSON object")
    return data


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    """Apply ``key=value`` / ``a.b=value`` overrides; values parse as JSON, falling back to strings."""
    out = json.loads(json.dumps(config))
    for item in overrides or []:
        if "=" not in item:
            raise ValidationError(f"override {item!r} must look like key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValidationError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return out


def echo_config(out_dir: Path, command: str, config: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps({"command": command, **config}, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")


def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not (p / "manifest.json").is_file():
        raise ValidationError(f"{what} {p} is not a dataset directory (no manifest.json); run gen-data first")
    return p


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{what} not found: {p}")
    return p


def _load_model(path):
    from .trainer import CheckpointError, build_model, load

    try:
        ck = load(_require_file(path, "checkpoint"))
        return build_model(ck), ck
    except CheckpointError as exc:
        raise ValidationError(f"cannot load checkpoint {path}: {exc}") from exc


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    from .simworld import SimConfig, gen_dataset

    cfg = apply_overrides(load_config(args.config), args.set)
    cfg.setdefault("sim", {})
    for key, flag in (("m", args.balls), ("radius", args.radius), ("T_ep", args.frames)):
        if flag is not None:
            cfg["sim"][key] = flag
    cfg["episodes"] = args.episodes if args.episodes is not None else cfg.get("episodes", 200)
    cfg["seed"] = args.seed if args.seed is not None else cfg.get("seed", 0)
    try:
        sim = SimConfig(**cfg["sim"])
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid simulator config: {exc}") from exc
    if not isinstance(cfg["episodes"], int) or cfg["episodes"] < 1:
        raise ValidationError(f"--episodes must be a positive integer, got {cfg['episodes']!r}")
    cfg["sim"] = sim.to_dict()
    manifest = gen_dataset(sim, cfg["episodes"], cfg["seed"], args.out)
    print(f"wrote {len(manifest['episodes'])} episodes to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import TrainConfig, train

    cfg = apply_overrides(load_config(args.config), args.set)
    for key, flag in (("data_path", args.data), ("seed", args.seed), ("max_iter", args.max_iter),
                      ("eval_path", args.eval_data), ("kind", args.kind)):
        if flag is not None:
            cfg[key] = flag
    try:
        tc = TrainConfig.from_dict(cfg).validate()
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid training config: {exc}") from exc
    if not tc.data_path:
        raise ValidationError("no dataset given; pass --data or set data_path in the config")
    _require_dir(tc.data_path, "dataset")
    if tc.eval_path:
        _require_dir(tc.eval_path, "eval dataset")
    out = Path(args.out)
    echo_config(out, "train", tc.to_dict())
    res = train(tc, out, resume=args.resume,
                log=lambda r: print(json.dumps(r, sort_keys=True), flush=True))
    print(f"saved {out / 'model.ckpt'} after {res.checkpoint.iter} iterations")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evalbench import EvalReport, config_hash, emit_report, eval_beyond, eval_generalization, eval_within, \
        format_table
    from .simworld import load_dataset

    model, ck = _load_model(args.ckpt)
    data = load_dataset(_require_dir(args.data, "dataset"))
    T_train = args.T_train or int(ck.train_config.get("T_train", 20))
    N = model.config.k
    if N + 2 * T_train > data.T_ep:
        raise ValidationError(f"episodes of length {data.T_ep} are too short for N={N} + 2*T_train={2 * T_train}")
    protocols = {"within": eval_within, "beyond": eval_beyond, "generalization": eval_generalization}
    names = list(protocols) if args.protocol == "all" else [args.protocol]
    out = Path(args.out) if args.out else Path(args.ckpt).resolve().parent / "reports"
    run_cfg = {"ckpt": str(args.ckpt), "data": str(args.data), "protocols": names, "T_train": T_train, "N": N}
    echo_config(out, "eval", run_cfg)
    report = EvalReport(model_id=Path(args.ckpt).stem + f"-{model.config.kind}",
                        config_hash=config_hash({"model": ck.model_config, "train": ck.train_config}))
    for name in names:
        report.protocols[name] = protocols[name](model, data, T_train, N)
    emit_report(report, out)
    print(format_table(report), end="")
    return EXIT_OK


def cmd_rollout(args) -> int:
    from .evalbench import model_predictor
    from .simworld import load_dataset
    from .trainer import make_batch

    model, ck = _load_model(args.ckpt)
    data = load_dataset(_require_dir(args.data, "dataset"))
    N = model.config.k
    if not 0 <= args.episode < len(data):
        raise ValidationError(f"--episode {args.episode} out of range for {len(data)} episodes")
    H = args.horizon
    if H < 1 or N + H > data.T_ep:
        raise ValidationError(f"--horizon must be in [1, {data.T_ep - N}] for episodes of length {data.T_ep}")
    cfg = data.config
    batch = make_batch(data.states, [args.episode], [0], N, H, cfg.width, cfg.height)
    pred = model_predictor(model)(batch, H)[0]
    scale = np.array([cfg.width, cfg.height, cfg.width, cfg.height])
    pred_px, gt_px = pred * scale, batch.gt_boxes[0].astype(np.float64) * scale
    out = Path(args.out) if args.out else Path(args.ckpt).resolve().parent / "reports" / f"rollout_{args.episode:04d}"
    echo_config(out, "rollout", {"ckpt": str(args.ckpt), "data": str(args.data), "episode": args.episode,
                                 "horizon": H})
    write_rollout_frames(out, data.states[args.episode, N:N + H], pred_px, cfg.width, cfg.height)
    err = ((pred - batch.gt_boxes[0]) ** 2)[..., :2].sum(-1).mean(-1) * 1000
    trace = {"episode": args.episode, "N": N, "horizon": H, "input_boxes": batch.boxes[0].tolist(),
             "pred_boxes": pred_px.tolist(), "gt_boxes": gt_px.tolist(), "step_error": err.tolist()}
    (out / "trace.json").write_text(json.dumps(trace) + "\n", encoding="utf-8")
    print(f"wrote {H} frames and trace.json to {out}")
    return EXIT_OK


def write_rollout_frames(out: Path, gt_states: np.ndarray, pred_px: np.ndarray, width: int, height: int,
                         scale: int = 4) -> None:
    """One PNG per step: the true frame with predicted centers marked as crosses."""
    from PIL import Image

    from .simworld import render_arrays

    frames = render_arrays(gt_states[..., :2], gt_states[..., 4], width, height)  # [H, 3, h, w]
    for t, frame in enumerate(frames):
        img = np.repeat(np.repeat((frame.transpose(1, 2, 0) * 255).astype(np.uint8), scale, 0), scale, 1)
        for cx, cy in pred_px[t, :, :2] * scale:
            x, y = int(round(cx)), int(round(cy))
            for d in range(-3, 4):
                for px, py in ((x + d, y), (x, y + d)):
                    if 0 <= px < img.shape[1] and 0 <= py < img.shape[0]:
                        img[py, px] = (255, 255, 255)
        Image.fromarray(img).save(out / f"frame_{t:03d}.png")


def cmd_plan(args) -> int:
    from .planner import evaluate_plans, oracle_predictor

    if args.n_tasks < 1:
        raise ValidationError(f"--n-tasks must be >= 1, got {args.n_tasks}")
    kind = {"target": "target_state", "hitting": "hitting"}[args.task]
    if args.ckpt == "oracle":
        predictor, N = oracle_predictor, 4
        default_out = Path("plans")
    else:
        predictor, _ = _load_model(args.ckpt)
        N = predictor.config.k
        default_out = Path(args.ckpt).resolve().parent / "reports"
    out = Path(args.out) if args.out else default_out
    echo_config(out, "plan", {"ckpt": str(args.ckpt), "task": kind, "n_tasks": args.n_tasks, "seed": args.seed})
    summary = evaluate_plans(predictor, kind, args.n_tasks, args.seed, N=N)
    path = out / f"plan_{args.task}.json"
    path.write_text(json.dumps(summary.to_dict(), indent=1) + "\n", encoding="utf-8")
    what = "hitting accuracy" if kind == "hitting" else "target-state error (px^2)"
    print(f"{what}: planner {summary.metric:.4f}  random {summary.random_metric:.4f}  "
          f"best possible {summary.ceiling:.4f}  ({summary.n_tasks} tasks) -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rpin", description="Object-centric physics prediction on simulated billiards.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry (dotted keys allowed); repeatable")

    g = sub.add_parser("gen-data", help="simulate and store a billiards dataset")
    common(g)
    g.add_argument("--out", required=True)
    g.add_argument("--episodes", type=int)
    g.add_argument("--balls", type=int)
    g.add_argument("--radius", type=float)
    g.add_argument("--frames", type=int)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    common(t)
    t.add_argument("--data")
    t.add_argument("--eval-data")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--max-iter", type=int)
    t.add_argument("--kind", choices=("cin", "in"))
    t.add_argument("--resume", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--protocol", choices=("within", "beyond", "generalization", "all"), default="all")
    e.add_argument("--T-train", type=int, dest="T_train")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rollout", help="render a predicted trajectory next to the truth")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--episode", type=int, default=0)
    r.add_argument("--horizon", type=int, default=40)
    r.add_argument("--out")
    r.set_defaults(func=cmd_rollout)

    pl = sub.add_parser("plan", help="plan billiard tasks with a checkpoint (or 'oracle')")
    pl.add_argument("--ckpt", required=True)
    pl.add_argument("--task", choices=("target", "hitting"), required=True)
    pl.add_argument("--n-tasks", type=int, default=100)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plan)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"rpin {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, FileNotFoundError) as exc:
        print(f"rpin {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        print(f"rpin {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
