"""Command-line entry point.

Subcommands: serve, replay, train-cpn, train-ccn, grid-search, eval.
``PHANTOMARM_LOG`` controls the log level (the only environment variable).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import reporting
from .collision_net import TrainingConfig, generate_dataset, grid_search, train_corrector, train_predictor
from .kinematics import bundled_model_path, load_model
from .mlp import Mlp
from .service import bundled_scene_path, evaluate, load_scene, replay

logger = logging.getLogger("phantomarm")


def _resolve_model(ref: str) -> Path:
    p = Path(ref)
    if p.exists():
        return p
    bundled = bundled_model_path(ref)
    if bundled.exists():
        return bundled
    raise SystemExit(f"model '{ref}' not found (no such file or bundled model)")


def _resolve_scene(ref: str) -> Path:
    if ref == "default":
        return bundled_scene_path()
    p = Path(ref)
    if not p.exists():
        raise SystemExit(f"scene config '{ref}' not found")
    return p


def _add_training_args(p: argparse.ArgumentParser):
    p.add_argument("--model", default="hand16", help="model file or bundled name")
    p.add_argument("--n", type=int, default=200_000, help="dataset size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    p.add_argument("--alpha", type=float, default=1.0, help="similarity loss weight")
    p.add_argument("--beta", type=float, default=5.0, help="collision loss weight")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--out", type=Path, required=True, help="output directory")


def _training_config(args, **overrides) -> TrainingConfig:
    kwargs = dict(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        alpha=args.alpha,
        beta=args.beta,
        seed=args.seed,
    )
    kwargs.update(overrides)
    return TrainingConfig(**kwargs)


def cmd_train_cpn(args) -> int:
    model = load_model(_resolve_model(args.model))
    logger.info("generating dataset: n=%d seed=%d", args.n, args.seed)
    dataset = generate_dataset(model, args.n, args.seed)
    net, report = train_predictor(dataset, _training_config(args))
    args.out.mkdir(parents=True, exist_ok=True)
    net.save(args.out / "cpn.json")
    reporting.write_training_report(report, args.out, "cpn")
    last = report.epochs[-1]
    print(f"predictor saved to {args.out / 'cpn.json'}")
    print(f"final val loss {last.val_loss:.4f}, val accuracy {last.val_metric:.4f}, "
          f"{report.wall_time_s:.0f}s")
    return 0


def cmd_train_ccn(args) -> int:
    model = load_model(_resolve_model(args.model))
    predictor = Mlp.load(args.cpn)
    dataset = generate_dataset(model, args.n, args.seed)
    net, report = train_corrector(dataset, predictor, model, _training_config(args))
    args.out.mkdir(parents=True, exist_ok=True)
    net.save(args.out / "ccn.json")
    reporting.write_training_report(report, args.out, "ccn")
    last = report.epochs[-1]
    print(f"corrector saved to {args.out / 'ccn.json'}")
    print(f"final val loss {last.val_loss:.4f}, oracle collision rate {last.val_metric:.4f}, "
          f"{report.wall_time_s:.0f}s")
    return 0


def cmd_grid_search(args) -> int:
    model = load_model(_resolve_model(args.model))
    predictor = Mlp.load(args.cpn)
    dataset = generate_dataset(model, args.n, args.seed)
    alphas = [float(v) for v in args.alpha_grid.split(",")]
    betas = [float(v) for v in args.beta_grid.split(",")]
    result = grid_search(alphas, betas, dataset, predictor, model,
                         _training_config(args), mse_cap=args.mse_cap)
    args.out.mkdir(parents=True, exist_ok=True)
    reporting.write_grid_report(result, args.out)
    best = {"alpha": result.best_alpha, "beta": result.best_beta, "infeasible": result.infeasible}
    (args.out / "grid_best.json").write_text(json.dumps(best, indent=1))
    print(f"best cell alpha={result.best_alpha:g} beta={result.best_beta:g}"
          + (" (warning: no cell met the MSE cap)" if result.infeasible else ""))
    return 0


def cmd_eval(args) -> int:
    scene = load_scene(_resolve_scene(args.config))
    metrics = evaluate(scene, args.out, latency_iterations=args.latency_iterations)
    print(json.dumps(metrics, indent=1))
    print(f"reports written to {args.out}")
    return 0


def cmd_replay(args) -> int:
    scene = load_scene(_resolve_scene(args.config))
    record, summary = replay(scene, args.trace, args.pedal, args.out, rate=args.rate)
    print(json.dumps(summary, indent=1))
    print(f"demo written to {Path(args.out) / 'demo.jsonl'}")
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    scene = load_scene(_resolve_scene(args.config))
    ui_dir = Path(args.ui) if args.ui else None
    if ui_dir is not None and not ui_dir.is_dir():
        raise SystemExit(f"--ui directory '{ui_dir}' not found")
    serve(scene, args.port, host=args.host, trace_path=args.trace, ui_dir=ui_dir)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("PHANTOMARM_LOG", "INFO").upper(),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )
    parser = argparse.ArgumentParser(prog="phantomarm",
                                     description="assisted teleoperation sandbox")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the operator session endpoint")
    p.add_argument("--config", default="default", help="scene config path or 'default'")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--trace", default=None, help="optional trace for transport playback")
    p.add_argument("--ui", default=None, help="serve a built operator console from this directory at /ui")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("replay", help="headless trace replay producing a demo file")
    p.add_argument("--config", default="default")
    p.add_argument("--trace", required=True)
    p.add_argument("--pedal", default=None, help="pedal script: JSON [[t, 'down'|'up'], ...]")
    p.add_argument("--rate", type=float, default=None,
                   help="resample the trace to this Hz by zero-order hold")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("train-cpn", help="train the self-collision predictor")
    _add_training_args(p)
    p.set_defaults(fn=cmd_train_cpn)

    p = sub.add_parser("train-ccn", help="train the configuration corrector")
    _add_training_args(p)
    p.add_argument("--cpn", type=Path, required=True, help="trained predictor weights")
    p.set_defaults(fn=cmd_train_ccn)

    p = sub.add_parser("grid-search", help="loss-weight grid search for the corrector")
    _add_training_args(p)
    p.add_argument("--cpn", type=Path, required=True)
    p.add_argument("--alpha-grid", default="0.5,1.0,2.0")
    p.add_argument("--beta-grid", default="1.0,5.0,10.0")
    p.add_argument("--mse-cap", type=float, default=0.25)
    p.set_defaults(fn=cmd_grid_search)

    p = sub.add_parser("eval", help="latency, accuracy, and property metrics report")
    p.add_argument("--config", default="default")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--latency-iterations", type=int, default=10000)
    p.set_defaults(fn=cmd_eval)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
