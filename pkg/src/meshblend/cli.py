"""Command-line entry point.

Subcommands: gen-data, train-corr, train-blend, correspond, blend,
validate, eval. Exit codes: 0 success (or exact correspondence), 1 bad
input or I/O failure, 2 partial correspondence / failed validation,
3 fallback correspondence. Stdout carries the parseable result;
diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError
from .correspondence import (
    CorrespondenceParams,
    load_correspondence_params,
    rbmpnn_forward,
    save_correspondence_params,
)
from .fusion import (
    FusionParams,
    align,
    blend,
    load_fusion_params,
    save_fusion_params,
)
from .mesh import MeshError, load_obj, save_obj, validate_watertight_manifold
from .refinement import EXACT, PARTIAL, conditional_refine, write_report
from .training import (
    DatasetSpec,
    TrainConfig,
    TrainingDiverged,
    eval_correspondence,
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
    train_blending,
    train_correspondence,
)


def _fail(message: str, code: int = 1) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _write_history(path, history) -> None:
    lines = ["step,task,loss"]
    lines += [f"{step},{task},{loss!r}" for step, task, loss in history]
    Path(path).write_text("\n".join(lines) + "\n")


def _load_train_config(args) -> TrainConfig:
    if getattr(args, "config", None):
        cfg = TrainConfig.from_file(args.config)
    else:
        cfg = TrainConfig()
    overrides = {}
    for name in ("seed", "steps", "lr", "optimizer", "checkpoint_every"):
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            overrides[name] = value
    if overrides:
        cfg = TrainConfig(**{**{f: getattr(cfg, f) for f in (
            "seed", "steps", "lr", "optimizer", "split", "checkpoint_every",
            "adam_beta1", "adam_beta2", "adam_eps")}, **overrides})
    return cfg


def cmd_gen_data(args) -> int:
    spec = DatasetSpec(
        sequences=args.sequences,
        frames=args.frames,
        shape=args.shape,
        level=args.level,
        amplitude=args.amplitude,
        max_step=args.max_step,
    )
    rng = np.random.default_rng(args.seed)
    dataset = generate_synthetic_dataset(spec, rng)
    save_dataset(dataset, args.out)
    print(f"sequences={len(dataset.sequences)} frames={spec.frames} out={args.out}")
    return 0


def cmd_train_corr(args) -> int:
    cfg = _load_train_config(args)
    dataset = load_dataset(args.data)
    sequences = dataset.train or dataset.sequences
    params = CorrespondenceParams.initialize(
        k=args.k,
        dim=args.dim,
        lambda_s=args.lambda_s,
        lambda_r=args.lambda_r,
        sinkhorn_iters=args.sinkhorn_iters,
        sinkhorn_tau=args.sinkhorn_tau,
        seed=cfg.seed,
    )
    params, history = train_correspondence(sequences, cfg, params, checkpoint_path=args.out)
    save_correspondence_params(params, args.out)
    if args.history:
        _write_history(args.history, history)
    first = history[0][2] if history else float("nan")
    last = history[-1][2] if history else float("nan")
    print(f"steps={cfg.steps} first_loss={first!r} last_loss={last!r} out={args.out}")
    return 0


def cmd_train_blend(args) -> int:
    cfg = _load_train_config(args)
    dataset = load_dataset(args.data)
    sequences = dataset.train or dataset.sequences
    corr_params = load_correspondence_params(args.corr_model) if args.corr_model else None
    params = FusionParams.initialize(dim=args.dim, seed=cfg.seed)
    params, history = train_blending(
        sequences, cfg, params, corr_params=corr_params, checkpoint_path=args.out
    )
    save_fusion_params(params, args.out)
    if args.history:
        _write_history(args.history, history)
    first = history[0][2] if history else float("nan")
    last = history[-1][2] if history else float("nan")
    print(f"steps={cfg.steps} first_loss={first!r} last_loss={last!r} out={args.out}")
    return 0


def _load_pair(args):
    g0 = load_obj(args.g0)
    g1 = load_obj(args.g1)
    if g0.n != g1.n:
        raise MeshError(f"vertex counts differ: {args.g0} has {g0.n}, {args.g1} has {g1.n}")
    return g0, g1


def cmd_correspond(args) -> int:
    g0, g1 = _load_pair(args)
    params = load_correspondence_params(args.model)
    soft = rbmpnn_forward(g0, g1, params)
    result = conditional_refine(g0, g1, soft)
    if args.out:
        write_report(args.out, soft, result)
    print(
        f"outcome={result.kind} matched={result.stats.matched} "
        f"verified={result.stats.verified} n={g0.n}"
    )
    if result.kind == EXACT:
        return 0
    return 2 if result.kind == PARTIAL else 3


def cmd_blend(args) -> int:
    g0, g1 = _load_pair(args)
    corr = load_correspondence_params(args.corr_model)
    fus = load_fusion_params(args.fusion_model)
    soft = rbmpnn_forward(g0, g1, corr)
    result = conditional_refine(g0, g1, soft)
    aligned = align(g0, g1, result)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tokens = [tok.strip() for tok in args.t.split(",") if tok.strip()]
    if not tokens:
        return _fail("--t needs at least one value")
    for tok in tokens:
        try:
            t = float(tok)
        except ValueError:
            return _fail(f"bad time value {tok!r}")
        blended = blend(aligned, t, fus)
        save_obj(blended.to_mesh(), out_dir / f"blend_t{tok}.obj")
    print(f"alignment={result.kind} frames={len(tokens)} out={out_dir}")
    return 0


def cmd_validate(args) -> int:
    mesh = load_obj(args.mesh)
    report = validate_watertight_manifold(mesh)
    print(report.summary())
    return 0 if report.ok else 2


def cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    sequences = dataset.test or dataset.sequences
    params = load_correspondence_params(args.model)
    rng = np.random.default_rng(args.seed)
    metrics = eval_correspondence(params, sequences, args.samples, rng)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshblend",
        description="Correspondence and temporal blending for isomorphic triangle meshes.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic motion dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--sequences", type=int, default=4)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--shape", choices=("icosphere", "torus"), default="icosphere")
    p.add_argument("--level", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--amplitude", type=float, default=0.3)
    p.add_argument("--max-step", type=float, default=0.15)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-corr", help="train the correspondence network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--lambda-s", type=float, default=0.5, dest="lambda_s")
    p.add_argument("--lambda-r", type=float, default=0.5, dest="lambda_r")
    p.add_argument("--sinkhorn-iters", type=int, default=20, dest="sinkhorn_iters")
    p.add_argument("--sinkhorn-tau", type=float, default=1.0, dest="sinkhorn_tau")
    p.add_argument("--history")
    p.set_defaults(func=cmd_train_corr)

    p = sub.add_parser("train-blend", help="train the fusion network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--corr-model", dest="corr_model",
                   help="align with this matcher instead of the sampling permutation")
    p.add_argument("--history")
    p.set_defaults(func=cmd_train_blend)

    p = sub.add_parser("correspond", help="match two meshes and refine")
    p.add_argument("--g0", required=True)
    p.add_argument("--g1", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", help="per-vertex report file")
    p.set_defaults(func=cmd_correspond)

    p = sub.add_parser("blend", help="synthesize blended meshes at times t")
    p.add_argument("--g0", required=True)
    p.add_argument("--g1", required=True)
    p.add_argument("--corr-model", required=True, dest="corr_model")
    p.add_argument("--fusion-model", required=True, dest="fusion_model")
    p.add_argument("--t", required=True, help="comma-separated time values")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_blend)

    p = sub.add_parser("validate", help="watertight 2-manifold check")
    p.add_argument("--mesh", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("eval", help="correspondence metrics on held-out data")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MeshError, CheckpointError, TrainingDiverged, OSError, ValueError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
