"""Command-line front end for the full pipeline.

Subcommands: train, attack, evaluate, surface, sweep, bench-hvp, run.
Exit codes: 0 success, 1 usage error, 2 runtime error.  Errors go to stderr
as a single machine-parsable ``code: message`` line.

Perturbation sizes are expressed in [0,1] pixel units (default 16/255); the
``--eps-255`` alias accepts the 0..255 convention instead.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import attacks, bench, data, flatness, models
from .errors import PgnLabError, UsageError

DEFAULT_EPS = attacks.DEFAULT_EPS


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so main() owns exit codes."""

    def error(self, message):
        raise UsageError(message)


def _add_data_flags(p):
    p.add_argument("--n-classes", type=int, default=4, help="synthetic classes")
    p.add_argument("--side", type=int, default=16, help="synthetic image side")
    p.add_argument("--n-per-class", type=int, default=500,
                   help="synthetic training samples per class")
    p.add_argument("--test-per-class", type=int, default=100,
                   help="synthetic test samples per class")
    p.add_argument("--noise-sd", type=float, default=0.15,
                   help="synthetic pixel noise standard deviation")
    p.add_argument("--data-seed", type=int, default=7, help="dataset seed")
    p.add_argument("--idx-images", help="IDX image file (overrides synthetic)")
    p.add_argument("--idx-labels", help="IDX label file (with --idx-images)")


def _add_budget_flags(p):
    group = p.add_mutually_exclusive_group()
    group.add_argument("--eps", type=float, default=DEFAULT_EPS,
                       help="L-inf radius in [0,1] pixel units")
    group.add_argument("--eps-255", type=float, default=None,
                       help="L-inf radius in 0..255 pixel units")
    p.add_argument("--steps", type=int, default=10, help="attack iterations T")
    p.add_argument("--mu", type=float, default=1.0, help="momentum decay")


def _add_method_flags(p):
    p.add_argument("--method", choices=list(bench.METHODS), default="pgn",
                   help="attack method")
    p.add_argument("--delta", type=float, default=0.5,
                   help="gradient interpolation weight")
    p.add_argument("--zeta-factor", type=float, default=3.0,
                   help="sampling ball radius as a multiple of eps")
    p.add_argument("--samples", type=int, default=20,
                   help="neighbors sampled per iteration")
    p.add_argument("--fd-step", type=float, default=None,
                   help="finite-difference step (default: eps/steps)")
    p.add_argument("--vmi-samples", type=int, default=20,
                   help="variance-tuning sample count")
    p.add_argument("--vmi-beta-factor", type=float, default=1.5,
                   help="variance-tuning ball radius as a multiple of eps")
    p.add_argument("--emi-samples", type=int, default=11,
                   help="gradient-averaging sample count")
    p.add_argument("--emi-eta", type=float, default=7.0,
                   help="gradient-averaging interval bound (1/255 units)")
    p.add_argument("--transform", choices=["none", "dim", "sim"], default="none",
                   help="input transform applied at every gradient evaluation")
    p.add_argument("--dim-p", type=float, default=0.5,
                   help="transform probability for dim")
    p.add_argument("--dim-max-scale", type=float, default=1.33,
                   help="maximum shrink factor for dim")
    p.add_argument("--sim-copies", type=int, default=5,
                   help="scaled copies for sim")


def build_parser():
    parser = _Parser(prog="pgnlab",
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                     description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a classifier and write a PGNW file",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--arch", choices=sorted(models.ARCHITECTURES), default="mlp_a")
    p.add_argument("--seed", type=int, default=11, help="init/shuffle seed")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--out", required=True, help="output PGNW path")
    _add_data_flags(p)

    p = sub.add_parser("attack", help="craft adversarial examples",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--model", help="surrogate PGNW path")
    p.add_argument("--ensemble", default="",
                   help="comma-separated PGNW paths attacked jointly "
                        "(averaged logits)")
    p.add_argument("--seed", type=int, default=2024, help="master attack seed")
    p.add_argument("--n-images", type=int, default=200,
                   help="evaluation images to attack")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", required=True, help="output directory for PGNA files")
    _add_method_flags(p)
    _add_budget_flags(p)
    _add_data_flags(p)

    p = sub.add_parser("evaluate", help="transfer success rates of saved advs",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--advs", required=True, help="directory of PGNA files")
    p.add_argument("--model", action="append", required=True,
                   help="target PGNW path (repeatable)")
    p.add_argument("--surrogate-name", default="", help="white-box column name")
    p.add_argument("--out", help="write CSV here instead of stdout")

    p = sub.add_parser("surface", help="2D loss-surface slice as CSV",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--model", required=True, help="PGNW path")
    p.add_argument("--adv", help="PGNA file to center the slice on")
    p.add_argument("--image-index", type=int, default=0,
                   help="synthetic test image to use when no --adv is given")
    p.add_argument("--grid", type=int, default=41, help="grid resolution (odd)")
    p.add_argument("--range", type=float, default=0.1, dest="scale",
                   help="direction scale bound")
    p.add_argument("--seed", type=int, default=0, help="direction seed")
    p.add_argument("--out", required=True, help="output CSV path")
    _add_data_flags(p)

    p = sub.add_parser("sweep", help="hyperparameter sweep of the PGN attack",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--param", choices=list(bench.SWEEPABLE), required=True)
    p.add_argument("--values", required=True,
                   help="comma-separated parameter values")
    p.add_argument("--seed", type=int, default=2024, help="master attack seed")
    p.add_argument("--attack-seeds", type=int, default=3,
                   help="seed replicates per sweep point")
    p.add_argument("--n-images", type=int, default=100)
    p.add_argument("--out", required=True, help="output CSV path")
    _add_budget_flags(p)
    _add_data_flags(p)

    p = sub.add_parser("bench-hvp", help="cost ablation: plain vs Hessian vs FDM",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--n-images", type=int, default=32)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--out", help="write CSV here instead of stdout")
    _add_budget_flags(p)
    _add_data_flags(p)

    p = sub.add_parser("run", help="full experiment from a config file",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--config", help="flat key-value JSON (or a manifest.json)")
    p.add_argument("--out", help="output directory (default: runs/<stamp>-<hash>)")

    return parser


def _resolve_eps(args):
    if getattr(args, "eps_255", None) is not None:
        return args.eps_255 / 255.0
    return args.eps


def _load_data(args, split="test"):
    if args.idx_images or args.idx_labels:
        if not (args.idx_images and args.idx_labels):
            raise UsageError("--idx-images and --idx-labels must be given together")
        return data.load_idx(args.idx_images, args.idx_labels, split=split)
    seed = args.data_seed if split == "train" else args.data_seed + 1
    per_class = args.n_per_class if split == "train" else args.test_per_class
    return data.gen_synthetic(args.n_classes, args.side, per_class,
                              args.noise_sd, seed, split=split)


def _cmd_train(args):
    train_data = _load_data(args, "train")
    test_data = None if args.idx_images else _load_data(args, "test")
    arch = models.ARCHITECTURES[args.arch](train_data.image_shape,
                                           train_data.n_classes)
    cfg = models.TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                             lr=args.lr, momentum=args.momentum, seed=args.seed)
    model = models.train(arch, train_data, cfg, test_data=test_data)
    models.save(model, args.out)
    acc = model.meta.get("test_acc", model.meta["train_acc"])
    print(f"trained {model.name}: accuracy {acc:.4f} -> {args.out}")
    return 0


def _cmd_attack(args):
    paths = [p for p in args.ensemble.split(",") if p] if args.ensemble else []
    if args.model:
        paths = [args.model] + paths
    if not paths:
        raise UsageError("give --model and/or --ensemble")
    zoo = [models.load(p) for p in paths]
    surrogate = zoo if len(zoo) > 1 else zoo[0]
    test_data = _load_data(args, "test")
    n = min(args.n_images, len(test_data))
    budget = attacks.AttackBudget(eps=_resolve_eps(args), steps=args.steps,
                                  decay=args.mu)
    pgn_params = attacks.PgnParams(delta=args.delta,
                                   zeta_factor=args.zeta_factor,
                                   samples=args.samples)
    base_params = attacks.BaselineParams(vmi_samples=args.vmi_samples,
                                         vmi_beta_factor=args.vmi_beta_factor,
                                         emi_samples=args.emi_samples,
                                         emi_eta=args.emi_eta)
    fd = bench.fd_config_from({"fd_step": args.fd_step}, budget) \
        if args.fd_step else None
    results = bench.attack_batch(
        args.method, surrogate, test_data.images[:n], test_data.labels[:n],
        budget, args.seed, pgn_params, base_params, fd,
        transform=args.transform, jobs=args.jobs, dim_p=args.dim_p,
        dim_max_scale=args.dim_max_scale, sim_copies=args.sim_copies)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, r in enumerate(results):
        bench.save_adv(r, out / f"{i:04d}.pgna")
    evals = sum(r.grad_evals for r in results)
    print(f"{args.method}: wrote {len(results)} PGNA records to {out} "
          f"({evals} gradient evals)")
    return 0


def _cmd_evaluate(args):
    targets = [models.load(p) for p in args.model]
    advs_dir = Path(args.advs)
    files = sorted(advs_dir.glob("*.pgna"))
    if files:
        advs = [bench.load_adv(f) for f in files]
        matrix = bench.transfer_eval(advs, targets, args.surrogate_name)
    else:
        matrix = bench.recompute_transfer(advs_dir, targets, args.surrogate_name)
    csv = matrix.to_csv()
    if args.out:
        Path(args.out).write_text(csv)
    else:
        sys.stdout.write(csv)
    return 0


def _cmd_surface(args):
    model = models.load(args.model)
    if args.adv:
        rec = bench.load_adv(args.adv)
        x, y = rec.adv, rec.label
    else:
        test_data = _load_data(args, "test")
        if args.image_index >= len(test_data):
            raise UsageError(f"--image-index {args.image_index} out of range "
                             f"({len(test_data)} images)")
        x = test_data.images[args.image_index]
        y = int(test_data.labels[args.image_index])
    grid = flatness.loss_surface(model, x, y, args.seed, scale=args.scale,
                                 resolution=args.grid)
    flatness.write_surface_csv(grid, args.out)
    print(f"wrote {args.grid * args.grid} surface cells to {args.out} "
          f"(center loss {grid.center_loss:.9g})")
    return 0


def _sweep_config(args):
    return {
        "n_classes": args.n_classes, "side": args.side,
        "n_per_class": args.n_per_class, "test_per_class": args.test_per_class,
        "noise_sd": args.noise_sd, "data_seed": args.data_seed,
        "eps": _resolve_eps(args), "steps": args.steps, "mu": args.mu,
        "master_seed": args.seed, "attack_seeds": args.attack_seeds,
        "n_eval": args.n_images,
    }


def _cmd_sweep(args):
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if args.param == "samples":
        parsed = [int(v) for v in values]
    else:
        parsed = [float(v) for v in values]
    protocol = bench.build_protocol(_sweep_config(args))
    report = bench.sweep(args.param, parsed, protocol)
    Path(args.out).write_text(report.to_csv())
    print(f"swept {args.param} over {parsed} -> {args.out}")
    return 0


def _cmd_bench_hvp(args):
    cfg = {"n_classes": args.n_classes, "side": args.side,
           "n_per_class": args.n_per_class, "test_per_class": args.test_per_class,
           "noise_sd": args.noise_sd, "data_seed": args.data_seed,
           "eps": _resolve_eps(args), "steps": args.steps, "mu": args.mu}
    protocol = bench.build_protocol(cfg)
    batch = list(zip(protocol.eval_images[:args.n_images],
                     protocol.eval_labels[:args.n_images]))
    report = bench.timing_compare(protocol.surrogate, batch,
                                  bench.budget_from(protocol.config),
                                  delta=args.delta)
    csv = report.to_csv()
    if args.out:
        Path(args.out).write_text(csv)
    else:
        sys.stdout.write(csv)
    return 0


def _cmd_run(args):
    config = {}
    if args.config:
        loaded = json.loads(Path(args.config).read_text())
        config = loaded.get("config", loaded)  # accept a manifest as config
    out = bench.run_experiment(config, args.out)
    print(f"experiment complete: {out}")
    return 0


_COMMANDS = {"train": _cmd_train, "attack": _cmd_attack, "evaluate": _cmd_evaluate,
             "surface": _cmd_surface, "sweep": _cmd_sweep,
             "bench-hvp": _cmd_bench_hvp, "run": _cmd_run}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"{e.code}: {e}", file=sys.stderr)
        return 1
    except PgnLabError as e:
        print(f"{e.code}: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"io-error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
