"""Command-line interface.

Commands: gen-data, train-source, adapt, eval, run-direction, gradcheck.
Every command is a pure function of its flags, config file, input bytes,
and seeds: rerunning with the same inputs produces byte-identical outputs.

Exit codes (stable contract):
  0 success | 1 I/O | 2 config/flags | 3 fingerprint mismatch
  4 degenerate data | 5 verification failure
"""

import argparse
import sys
from pathlib import Path

from . import __version__
from .backend import active_backend
from .config import PRESET_NAMES, default_seed, load_run_config
from .data import (
    STYLE_PRESETS,
    generate_synthetic,
    load_pack,
    save_pack,
    write_manifest,
)
from .engine.gradcheck import run_checks, scope_names
from .engine.prng import Prng
from .engine.tensor import corrupt_gradient
from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateDataError,
    FingerprintError,
    IngestionError,
    SatlError,
)
from .metrics import emit
from .models import compose_adapted, load_checkpoint, save_checkpoint
from .pipeline import adapt_target, evaluate, run_direction, train_source

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_FINGERPRINT = 3
EXIT_DEGENERATE = 4
EXIT_VERIFY = 5


def _parse_size(raw: str) -> "tuple[int, int]":
    try:
        if "x" in raw:
            h, w = raw.lower().split("x")
            return int(h), int(w)
        v = int(raw)
        return v, v
    except ValueError:
        raise ConfigError(f"--size must be N or HxW, got {raw!r}") from None


def cmd_gen_data(args) -> int:
    style, preset_ratio = STYLE_PRESETS[args.style_preset]
    pos_ratio = args.pos_ratio if args.pos_ratio is not None else preset_ratio
    seed = args.seed if args.seed is not None else default_seed()
    size = _parse_size(args.size)
    ds = generate_synthetic(
        n=args.n,
        pos_ratio=pos_ratio,
        style=style,
        image_size=size,
        cdr_threshold=args.cdr_threshold,
        prng=Prng(seed),
        domain_tag=args.style_preset,
    )
    save_pack(ds, args.out)
    neg, pos = ds.class_counts
    write_manifest(
        str(args.out) + ".manifest.json",
        {
            "n": args.n,
            "pos_ratio": pos_ratio,
            "style_preset": args.style_preset,
            "image_size": list(size),
            "cdr_threshold": args.cdr_threshold,
            "seed": seed,
            "class_counts": {"neg": neg, "pos": pos},
            "domain_tag": ds.domain_tag,
        },
    )
    print(f"wrote {args.out}: {len(ds.items)} items ({pos} pos / {neg} neg)")
    return EXIT_OK


def cmd_train_source(args) -> int:
    cfg = load_run_config(args.config)
    ds = load_pack(args.data)
    if not ds.labeled:
        raise ConfigError(f"{args.data}: training needs a labeled pack")
    model, log = train_source(ds, cfg.source_train, progress=not args.quiet)
    save_checkpoint(
        model,
        args.out_checkpoint,
        metadata={
            "epoch": model.best_epoch,
            "best_val_accuracy": model.best_val_accuracy,
            "seed": cfg.source_train.seed,
        },
    )
    if args.log:
        log.write(args.log)
    print(
        f"wrote {args.out_checkpoint}: best epoch {model.best_epoch} "
        f"val_acc={model.best_val_accuracy:.3f}"
    )
    return EXIT_OK


def cmd_adapt(args) -> int:
    cfg = load_run_config(args.config)
    source = load_checkpoint(args.source_checkpoint)
    if source.kind != "classifier":
        raise ConfigError(f"{args.source_checkpoint}: expected a classifier checkpoint")
    target = load_pack(args.target_data)
    vae, log = adapt_target(
        source, target.unlabeled_view(), cfg.adapt, progress=not args.quiet
    )
    save_checkpoint(vae, args.out_checkpoint, metadata={"epoch": cfg.adapt.epochs, "seed": cfg.adapt.seed})
    if args.log:
        log.write(args.log)
    print(f"wrote {args.out_checkpoint}: adapted {cfg.adapt.epochs} epochs on {len(target.items)} images")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    model = load_checkpoint(args.checkpoint)
    if model.kind != "classifier":
        raise ConfigError(f"{args.checkpoint}: expected a classifier checkpoint")
    strategy = "source"
    if args.adapted_encoder:
        vae = load_checkpoint(args.adapted_encoder)
        if vae.kind != "vae":
            raise ConfigError(f"{args.adapted_encoder}: expected a reconstruction-model checkpoint")
        model = compose_adapted(model, vae)
        strategy = "adapted"
    ds = load_pack(args.data)
    if not ds.labeled:
        raise ConfigError(f"{args.data}: evaluation needs a labeled pack")
    report, curve = evaluate(
        model, ds, cfg.eval.threshold, direction=ds.domain_tag, strategy=strategy
    )
    emit(
        [report],
        {strategy: curve},
        metrics_path=args.out_metrics,
        roc_paths={strategy: args.out_roc} if args.out_roc else None,
        svg_path=args.svg,
        svg_title=f"ROC {ds.domain_tag}",
    )
    print(
        f"{ds.domain_tag} [{strategy}] acc={report.accuracy:.3f} f1={report.f1:.3f} "
        f"auc={report.auc:.3f}"
    )
    return EXIT_OK


def cmd_run_direction(args) -> int:
    cfg = load_run_config(args.config)
    source_ds = load_pack(args.source_data)
    target_ds = load_pack(args.target_data)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    result = run_direction(
        source_ds, target_ds, cfg.source_train, cfg.adapt, cfg.eval.threshold,
        progress=not args.quiet,
    )
    save_checkpoint(
        result.source_model,
        out / "source.ckpt",
        metadata={
            "epoch": result.source_model.best_epoch,
            "best_val_accuracy": result.source_model.best_val_accuracy,
            "seed": cfg.source_train.seed,
        },
    )
    save_checkpoint(
        result.adapted_vae,
        out / "adapted.ckpt",
        metadata={"epoch": cfg.adapt.epochs, "seed": cfg.adapt.seed},
    )
    result.train_log.write(out / "train.csv")
    result.adapt_log.write(out / "adapt.csv")
    emit(
        [result.report_wo, result.report_w],
        {"source": result.roc_wo, "adapted": result.roc_w},
        metrics_path=out / "metrics.csv",
        roc_paths={"source": out / "roc_wo.csv", "adapted": out / "roc_w.csv"},
        svg_path=out / "roc.svg",
        svg_title=f"ROC {result.direction}",
    )
    print(
        f"{result.direction}: source acc={result.report_wo.accuracy:.3f} "
        f"f1={result.report_wo.f1:.3f} | adapted acc={result.report_w.accuracy:.3f} "
        f"f1={result.report_w.f1:.3f}"
    )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    scopes = scope_names() if args.scope == "all" else [args.scope]
    seed = args.seed if args.seed is not None else default_seed()
    failures = []

    def run_all():
        for scope in scopes:
            for rep in run_checks(scope, seed=seed, tol=args.tol, n_seeds=args.seeds):
                status = "PASS" if rep.passed else "FAIL"
                print(
                    f"{scope:<8} {rep.name:<20} max_rel_err={rep.max_rel_error:.3e} "
                    f"({rep.n_elements} elements) {status}"
                )
                if not rep.passed:
                    failures.append(f"{scope}:{rep.name}")

    if args.corrupt:
        with corrupt_gradient(args.corrupt):
            run_all()
    else:
        run_all()
    if failures:
        print(f"FAILED: {', '.join(failures)}", file=sys.stderr)
        return EXIT_VERIFY
    print("all gradient checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="satl",
        description=(
            "Source-free domain adaptation: train a source classifier, adapt its "
            "encoder on unlabeled target images through a reconstruction model, "
            "recompose, and evaluate."
        ),
    )
    p.add_argument("--version", action="version", version=f"satl {__version__} ({active_backend()} kernels)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset pack")
    g.add_argument("--out", required=True, help="output pack path")
    g.add_argument("--n", type=int, required=True, help="number of images")
    g.add_argument("--pos-ratio", type=float, default=None, help="positive fraction (default: preset's)")
    g.add_argument(
        "--style-preset",
        choices=sorted(STYLE_PRESETS),
        default="source",
        help="photometric domain style (skewed also defaults to a 1:9 class ratio)",
    )
    g.add_argument("--size", default="64", help="image size, N or HxW (default 64)")
    g.add_argument("--cdr-threshold", type=float, default=0.6, help="label threshold on the diameter ratio")
    g.add_argument("--seed", type=int, default=None, help="generation seed (default: $SATL_SEED or 0)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train-source", help="train the source classifier")
    t.add_argument("--data", required=True, help="labeled pack")
    t.add_argument("--config", default=None, help=f"preset name {PRESET_NAMES} or INI path")
    t.add_argument("--out-checkpoint", required=True)
    t.add_argument("--log", default=None, help="training log CSV path")
    t.add_argument("--quiet", action="store_true", help="suppress per-epoch progress")
    t.set_defaults(func=cmd_train_source)

    a = sub.add_parser(
        "adapt",
        help="adapt a source encoder on unlabeled target images "
        "(source images are not an input, by design)",
    )
    a.add_argument("--source-checkpoint", required=True, help="classifier checkpoint")
    a.add_argument("--target-data", required=True, help="target pack (labels ignored)")
    a.add_argument("--config", default=None)
    a.add_argument("--out-checkpoint", required=True)
    a.add_argument("--log", default=None)
    a.add_argument("--quiet", action="store_true")
    a.set_defaults(func=cmd_adapt)

    e = sub.add_parser("eval", help="evaluate a classifier on a labeled pack")
    e.add_argument("--checkpoint", required=True, help="classifier checkpoint")
    e.add_argument(
        "--adapted-encoder",
        default=None,
        help="reconstruction-model checkpoint; composes its encoder under the classifier head",
    )
    e.add_argument("--data", required=True)
    e.add_argument("--config", default=None)
    e.add_argument("--out-metrics", required=True)
    e.add_argument("--out-roc", default=None)
    e.add_argument("--svg", default=None)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("run-direction", help="full source->target protocol")
    r.add_argument("--source-data", required=True)
    r.add_argument("--target-data", required=True)
    r.add_argument("--config", default=None)
    r.add_argument("--out-dir", required=True)
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_run_direction)

    c = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    c.add_argument("--scope", choices=scope_names() + ["all"], default="all")
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--seeds", type=int, default=10, help="random draws per check")
    c.add_argument(
        "--corrupt",
        default=None,
        metavar="OP",
        help="debug: perturb the named op's gradient rule (negative control)",
    )
    c.set_defaults(func=cmd_gradcheck)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FingerprintError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except (CheckpointError, IngestionError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except DegenerateDataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SatlError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
