"""Command line interface.

    filter-triage <subcommand> [--config FILE] [--seed N] [--out-dir DIR]
                  [--threads N] [subcommand options]

Subcommands mirror the pipeline stages; `run` executes them all.  Every
stage writes CSVs (and figures for report-like outputs) into the run
directory together with a manifest.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .data import save_internal
from .distortion import distort_dataset
from .errors import FilterTriageError
from .runner import Runner
from .synthetic import generate_dataset, write_cifar10_layout
from .zoo import evaluate


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="filter-triage",
                                description="distortion-susceptible CNN filter triage")
    p.add_argument("--config", help="experiment config (YAML)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out-dir", help="run directory (default runs/<name>)")
    p.add_argument("--threads", type=int, default=1,
                   help="parallel fine-tune workers for curve cells")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("train-baseline", help="train (or reuse) the clean baseline")

    d = sub.add_parser("distort", help="emit a distorted copy of the training split")
    d.add_argument("--kind", choices=["awgn", "blur", "identity"])
    d.add_argument("--sigma", type=float)
    d.add_argument("--out", help="output file (internal dataset format)")

    ra = sub.add_parser("rank-assoc", help="rank filters from clean/distorted pairs")
    ra.add_argument("--layer", action="append", help="conv layer id (repeatable)")
    ra.add_argument("--metric", choices=["marginal", "exact"])
    ra.add_argument("--pairs", type=int)

    rn = sub.add_parser("rank-nonassoc", help="rank filters from dataset exemplars")
    rn.add_argument("--layer", action="append")
    rn.add_argument("--features", choices=["pixels", "ftm"])
    rn.add_argument("--metric", choices=["euclidean", "hamming"])

    ft = sub.add_parser("finetune", help="fine-tune one selection and save it")
    ft.add_argument("--mode", choices=["most", "least", "all"], default="most")
    ft.add_argument("--fraction", type=float)
    ft.add_argument("--train-size", type=int)

    sub.add_parser("curve", help="accuracy-vs-train-size sweep over modes")
    sub.add_parser("invariance", help="Hamming-disparity heatmaps, baseline vs tuned")
    sub.add_parser("compare-rankings", help="associative vs non-associative overlap")
    sub.add_parser("run", help="full pipeline")

    md = sub.add_parser("make-data", help="generate a synthetic CIFAR-format dataset")
    md.add_argument("--format", choices=["cifar10-bin", "internal"], default="internal")
    md.add_argument("--train-count", type=int, default=20000)
    md.add_argument("--test-count", type=int, default=4000)

    return p


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _runner(args, cfg: ExperimentConfig) -> Runner:
    out = Path(args.out_dir) if args.out_dir else Path("runs") / cfg.name
    return Runner(cfg, out, workers=max(1, args.threads))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "make-data":
            out = Path(args.out_dir or "data")
            cfg = _load(args)
            if args.format == "cifar10-bin":
                write_cifar10_layout(out, seed=cfg.seed)
                print(f"wrote CIFAR-10 binary layout (50000+10000) to {out}")
            else:
                out.mkdir(parents=True, exist_ok=True)
                tr = generate_dataset(args.train_count, "train", cfg.seed)
                te = generate_dataset(args.test_count, "test", cfg.seed)
                save_internal(tr, out / "train.ftds")
                save_internal(te, out / "test.ftds")
                print(f"wrote {args.train_count}+{args.test_count} images to {out}")
            return 0

        cfg = _load(args)
        runner = _runner(args, cfg)
        runner.preflight()

        if args.command == "train-baseline":
            model = runner.baseline()
            _, _, test = runner.data()
            acc, loss = evaluate(model, test)
            print(f"baseline ready: clean test accuracy {acc:.4f} (loss {loss:.4f})")

        elif args.command == "distort":
            if args.kind:
                cfg.distortion.kind = args.kind
            if args.sigma is not None:
                cfg.distortion.sigma = args.sigma
            tr, _, _ = runner.data()
            spec = runner.distortion_spec()
            noisy = distort_dataset(tr, spec)
            out = Path(args.out) if args.out else runner.out / f"distorted_{spec.tag()}.ftds"
            save_internal(noisy, out)
            runner.manifest["artifacts"].append(str(out))
            runner.manifest["distortion"] = {"kind": spec.kind, "sigma": spec.sigma,
                                             "seed": spec.seed}
            print(f"wrote {len(noisy)} distorted images to {out}")

        elif args.command in ("rank-assoc", "rank-nonassoc"):
            cfg.ranking.method = "assoc" if args.command == "rank-assoc" else "nonassoc"
            if args.layer:
                cfg.layers = args.layer
            if args.command == "rank-assoc":
                if args.metric:
                    cfg.ranking.metric = args.metric
                if args.pairs:
                    cfg.ranking.pairs = args.pairs
            else:
                if args.features:
                    cfg.ranking.features = args.features
                if args.metric:
                    cfg.ranking.distance = args.metric
            rankings = runner.rank()
            for layer_id, rk in rankings.items():
                top = ", ".join(str(j) for j in rk.order[:8])
                print(f"{layer_id}: most susceptible filters: {top} ...")

        elif args.command == "finetune":
            if args.fraction:
                cfg.fraction = args.fraction
            n = args.train_size or max(cfg.train_sizes)
            tuned = runner.tuned_model(args.mode, n)
            _, noisy_test, clean_test = runner._pools()
            noisy_acc, _ = evaluate(tuned, noisy_test)
            base_noisy, _ = evaluate(runner.baseline(), noisy_test)
            path = runner.out / f"tuned_{args.mode}_{n}.ckpt"
            tuned.save(path)
            runner.manifest["artifacts"].append(path.name)
            print(f"fine-tuned ({args.mode}, n={n}): noisy test accuracy "
                  f"{noisy_acc:.4f} (baseline {base_noisy:.4f}); saved {path}")

        elif args.command == "curve":
            curve = runner.curve()
            for mode in cfg.modes:
                meds = [f"{n}:{curve.median(mode, n):.3f}" for n in cfg.train_sizes]
                print(f"{mode}: " + "  ".join(meds))

        elif args.command == "invariance":
            rows = runner.invariance()
            better = sum(r["tuned_total"] < r["baseline_total"] for r in rows)
            print(f"tuned model less disparate on {better}/{len(rows)} image-layer cells")

        elif args.command == "compare-rankings":
            rows = runner.compare_rankings()
            for r in rows:
                print(f"{r['layer']} {r['features']}/{r['distance']}: "
                      f"{r['overlap']}/{r['k']} matching filters")

        elif args.command == "run":
            out = runner.run()
            print(f"run complete: {out}")
            return 0

        runner.write_manifest()
        return 0
    except FilterTriageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
