"""Command-line entry points. Thin wrappers over the library modules: every
subcommand reads/writes the documented file formats and exits nonzero on
failure (distinct codes per pipeline stage, 2 for config problems)."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .corpus import generate_synthetic, load_corpus, normalize_corpus, save_corpus
from .denoiser import init_denoiser, load_checkpoint, save_checkpoint
from .detect import classifier_filter, cluster_filter, train_classifier
from .diffusion import build_schedule
from .evaluate import feature_space, fit_gaussian, frechet_distance, inception_score
from .extrapolate import extrapolate_corpus
from .pipeline import (
    ConfigError,
    RunConfig,
    StageError,
    _eval_corpora,
    _generated_corpus,
    _label_conditions,
    _report_lines,
    _write_csv,
    emit_report,
    load_config,
    run_pipeline,
    write_default_config,
)
from .sample import GuidanceConfig, make_null_condition, sample
from .training import fine_tune, train


def _add_config_arg(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, default=None, help="run config INI (defaults apply)")


def _load(args: argparse.Namespace) -> RunConfig:
    return load_config(getattr(args, "config", None))


def cmd_synth(args) -> int:
    cfg = _load(args)
    dataset, web = generate_synthetic(cfg.synth)
    if cfg.normalize:
        dataset, web = normalize_corpus(dataset), normalize_corpus(web)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(dataset, out / "dataset.jsonl")
    save_corpus(web, out / "web.jsonl")
    print(f"wrote {out / 'dataset.jsonl'} ({len(dataset)} records) and "
          f"{out / 'web.jsonl'} ({len(web)} records)")
    return 0


def cmd_import(args) -> int:
    corpus = load_corpus(args.src, normalize=True if args.normalize else None)
    save_corpus(corpus, args.dest)
    print(f"imported {len(corpus)} records -> {args.dest}")
    return 0


def cmd_export(args) -> int:
    corpus = load_corpus(args.src)
    if args.normalize:
        corpus = normalize_corpus(corpus)
    save_corpus(corpus, args.dest)
    print(f"exported {len(corpus)} records -> {args.dest}")
    return 0


def cmd_filter(args) -> int:
    cfg = _load(args)
    dataset = load_corpus(args.dataset)
    kept = load_corpus(args.web)
    lines: list[str] = []
    if not args.no_cluster and len(kept):
        report = cluster_filter(kept, dataset, k=cfg.detect_k, tau_sigma=cfg.tau_sigma, seed=cfg.seed)
        kept = kept.subset(report.kept_ids)
        lines += _report_lines("cluster", report)
    if not args.no_classifier and len(kept):
        clf = train_classifier(dataset, lr=cfg.classifier_lr, epochs=cfg.classifier_epochs, seed=cfg.seed)
        report = classifier_filter(kept, clf)
        kept = kept.subset(report.kept_ids)
        lines += _report_lines("classifier", report)
    save_corpus(kept, args.out)
    if args.report:
        Path(args.report).write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    print(f"kept {len(kept)} web records -> {args.out}")
    return 0


def cmd_extrapolate(args) -> int:
    cfg = _load(args)
    dataset = load_corpus(args.dataset)
    web = load_corpus(args.web)
    combined = extrapolate_corpus(web, dataset, k=cfg.extrapolate_k, ridge_lambda=cfg.ridge_lambda)
    save_corpus(combined, args.out)
    print(f"wrote training corpus with {len(combined)} records -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    corpus = load_corpus(args.corpus)
    from dataclasses import replace

    dn = replace(cfg.denoiser, d_text=corpus.dim_text)
    sched = build_schedule(cfg.T, cfg.beta_min, cfg.beta_max, cfg.sigma_mode)
    params, history = train(
        corpus, init_denoiser(dn), sched, cfg.train,
        metrics_path=Path(args.metrics) if args.metrics else None,
    )
    save_checkpoint(args.out, params)
    print(f"trained {history.steps} steps; final epoch loss "
          f"{history.epoch_losses[-1]:.6f}; checkpoint -> {args.out}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load(args)
    corpus = load_corpus(args.corpus)
    params = load_checkpoint(args.checkpoint)
    sched = build_schedule(cfg.T, cfg.beta_min, cfg.beta_max, cfg.sigma_mode)
    from dataclasses import replace

    ft_cfg = replace(cfg.train, max_epochs=cfg.finetune_epochs, max_steps=None,
                     eval_every=cfg.finetune_eval_every)
    null = make_null_condition(corpus, cfg.null_mode)
    real_stats = fit_gaussian(feature_space(corpus.image_matrix()))
    guid = GuidanceConfig(eta=1.0, null_mode=cfg.null_mode)

    def monitor(p, epoch):
        gen = sample(p, null, guid, sched, n=cfg.eval_samples, seed=cfg.seed + 900)
        return frechet_distance(real_stats, fit_gaussian(feature_space(gen)))

    params, history = fine_tune(
        params, corpus, sched, ft_cfg, monitor,
        metrics_path=Path(args.metrics) if args.metrics else None,
    )
    save_checkpoint(args.out, params)
    print(f"fine-tuned; evals {[round(m, 4) for m in history.metrics]}; "
          f"checkpoint -> {args.out}")
    return 0


def cmd_sample(args) -> int:
    cfg = _load(args)
    dataset = load_corpus(args.corpus)
    params = load_checkpoint(args.checkpoint)
    eta = cfg.eta if args.eta is None else args.eta
    guid = GuidanceConfig(eta=eta, null_mode=cfg.null_mode, steps=cfg.sample_steps)
    null = make_null_condition(dataset, cfg.null_mode)
    latents = {}
    for i, (label, cond) in enumerate(sorted(_label_conditions(dataset).items())):
        latents[label] = sample(params, cond, guid, sched=build_schedule(
            cfg.T, cfg.beta_min, cfg.beta_max, cfg.sigma_mode),
            n=cfg.n_per_label, seed=cfg.seed + i, null_cond=null)
    generated = _generated_corpus(dataset, latents)
    save_corpus(generated, args.out)
    print(f"sampled {len(generated)} latents at eta={eta} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    real = load_corpus(args.real)
    generated = load_corpus(args.generated)
    rows = _eval_corpora(real, generated, cfg)
    _write_csv(Path(args.out),
               ["scope", "label", "n_real", "n_generated", "frechet", "inception_score"], rows)
    print(f"global frechet {rows[0][4]}, inception score {rows[0][5]} -> {args.out}")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _load(args)
    run_dir = run_pipeline(cfg)
    print(f"pipeline complete -> {run_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    etas = [float(x) for x in args.etas.split(",") if x.strip()]
    if not etas:
        raise ConfigError("sweep needs at least one eta")
    run_dir = run_pipeline(cfg, sweep_etas=etas)
    print(f"sweep over {etas} complete -> {run_dir}")
    return 0


def cmd_config(args) -> int:
    if args.action == "init":
        write_default_config(args.path)
        print(f"wrote default config -> {args.path}")
        return 0
    raise ConfigError(f"unknown config action {args.action!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lexdiff",
        description="Embedding-space augmentation by linear extrapolation with a "
                    "toy conditional diffusion model.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("synth", help="generate a synthetic dataset/web corpus pair")
    _add_config_arg(sub)
    sub.add_argument("--out", required=True, help="output directory")
    sub.set_defaults(func=cmd_synth)

    sub = subs.add_parser("import", help="validate and canonicalize an external corpus file")
    sub.add_argument("src")
    sub.add_argument("dest")
    sub.add_argument("--normalize", action="store_true")
    sub.set_defaults(func=cmd_import)

    sub = subs.add_parser("export", help="rewrite a corpus file (optionally normalized)")
    sub.add_argument("src")
    sub.add_argument("dest")
    sub.add_argument("--normalize", action="store_true")
    sub.set_defaults(func=cmd_export)

    sub = subs.add_parser("filter", help="run outlier detectors over a web corpus")
    _add_config_arg(sub)
    sub.add_argument("--dataset", required=True)
    sub.add_argument("--web", required=True)
    sub.add_argument("--out", required=True, help="kept-records corpus file")
    sub.add_argument("--report", default=None, help="audit JSONL path")
    sub.add_argument("--no-cluster", action="store_true")
    sub.add_argument("--no-classifier", action="store_true")
    sub.set_defaults(func=cmd_filter)

    sub = subs.add_parser("extrapolate", help="synthesize text features for web records")
    _add_config_arg(sub)
    sub.add_argument("--dataset", required=True)
    sub.add_argument("--web", required=True, help="filtered web corpus")
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_extrapolate)

    sub = subs.add_parser("train", help="train the denoiser on a corpus with text features")
    _add_config_arg(sub)
    sub.add_argument("--corpus", required=True)
    sub.add_argument("--out", required=True, help="checkpoint path")
    sub.add_argument("--metrics", default=None, help="CSV of per-epoch losses")
    sub.set_defaults(func=cmd_train)

    sub = subs.add_parser("finetune", help="fine-tune with metric-based early stopping")
    _add_config_arg(sub)
    sub.add_argument("--corpus", required=True, help="original dataset corpus")
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--metrics", default=None)
    sub.set_defaults(func=cmd_finetune)

    sub = subs.add_parser("sample", help="generate latents per label from a checkpoint")
    _add_config_arg(sub)
    sub.add_argument("--checkpoint", required=True)
    sub.add_argument("--corpus", required=True, help="corpus providing labels/conditions")
    sub.add_argument("--out", required=True)
    sub.add_argument("--eta", type=float, default=None, help="override guidance ratio")
    sub.set_defaults(func=cmd_sample)

    sub = subs.add_parser("eval", help="compare a generated corpus against a real one")
    _add_config_arg(sub)
    sub.add_argument("--real", required=True)
    sub.add_argument("--generated", required=True)
    sub.add_argument("--out", required=True, help="CSV report path")
    sub.set_defaults(func=cmd_eval)

    sub = subs.add_parser("pipeline", help="run all enabled stages from a config")
    _add_config_arg(sub)
    sub.set_defaults(func=cmd_pipeline)

    sub = subs.add_parser("sweep", help="pipeline, then sample+eval per guidance ratio")
    _add_config_arg(sub)
    sub.add_argument("--etas", required=True, help="comma-separated ratios, e.g. 1.25,1.5,2.0")
    sub.set_defaults(func=cmd_sweep)

    sub = subs.add_parser("config", help="config file utilities")
    sub.add_argument("action", choices=["init"])
    sub.add_argument("path", nargs="?", default="lexdiff.ini")
    sub.set_defaults(func=cmd_config)

    sub = subs.add_parser("report", help="regenerate report.csv and plots for a run directory")
    sub.add_argument("run_dir")
    sub.set_defaults(func=lambda a: (print("\n".join(str(p) for p in emit_report(a.run_dir))), 0)[1])

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except Exception as exc:  # surface everything else with a stable exit code
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
