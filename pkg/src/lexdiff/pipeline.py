"""Config-driven orchestration: data -> filter -> extrapolate -> train ->
fine-tune -> sample -> eval -> report.

Every stage reads and writes files under one run directory, so each step is
auditable and a rerun with the same config and seed reproduces every artifact
hash. Stage order is fixed; the config can only choose which stages run and
how each behaves (detector on/off axes, guidance ratio, architecture flags).
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .corpus import (
    Corpus,
    EmbeddingRecord,
    SynthConfig,
    canonical_text,
    generate_synthetic,
    load_corpus,
    normalize_corpus,
    save_corpus,
)
from .denoiser import DenoiserConfig, DenoiserParams, init_denoiser, load_checkpoint, save_checkpoint
from .detect import classifier_filter, cluster_filter, train_classifier
from .diffusion import build_schedule
from .evaluate import feature_space, fit_gaussian, frechet_distance, inception_score
from .extrapolate import extrapolate_corpus
from .sample import GuidanceConfig, make_null_condition, sample
from .training import TrainConfig, fine_tune, train

OUTPUT_ENV_VAR = "LEXDIFF_OUT"

STAGE_ORDER = ("data", "filter", "extrapolate", "train", "finetune", "sample", "eval", "report")

STAGE_EXIT = {
    "config": 2,
    "data": 10,
    "filter": 11,
    "extrapolate": 12,
    "train": 13,
    "finetune": 14,
    "sample": 15,
    "eval": 16,
    "report": 17,
}

DEFAULT_CONFIG = """\
# Run configuration. One section per pipeline concern; every key below is a
# default and may be omitted. Stage order is fixed; `stages` only selects
# which ones run. The LEXDIFF_OUT environment variable overrides output_dir.

[pipeline]
seed = 0
output_dir = runs/default
stages = data,filter,extrapolate,train,finetune,sample,eval,report
source = synth
dataset_path =
web_path =
cluster_filter = true
classifier_filter = true

[corpus]
n_classes = 2
dataset_per_class = 120
web_per_class = 60
outlier_fraction = 0.2
swap_fraction = 0.1
separation = 6.0
dim_image = 2
dim_text = 2
joint_map = false
captions_per_record = 1
class_std = 1.0
normalize = false

[detect]
k = 5
tau_sigma = 3.0
classifier_lr = 0.5
classifier_epochs = 500

[extrapolate]
k = 8
ridge_lambda = 1e-6

[diffusion]
t = 50
beta_min = 0.004
beta_max = 0.18
sigma_mode = beta

[denoiser]
n_tokens = 1
d_latent = 2
d_model = 64
n_layers = 4
layers_per_rat = 4
d_time = 16
d_hidden = 64
rat_enabled = true

[training]
lr = 1e-4
weight_decay = 0.0
batch_size = 24
max_epochs = 200
max_steps = 2000
p_drop = 0.0
finetune_epochs = 50
finetune_eval_every = 5
patience = 1
eval_samples = 200

[sample]
eta = 1.5
null_mode = mean_text
n_per_label = 200
steps =
"""


class ConfigError(ValueError):
    """Run configuration is missing, malformed, or inconsistent."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and its exit code."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.exit_code = STAGE_EXIT[stage]
        self.__cause__ = cause


@dataclass(frozen=True)
class RunConfig:
    seed: int
    output_dir: Path
    stages: tuple[str, ...]
    source: str
    dataset_path: str
    web_path: str
    cluster_filter: bool
    classifier_filter: bool
    synth: SynthConfig
    normalize: bool
    detect_k: int
    tau_sigma: float
    classifier_lr: float
    classifier_epochs: int
    extrapolate_k: int
    ridge_lambda: float
    T: int
    beta_min: float
    beta_max: float
    sigma_mode: str
    denoiser: DenoiserConfig  # d_text is provisional until data dims are known
    train: TrainConfig
    finetune_epochs: int
    finetune_eval_every: int
    eval_samples: int
    eta: float
    null_mode: str
    n_per_label: int
    sample_steps: int | None

    def __post_init__(self) -> None:
        unknown = set(self.stages) - set(STAGE_ORDER)
        if unknown:
            raise ConfigError(f"unknown stages: {sorted(unknown)}")
        if self.source not in ("synth", "import"):
            raise ConfigError("pipeline.source must be 'synth' or 'import'")
        if self.source == "import" and "data" in self.stages and not self.dataset_path:
            raise ConfigError("pipeline.source=import requires dataset_path")


def _known_keys_check(parser: configparser.ConfigParser) -> None:
    defaults = configparser.ConfigParser()
    defaults.read_string(DEFAULT_CONFIG)
    for section in parser.sections():
        if section not in defaults.sections():
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in defaults[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")


def load_config(path: str | Path | None = None, text: str | None = None) -> RunConfig:
    """Parse an INI run config over the documented defaults."""
    parser = configparser.ConfigParser()
    parser.read_string(DEFAULT_CONFIG)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        user = configparser.ConfigParser()
        try:
            user.read_string(path.read_text(encoding="utf-8"))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        _known_keys_check(user)
        parser.read_string(path.read_text(encoding="utf-8"))
    if text is not None:
        user = configparser.ConfigParser()
        user.read_string(text)
        _known_keys_check(user)
        parser.read_string(text)

    p, c, d = parser["pipeline"], parser["corpus"], parser["detect"]
    e, f, dn = parser["extrapolate"], parser["diffusion"], parser["denoiser"]
    t, s = parser["training"], parser["sample"]
    try:
        seed = p.getint("seed")
        output_dir = Path(os.environ.get(OUTPUT_ENV_VAR) or p.get("output_dir"))
        synth = SynthConfig(
            n_classes=c.getint("n_classes"),
            dataset_per_class=c.getint("dataset_per_class"),
            web_per_class=c.getint("web_per_class"),
            outlier_fraction=c.getfloat("outlier_fraction"),
            swap_fraction=c.getfloat("swap_fraction"),
            separation=c.getfloat("separation"),
            dim_image=c.getint("dim_image"),
            dim_text=c.getint("dim_text"),
            joint_map=c.getboolean("joint_map"),
            captions_per_record=c.getint("captions_per_record"),
            class_std=c.getfloat("class_std"),
            seed=seed,
        )
        denoiser = DenoiserConfig(
            n_tokens=dn.getint("n_tokens"),
            d_latent=dn.getint("d_latent"),
            d_model=dn.getint("d_model"),
            n_layers=dn.getint("n_layers"),
            layers_per_rat=dn.getint("layers_per_rat"),
            d_text=c.getint("dim_text"),
            d_time=dn.getint("d_time"),
            d_hidden=dn.getint("d_hidden"),
            rat_enabled=dn.getboolean("rat_enabled"),
            seed=seed,
        )
        train_cfg = TrainConfig(
            lr=t.getfloat("lr"),
            weight_decay=t.getfloat("weight_decay"),
            batch_size=t.getint("batch_size"),
            max_epochs=t.getint("max_epochs"),
            max_steps=t.getint("max_steps") if t.get("max_steps") else None,
            eval_every=1,
            patience=t.getint("patience"),
            p_drop=t.getfloat("p_drop"),
            seed=seed,
        )
        steps_raw = s.get("steps", "").strip()
        return RunConfig(
            seed=seed,
            output_dir=output_dir,
            stages=tuple(x.strip() for x in p.get("stages").split(",") if x.strip()),
            source=p.get("source"),
            dataset_path=p.get("dataset_path", ""),
            web_path=p.get("web_path", ""),
            cluster_filter=p.getboolean("cluster_filter"),
            classifier_filter=p.getboolean("classifier_filter"),
            synth=synth,
            normalize=c.getboolean("normalize"),
            detect_k=d.getint("k"),
            tau_sigma=d.getfloat("tau_sigma"),
            classifier_lr=d.getfloat("classifier_lr"),
            classifier_epochs=d.getint("classifier_epochs"),
            extrapolate_k=e.getint("k"),
            ridge_lambda=e.getfloat("ridge_lambda"),
            T=f.getint("t"),
            beta_min=f.getfloat("beta_min"),
            beta_max=f.getfloat("beta_max"),
            sigma_mode=f.get("sigma_mode"),
            denoiser=denoiser,
            train=train_cfg,
            finetune_epochs=t.getint("finetune_epochs"),
            finetune_eval_every=t.getint("finetune_eval_every"),
            eval_samples=t.getint("eval_samples"),
            eta=s.getfloat("eta"),
            null_mode=s.get("null_mode"),
            n_per_label=s.getint("n_per_label"),
            sample_steps=int(steps_raw) if steps_raw else None,
        )
    except (ValueError, configparser.Error) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config value: {exc}") from exc


def write_default_config(path: str | Path) -> None:
    Path(path).write_text(DEFAULT_CONFIG, encoding="utf-8")


def _resolved_ini(cfg: RunConfig) -> str:
    """The run's effective configuration, echoed in the default layout."""
    parser = configparser.ConfigParser()
    parser.read_string(DEFAULT_CONFIG)
    # output_dir is deliberately blanked: the echo describes the run's content,
    # and embedding the location would make artifact hashes depend on it.
    values = {
        "pipeline": {
            "seed": cfg.seed,
            "output_dir": "",
            "stages": ",".join(cfg.stages),
            "source": cfg.source,
            "dataset_path": cfg.dataset_path,
            "web_path": cfg.web_path,
            "cluster_filter": cfg.cluster_filter,
            "classifier_filter": cfg.classifier_filter,
        },
        "corpus": {
            "n_classes": cfg.synth.n_classes,
            "dataset_per_class": cfg.synth.dataset_per_class,
            "web_per_class": cfg.synth.web_per_class,
            "outlier_fraction": cfg.synth.outlier_fraction,
            "swap_fraction": cfg.synth.swap_fraction,
            "separation": cfg.synth.separation,
            "dim_image": cfg.synth.dim_image,
            "dim_text": cfg.synth.dim_text,
            "joint_map": cfg.synth.joint_map,
            "captions_per_record": cfg.synth.captions_per_record,
            "class_std": cfg.synth.class_std,
            "normalize": cfg.normalize,
        },
        "detect": {
            "k": cfg.detect_k,
            "tau_sigma": cfg.tau_sigma,
            "classifier_lr": cfg.classifier_lr,
            "classifier_epochs": cfg.classifier_epochs,
        },
        "extrapolate": {"k": cfg.extrapolate_k, "ridge_lambda": cfg.ridge_lambda},
        "diffusion": {
            "t": cfg.T,
            "beta_min": cfg.beta_min,
            "beta_max": cfg.beta_max,
            "sigma_mode": cfg.sigma_mode,
        },
        "denoiser": {
            "n_tokens": cfg.denoiser.n_tokens,
            "d_latent": cfg.denoiser.d_latent,
            "d_model": cfg.denoiser.d_model,
            "n_layers": cfg.denoiser.n_layers,
            "layers_per_rat": cfg.denoiser.layers_per_rat,
            "d_time": cfg.denoiser.d_time,
            "d_hidden": cfg.denoiser.d_hidden,
            "rat_enabled": cfg.denoiser.rat_enabled,
        },
        "training": {
            "lr": cfg.train.lr,
            "weight_decay": cfg.train.weight_decay,
            "batch_size": cfg.train.batch_size,
            "max_epochs": cfg.train.max_epochs,
            "max_steps": "" if cfg.train.max_steps is None else cfg.train.max_steps,
            "p_drop": cfg.train.p_drop,
            "finetune_epochs": cfg.finetune_epochs,
            "finetune_eval_every": cfg.finetune_eval_every,
            "patience": cfg.train.patience,
            "eval_samples": cfg.eval_samples,
        },
        "sample": {
            "eta": cfg.eta,
            "null_mode": cfg.null_mode,
            "n_per_label": cfg.n_per_label,
            "steps": "" if cfg.sample_steps is None else cfg.sample_steps,
        },
    }
    for section, mapping in values.items():
        for key, value in mapping.items():
            parser[section][key] = str(value)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _label_conditions(dataset: Corpus) -> dict[str, np.ndarray]:
    by = dataset.by_label()
    return {
        label: np.mean([canonical_text(r) for r in recs], axis=0)
        for label, recs in sorted(by.items())
    }


def _generated_corpus(dataset: Corpus, latents: dict[str, np.ndarray]) -> Corpus:
    records = []
    for label in sorted(latents):
        for i, vec in enumerate(latents[label]):
            records.append(
                EmbeddingRecord(
                    id=f"gen-{label}-{i:04d}",
                    label=label,
                    split="web",
                    image_vec=vec,
                    generated=True,
                )
            )
    return Corpus(dataset.dim_image, dataset.dim_text, tuple(records), dataset.normalized)


def _eval_corpora(real: Corpus, generated: Corpus, cfg: RunConfig) -> list[list]:
    """Fréchet rows (global and per label) plus the classifier-based score."""
    clf = train_classifier(real, lr=cfg.classifier_lr, epochs=cfg.classifier_epochs, seed=cfg.seed)
    real_feats = feature_space(real.image_matrix(), clf)
    gen_feats = feature_space(generated.image_matrix(), clf)
    score = inception_score(generated.image_matrix(), clf)
    rows = [
        [
            "global",
            "",
            len(real),
            len(generated),
            repr(frechet_distance(fit_gaussian(real_feats), fit_gaussian(gen_feats))),
            repr(score),
        ]
    ]
    gen_by = generated.by_label()
    for label, real_recs in sorted(real.by_label().items()):
        gen_recs = gen_by.get(label, [])
        if len(gen_recs) < 2 or len(real_recs) < 2:
            continue
        fd = frechet_distance(
            fit_gaussian(feature_space(np.stack([r.image_vec for r in real_recs]), clf)),
            fit_gaussian(feature_space(np.stack([r.image_vec for r in gen_recs]), clf)),
        )
        rows.append(["label", label, len(real_recs), len(gen_recs), repr(fd), ""])
    return rows


def _stage_data(cfg: RunConfig, run_dir: Path) -> None:
    if cfg.source == "synth":
        dataset, web = generate_synthetic(cfg.synth)
    else:
        dataset = load_corpus(cfg.dataset_path)
        web = (
            load_corpus(cfg.web_path)
            if cfg.web_path
            else Corpus(dataset.dim_image, dataset.dim_text)
        )
    if cfg.normalize:
        dataset, web = normalize_corpus(dataset), normalize_corpus(web)
    save_corpus(dataset, run_dir / "dataset.jsonl")
    save_corpus(web, run_dir / "web.jsonl")


def _stage_filter(cfg: RunConfig, run_dir: Path) -> None:
    dataset = load_corpus(run_dir / "dataset.jsonl")
    web = load_corpus(run_dir / "web.jsonl")
    kept = web
    audit_lines: list[str] = []
    if cfg.cluster_filter and len(web):
        report = cluster_filter(kept, dataset, k=cfg.detect_k, tau_sigma=cfg.tau_sigma, seed=cfg.seed)
        kept = kept.subset(report.kept_ids)
        audit_lines += _report_lines("cluster", report)
    if cfg.classifier_filter and len(kept):
        clf = train_classifier(
            dataset, lr=cfg.classifier_lr, epochs=cfg.classifier_epochs, seed=cfg.seed
        )
        report = classifier_filter(kept, clf)
        kept = kept.subset(report.kept_ids)
        audit_lines += _report_lines("classifier", report)
    save_corpus(kept, run_dir / "web_kept.jsonl")
    (run_dir / "filter_report.jsonl").write_text(
        "".join(line + "\n" for line in audit_lines), encoding="utf-8"
    )


def _report_lines(detector: str, report) -> list[str]:
    lines = []
    for rec_id in report.kept_ids:
        lines.append(json.dumps(
            {"detector": detector, "id": rec_id, "kept": True, "stat": report.stats.get(rec_id)},
            separators=(",", ":"), sort_keys=True))
    for rec_id in report.removed_ids:
        lines.append(json.dumps(
            {"detector": detector, "id": rec_id, "kept": False, "stat": report.stats.get(rec_id)},
            separators=(",", ":"), sort_keys=True))
    for warning in report.warnings:
        lines.append(json.dumps({"detector": detector, "warning": warning},
                                separators=(",", ":"), sort_keys=True))
    return lines


def _stage_extrapolate(cfg: RunConfig, run_dir: Path) -> None:
    dataset = load_corpus(run_dir / "dataset.jsonl")
    kept_path = run_dir / "web_kept.jsonl"
    web = load_corpus(kept_path if kept_path.exists() else run_dir / "web.jsonl")
    combined = extrapolate_corpus(web, dataset, k=cfg.extrapolate_k, ridge_lambda=cfg.ridge_lambda)
    save_corpus(combined, run_dir / "train_corpus.jsonl")


def _train_inputs(cfg: RunConfig, run_dir: Path) -> tuple[Corpus, DenoiserConfig]:
    path = run_dir / "train_corpus.jsonl"
    corpus = load_corpus(path if path.exists() else run_dir / "dataset.jsonl")
    dn = replace(cfg.denoiser, d_text=corpus.dim_text)
    if dn.n_tokens * dn.d_latent != corpus.dim_image:
        raise ConfigError(
            f"denoiser layout {dn.n_tokens}x{dn.d_latent} does not tile dim_image={corpus.dim_image}"
        )
    return corpus, dn


def _stage_train(cfg: RunConfig, run_dir: Path) -> None:
    corpus, dn_cfg = _train_inputs(cfg, run_dir)
    sched = build_schedule(cfg.T, cfg.beta_min, cfg.beta_max, cfg.sigma_mode)
    params, _ = train(
        corpus, init_denoiser(dn_cfg), sched, cfg.train, metrics_path=run_dir / "train_metrics.csv"
    )
    save_checkpoint(run_dir / "train.ckpt", params)


def _finetune_monitor(cfg: RunConfig, dataset: Corpus, sched):
    null = make_null_condition(dataset, cfg.null_mode)
    real = feature_space(dataset.image_matrix())
    real_stats = fit_gaussian(real)
    guid = GuidanceConfig(eta=1.0, null_mode=cfg.null_mode)

    def monitor(params: DenoiserParams, epoch: int) -> float:
        gen = sample(params, null, guid, sched, n=cfg.eval_samples, seed=cfg.seed + 900)
        return frechet_distance(real_stats, fit_gaussian(feature_space(gen)))

    return monitor


def _stage_finetune(cfg: RunConfig, run_dir: Path) -> None:
    dataset = load_corpus(run_dir / "dataset.jsonl")
    params = load_checkpoint(run_dir / "train.ckpt")
    sched = build_schedule(cfg.T, cfg.beta_min, cfg.beta_max, cfg.sigma_mode)
    ft_cfg = replace(
        cfg.train,
        max_epochs=cfg.finetune_epochs,
        max_steps=None,
        eval_every=cfg.finetune_eval_every,
    )
    params, _ = fine_tune(
        params,
        dataset,
        sched,
        ft_cfg,
        monitor=_finetune_monitor(cfg, dataset, sched),
        metrics_path=run_dir / "finetune_metrics.csv",
    )
    save_checkpoint(run_dir / "finetune.ckpt", params)


def _sample_latents(cfg: RunConfig, run_dir: Path, eta: float) -> Corpus:
    dataset = load_corpus(run_dir / "dataset.jsonl")
    ckpt = run_dir / "finetune.ckpt"
    params = load_checkpoint(ckpt if ckpt.exists() else run_dir / "train.ckpt")
    sched = build_schedule(cfg.T, cfg.beta_min, cfg.beta_max, cfg.sigma_mode)
    guid = GuidanceConfig(eta=eta, null_mode=cfg.null_mode, steps=cfg.sample_steps)
    null = make_null_condition(dataset, cfg.null_mode)
    latents = {}
    for i, (label, cond) in enumerate(sorted(_label_conditions(dataset).items())):
        latents[label] = sample(
            params, cond, guid, sched, n=cfg.n_per_label, seed=cfg.seed + i, null_cond=null
        )
    return _generated_corpus(dataset, latents)


def _stage_sample(cfg: RunConfig, run_dir: Path) -> None:
    save_corpus(_sample_latents(cfg, run_dir, cfg.eta), run_dir / "samples.jsonl")


def _stage_eval(cfg: RunConfig, run_dir: Path) -> None:
    real = load_corpus(run_dir / "dataset.jsonl")
    generated = load_corpus(run_dir / "samples.jsonl")
    rows = _eval_corpora(real, generated, cfg)
    _write_csv(
        run_dir / "eval.csv",
        ["scope", "label", "n_real", "n_generated", "frechet", "inception_score"],
        rows,
    )


def _svg_scatter(real: Corpus, generated: Corpus) -> str:
    """Hand-rolled 2-D scatter: dataset points as circles, samples as crosses."""
    pts_real = real.image_matrix()
    pts_gen = generated.image_matrix()
    both = np.vstack([pts_real, pts_gen])
    lo, hi = both.min(axis=0), both.max(axis=0)
    span = np.where(hi - lo < 1e-9, 1.0, hi - lo)
    size, margin = 480.0, 40.0

    def place(p):
        x = margin + (p[0] - lo[0]) / span[0] * (size - 2 * margin)
        y = size - margin - (p[1] - lo[1]) / span[1] * (size - 2 * margin)
        return x, y

    labels = sorted({r.label for r in real.records} | {r.label for r in generated.records})
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"]
    color = {lab: palette[i % len(palette)] for i, lab in enumerate(labels)}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:g}" height="{size:g}" '
        f'viewBox="0 0 {size:g} {size:g}">',
        f'<rect width="{size:g}" height="{size:g}" fill="white"/>',
    ]
    for rec in real.records:
        x, y = place(rec.image_vec)
        parts.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{color[rec.label]}" fill-opacity="0.5"/>'
        )
    for rec in generated.records:
        x, y = place(rec.image_vec)
        c = color[rec.label]
        parts.append(
            f'<path d="M {x - 3:.2f} {y:.2f} H {x + 3:.2f} M {x:.2f} {y - 3:.2f} V {y + 3:.2f}" '
            f'stroke="{c}" stroke-width="1.5"/>'
        )
    for i, lab in enumerate(labels):
        y = 20 + 16 * i
        parts.append(f'<circle cx="16" cy="{y}" r="4" fill="{color[lab]}"/>')
        parts.append(f'<text x="26" y="{y + 4}" font-size="12" font-family="sans-serif">{lab}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def emit_report(run_dir: str | Path) -> list[Path]:
    """Aggregate eval outputs into report.csv, plus a scatter SVG for 2-D runs."""
    run_dir = Path(run_dir)
    written: list[Path] = []
    rows: list[list] = []
    sweep_csv = run_dir / "sweep.csv"
    if sweep_csv.exists():
        with sweep_csv.open(encoding="utf-8") as fh:
            rows = [line for line in csv.reader(fh)][1:]
    else:
        eval_csv = run_dir / "eval.csv"
        if not eval_csv.exists():
            raise FileNotFoundError(f"no eval.csv or sweep.csv under {run_dir}")
        cfg = load_config(run_dir / "config.ini") if (run_dir / "config.ini").exists() else None
        eta = cfg.eta if cfg is not None else float("nan")
        with eval_csv.open(encoding="utf-8") as fh:
            for row in list(csv.reader(fh))[1:]:
                if row[0] == "global":
                    rows.append([repr(eta), row[4], row[5]])
    report = run_dir / "report.csv"
    _write_csv(report, ["eta", "frechet", "inception_score"], rows)
    written.append(report)

    dataset_path = run_dir / "dataset.jsonl"
    samples_path = run_dir / "samples.jsonl"
    if not samples_path.exists():
        candidates = sorted(run_dir.glob("sweep/eta*/samples.jsonl"))
        samples_path = candidates[0] if candidates else samples_path
    if dataset_path.exists() and samples_path.exists():
        real = load_corpus(dataset_path)
        generated = load_corpus(samples_path)
        if real.dim_image == 2:
            svg = run_dir / "scatter.svg"
            svg.write_text(_svg_scatter(real, generated), encoding="utf-8")
            written.append(svg)
    return written


def _write_manifest(run_dir: Path, stages_run: list[str]) -> Path:
    artifacts = {}
    for path in sorted(run_dir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            artifacts[path.relative_to(run_dir).as_posix()] = _sha256_file(path)
    manifest = {"stage_order": stages_run, "artifacts": artifacts}
    out = run_dir / "manifest.json"
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


_STAGE_FUNCS = {
    "data": _stage_data,
    "filter": _stage_filter,
    "extrapolate": _stage_extrapolate,
    "train": _stage_train,
    "finetune": _stage_finetune,
    "sample": _stage_sample,
    "eval": _stage_eval,
}


def run_pipeline(cfg: RunConfig, sweep_etas: list[float] | None = None) -> Path:
    """Execute the enabled stages in fixed order; returns the run directory.

    Raises StageError naming the failing stage; artifacts written before the
    failure are retained. With sweep_etas, the sample and eval stages run once
    per ratio into sweep/ subdirectories and aggregate into sweep.csv.
    """
    run_dir = cfg.output_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(_resolved_ini(cfg), encoding="utf-8")
    stages_run: list[str] = []
    for stage in STAGE_ORDER:
        if stage not in cfg.stages:
            continue
        try:
            if stage == "report":
                emit_report(run_dir)
            elif sweep_etas is not None and stage == "sample":
                for eta in sweep_etas:
                    sub = run_dir / "sweep" / f"eta{eta:g}"
                    sub.mkdir(parents=True, exist_ok=True)
                    save_corpus(_sample_latents(cfg, run_dir, eta), sub / "samples.jsonl")
            elif sweep_etas is not None and stage == "eval":
                real = load_corpus(run_dir / "dataset.jsonl")
                sweep_rows = []
                for eta in sweep_etas:
                    sub = run_dir / "sweep" / f"eta{eta:g}"
                    generated = load_corpus(sub / "samples.jsonl")
                    rows = _eval_corpora(real, generated, cfg)
                    _write_csv(
                        sub / "eval.csv",
                        ["scope", "label", "n_real", "n_generated", "frechet", "inception_score"],
                        rows,
                    )
                    sweep_rows.append([repr(eta), rows[0][4], rows[0][5]])
                _write_csv(run_dir / "sweep.csv", ["eta", "frechet", "inception_score"], sweep_rows)
            else:
                _STAGE_FUNCS[stage](cfg, run_dir)
        except Exception as exc:
            raise StageError(stage, exc) from exc
        stages_run.append(stage)
    _write_manifest(run_dir, stages_run)
    return run_dir
