"""Embedding corpora: load/save, validation, and synthetic generation.

A corpus file is line-delimited JSON. The first line is a schema record
{"schema_version": 1, "dim_image": D, "dim_text": D_s, "normalized": bool},
every following line one embedding record. Optional fields are omitted when
absent, never null-filled, so files round-trip byte-for-byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

SCHEMA_VERSION = 1

DATASET = "dataset"
WEB = "web"
SPLITS = (DATASET, WEB)


class CorpusFormatError(ValueError):
    """Raised when a corpus file or record violates the format contract."""


@dataclass(eq=False)
class EmbeddingRecord:
    """One image's identity, keyword label, and embedding vectors."""

    id: str
    label: str
    split: str
    image_vec: np.ndarray
    text_vecs: tuple[np.ndarray, ...] = ()
    outlier_truth: bool | None = None
    extrapolated: bool = False
    generated: bool = False

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise CorpusFormatError(f"record {self.id!r}: unknown split {self.split!r}")
        self.image_vec = np.asarray(self.image_vec, dtype=np.float64)
        self.text_vecs = tuple(np.asarray(v, dtype=np.float64) for v in self.text_vecs)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.split == other.split
            and np.array_equal(self.image_vec, other.image_vec)
            and len(self.text_vecs) == len(other.text_vecs)
            and all(np.array_equal(a, b) for a, b in zip(self.text_vecs, other.text_vecs))
            and self.outlier_truth == other.outlier_truth
            and self.extrapolated == other.extrapolated
            and self.generated == other.generated
        )


def canonical_text(record: EmbeddingRecord) -> np.ndarray:
    """Per-image text feature: the element-wise mean over stored captions."""
    if not record.text_vecs:
        raise ValueError(f"record {record.id!r} has no text features")
    return np.mean(np.stack(record.text_vecs), axis=0)


@dataclass(eq=False)
class Corpus:
    """A dimension-consistent, id-unique collection of embedding records.

    Immutable after construction; share freely across readers. ``normalized``
    records whether image vectors were L2-normalized at import time (text
    features are never renormalized: they enter the pipeline only through
    linear combinations, which renormalization would break).
    """

    dim_image: int
    dim_text: int
    records: tuple[EmbeddingRecord, ...] = ()
    normalized: bool = False

    def __post_init__(self) -> None:
        if self.dim_image < 1 or self.dim_text < 1:
            raise CorpusFormatError("dimensions must be positive")
        self.records = tuple(self.records)
        seen: set[str] = set()
        for rec in self.records:
            if rec.id in seen:
                raise CorpusFormatError(f"duplicate id {rec.id!r}")
            seen.add(rec.id)
            if rec.image_vec.shape != (self.dim_image,):
                raise CorpusFormatError(
                    f"record {rec.id!r}: image_vec has length {rec.image_vec.shape}, "
                    f"expected {self.dim_image}"
                )
            for vec in rec.text_vecs:
                if vec.shape != (self.dim_text,):
                    raise CorpusFormatError(
                        f"record {rec.id!r}: text_vec has length {vec.shape}, "
                        f"expected {self.dim_text}"
                    )
            if rec.split == DATASET and not rec.text_vecs:
                raise CorpusFormatError(f"record {rec.id!r}: dataset records need >=1 text_vec")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[EmbeddingRecord]:
        return iter(self.records)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.dim_image == other.dim_image
            and self.dim_text == other.dim_text
            and self.normalized == other.normalized
            and self.records == other.records
        )

    def ids(self) -> tuple[str, ...]:
        return tuple(rec.id for rec in self.records)

    def labels(self) -> tuple[str, ...]:
        """Distinct labels in first-appearance order."""
        out: list[str] = []
        for rec in self.records:
            if rec.label not in out:
                out.append(rec.label)
        return tuple(out)

    def image_matrix(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, self.dim_image))
        return np.stack([rec.image_vec for rec in self.records])

    def by_label(self) -> dict[str, list[EmbeddingRecord]]:
        groups: dict[str, list[EmbeddingRecord]] = {}
        for rec in self.records:
            groups.setdefault(rec.label, []).append(rec)
        return groups

    def subset(self, ids: Iterable[str]) -> "Corpus":
        keep = set(ids)
        return self.with_records([r for r in self.records if r.id in keep])

    def split(self, split: str) -> "Corpus":
        return self.with_records([r for r in self.records if r.split == split])

    def with_records(self, records: Iterable[EmbeddingRecord]) -> "Corpus":
        return Corpus(self.dim_image, self.dim_text, tuple(records), self.normalized)


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    return vec if norm == 0.0 else vec / norm


def normalize_corpus(corpus: Corpus) -> Corpus:
    """L2-normalize all image vectors; idempotent on the flag."""
    recs = [replace(rec, image_vec=_unit(rec.image_vec)) for rec in corpus.records]
    return Corpus(corpus.dim_image, corpus.dim_text, tuple(recs), normalized=True)


def _record_to_json(rec: EmbeddingRecord) -> str:
    obj: dict = {
        "id": rec.id,
        "label": rec.label,
        "split": rec.split,
        "image_vec": rec.image_vec.tolist(),
    }
    if rec.text_vecs:
        obj["text_vecs"] = [v.tolist() for v in rec.text_vecs]
    if rec.outlier_truth is not None:
        obj["outlier_truth"] = rec.outlier_truth
    if rec.extrapolated:
        obj["extrapolated"] = True
    if rec.generated:
        obj["generated"] = True
    return json.dumps(obj, separators=(",", ":"))


def _record_from_json(obj: dict, line_no: int) -> EmbeddingRecord:
    if not isinstance(obj, dict):
        raise CorpusFormatError(f"line {line_no}: record is not a JSON object")
    try:
        return EmbeddingRecord(
            id=obj["id"],
            label=obj["label"],
            split=obj["split"],
            image_vec=np.asarray(obj["image_vec"], dtype=np.float64),
            text_vecs=tuple(np.asarray(v, dtype=np.float64) for v in obj.get("text_vecs", [])),
            outlier_truth=obj.get("outlier_truth"),
            extrapolated=obj.get("extrapolated", False),
            generated=obj.get("generated", False),
        )
    except KeyError as exc:
        raise CorpusFormatError(f"line {line_no}: missing field {exc}") from exc
    except CorpusFormatError:
        raise
    except (TypeError, ValueError) as exc:
        raise CorpusFormatError(f"line {line_no}: malformed record ({exc})") from exc


def load_corpus(path: str | Path, *, normalize: bool | None = None) -> Corpus:
    """Load a corpus file, rejecting the whole file on any malformed record.

    ``normalize=None`` trusts the file's own flag (saved corpora reload
    byte-exactly); ``normalize=True`` normalizes image vectors unless the file
    already declares them normalized.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CorpusFormatError(f"{path}: schema line absent")
    try:
        schema = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"{path}: schema line absent or unparseable") from exc
    if not isinstance(schema, dict) or "dim_image" not in schema or "dim_text" not in schema:
        raise CorpusFormatError(f"{path}: schema line absent or incomplete")
    if schema.get("schema_version") != SCHEMA_VERSION:
        raise CorpusFormatError(f"{path}: unsupported schema_version {schema.get('schema_version')!r}")

    records = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{path}: line {line_no} is not valid JSON") from exc
        records.append(_record_from_json(obj, line_no))

    corpus = Corpus(
        dim_image=int(schema["dim_image"]),
        dim_text=int(schema["dim_text"]),
        records=tuple(records),
        normalized=bool(schema.get("normalized", False)),
    )
    if normalize and not corpus.normalized:
        corpus = normalize_corpus(corpus)
    return corpus


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus file such that load_corpus(path) == corpus exactly."""
    path = Path(path)
    schema = {
        "schema_version": SCHEMA_VERSION,
        "dim_image": corpus.dim_image,
        "dim_text": corpus.dim_text,
        "normalized": corpus.normalized,
    }
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(schema, separators=(",", ":")) + "\n")
        for rec in corpus.records:
            fh.write(_record_to_json(rec) + "\n")


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic corpus generator settings.

    ``separation`` is expressed in units of the within-class spread (mean
    member distance to the class center), the same scale the cluster filter
    thresholds against. Class centers sit pairwise ``separation`` apart and
    each class's irrelevant-outlier component is displaced by ``separation``
    from its center.
    """

    n_classes: int
    dataset_per_class: int
    web_per_class: int
    outlier_fraction: float = 0.0
    swap_fraction: float = 0.0
    separation: float = 6.0
    dim_image: int = 8
    dim_text: int = 4
    joint_map: bool = False
    captions_per_record: int = 3
    class_std: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError("outlier_fraction must lie in [0,1]")
        if not 0.0 <= self.swap_fraction <= 1.0:
            raise ValueError("swap_fraction must lie in [0,1]")
        if self.outlier_fraction + self.swap_fraction > 1.0:
            raise ValueError("outlier_fraction + swap_fraction must not exceed 1")
        if self.separation <= 0.0:
            raise ValueError("separation must be positive")
        if self.n_classes < 1:
            raise ValueError("need at least one class")
        if self.n_classes > self.dim_image:
            raise ValueError("center placement needs n_classes <= dim_image")
        if self.swap_fraction > 0.0 and self.n_classes < 2:
            raise ValueError("label swapping needs >=2 classes")
        if self.dataset_per_class < 1:
            raise ValueError("need at least one dataset record per class")


def _mean_chi_distance(dim: int, std: float) -> float:
    # E|x - mu| for x ~ N(mu, std^2 I) in `dim` dimensions.
    return std * math.sqrt(2.0) * math.exp(math.lgamma((dim + 1) / 2) - math.lgamma(dim / 2))


def generate_synthetic(config: SynthConfig) -> tuple[Corpus, Corpus]:
    """Build (dataset, web) corpora from per-class Gaussians.

    Web records mix genuine draws with an exact quota of displaced
    "irrelevant" outliers and label-swapped "similar" outliers, both flagged
    via outlier_truth. With joint_map, every text feature is M @ image_vec
    for one fixed matrix M derived from the seed alone.
    """
    cfg = config
    root = np.random.SeedSequence(cfg.seed)
    map_ss, data_ss = root.spawn(2)
    rng = np.random.default_rng(data_ss)

    joint_m = None
    if cfg.joint_map:
        rng_map = np.random.default_rng(map_ss)
        joint_m = rng_map.normal(size=(cfg.dim_text, cfg.dim_image)) / math.sqrt(cfg.dim_image)

    spread = _mean_chi_distance(cfg.dim_image, cfg.class_std)
    radius = cfg.separation * spread / math.sqrt(2.0)
    centers = np.zeros((cfg.n_classes, cfg.dim_image))
    for c in range(cfg.n_classes):
        centers[c, c] = radius

    text_spread = _mean_chi_distance(cfg.dim_text, cfg.class_std)
    text_radius = cfg.separation * text_spread / math.sqrt(2.0)
    text_centers = np.zeros((cfg.n_classes, cfg.dim_text))
    for c in range(cfg.n_classes):
        text_centers[c, c % cfg.dim_text] = text_radius * (1.0 + c // cfg.dim_text)

    # One displaced component per class for irrelevant outliers.
    outlier_dirs = rng.normal(size=(cfg.n_classes, cfg.dim_image))
    outlier_dirs /= np.linalg.norm(outlier_dirs, axis=1, keepdims=True)
    outlier_centers = centers + cfg.separation * spread * outlier_dirs

    labels = [f"class{c:02d}" for c in range(cfg.n_classes)]

    def text_for(image_vec: np.ndarray, c: int) -> tuple[np.ndarray, ...]:
        if joint_m is not None:
            mapped = joint_m @ image_vec
            return tuple(mapped.copy() for _ in range(cfg.captions_per_record))
        return tuple(
            text_centers[c] + cfg.class_std * rng.normal(size=cfg.dim_text)
            for _ in range(cfg.captions_per_record)
        )

    dataset_records = []
    for c, label in enumerate(labels):
        for i in range(cfg.dataset_per_class):
            vec = centers[c] + cfg.class_std * rng.normal(size=cfg.dim_image)
            dataset_records.append(
                EmbeddingRecord(
                    id=f"ds-{label}-{i:04d}",
                    label=label,
                    split=DATASET,
                    image_vec=vec,
                    text_vecs=text_for(vec, c),
                )
            )

    web_records = []
    for c, label in enumerate(labels):
        n_irrelevant = round(cfg.web_per_class * cfg.outlier_fraction)
        n_swapped = round(cfg.web_per_class * cfg.swap_fraction)
        n_genuine = cfg.web_per_class - n_irrelevant - n_swapped
        kinds = ["genuine"] * n_genuine + ["irrelevant"] * n_irrelevant + ["swapped"] * n_swapped
        for i, kind in enumerate(kinds):
            if kind == "genuine":
                vec = centers[c] + cfg.class_std * rng.normal(size=cfg.dim_image)
                truth = False
            elif kind == "irrelevant":
                vec = outlier_centers[c] + cfg.class_std * rng.normal(size=cfg.dim_image)
                truth = True
            else:
                other = int(rng.integers(cfg.n_classes - 1))
                other = other + 1 if other >= c else other
                vec = centers[other] + cfg.class_std * rng.normal(size=cfg.dim_image)
                truth = True
            web_records.append(
                EmbeddingRecord(
                    id=f"web-{label}-{i:04d}",
                    label=label,
                    split=WEB,
                    image_vec=vec,
                    text_vecs=(),
                    outlier_truth=truth,
                )
            )

    dataset = Corpus(cfg.dim_image, cfg.dim_text, tuple(dataset_records))
    web = Corpus(cfg.dim_image, cfg.dim_text, tuple(web_records))
    return dataset, web
