"""Learning mode, classification mode and the dictionary-size benchmark."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .encode import BofHistogram, encode_histogram, normalize_l1
from .errors import ModelNotLoaded, SingleClassData, UnknownRecord
from .features import DescriptorSet, ExtractorParams, decode_image, encode_pgm, extract_descriptors
from .store import StatsRecord, Store
from .svm import SvmConfig, SvmModel, predict_class, train_one_vs_rest
from .vocab import Dictionary, SplitMix64, kmeans_train

logger = logging.getLogger(__name__)

DEFAULT_SIZES = (40, 50, 80, 100, 130, 150)
HOLDOUT_FRACTION = 0.15


@dataclass
class LearnSpec:
    images: list  # (path | bytes, class label) pairs
    words: int
    extractor: ExtractorParams = ExtractorParams()
    svm: SvmConfig = SvmConfig()
    seed: int = 0
    restarts: int = 3
    max_iter: int = 100
    sample: int | None = None  # uniform subsample of training descriptors for k-means


@dataclass
class Classification:
    predicted: object
    descriptors: DescriptorSet
    histogram: BofHistogram
    timings: dict  # stage -> microseconds


@dataclass
class IngestReport:
    image_id: int
    file_id: int
    predicted: object
    timings: dict
    duplicate_of: list = field(default_factory=list)
    comparative_hash: bytes = b""

    def as_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "file_id": self.file_id,
            "predicted": self.predicted,
            "timings_us": self.timings,
            "duplicate_of": self.duplicate_of,
            "comparative_descriptor": self.comparative_hash.hex(),
        }


class _Timer:
    def __init__(self):
        self.timings = {}

    def stage(self, name: str):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter_ns()

            def __exit__(self, *exc):
                timer.timings[name] = (time.perf_counter_ns() - self.t0) / 1000.0

        return _Ctx()


def _read(item) -> bytes:
    if isinstance(item, (bytes, bytearray)):
        return bytes(item)
    return Path(item).read_bytes()


def train_system(
    descriptor_sets: list[DescriptorSet],
    labels: list,
    words: int,
    svm: SvmConfig = SvmConfig(),
    seed: int = 0,
    restarts: int = 3,
    max_iter: int = 100,
    sample: int | None = None,
) -> tuple[Dictionary, SvmModel, list[BofHistogram]]:
    """Cluster all training descriptors, encode every image and fit one-vs-rest SVMs."""
    if len(set(labels)) < 2:
        raise SingleClassData(f"need at least 2 classes, got {sorted(set(labels))}")
    pool = np.concatenate([ds.vectors for ds in descriptor_sets], axis=0)
    if sample is not None and sample < len(pool):
        rng = SplitMix64(seed ^ 0x5EED)
        picks = np.array(sorted({rng.below(len(pool)) for _ in range(sample)}))
        pool = pool[picks]
    dictionary = kmeans_train(pool, words, seed=seed, restarts=restarts, max_iter=max_iter)
    hists = [encode_histogram(dictionary, ds) for ds in descriptor_sets]
    x = np.stack([normalize_l1(h) for h in hists])
    model = train_one_vs_rest(x, labels, svm, seed)
    return dictionary, model, hists


def learn(store: Store, spec: LearnSpec) -> tuple[Dictionary, SvmModel]:
    """Learning mode: store images and keypoints, build the dictionary, train and persist SVMs."""
    labels = [label for _, label in spec.images]
    if len(set(labels)) < 2:
        raise SingleClassData(f"need at least 2 classes, got {sorted(set(labels))}")
    if spec.words < 1:
        raise ValueError("dictionary size must be >= 1")

    file_ids, sets = [], []
    for item, label in spec.images:
        data = _read(item)
        name = item.name if isinstance(item, Path) else (str(item) if isinstance(item, str) else "")
        ds = extract_descriptors(decode_image(data), spec.extractor.grid_step, spec.extractor.patch_size)
        file_id = store.put_blob(data, name)
        ds.image_id = file_id
        store.put_sifts(file_id, ds)
        store.put_image_class(file_id, label, "train")
        file_ids.append(file_id)
        sets.append(ds)

    dictionary, model, hists = train_system(
        sets, labels, spec.words, spec.svm, spec.seed, spec.restarts, spec.max_iter, spec.sample
    )
    dictionary_id = store.put_dictionary(dictionary)
    for file_id, h in zip(file_ids, hists):
        h.image_id = file_id
        store.insert_descriptor_row(h, file_id, dictionary_id)
    model.dictionary_id = dictionary_id
    store.put_svm_model(model, spec.extractor)
    return dictionary, model


def load_trained(store: Store) -> tuple[Dictionary, SvmModel, ExtractorParams]:
    """Most recent SVM configuration and the dictionary it was trained against."""
    latest = store.latest_model()
    if latest is None:
        raise ModelNotLoaded("store holds no trained model; run learn first")
    _, row = latest
    dictionary = store.get_dictionary(row.dictionary_id)
    return dictionary, row.model, row.extractor


def classify_bytes(
    data: bytes,
    dictionary: Dictionary,
    model: SvmModel,
    extractor: ExtractorParams | None = None,
) -> Classification:
    """decode -> extract -> encode -> predict, without touching any store."""
    if dictionary is None or model is None:
        raise ModelNotLoaded("no trained dictionary/model is loaded")
    extractor = extractor or ExtractorParams()
    timer = _Timer()
    with timer.stage("extract"):
        ds = extract_descriptors(decode_image(data), extractor.grid_step, extractor.patch_size)
    with timer.stage("encode"):
        hist = encode_histogram(dictionary, ds)
    with timer.stage("classify"):
        predicted = predict_class(model, normalize_l1(hist))
    return Classification(predicted, ds, hist, timer.timings)


def ingest_and_classify(
    store: Store,
    data: bytes,
    dictionary: Dictionary,
    model: SvmModel,
    extractor: ExtractorParams | None = None,
    name: str = "",
) -> IngestReport:
    """Classification mode: store the image, classify it, index it and log stage timings."""
    if dictionary is None or model is None:
        raise ModelNotLoaded("no trained dictionary/model is loaded")
    data = bytes(data)
    t0 = time.perf_counter_ns()
    decode_image(data)  # reject malformed input before anything is stored
    file_id = store.put_blob(data, name)
    result = classify_bytes(data, dictionary, model, extractor)
    timings = dict(result.timings)

    t_index = time.perf_counter_ns()
    ds, hist = result.descriptors, result.histogram
    ds.image_id = hist.image_id = file_id
    store.put_sifts(file_id, ds)
    store.put_image_class(file_id, result.predicted, "predicted")
    own = store.insert_descriptor_row(hist, file_id, dictionary.dictionary_id)
    dup = set()
    for rid in store.lookup_by_hash(hist.comparative_hash):
        row = store.get("descriptors", rid)
        if rid != own and row.image_id != file_id and row.dictionary_id == dictionary.dictionary_id:
            dup.add(row.image_id)
    t_end = time.perf_counter_ns()
    timings["index"] = (t_end - t_index) / 1000.0
    timings["total"] = (t_end - t0) / 1000.0

    now = datetime.now(timezone.utc)
    for stage in ("extract", "encode", "classify", "index", "total"):
        store.record_stat(StatsRecord(file_id, stage, timings[stage], now))
    return IngestReport(file_id, file_id, result.predicted, timings, sorted(dup), hist.comparative_hash)


# ---------------------------------------------------------------------------
# Synthetic texture classes
# ---------------------------------------------------------------------------

CLASS_NAMES = ("stripes", "checkerboard", "dots", "rings", "blobs")


def synthetic_image(kind: str, rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """One jittered texture of class ``kind``; values in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    contrast = rng.uniform(0.6, 1.0)
    if kind == "stripes":
        angle = math.radians(rng.uniform(-20.0, 20.0))
        period = rng.uniform(6.0, 12.0)
        t = (xx * math.cos(angle) + yy * math.sin(angle)) / period + rng.uniform(0, 1)
        base = (np.floor(t * 2.0) % 2).astype(np.float64)
    elif kind == "checkerboard":
        cell = rng.uniform(5.0, 10.0)
        ox, oy = rng.uniform(0, cell, size=2)
        base = ((np.floor((xx + ox) / cell) + np.floor((yy + oy) / cell)) % 2).astype(np.float64)
    elif kind == "dots":
        spacing = rng.uniform(9.0, 14.0)
        radius = rng.uniform(1.5, 3.0)
        base = np.zeros((size, size))
        for cy in np.arange(rng.uniform(0, spacing), size, spacing):
            for cx in np.arange(rng.uniform(0, spacing), size, spacing):
                jy, jx = rng.uniform(-2, 2, size=2)
                base[(yy - cy - jy) ** 2 + (xx - cx - jx) ** 2 <= radius ** 2] = 1.0
    elif kind == "rings":
        cy, cx = rng.uniform(0, size, size=2)
        period = rng.uniform(6.0, 12.0)
        base = (np.floor(np.hypot(yy - cy, xx - cx) / period * 2.0) % 2).astype(np.float64)
    elif kind == "blobs":
        coarse = rng.uniform(size=(size // 16 + 2, size // 16 + 2))
        base = np.kron(coarse, np.ones((16, 16)))[:size, :size]
    else:
        raise ValueError(f"unknown synthetic class {kind!r}")
    img = 0.5 + contrast * (base - 0.5) + rng.normal(0.0, 0.05, size=(size, size))
    return np.clip(img, 0.0, 1.0)


def generate_dataset(
    out_dir, classes: int = 3, per_class: int = 60, seed: int = 0, size: int = 64
) -> Path:
    """Write PGM images plus ``manifest.csv`` (path,class); returns the manifest path."""
    if not 2 <= classes <= len(CLASS_NAMES):
        raise ValueError(f"classes must be in [2, {len(CLASS_NAMES)}]")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for kind in CLASS_NAMES[:classes]:
        for i in range(per_class):
            path = out / f"{kind}_{i:03d}.pgm"
            path.write_bytes(encode_pgm(synthetic_image(kind, rng, size)))
            rows.append((path.name, kind))
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "class"])
        writer.writerows(rows)
    return manifest


def read_manifest(path) -> list[tuple[Path, str]]:
    """``path,class`` rows; relative paths resolve against the manifest's directory."""
    path = Path(path)
    items = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            if row[0].strip() == "path" and len(row) > 1 and row[1].strip() == "class":
                continue
            p = Path(row[0].strip())
            if not p.is_absolute():
                p = path.parent / p
            items.append((p, row[1].strip()))
    return items


# ---------------------------------------------------------------------------
# Dictionary-size benchmark
# ---------------------------------------------------------------------------


@dataclass
class BenchReport:
    sizes: list
    classes: list
    runs: int
    accuracy: dict  # (words, class or "overall") -> mean accuracy in [0, 1]
    seconds: float = 0.0

    def overall(self, words: int) -> float:
        return self.accuracy[(words, "overall")]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["word_count", "class", "accuracy"])
        for k in self.sizes:
            for c in self.classes + ["overall"]:
                writer.writerow([k, c, f"{100.0 * self.accuracy[(k, c)]:.1f}"])
        return buf.getvalue()

    def format_table(self) -> str:
        """Words across, classes down, last row overall (mean of runs, percent)."""
        head = ["Words:"] + [str(k) for k in self.sizes]
        body = [
            [c] + [f"{100.0 * self.accuracy[(k, c)]:.0f}%" for k in self.sizes]
            for c in self.classes
        ]
        body.append(["Result:"] + [f"{100.0 * self.overall(k):.0f}%" for k in self.sizes])
        widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
        lines = [" | ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in [head] + body]
        lines.append(f"(mean of {self.runs} runs, {HOLDOUT_FRACTION:.0%} of each class held out)")
        return "\n".join(lines)


def holdout_split(labels: list, seed: int, fraction: float = HOLDOUT_FRACTION) -> tuple[list, list]:
    """Seeded per-class split; returns (train indices, test indices)."""
    rng = SplitMix64(seed)
    train, test = [], []
    for cls in sorted(set(labels)):
        idx = [i for i, lab in enumerate(labels) if lab == cls]
        for i in range(len(idx) - 1, 0, -1):
            j = rng.below(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        n_test = max(1, round(fraction * len(idx))) if len(idx) > 1 else 0
        test.extend(sorted(idx[:n_test]))
        train.extend(sorted(idx[n_test:]))
    return sorted(train), sorted(test)


def benchmark_table1(
    dataset: list[tuple[DescriptorSet, object]],
    sizes=DEFAULT_SIZES,
    runs: int = 5,
    split_seed: int = 0,
    svm: SvmConfig = SvmConfig(),
    restarts: int = 1,
    max_iter: int = 100,
    holdout: float | None = HOLDOUT_FRACTION,
) -> BenchReport:
    """Per-class and overall test accuracy for each dictionary size, averaged over runs.

    ``holdout=None`` evaluates on the training set itself.
    """
    started = time.perf_counter()
    labels = [lab for _, lab in dataset]
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise SingleClassData(f"need at least 2 classes, got {classes}")
    sums: dict = {}
    for run in range(runs):
        run_seed = split_seed * 1_000_003 + run
        if holdout is None:
            train = test = list(range(len(dataset)))
        else:
            train, test = holdout_split(labels, run_seed, holdout)
        for words in sizes:
            dictionary, model, _ = train_system(
                [dataset[i][0] for i in train], [labels[i] for i in train], words,
                svm, run_seed, restarts, max_iter,
            )
            x = np.stack([normalize_l1(encode_histogram(dictionary, dataset[i][0])) for i in test])
            predicted = model.predict(x)
            truth = [labels[i] for i in test]
            hits = [p == t for p, t in zip(predicted, truth)]
            for cls in classes:
                cls_hits = [h for h, t in zip(hits, truth) if t == cls]
                acc = sum(cls_hits) / len(cls_hits) if cls_hits else 0.0
                sums[(words, cls)] = sums.get((words, cls), 0.0) + acc
            sums[(words, "overall")] = sums.get((words, "overall"), 0.0) + sum(hits) / len(hits)
            logger.info("run %d, %d words: overall %.3f", run, words, sum(hits) / len(hits))
    accuracy = {key: total / runs for key, total in sums.items()}
    return BenchReport(list(sizes), classes, runs, accuracy, time.perf_counter() - started)


def dataset_from_manifest(items, extractor: ExtractorParams = ExtractorParams()) -> list:
    return [
        (extract_descriptors(decode_image(_read(p)), extractor.grid_step, extractor.patch_size), label)
        for p, label in items
    ]


def dataset_from_store(store: Store) -> list:
    """Labelled training images whose keypoint descriptors are already stored."""
    out = []
    for file_id, row in store.rows("images"):
        if row.role == "train" and row.class_label is not None:
            try:
                out.append((store.get_sifts(file_id), row.class_label))
            except UnknownRecord:
                continue
    return out
