"""ACE metric, manifest handling and the four liveness-evaluation protocols."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import EvaluationError, FormatError
from .model import FAKE, LABELS, LIVE

SPLITS = ("train", "test")
PROTOCOLS = ("intra-same-material", "intra-cross-material", "cross-sensor", "cross-dataset", "other")
REPORT_COLUMNS = ("protocol", "train_sensor", "test_sensor", "materials", "F_errlive", "F_errfake", "ACE")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    sensor: str
    material: str
    year: str
    split: str = "test"

    @property
    def label_index(self) -> int:
        return LABELS.index(self.label)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: str = "."

    def __post_init__(self):
        seen = set()
        for i, e in enumerate(self.entries):
            where = f"manifest entry {i} ({e.path!r})"
            if e.label not in LABELS:
                raise FormatError(f"{where}: label must be 'live' or 'fake', got {e.label!r}")
            for key in ("sensor", "material", "year"):
                v = getattr(e, key)
                if not isinstance(v, str) or not v:
                    raise FormatError(f"{where}: {key} must be a non-empty string")
            if e.split not in SPLITS:
                raise FormatError(f"{where}: split must be one of {SPLITS}, got {e.split!r}")
            if e.path in seen:
                raise FormatError(f"{where}: duplicate path")
            seen.add(e.path)

    def __len__(self) -> int:
        return len(self.entries)

    def split(self, name: str | None) -> "DatasetManifest":
        if name is None:
            return self
        return DatasetManifest([e for e in self.entries if e.split == name], self.root)

    def resolve(self, entry: ManifestEntry) -> str:
        return entry.path if os.path.isabs(entry.path) else os.path.join(self.root, entry.path)

    def metadata(self) -> "ManifestMeta":
        return ManifestMeta.of(self.entries)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        entries = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    entries.append(ManifestEntry(
                        path=rec["path"], label=rec["label"], sensor=str(rec["sensor"]),
                        material=str(rec["material"]), year=str(rec["year"]),
                        split=rec.get("split", "test"),
                    ))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise FormatError(f"{path}:{lineno}: bad manifest line ({exc})") from exc
        return cls(entries, os.path.dirname(os.path.abspath(path)))

    def dump(self, path):
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps(asdict(e)) + "\n")


@dataclass(frozen=True)
class ManifestMeta:
    """Sensor, dataset-year and spoof-material sets of a manifest (live entries carry no material)."""

    sensors: frozenset
    years: frozenset
    materials: frozenset

    @classmethod
    def of(cls, entries: Iterable[ManifestEntry]) -> "ManifestMeta":
        entries = list(entries)
        return cls(
            frozenset(e.sensor for e in entries),
            frozenset(e.year for e in entries),
            frozenset(e.material for e in entries if e.label == "fake"),
        )

    def to_dict(self) -> dict:
        return {k: sorted(getattr(self, k)) for k in ("sensors", "years", "materials")}

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestMeta":
        return cls(frozenset(d["sensors"]), frozenset(d["years"]), frozenset(d["materials"]))


# ---------------------------------------------------------------- ACE

@dataclass
class ConfusionCounts:
    live_total: int = 0
    live_misclassified: int = 0
    fake_total: int = 0
    fake_misclassified: int = 0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"{k} must be non-negative")
        if self.live_misclassified > self.live_total or self.fake_misclassified > self.fake_total:
            raise ValueError("misclassified count exceeds class total")

    def add(self, true_label: int, predicted: int):
        if true_label == LIVE:
            self.live_total += 1
            self.live_misclassified += predicted != LIVE
        else:
            self.fake_total += 1
            self.fake_misclassified += predicted != FAKE

    @classmethod
    def from_labels(cls, truth: Sequence[int], predicted: Sequence[int]) -> "ConfusionCounts":
        c = cls()
        for t, p in zip(truth, predicted):
            c.add(int(t), int(p))
        return c


@dataclass
class AceReport:
    f_errlive: float
    f_errfake: float
    ace: float
    protocol: str = "other"
    train_sensor: str = ""
    train_dataset: str = ""
    test_sensor: str = ""
    test_dataset: str = ""
    materials: list[str] = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    failures: int = 0
    failed_paths: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AceReport":
        return cls(**d)

    def row(self) -> list[str]:
        return [
            self.protocol, self.train_sensor, self.test_sensor, "+".join(self.materials),
            f"{self.f_errlive:.2f}", f"{self.f_errfake:.2f}", f"{self.ace:.2f}",
        ]


def compute_ace(counts: ConfusionCounts) -> AceReport:
    """Misclassification percentages per class and their mean (fake is the positive class)."""
    if counts.live_total <= 0 or counts.fake_total <= 0:
        raise EvaluationError(
            f"ACE undefined: need both classes (live_total={counts.live_total}, fake_total={counts.fake_total})"
        )
    f_live = 100.0 * counts.live_misclassified / counts.live_total
    f_fake = 100.0 * counts.fake_misclassified / counts.fake_total
    return AceReport(f_errlive=f_live, f_errfake=f_fake, ace=(f_live + f_fake) / 2, counts=asdict(counts))


# ---------------------------------------------------------------- evaluate

def default_loader(image_size: int = 224, cache_dir: str | None = None) -> Callable[[str], np.ndarray]:
    """Path -> 3-plane network input, reading a preprocessed blob when ``cache_dir`` has one."""
    from .imageio import load_image
    from .preproc import assemble_channels, read_cache

    def load(path: str) -> np.ndarray:
        if cache_dir:
            blob = os.path.join(cache_dir, cache_name(path))
            if os.path.exists(blob):
                return read_cache(blob)
        return assemble_channels(load_image(path, min_side=64), size=image_size)

    return load


def cache_name(path: str) -> str:
    import hashlib

    return hashlib.sha256(os.path.abspath(path).encode()).hexdigest()[:24] + ".f32"


def evaluate(
    model,
    manifest: DatasetManifest,
    split: str | None = "test",
    loader: Callable[[str], np.ndarray] | None = None,
    chunk: int = 16,
) -> AceReport:
    """Eval-mode predictions over ``manifest`` (optionally one split) aggregated into an ACE report.

    Entries whose image cannot be read or predicted are excluded and counted
    in ``failures``.
    """
    sub = manifest.split(split)
    if len(sub) == 0:
        raise EvaluationError(f"manifest has no entries in split {split!r}")
    if loader is None:
        loader = default_loader(getattr(getattr(model, "config", None), "image_size", 224))
    counts = ConfusionCounts()
    failed = []
    for start in range(0, len(sub), chunk):
        batch = sub.entries[start:start + chunk]
        images, kept = [], []
        for e in batch:
            try:
                images.append(loader(sub.resolve(e)))
                kept.append(e)
            except Exception:  # noqa: BLE001 - counted as an evaluation failure
                failed.append(e.path)
        for e, pred in zip(kept, model.predict_batch(images)):
            if isinstance(pred, Exception):
                failed.append(e.path)
                continue
            counts.add(e.label_index, LABELS.index(pred.label))
    report = compute_ace(counts)
    meta = sub.metadata()
    report.test_sensor = "+".join(sorted(meta.sensors))
    report.test_dataset = "+".join(sorted(meta.years))
    report.materials = sorted(meta.materials)
    report.failures = len(failed)
    report.failed_paths = failed
    return report


# ---------------------------------------------------------------- protocols

def classify_protocol(train: ManifestMeta, test: ManifestMeta) -> str:
    """Protocol name from train/test metadata alone.

    Sensor "family" is the sensor id itself, so cross-dataset means the same
    sensor id under a different dataset year.
    """
    same_year = train.years == test.years
    same_sensor = train.sensors == test.sensors
    if same_year and same_sensor:
        if train.materials == test.materials:
            return "intra-same-material"
        if not (train.materials & test.materials):
            return "intra-cross-material"
        return "other"
    if same_year and not (train.sensors & test.sensors):
        return "cross-sensor"
    if same_sensor and not (train.years & test.years):
        return "cross-dataset"
    return "other"


def _training_meta(train) -> ManifestMeta:
    if isinstance(train, ManifestMeta):
        return train
    sub = train.split("train")
    return (sub if len(sub) else train).metadata()


def run_protocol(
    model,
    train_manifest,
    test_manifests: Sequence[DatasetManifest],
    loader: Callable[[str], np.ndarray] | None = None,
    split: str | None = "test",
) -> list[AceReport]:
    """Evaluate every test manifest and tag each report with its protocol.

    ``train_manifest`` may be a :class:`DatasetManifest` (its train split is
    used when present) or a bare :class:`ManifestMeta`.
    """
    tm = _training_meta(train_manifest)
    reports = []
    for test in test_manifests:
        sub = test.split(split)
        r = evaluate(model, test, split=split, loader=loader)
        r.protocol = classify_protocol(tm, (sub if len(sub) else test).metadata())
        r.train_sensor = "+".join(sorted(tm.sensors))
        r.train_dataset = "+".join(sorted(tm.years))
        reports.append(r)
    return reports


def emit_report(reports: Sequence[AceReport], fmt: str, path=None) -> str:
    """Serialize reports as JSON (all fields) or CSV (fixed columns, 2-decimal rates).

    Writes to ``path`` when given and returns the text either way.
    """
    if fmt == "json":
        text = json.dumps([r.to_dict() for r in reports], indent=2) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow(r.row())
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown report format {fmt!r} (json or csv)")
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def load_reports(path) -> list[AceReport]:
    with open(path) as fh:
        return [AceReport.from_dict(d) for d in json.load(fh)]
