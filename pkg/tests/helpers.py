"""Shared fixtures: stub classifiers and a model that always answers live."""

import numpy as np

from defraudnet.evaluation import DatasetManifest, ManifestEntry
from defraudnet.model import LABELS, build_model, desk_config, make_prediction


class StubModel:
    """Predicts from a callable on the image; ``decide(img) -> 0 (live) or 1 (fake)``."""

    def __init__(self, decide):
        self.decide = decide

    def predict_batch(self, images):
        out = []
        for img in images:
            k = self.decide(img)
            logits = np.array([1.0, 0.0]) if k == 0 else np.array([0.0, 1.0])
            out.append(make_prediction(logits, np.ones(1)))
        return out


def always_live_model():
    m = build_model(desk_config(zero_init_head=True), seed=0)
    m.params["head.fc2.bias"].data[:] = [1.0, 0.0]
    return m


def manifest_with_labels(labels, sensor="synA", year="2015", material="gelatin", split="test", prefix=""):
    entries = [
        ManifestEntry(f"{prefix}{i:03d}_{lab}.pgm", lab, sensor, material if lab == "fake" else "live", year, split)
        for i, lab in enumerate(labels)
    ]
    return DatasetManifest(entries, ".")


def label_loader(path):
    """Encodes the ground truth in the 'image' so stubs can be wrong on purpose."""
    return np.full((1,), LABELS.index("fake" if path.endswith("_fake.pgm") else "live"))
