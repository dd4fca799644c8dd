"""Central finite-difference checks of backward-pass gradients at 64-bit."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .model import DeFraudNetModel, submodule
from .tensor import backward, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    a, n = np.abs(analytic), np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), floor)


@dataclass
class GradCheckReport:
    names: list[str] = field(default_factory=list)
    indices: list[int] = field(default_factory=list)
    analytic: np.ndarray = None
    numeric: np.ndarray = None
    rel_err: np.ndarray = None

    def pass_fraction(self, tol: float = 1e-2) -> float:
        return float(np.mean(self.rel_err < tol))

    def submodules(self) -> set[str]:
        return {submodule(n) for n in self.names}


def sample_coordinates(model: DeFraudNetModel, count: int, rng: np.random.Generator):
    """One coordinate from every parameter tensor, the rest uniform over all scalars."""
    items = model.params.items()
    picks = [(name, int(rng.integers(t.data.size))) for name, t in items]
    if len(picks) > count:
        sel = rng.choice(len(picks), size=count, replace=False)
        return [picks[i] for i in sorted(sel)]
    sizes = np.array([t.data.size for _, t in items])
    flat = rng.choice(sizes.sum(), size=count - len(picks), replace=False)
    offsets = np.cumsum(sizes)
    for f in flat:
        i = int(np.searchsorted(offsets, f, side="right"))
        start = offsets[i - 1] if i else 0
        picks.append((items[i][0], int(f - start)))
    return picks


def model_loss(model: DeFraudNetModel, image: np.ndarray, label: int, mode: str = "train"):
    out, aux, _ = model.logits(image, mode=mode)
    loss = ops.softmax_cross_entropy(out, label)
    for a in aux:
        loss = ops.add(loss, ops.softmax_cross_entropy(a, label))
    return loss


def check_model(
    model: DeFraudNetModel,
    image: np.ndarray,
    label: int,
    n_coords: int = 500,
    h: float = 1e-3,
    seed: int = 0,
    mode: str = "train",
) -> GradCheckReport:
    """Compare backward gradients of the cross-entropy loss against central differences.

    The model is copied to float64 first; the original parameters are untouched.
    """
    m64 = DeFraudNetModel(model.config, model.params.astype(np.float64))
    img = np.asarray(image, dtype=np.float64)
    m64.params.zero_grad()
    backward(model_loss(m64, img, label, mode))
    coords = sample_coordinates(m64, n_coords, np.random.default_rng(seed))
    analytic, numeric = [], []
    for name, idx in coords:
        t = m64.params[name]
        flat = t.data.reshape(-1)
        analytic.append(t.grad.reshape(-1)[idx])
        orig = flat[idx]
        with no_grad():
            flat[idx] = orig + h
            up = model_loss(m64, img, label, mode).item()
            flat[idx] = orig - h
            down = model_loss(m64, img, label, mode).item()
        flat[idx] = orig
        numeric.append((up - down) / (2 * h))
    analytic = np.array(analytic)
    numeric = np.array(numeric)
    return GradCheckReport(
        names=[c[0] for c in coords],
        indices=[c[1] for c in coords],
        analytic=analytic,
        numeric=numeric,
        rel_err=relative_error(analytic, numeric),
    )


def check_function(fn, inputs: list[np.ndarray], h: float = 1e-6) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of the scalar ``fn(*tensors)`` w.r.t. every input, analytic and numeric.

    ``fn`` receives float64 tensors with ``requires_grad`` set and must return
    a scalar tensor.
    """
    from .tensor import Tensor

    tensors = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    backward(fn(*tensors))
    analytic = [t.grad.copy() for t in tensors]
    numeric = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                up = fn(*tensors).item()
                flat[i] = orig - h
                down = fn(*tensors).item()
            flat[i] = orig
            gf[i] = (up - down) / (2 * h)
        numeric.append(g)
    return analytic, numeric
