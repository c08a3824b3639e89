"""Constrained, targeted, iterative sign-gradient search for worst-case images.

Each step descends the cross-entropy toward ``spec.target_class``::

    x <- clip(x - eps * P(sign(grad_x CE(x, target))), 0, 1)

where ``P`` zeroes coordinates outside the mask / allowed channels. Steps
accumulate; there is no projection back onto a ball around the original.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor_engine as te
from .cnn_model import ModelWeights, image_to_chw
from .invariance_spec import ChangeSpec, apply_constraints, check_mask_size

STOP_REASONS = ("target_reached", "plateau", "budget_exhausted")


@dataclass(frozen=True, eq=False)
class IterationRecord:
    index: int
    image: np.ndarray  # H x W x 3 float32
    probs: np.ndarray
    loss_to_target: float
    target_prob: float
    original_class_prob: float


@dataclass(eq=False)
class SearchTrace:
    iterations: list[IterationRecord] = field(default_factory=list)
    stop_reason: str = "budget_exhausted"
    original_class: int = 0
    target_class: int = 0

    def __len__(self) -> int:
        return len(self.iterations)

    @property
    def final(self) -> IterationRecord:
        return self.iterations[-1]


def _check_inputs(model: ModelWeights, image: np.ndarray, spec: ChangeSpec) -> None:
    side = model.input_side
    if np.shape(image) != (side, side, 3):
        raise te.ShapeError(f"image shape {np.shape(image)} does not match model input ({side}, {side}, 3)")
    check_mask_size(spec, side, side)
    if not 0 <= spec.target_class < model.num_classes:
        raise ValueError(f"target_class {spec.target_class} out of range for {model.num_classes} classes")


def fgsm_step(model: ModelWeights, image: np.ndarray, spec: ChangeSpec) -> np.ndarray:
    """One constrained targeted step; returns a new H x W x 3 image."""
    _check_inputs(model, image, spec)
    x = image_to_chw(model, image)
    grad = te.input_gradient(model.layers, x, spec.target_class)
    raw = (-np.float32(spec.step_epsilon) * np.sign(grad)).astype(np.float32)
    delta = apply_constraints(raw, spec)
    stepped = np.clip(x + delta, np.float32(0.0), np.float32(1.0))
    return np.ascontiguousarray(stepped.transpose(1, 2, 0))


def _evaluate(model: ModelWeights, image: np.ndarray, index: int, target: int, original: int) -> IterationRecord:
    logits, _ = te.forward(model.layers, image_to_chw(model, image))
    loss, probs = te.softmax_cross_entropy(logits, target)
    return IterationRecord(index, image, probs, loss, float(probs[target]), float(probs[original]))


def _plateaued(records: list[IterationRecord], window: int, delta: float) -> bool:
    # window+1 most recent generated images (record 0 excluded), i.e. `window` steps
    if len(records) - 1 < window + 1:
        return False
    recent = [r.target_prob for r in records[-(window + 1) :]]
    return max(recent) - min(recent) <= delta


def worst_case_search(model: ModelWeights, image: np.ndarray, spec: ChangeSpec) -> SearchTrace:
    """Iterate ``fgsm_step`` until the target is reached, progress stalls or the budget runs out.

    Record 0 is the unmodified image; the original class is its argmax.
    """
    _check_inputs(model, image, spec)
    image = np.asarray(image, dtype=np.float32)
    target = spec.target_class
    probs0 = te.softmax_cross_entropy(te.forward(model.layers, image_to_chw(model, image))[0], target)[1]
    original = int(np.argmax(probs0))
    trace = SearchTrace(original_class=original, target_class=target)
    trace.iterations.append(_evaluate(model, image, 0, target, original))

    if trace.final.target_prob >= spec.stop_target_prob:
        trace.stop_reason = "target_reached"
        return trace
    for i in range(1, spec.max_iterations + 1):
        image = fgsm_step(model, image, spec)
        trace.iterations.append(_evaluate(model, image, i, target, original))
        if trace.final.target_prob >= spec.stop_target_prob:
            trace.stop_reason = "target_reached"
            return trace
        if _plateaued(trace.iterations, spec.plateau_window, spec.plateau_delta):
            trace.stop_reason = "plateau"
            return trace
    trace.stop_reason = "budget_exhausted"
    return trace


def select_worst(trace: SearchTrace) -> IterationRecord:
    """Highest target probability; ties -> lowest original-class probability -> lowest index."""
    if not trace.iterations:
        raise ValueError("empty trace")
    return min(trace.iterations, key=lambda r: (-r.target_prob, r.original_class_prob, r.index))
