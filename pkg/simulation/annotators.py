"""
Simulated annotators: turn a ground-truth map into one annotator's noisy label.
"""

import numpy as np

from grid.errors import PreconditionError
from grid.fields import LabelMap
from grid.rng import Rng
from simulation.morphology import MorphKind, morph_op
from simulation.profiles import AnnotatorKind, AnnotatorProfile


def _target_class(gt: LabelMap, profile: AnnotatorProfile) -> int:
    cls = profile.target_class
    if not 0 <= cls < gt.num_classes:
        raise PreconditionError(f"target class {cls} outside [0, {gt.num_classes})")
    return cls


def apply_profile(gt: LabelMap, profile: AnnotatorProfile, rng: Rng) -> LabelMap:
    """
    Corrupt ``gt`` the way ``profile`` describes.

    Good jitters the target mask by one pixel (random dilate or erode) unless
    its magnitude is 0; Over dilates and Under erodes by the magnitude; Wrong
    fractures and then dilates; Blank returns an all-background map.
    """
    if profile.kind == AnnotatorKind.BLANK:
        return morph_op(gt, 0, MorphKind.BLANK, 0, rng)

    cls = _target_class(gt, profile)
    radius_cap = int(min(gt.shape) // 2)
    magnitude = min(profile.magnitude, radius_cap)

    if profile.kind == AnnotatorKind.GOOD:
        if magnitude == 0:
            return LabelMap(np.array(gt.labels), gt.num_classes)
        kind = MorphKind.DILATE if rng.generator.integers(2) == 0 else MorphKind.ERODE
        return morph_op(gt, cls, kind, 1, rng)
    if profile.kind == AnnotatorKind.OVER:
        return morph_op(gt, cls, MorphKind.DILATE, magnitude, rng)
    if profile.kind == AnnotatorKind.UNDER:
        return morph_op(gt, cls, MorphKind.ERODE, magnitude, rng)

    fractured = morph_op(
        gt,
        cls,
        MorphKind.FRACTURE,
        min(profile.fracture_width, radius_cap),
        rng.child(0),
        fracture_count=profile.fracture_count,
    )
    return morph_op(fractured, cls, MorphKind.DILATE, magnitude, rng.child(1))
