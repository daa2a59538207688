"""
Declarative descriptions of simulated annotators.

The five archetypes follow the toy-study setup: a faithful annotator, an
over-segmenter, an under-segmenter, one prone to fractures plus
over-segmentation, and one that labels everything as background.
"""

from enum import Enum
from typing import List

from pydantic import BaseModel, ConfigDict, Field


class AnnotatorKind(str, Enum):
    GOOD = "good"
    OVER = "over"
    UNDER = "under"
    WRONG = "wrong"
    BLANK = "blank"


class AnnotatorProfile(BaseModel):
    """Corruption behaviour of one simulated annotator."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: AnnotatorKind = Field(..., description="Corruption archetype")
    magnitude: int = Field(default=0, ge=0, description="Morphology radius in pixels")
    fracture_count: int = Field(default=3, ge=0, description="Number of strips removed (wrong-segmentation)")
    fracture_width: int = Field(default=2, ge=0, description="Strip width in pixels (wrong-segmentation)")
    target_class: int = Field(default=1, ge=0, description="Class whose mask is corrupted")
    name: str = Field(default="", description="Annotator id; defaults to the kind")

    @property
    def annotator_id(self) -> str:
        return self.name or self.kind.value


def default_profiles(magnitude: int = 2, target_class: int = 1) -> List[AnnotatorProfile]:
    """The five annotators of the toy study, in their canonical order."""
    return [
        AnnotatorProfile(kind=AnnotatorKind.GOOD, magnitude=1, target_class=target_class),
        AnnotatorProfile(kind=AnnotatorKind.OVER, magnitude=magnitude, target_class=target_class),
        AnnotatorProfile(kind=AnnotatorKind.UNDER, magnitude=magnitude, target_class=target_class),
        AnnotatorProfile(kind=AnnotatorKind.WRONG, magnitude=max(1, magnitude - 1), target_class=target_class),
        AnnotatorProfile(kind=AnnotatorKind.BLANK, target_class=target_class),
    ]


def scale_profiles(profiles: List[AnnotatorProfile], level: int) -> List[AnnotatorProfile]:
    """Re-target every profile to corruption ``level``; level 0 disables all morphology."""
    scaled = []
    for profile in profiles:
        if profile.kind == AnnotatorKind.GOOD:
            update = {"magnitude": min(level, 1)}
        elif profile.kind == AnnotatorKind.WRONG:
            update = {"magnitude": level, "fracture_count": profile.fracture_count if level > 0 else 0}
        elif profile.kind == AnnotatorKind.BLANK:
            update = {}
        else:
            update = {"magnitude": level}
        scaled.append(profile.model_copy(update=update))
    return scaled
