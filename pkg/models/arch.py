"""Architecture descriptor of the coupled segmentation / annotator network."""

from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator

from grid.fields import MAX_CLASSES

KERNEL_SIZE = 3


class CmMode(str, Enum):
    FULL = "full"
    LOW_RANK = "low_rank"


class ModelArch(BaseModel):
    """
    Shared convolutional trunk with two 1x1 heads.

    The trunk stacks ``trunk_layers`` 3x3 same-padding convolutions with ReLU.
    The segmentation head maps trunk features to L logits; the annotator head
    maps them to R*L*L CM logits (full) or R*2*L*rank factor entries (low rank).
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    in_channels: int = Field(default=1, ge=1, description="Image channels C")
    trunk_layers: int = Field(default=2, ge=1, description="Number of 3x3 conv + ReLU layers")
    trunk_channels: int = Field(default=8, ge=1, description="Feature channels of every trunk layer")
    num_classes: int = Field(default=2, ge=2, le=MAX_CLASSES, description="Segmentation classes L")
    num_annotators: int = Field(default=5, ge=1, description="Annotators R")
    cm_mode: CmMode = Field(default=CmMode.FULL, description="Annotator CM parametrisation")
    rank: int = Field(default=1, ge=1, description="Factor rank l for low_rank mode")

    @model_validator(mode="after")
    def _check_rank(self):
        if self.cm_mode == CmMode.LOW_RANK and self.rank >= self.num_classes:
            raise ValueError(f"low-rank CMs need rank < num_classes, got rank {self.rank} with {self.num_classes} classes")
        return self

    @property
    def ann_outputs(self) -> int:
        """Channels produced by the annotator head."""
        L, R = self.num_classes, self.num_annotators
        if self.cm_mode == CmMode.FULL:
            return R * L * L
        return R * 2 * L * self.rank
