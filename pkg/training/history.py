"""Per-epoch training history and its CSV form."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd

from grid.tensor_io import atomic_write_text

HISTORY_COLUMNS = ["epoch", "total", "ce", "trace", "val_dice", "val_cm_rmse"]


@dataclass
class TrainHistory:
    """
    One entry per epoch.

    total is the mean per-image loss, ce and trace the mean over observed
    (image, annotator) pairs. val_cm_rmse is None for methods without CMs.
    """

    total: List[float] = field(default_factory=list)
    ce: List[float] = field(default_factory=list)
    trace: List[float] = field(default_factory=list)
    val_dice: List[float] = field(default_factory=list)
    val_cm_rmse: List[Optional[float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.total)

    def append(self, total: float, ce: float, trace: float, val_dice: float, val_cm_rmse: Optional[float]):
        self.total.append(total)
        self.ce.append(ce)
        self.trace.append(trace)
        self.val_dice.append(val_dice)
        self.val_cm_rmse.append(val_cm_rmse)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "epoch": np.arange(1, len(self) + 1),
                "total": self.total,
                "ce": self.ce,
                "trace": self.trace,
                "val_dice": self.val_dice,
                "val_cm_rmse": [np.nan if v is None else v for v in self.val_cm_rmse],
            },
            columns=HISTORY_COLUMNS,
        )

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        atomic_write_text(path, self.to_frame().to_csv(index=False, float_format="%.10g"))
        return path
