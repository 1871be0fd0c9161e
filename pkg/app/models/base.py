from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from services.errors import InvalidArgumentError


class ArrayModel(BaseModel):
    """Frozen model whose array fields are stored as read-only numpy copies."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @classmethod
    def create(cls, **data):
        """Construct, turning pydantic validation failures into InvalidArgumentError."""
        try:
            return cls(**data)
        except ValidationError as e:
            first = e.errors()[0]
            raise InvalidArgumentError(f"invalid {cls.__name__}: {first['msg']}") from e


def frozen_array(value, dtype=np.float64, ndim: Optional[int] = None) -> np.ndarray:
    arr = np.array(value, dtype=dtype, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def require_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} must be finite")
    return arr
