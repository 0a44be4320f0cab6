"""Input validation helpers: dataset CSV schema checks and array guards used
by the estimator layer."""
from __future__ import annotations

import numpy as np
import pandas as pd

from .core import Dataset


class SchemaError(ValueError):
    """Dataset file violates the required column schema."""


REQUIRED_COLUMNS = ("y", "a", "m1", "m2", "x1")


def load_dataset(path):
    """Read a dataset CSV with header ``y,a,m1,m2,x1[,x2,...]``."""
    df = pd.read_csv(path)
    for col in REQUIRED_COLUMNS:
        if col not in df.columns:
            raise SchemaError(f"missing required column '{col}'")
    x_cols = [c for c in df.columns if c.startswith("x")]
    x_cols.sort(key=lambda c: int(c[1:]))
    for col in ("a", "m1", "m2"):
        if not df[col].isin([0, 1]).all():
            raise SchemaError(f"column '{col}' must be 0/1")
    if df[["y", *x_cols]].isna().any().any():
        raise SchemaError("y and covariate columns must be numeric and non-missing")
    return Dataset(df["y"].to_numpy(dtype=float),
                   df["a"].to_numpy(dtype=int),
                   df["m1"].to_numpy(dtype=int),
                   df["m2"].to_numpy(dtype=int),
                   df[x_cols].to_numpy(dtype=float))


def save_dataset(data: Dataset, path):
    cols = {"y": data.y, "a": data.a, "m1": data.m1, "m2": data.m2}
    for j in range(data.d):
        cols[f"x{j + 1}"] = data.x[:, j]
    pd.DataFrame(cols).to_csv(path, index=False, lineterminator="\n")


def check_scalar_v(v):
    v = np.asarray(v, dtype=float)
    if v.ndim > 1:
        raise ValueError("the conditioning covariate must be scalar")
    return v.ravel()
