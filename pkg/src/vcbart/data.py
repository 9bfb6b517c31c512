"""Panel data container and CSV ingestion.

A `PanelDataset` keeps one flat row-major block of responses, covariates,
and effect modifiers, sorted so each subject's rows are contiguous and in
time order.  Modifiers are affinely rescaled to [0, 1] at construction and
the map is kept so query points can be expressed in original units later.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .exceptions import DataError


@dataclass
class PanelDataset:
    """Grouped panel data on the original response scale.

    y_mean / y_sd record the standardization the sampler will apply
    internally; they are (0, 1) when standardization is disabled.
    """

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray                 # rescaled to [0, 1]
    subject_index: np.ndarray     # int codes, block-contiguous
    subject_labels: np.ndarray
    z_min: np.ndarray
    z_max: np.ndarray
    y_mean: float
    y_sd: float
    x_names: list[str] = field(default_factory=list)
    z_names: list[str] = field(default_factory=list)
    row_order: np.ndarray | None = None  # positions of rows in the caller's input

    # ------------------------------------------------------------------

    @classmethod
    def from_arrays(cls, y, x, z, subjects=None, *, rescale_z=True,
                    standardize_y=True, z_bounds=None,
                    x_names=None, z_names=None) -> "PanelDataset":
        """Validate, group by subject, and rescale.

        subjects may be any label array; None treats every row as its own
        subject.  Rows are stably reordered so subjects are contiguous in
        first-appearance order, preserving within-subject (time) order.
        """
        y = _column("y", y)
        x = _matrix("x", x)
        z = _matrix("z", z)
        n = y.shape[0]
        if x.shape[0] != n or z.shape[0] != n:
            raise DataError(
                f"row mismatch: y has {n}, x has {x.shape[0]}, z has {z.shape[0]}")
        if n < 2:
            raise DataError("need at least two rows")

        if subjects is None:
            codes = np.arange(n)
            labels = np.arange(n)
        else:
            subjects = np.asarray(subjects)
            if subjects.shape[0] != n:
                raise DataError("subjects must have one entry per row")
            codes, labels = pd.factorize(subjects, use_na_sentinel=False)
            codes = np.asarray(codes)
            labels = np.asarray(labels)

        order = np.argsort(codes, kind="stable")
        y, x, z, codes = y[order], x[order], z[order], codes[order]

        if rescale_z:
            z, z_min, z_max = _rescale_modifiers(z, z_bounds)
        else:
            z_min = np.zeros(z.shape[1])
            z_max = np.ones(z.shape[1])
            if np.any(z < -1e-9) or np.any(z > 1.0 + 1e-9):
                raise DataError("modifiers outside [0, 1] with rescaling disabled")
            z = np.clip(z, 0.0, 1.0)

        if standardize_y:
            with np.errstate(over="ignore"):  # caught by the finite check
                y_mean = float(np.mean(y))
                y_sd = float(np.std(y))
            if not np.isfinite(y_mean) or not np.isfinite(y_sd):
                raise DataError("response scale overflows double precision; "
                                "rescale y before fitting")
            if y_sd <= 0.0:
                raise DataError("response is constant; cannot standardize")
        else:
            y_mean, y_sd = 0.0, 1.0

        return cls(
            y=y, x=x, z=z, subject_index=codes.astype(np.intp),
            subject_labels=labels, z_min=z_min, z_max=z_max,
            y_mean=y_mean, y_sd=y_sd,
            x_names=list(x_names) if x_names else _default_names("x", x.shape[1]),
            z_names=list(z_names) if z_names else _default_names("z", z.shape[1]),
            row_order=order,
        )

    # ------------------------------------------------------------------
    # shape accessors

    @property
    def n_rows(self) -> int:
        return self.y.shape[0]

    @property
    def n_subjects(self) -> int:
        return len(self.subject_labels)

    @property
    def n_covariates(self) -> int:
        return self.x.shape[1]

    @property
    def n_modifiers(self) -> int:
        return self.z.shape[1]

    @property
    def subject_sizes(self) -> np.ndarray:
        return np.bincount(self.subject_index, minlength=self.n_subjects)

    @property
    def subject_starts(self) -> np.ndarray:
        """Offsets such that subject i occupies rows starts[i]:starts[i+1]."""
        sizes = self.subject_sizes
        starts = np.zeros(len(sizes) + 1, dtype=np.intp)
        np.cumsum(sizes, out=starts[1:])
        return starts

    def y_standardized(self) -> np.ndarray:
        return (self.y - self.y_mean) / self.y_sd

    # ------------------------------------------------------------------

    def rescale_modifiers(self, z_raw: np.ndarray) -> np.ndarray:
        """Map new modifier rows into [0, 1] with the stored affine map.

        Values outside the training range are clamped; a warning reports how
        many cells were affected.
        """
        z_raw = _matrix("z", z_raw)
        if z_raw.shape[1] != self.n_modifiers:
            raise DataError(
                f"expected {self.n_modifiers} modifier columns, got {z_raw.shape[1]}")
        span = np.where(self.z_max > self.z_min, self.z_max - self.z_min, 1.0)
        scaled = (z_raw - self.z_min) / span
        scaled[:, self.z_max <= self.z_min] = 0.5
        clamped = int(np.sum((scaled < 0.0) | (scaled > 1.0)))
        if clamped:
            warnings.warn(f"{clamped} modifier value(s) outside the training "
                          "range were clamped to [0, 1]")
            scaled = np.clip(scaled, 0.0, 1.0)
        return scaled

    def fingerprint(self) -> str:
        """Content hash tying archives to the dataset they were fit on."""
        h = hashlib.sha256()
        for arr in (self.y, self.x, self.z, self.subject_index):
            a = np.ascontiguousarray(arr)
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        return h.hexdigest()


def _column(name: str, arr) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 1:
        raise DataError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr.copy()


def _matrix(name: str, arr) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DataError(f"{name} must be two-dimensional")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr.copy()


def _default_names(prefix: str, count: int) -> list[str]:
    return [f"{prefix}{i + 1}" for i in range(count)]


def _rescale_modifiers(z, z_bounds):
    if z_bounds is not None:
        z_min, z_max = (np.asarray(b, dtype=np.float64) for b in z_bounds)
    else:
        z_min = z.min(axis=0)
        z_max = z.max(axis=0)
    span = z_max - z_min
    constant = span <= 0.0
    if np.any(constant):
        cols = ", ".join(np.array(_default_names("z", z.shape[1]))[constant])
        warnings.warn(f"constant modifier column(s) {cols} mapped to 0.5")
    safe = np.where(constant, 1.0, span)
    scaled = (z - z_min) / safe
    scaled[:, constant] = 0.5
    return np.clip(scaled, 0.0, 1.0), z_min, z_max


# ----------------------------------------------------------------------
# CSV panel schema


def ingest_csv(path, *, subject_col="subject_id", time_col="time",
               y_col="y", x_cols=None, z_cols=None,
               standardize_y=True) -> PanelDataset:
    """Read the flat panel CSV schema into a PanelDataset.

    Covariate and modifier columns default to every column named x<k> or
    z<k>.  Rows are ordered by (subject first appearance, time).  Missing
    values anywhere in a used column are an error.
    """
    try:
        frame = pd.read_csv(path, comment="#")
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if y_col not in frame.columns:
        raise DataError(f"missing response column {y_col!r}")
    if subject_col not in frame.columns:
        raise DataError(f"missing subject column {subject_col!r}")

    x_cols = x_cols or _prefixed_columns(frame, "x")
    z_cols = z_cols or _prefixed_columns(frame, "z")
    if not x_cols:
        raise DataError("no covariate columns found (expected x1, x2, ...)")
    if not z_cols:
        raise DataError("no modifier columns found (expected z1, z2, ...)")
    absent = [c for c in (*x_cols, *z_cols) if c not in frame.columns]
    if absent:
        raise DataError(f"declared column(s) not in file: {', '.join(absent)}")

    if time_col in frame.columns:
        frame = frame.sort_values(
            [subject_col, time_col], kind="stable", ignore_index=True)

    used = [y_col, *x_cols, *z_cols]
    block = frame[used].apply(pd.to_numeric, errors="coerce")
    bad = block.isna()
    if bad.to_numpy().any():
        col = bad.any(axis=0).idxmax()
        row = int(bad[col].idxmax())
        raise DataError(
            f"column {col!r} has a missing or non-numeric value at data row {row}")

    return PanelDataset.from_arrays(
        block[y_col].to_numpy(),
        block[x_cols].to_numpy(),
        block[z_cols].to_numpy(),
        subjects=frame[subject_col].to_numpy(),
        standardize_y=standardize_y,
        x_names=x_cols, z_names=z_cols,
    )


def _prefixed_columns(frame: pd.DataFrame, prefix: str) -> list[str]:
    cols = [c for c in frame.columns
            if c.startswith(prefix) and c[len(prefix):].isdigit()]
    return sorted(cols, key=lambda c: int(c[len(prefix):]))


def panel_frame(y, x, z, subjects, time=None) -> pd.DataFrame:
    """Assemble arrays into the flat CSV panel schema."""
    x = np.asarray(x)
    z = np.asarray(z)
    data = {"subject_id": np.asarray(subjects)}
    if time is not None:
        data["time"] = np.asarray(time)
    data["y"] = np.asarray(y)
    for jj in range(x.shape[1]):
        data[f"x{jj + 1}"] = x[:, jj]
    for rr in range(z.shape[1]):
        data[f"z{rr + 1}"] = z[:, rr]
    return pd.DataFrame(data)
