"""Time-series ingestion: loading, demeaning, AR(1) prewhitening, run
concatenation, and SVD extraction of representative series.

Pipeline order is load -> demean -> prewhiten -> concatenate; the
concatenation step only accepts blocks that went through prewhitening.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FORMAT_VERSION, ConditionData, IngestionError


@dataclass(frozen=True, eq=False)
class PrewhitenedBlock:
    """Residual series of one run, tagged as prewhitened."""

    residuals: np.ndarray  # (T-1, p)
    ar_coef: np.ndarray    # (p,)


def load_matrix(path):
    """Read a T x p matrix from CSV (optional header) or .npy binary.

    NaN or infinite cells are rejected with their location; ragged CSV rows
    and non-numeric cells likewise.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"no such file: {path}")
    if path.suffix == ".npy":
        try:
            mat = np.load(path, allow_pickle=False)
        except ValueError as err:
            raise IngestionError(f"{path}: not a valid matrix file ({err})") from None
        mat = np.asarray(mat, dtype=float)
        if mat.ndim == 1:
            mat = mat[:, None]
        if mat.ndim != 2:
            raise IngestionError(f"{path}: expected a 2-d matrix, got shape {mat.shape}")
        bad = ~np.isfinite(mat)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise IngestionError(f"{path}: non-finite value at row {r}, column {c}")
        return mat
    return _load_csv(path)


def _load_csv(path):
    rows = []
    width = None
    start_row = 0
    with open(path) as f:
        lines = [line.strip() for line in f if line.strip()]
    if not lines:
        raise IngestionError(f"{path}: empty file")
    # optional single header line of non-numeric column names
    try:
        [float(tok) for tok in lines[0].split(",")]
    except ValueError:
        start_row = 1
    for i, line in enumerate(lines[start_row:], start=start_row):
        toks = line.split(",")
        if width is None:
            width = len(toks)
        elif len(toks) != width:
            raise IngestionError(
                f"{path}: ragged row {i} has {len(toks)} cells, expected {width}")
        vals = []
        for j, tok in enumerate(toks):
            try:
                v = float(tok)
            except ValueError:
                raise IngestionError(
                    f"{path}: non-numeric cell at row {i}, column {j}: {tok!r}") from None
            if not np.isfinite(v):
                raise IngestionError(f"{path}: non-finite value at row {i}, column {j}")
            vals.append(v)
        rows.append(vals)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float)


def save_matrix(path, mat):
    """Write a matrix as .npy (bit-exact) or CSV with round-trippable floats."""
    path = Path(path)
    mat = np.asarray(mat, dtype=float)
    if path.suffix == ".npy":
        np.save(path, mat)
        return path
    with open(path, "w") as f:
        for row in np.atleast_2d(mat):
            f.write(",".join(repr(float(v)) for v in row))
            f.write("\n")
    return path


def demean(series):
    """Remove each column's mean."""
    series = np.asarray(series, dtype=float)
    if series.ndim != 2 or series.shape[0] < 1:
        raise ValueError("series must be a T x p matrix with T >= 1")
    return series - series.mean(axis=0, keepdims=True)


def prewhiten_ar1(series):
    """Lag-1 autoregressive prewhitening of each (demeaned) column.

    The coefficient is the Yule-Walker lag-1 ratio; residuals drop the first
    sample. Zero-variance columns pass through as zeros with a warning.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 2 or series.shape[0] < 3:
        raise ValueError("series must be a T x p matrix with T >= 3")
    lagged = series[:-1]
    lead = series[1:]
    denom = (lagged * lagged).sum(axis=0)
    dead = denom == 0
    if dead.any():
        warnings.warn(f"{int(dead.sum())} zero-variance column(s) passed through as zeros")
    phi = np.where(dead, 0.0, (lead * lagged).sum(axis=0) / np.where(dead, 1.0, denom))
    resid = lead - phi * lagged
    resid[:, dead] = 0.0
    return PrewhitenedBlock(residuals=resid, ar_coef=phi)


def concatenate_runs(blocks, label=""):
    """Pool prewhitened runs into one ConditionData; block boundaries are
    never mixed (the scatter is a sum of per-block cross-products)."""
    if not blocks:
        raise IngestionError("no blocks to concatenate")
    for b in blocks:
        if not isinstance(b, PrewhitenedBlock):
            raise IngestionError(
                "concatenate_runs requires prewhitened blocks; run prewhiten_ar1 first")
    p = blocks[0].residuals.shape[1]
    for b in blocks:
        if b.residuals.shape[1] != p:
            raise IngestionError(
                f"node-count mismatch across blocks: {b.residuals.shape[1]} vs {p}")
    scatter = np.zeros((p, p))
    n_obs = 0
    for b in blocks:
        x = b.residuals
        scatter += x.T @ x
        n_obs += x.shape[0]
    return ConditionData(scatter=scatter, n_obs=n_obs, p=p, label=label)


def svd_extract(voxel_series):
    """First principal time series of a voxel block: the leading left
    singular vector scaled by its singular value, sign-fixed so it correlates
    nonnegatively with the mean voxel series."""
    X = np.asarray(voxel_series, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 1:
        raise ValueError("voxel series must be T x v with T >= 2, v >= 1")
    if not X.any():
        warnings.warn("all-zero voxel block; returning a zero series")
        return np.zeros(X.shape[0])
    u, s, _ = np.linalg.svd(X, full_matrices=False)
    series = u[:, 0] * s[0]
    if series @ X.mean(axis=1) < 0:
        series = -series
    return series


# ---------------------------------------------------------------------------
# ConditionData and manifest files
# ---------------------------------------------------------------------------

def save_condition_data(path, data):
    np.savez_compressed(
        path,
        format_version=np.array(FORMAT_VERSION),
        scatter=data.scatter,
        n_obs=np.array(data.n_obs),
        p=np.array(data.p),
        label=np.array(data.label),
    )
    return Path(path)


def load_condition_data(path):
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"no such file: {path}")
    with np.load(path, allow_pickle=False) as f:
        version = int(f["format_version"])
        if version > FORMAT_VERSION:
            raise IngestionError(f"{path}: format version {version} is newer than supported")
        return ConditionData(
            scatter=f["scatter"],
            n_obs=int(f["n_obs"]),
            p=int(f["p"]),
            label=str(f["label"]),
        )


def load_manifest(path):
    """Resolve a condition manifest to a list of ConditionData.

    Each condition entry carries either ``data`` (a serialized ConditionData
    file) or ``runs`` (per-subject raw series files that are demeaned,
    prewhitened, and pooled here). Paths are relative to the manifest.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"no such manifest: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise IngestionError(f"{path}: invalid JSON ({err})") from None
    conditions = doc.get("conditions")
    if not conditions:
        raise IngestionError(f"{path}: manifest lists no conditions")
    base = path.parent
    out = []
    for entry in conditions:
        label = entry.get("label", "")
        if "data" in entry:
            out.append(load_condition_data(base / entry["data"]))
        elif "runs" in entry:
            blocks = []
            for run in entry["runs"]:
                run_path = run["path"] if isinstance(run, dict) else run
                series = load_matrix(base / run_path)
                blocks.append(prewhiten_ar1(demean(series)))
            out.append(concatenate_runs(blocks, label=label))
        else:
            raise IngestionError(
                f"{path}: condition {label!r} needs either 'data' or 'runs'")
    return out
