"""Gaze recordings, velocity derivation, normalisation, segmentation and a CRW simulator."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri

log = logging.getLogger(__name__)

RECORDING_COLUMNS = ("t_ms", "left_x", "left_y", "right_x", "right_y")


class DataError(ValueError):
    pass


class RecordingParseError(DataError):
    pass


@dataclass
class GazeRecording:
    left: np.ndarray  # (T, 2) screen pixels
    right: np.ndarray
    sample_interval: float = 1.0  # ms
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=np.float64).reshape(-1, 2)
        self.right = np.asarray(self.right, dtype=np.float64).reshape(-1, 2)
        if len(self.left) != len(self.right):
            raise DataError("left and right eye arrays differ in length")
        if not self.sample_interval > 0:
            raise DataError("sample interval must be positive")
        if not (np.all(np.isfinite(self.left)) and np.all(np.isfinite(self.right))):
            raise DataError("position samples must be finite")

    def __len__(self):
        return len(self.left)

    def eye(self, which):
        if which == "left":
            return self.left
        if which == "right":
            return self.right
        raise ValueError(f"eye must be 'left' or 'right', got {which!r}")


@dataclass
class VelocitySeries:
    values: np.ndarray  # pixels per ms
    sample_interval: float = 1.0
    source: str = "left"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise DataError("velocities must be finite and non-negative")

    def __len__(self):
        return len(self.values)


def load_recording(path, sample_interval=None):
    """Read a ``t_ms,left_x,left_y,right_x,right_y`` CSV file.

    The sample interval is inferred from the median timestamp step unless
    given explicitly (1 ms if the file has a single row).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise RecordingParseError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in RECORDING_COLUMNS if c not in header]
        if missing:
            raise RecordingParseError(f"{path}: line 1: missing columns {missing}")
        cols = [header.index(c) for c in RECORDING_COLUMNS]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise RecordingParseError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(row[i]) for i in cols])
            except ValueError as exc:
                raise RecordingParseError(f"{path}: line {lineno}: non-numeric cell ({exc})") from None
    if not rows:
        raise RecordingParseError(f"{path}: no data rows")
    arr = np.asarray(rows)
    if not np.all(np.isfinite(arr)):
        bad = int(np.argmax(~np.all(np.isfinite(arr), axis=1))) + 2
        raise RecordingParseError(f"{path}: line {bad}: non-finite value")
    t = arr[:, 0]
    if sample_interval is None:
        sample_interval = float(np.median(np.diff(t))) if len(t) > 1 else 1.0
    return GazeRecording(arr[:, 1:3], arr[:, 3:5], sample_interval, t)


def compute_velocity(positions, dt=1.0, source="left"):
    """Speed between consecutive (x, y) samples divided by ``dt`` (length T-1)."""
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise DataError(f"positions must be (T, 2), got {pos.shape}")
    if len(pos) < 2:
        raise DataError("need at least 2 positions to compute a velocity")
    if not dt > 0:
        raise DataError("dt must be positive")
    step = np.diff(pos, axis=0)
    return VelocitySeries(np.hypot(step[:, 0], step[:, 1]) / dt, dt, source)


@dataclass(frozen=True)
class Normalizer:
    """Min-max scaling fitted on training values."""

    min: float
    max: float

    def __post_init__(self):
        if not self.min < self.max:
            raise DataError(f"normalizer needs min < max, got [{self.min}, {self.max}]")

    def normalize(self, values, return_flag=False):
        """Map [min, max] to [0, 1]. Out-of-range values are not clamped but flagged."""
        x = np.asarray(values, dtype=np.float64)
        out = (x - self.min) / (self.max - self.min)
        flagged = bool(np.any((out < 0) | (out > 1)))
        if flagged:
            log.warning("normalize: %d values fall outside the fitted range", int(np.sum((out < 0) | (out > 1))))
        return (out, flagged) if return_flag else out

    def denormalize(self, values):
        return np.asarray(values, dtype=np.float64) * (self.max - self.min) + self.min

    def to_dict(self):
        return {"min": self.min, "max": self.max}


def fit_normalizer(values):
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise DataError("cannot fit a normalizer on empty data")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        raise DataError("cannot fit a normalizer on a constant series")
    return Normalizer(lo, hi)


def normalize(norm, values):
    if norm is None:
        raise DataError("normalize called before a normalizer was fitted")
    return norm.normalize(values)


def denormalize(norm, values):
    if norm is None:
        raise DataError("denormalize called before a normalizer was fitted")
    return norm.denormalize(values)


def segment(series, length=200, stride=None):
    """Non-padded windows ``[i*stride, i*stride + length)``; the trailing remainder is dropped."""
    x = np.asarray(series, dtype=np.float64)
    stride = length if stride is None else stride
    if length < 2 or stride < 1:
        raise ValueError("segment length must be >= 2 and stride >= 1")
    if len(x) < length:
        return np.empty((0, length))
    count = (len(x) - length) // stride + 1
    starts = np.arange(count) * stride
    return np.stack([x[s:s + length] for s in starts])


# correlated random walk -------------------------------------------------------------

@dataclass(frozen=True)
class CrwParams:
    """Log-normal step lengths and von Mises turning angles."""

    mu_log: float = 0.0
    sigma_log: float = 0.5
    kappa: float = 2.0
    phi0: float = 0.0
    n_steps: int = 1000
    dt: float = 1.0

    def __post_init__(self):
        if not self.sigma_log > 0:
            raise DataError("sigma_log must be positive")
        if self.kappa < 0:
            raise DataError("kappa must be non-negative")
        if self.n_steps < 1:
            raise DataError("n_steps must be >= 1")


@dataclass
class CrwTrajectory:
    positions: np.ndarray  # (n+1, 2)
    step_lengths: np.ndarray
    turning_angles: np.ndarray
    headings: np.ndarray
    velocity: VelocitySeries = field(repr=False)


def _open_uniform(rng, n):
    # uniform on the open interval (0, 1) so the normal quantile stays finite
    return (rng.integers(0, 2 ** 53, size=n) + 0.5) / 2.0 ** 53


def crw_generate(params, seed):
    """Simulate a correlated random walk.

    Step lengths are the log-normal inverse CDF applied to uniform latents;
    turning angles are zero-centred von Mises draws (numpy's rejection
    sampler); headings accumulate the turns starting from ``phi0``.
    """
    rng = np.random.default_rng(seed)
    n = params.n_steps
    z = _open_uniform(rng, n)
    steps = np.exp(params.mu_log + params.sigma_log * ndtri(z))
    turns = rng.vonmises(0.0, params.kappa, size=n)
    headings = params.phi0 + np.cumsum(turns)
    increments = np.column_stack([steps * np.cos(headings), steps * np.sin(headings)])
    positions = np.vstack([np.zeros((1, 2)), np.cumsum(increments, axis=0)])
    velocity = VelocitySeries(steps / params.dt, params.dt, "synthetic")
    return CrwTrajectory(positions, steps, turns, headings, velocity)


def crw_dataset(params, n_sequences, length, seed):
    """Normalised CRW velocity segments plus the fitted normalizer."""
    total = n_sequences * length
    traj = crw_generate(CrwParams(params.mu_log, params.sigma_log, params.kappa, params.phi0, total, params.dt), seed)
    norm = fit_normalizer(traj.velocity.values)
    return segment(norm.normalize(traj.velocity.values), length), norm


# sequence files --------------------------------------------------------------------

def write_sequences(path, sequences, header=True):
    """Write one sequence per row with full float round-trip precision."""
    from .io import atomic_write_text

    seqs = np.asarray(sequences, dtype=np.float64)
    if seqs.ndim == 1:
        seqs = seqs.reshape(1, -1) if seqs.size else seqs.reshape(0, 0)
    width = seqs.shape[1]
    lines = []
    if header:
        lines.append(",".join(f"x{i}" for i in range(width)))
    for row in seqs:
        lines.append(",".join(repr(float(v)) for v in row))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_sequences(path):
    """Read a sequence dataset; an optional non-numeric header row is skipped."""
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if lineno == 1:
                    continue
                raise DataError(f"{path}: line {lineno}: non-numeric cell") from None
    if not rows:
        return np.empty((0, 0))
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataError(f"{path}: rows have differing widths {sorted(widths)}")
    return np.asarray(rows)


def write_velocity(path, series):
    from .io import atomic_write_text

    v = series.values if isinstance(series, VelocitySeries) else np.asarray(series, dtype=np.float64)
    dt = series.sample_interval if isinstance(series, VelocitySeries) else 1.0
    lines = ["t_ms,v"] + [f"{repr(float(i * dt))},{repr(float(x))}" for i, x in enumerate(v)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_velocity(path):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header][:2] != ["t_ms", "v"]:
            raise DataError(f"{path}: expected header 't_ms,v'")
        t, v = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t.append(float(row[0]))
                v.append(float(row[1]))
            except (ValueError, IndexError):
                raise DataError(f"{path}: line {lineno}: malformed row") from None
    dt = float(np.median(np.diff(t))) if len(t) > 1 else 1.0
    return VelocitySeries(np.asarray(v), dt, "file")
