"""Data sources: seeded synthetic phase streams, CSV ingestion, running standardization."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from ._validation import ConfigError, InputError, as_vector
from .sonar import NORMAL, OUTLIER

__all__ = [
    "PhaseSpec",
    "StreamEvent",
    "RunningStandardizer",
    "PRESETS",
    "generate",
    "generate_arrays",
    "preset",
    "ingest_csv",
    "read_csv_arrays",
    "write_csv",
    "standardize",
    "DataError",
]

GAUSSIAN_MIXTURE = "gaussian_mixture"
TRUNCATED_DISK = "truncated_disk_gaussian"
PRESETS = ("stationary2", "mild4", "transfer2", "adversarial10", "hemisphere2")
METADATA_COLUMNS = ("label", "phase_id", "index")
DEFAULT_LABEL_MAP = {
    "0": NORMAL, "0.0": NORMAL, "normal": NORMAL, "false": NORMAL,
    "1": OUTLIER, "1.0": OUTLIER, "outlier": OUTLIER, "anomaly": OUTLIER, "true": OUTLIER,
}


class DataError(InputError):
    """Unreadable or malformed stream data; carries the offending row index."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class PhaseSpec:
    """One stationary phase.

    ``gaussian_mixture`` picks one of ``centers`` uniformly, then adds
    isotropic noise with standard deviation ``std``. ``truncated_disk_gaussian``
    draws ``N(centers[0], std^2 I)`` conditioned on the unit disk.
    """

    length: int
    centers: tuple
    std: float = 0.3
    kind: str = GAUSSIAN_MIXTURE
    seed: int = 0

    def __post_init__(self):
        if int(self.length) != self.length or self.length < 1:
            raise ConfigError(f"phase length must be a positive integer, got {self.length!r}")
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if centers.size == 0:
            raise ConfigError("phase needs at least one center")
        object.__setattr__(self, "centers", tuple(map(tuple, centers)))
        if self.kind not in (GAUSSIAN_MIXTURE, TRUNCATED_DISK):
            raise ConfigError(f"unknown phase distribution {self.kind!r}")
        if self.kind == GAUSSIAN_MIXTURE and not self.std >= 0:
            raise ConfigError(f"std must be non-negative, got {self.std!r}")
        if self.kind == TRUNCATED_DISK and not self.std > 0:
            raise ConfigError(f"std must be positive for truncated sampling, got {self.std!r}")

    @property
    def dim(self):
        return len(self.centers[0])

    def sample(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        centers = np.asarray(self.centers)
        if self.kind == GAUSSIAN_MIXTURE:
            idx = rng.integers(len(centers), size=self.length)
            return centers[idx] + self.std * rng.standard_normal((self.length, self.dim))
        out = np.empty((0, self.dim))
        while out.shape[0] < self.length:
            need = self.length - out.shape[0]
            draw = centers[0] + self.std * rng.standard_normal((2 * need + 16, self.dim))
            out = np.vstack([out, draw[np.einsum("ij,ij->i", draw, draw) <= 1.0]])
        return out[: self.length]


@dataclass(frozen=True)
class StreamEvent:
    x_raw: np.ndarray = field(repr=False)
    label: str | None = None
    phase_id: int | None = None
    index: int = 0


def generate_arrays(phases: Sequence[PhaseSpec]):
    """Concatenated samples and per-row phase ids."""
    if not phases:
        raise ConfigError("need at least one phase")
    dims = {p.dim for p in phases}
    if len(dims) != 1:
        raise ConfigError(f"phases disagree on dimension: {sorted(dims)}")
    X = np.vstack([p.sample() for p in phases])
    phase_ids = np.repeat(np.arange(len(phases)), [p.length for p in phases])
    return X, phase_ids


def generate(phases: Sequence[PhaseSpec]) -> Iterator[StreamEvent]:
    X, phase_ids = generate_arrays(phases)
    for i, (x, pid) in enumerate(zip(X, phase_ids)):
        yield StreamEvent(x_raw=x, label=None, phase_id=int(pid), index=i)


def _phase_seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def preset(name, seed=0, scale=1.0) -> list[PhaseSpec]:
    """Phase lists for the synthetic experiments.

    ``scale`` multiplies every phase length (use < 1 for quick runs).
    """
    def n(length):
        return max(1, int(round(length * scale)))

    if name == "stationary2":
        specs = [((n(20000)), [(-2, 2), (2, -2)], 0.3)]
    elif name == "mild4":
        specs = [
            (n(10000), [(-2, 2), (2, -2)], 0.3),
            (n(10000), [(-2, -2), (2, 2)], 0.3),
            (n(10000), [(2, 2), (2, -2)], 0.3),
            (n(10000), [(-2, 2), (-2, -2)], 0.3),
        ]
    elif name == "transfer2":
        specs = [
            (n(10000), [(-2, -2), (2, 2)], 0.6),
            (n(10000), [(-2, -2), (2, 2)], 0.3),
        ]
    elif name == "adversarial10":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 10]))
        specs = [(n(10000), rng.uniform(-5, 5, size=(2, 2)), 0.3) for _ in range(10)]
    elif name == "hemisphere2":
        seeds = _phase_seeds(seed, 2)
        return [
            PhaseSpec(n(5000), [(0.0, 0.0)], 1.0, TRUNCATED_DISK, seeds[0]),
            PhaseSpec(n(5000), [(0.75, 0.0)], 1.0, TRUNCATED_DISK, seeds[1]),
        ]
    else:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}")
    seeds = _phase_seeds(seed, len(specs))
    return [PhaseSpec(length, centers, std, GAUSSIAN_MIXTURE, s)
            for (length, centers, std), s in zip(specs, seeds)]


# -- running standardization -------------------------------------------------

@dataclass(frozen=True)
class RunningStandardizer:
    """Welford running mean / sum of squared deviations.

    ``inclusive=True`` updates with the incoming point before transforming it.
    """

    count: int = 0
    mean: np.ndarray | None = field(default=None, repr=False)
    m2: np.ndarray | None = field(default=None, repr=False)
    var_floor: float = 1e-12
    inclusive: bool = True

    @property
    def variance(self):
        if self.count == 0:
            return None
        return self.m2 / self.count

    def update(self, x):
        if self.mean is None:
            return replace(self, count=1, mean=x.copy(), m2=np.zeros_like(x))
        count = self.count + 1
        delta = x - self.mean
        mean = self.mean + delta / count
        m2 = self.m2 + delta * (x - mean)
        return replace(self, count=count, mean=mean, m2=np.maximum(m2, 0.0))

    def apply(self, x):
        if self.count == 0:
            return np.zeros_like(x)
        std = np.sqrt(np.maximum(self.m2 / self.count, self.var_floor))
        return (x - self.mean) / std


def standardize(std: RunningStandardizer, x_raw):
    """Returns ``(updated_standardizer, standardized_x)``."""
    dim = None if std.mean is None else std.mean.shape[0]
    x = as_vector(x_raw, dim, name="x_raw")
    if std.inclusive:
        std = std.update(x)
        return std, std.apply(x)
    out = std.apply(x)
    return std.update(x), out


def standardize_array(X, var_floor=1e-12, inclusive=True):
    state = RunningStandardizer(var_floor=var_floor, inclusive=inclusive)
    out = np.empty_like(np.asarray(X, dtype=float))
    for i, x in enumerate(np.asarray(X, dtype=float)):
        state, out[i] = standardize(state, x)
    return out


# -- CSV ---------------------------------------------------------------------

def _resolve(header, column):
    if isinstance(column, int) or (isinstance(column, str) and column.isdigit() and column not in header):
        idx = int(column)
        if not 0 <= idx < len(header):
            raise DataError(f"column index {idx} out of range for {len(header)} columns", 0)
        return idx
    try:
        return header.index(column)
    except ValueError:
        raise DataError(f"column {column!r} not in header {header}", 0) from None


def ingest_csv(path, feature_columns=None, label_column=None, *, delimiter=",",
               label_map=None, phase_column=None, exclude_columns=()) -> Iterator[StreamEvent]:
    """Stream rows of a headed CSV file in file order.

    ``feature_columns`` defaults to every column except the label/phase ones,
    those named in ``exclude_columns`` and the metadata columns written by
    :func:`write_csv` (``label``, ``phase_id``, ``index``).
    Row indices in errors count the header as row 0.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    mapping = {**DEFAULT_LABEL_MAP, **{str(k).lower(): v for k, v in (label_map or {}).items()}}
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            return
        header = [h.strip() for h in header]
        label_idx = None if label_column is None else _resolve(header, label_column)
        phase_idx = None if phase_column is None else _resolve(header, phase_column)
        if feature_columns is None:
            skip = {label_idx, phase_idx} | {_resolve(header, c) for c in exclude_columns}
            skip |= {i for i, h in enumerate(header) if h in METADATA_COLUMNS}
            feat_idx = [i for i in range(len(header)) if i not in skip]
        else:
            feat_idx = [_resolve(header, c) for c in feature_columns]
        index = 0
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", row_no)
            try:
                x = np.array([float(row[i]) for i in feat_idx])
            except ValueError as exc:
                raise DataError(f"non-numeric feature ({exc})", row_no) from None
            label = None
            if label_idx is not None:
                raw = row[label_idx].strip().lower()
                if not raw:
                    label = None
                elif raw not in mapping:
                    raise DataError(f"unmapped label value {row[label_idx]!r}", row_no)
                else:
                    label = mapping[raw]
            phase = None
            if phase_idx is not None and row[phase_idx].strip():
                phase = int(float(row[phase_idx]))
            yield StreamEvent(x_raw=x, label=label, phase_id=phase, index=index)
            index += 1


def read_csv_arrays(path, feature_columns=None, label_column=None, **kwargs):
    """Eager variant of :func:`ingest_csv`: ``(X, labels, phase_ids)``."""
    events = list(ingest_csv(path, feature_columns, label_column, **kwargs))
    if not events:
        return np.empty((0, 0)), [], []
    X = np.vstack([e.x_raw for e in events])
    return X, [e.label for e in events], [e.phase_id for e in events]


def write_csv(events: Iterable[StreamEvent], path, delimiter=","):
    """Write events with columns ``x0..x{D-1}, label, phase_id, index``."""
    events = iter(events)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        first = next(events, None)
        if first is None:
            writer.writerow(["x0", "label", "phase_id", "index"])
            return
        dim = len(first.x_raw)
        writer.writerow([f"x{i}" for i in range(dim)] + ["label", "phase_id", "index"])
        for ev in [first, *events]:
            label = "" if ev.label is None else ("1" if ev.label == OUTLIER else "0")
            phase = "" if ev.phase_id is None else ev.phase_id
            writer.writerow([repr(float(v)) for v in ev.x_raw] + [label, phase, ev.index])
