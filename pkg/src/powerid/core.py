"""Domain types and persistence for thermal traces and state-space models.

Conventions used throughout the package:

* temperatures are stored in absolute kelvin; numerics operate on
  ambient-relative values T_r = T - ambient_K, converted at the edges
* the discrete model is T_r(k) = A @ T_r(k-1) + B @ P(k) with column
  vectors, so batched code uses X @ A.T on row-stacked samples
* datasets are immutable after construction and validated eagerly
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    MalformedHeader,
    NonFiniteValue,
    NonMonotonicTime,
    TooFewSamples,
)

AMBIENT_K = 298.15
DT_S = 1.0

# trace sources; "synthetic" enables strict balance and spacing checks
SOURCES = ("synthetic", "hardware", "simulator_import")

_DET_MIN = 1e-12  # invertibility floor for B
_BALANCE_RTOL = 1e-6
_DT_RTOL = 1e-9


def _as_matrix(x, name: str, n: int) -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.shape != (n, n):
        raise DimensionMismatch(f"{name} must be {n}x{n}, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteValue(f"{name} contains non-finite entries")
    m = m.copy()
    m.setflags(write=False)
    return m


def spectral_radius(a: np.ndarray) -> float:
    """Largest eigenvalue magnitude of a square matrix."""
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(a, dtype=np.float64)))))


@dataclass(frozen=True)
class ThermalModel:
    """Discrete thermal state-space model over named logical units.

    A couples previous ambient-relative temperatures to current ones,
    B maps per-unit power (W) to temperature rise (K) over one step.
    B must be invertible so power can be recovered from temperature.
    """

    unit_names: tuple[str, ...]
    A: np.ndarray
    B: np.ndarray
    ambient_K: float = AMBIENT_K
    dt_s: float = DT_S
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        names = tuple(str(u) for u in self.unit_names)
        if not names:
            raise DimensionMismatch("model needs at least one unit")
        if len(set(names)) != len(names):
            raise DimensionMismatch("unit names must be unique")
        for u in names:
            if not u or "," in u:
                raise DimensionMismatch(f"bad unit name {u!r}")
        object.__setattr__(self, "unit_names", names)
        n = len(names)
        object.__setattr__(self, "A", _as_matrix(self.A, "A", n))
        object.__setattr__(self, "B", _as_matrix(self.B, "B", n))
        if abs(np.linalg.det(self.B)) <= _DET_MIN:
            raise DimensionMismatch(
                f"B is numerically singular, |det|={abs(np.linalg.det(self.B)):.3e}"
            )
        if not (np.isfinite(self.ambient_K) and self.ambient_K > 0):
            raise DimensionMismatch("ambient_K must be positive and finite")
        if not (np.isfinite(self.dt_s) and self.dt_s > 0):
            raise DimensionMismatch("dt_s must be positive and finite")

    @property
    def n_units(self) -> int:
        return len(self.unit_names)

    @property
    def is_stable(self) -> bool:
        return spectral_radius(self.A) < 1.0


@dataclass(frozen=True)
class TraceSample:
    """One time step: absolute temperatures plus power readings."""

    time_s: float
    temps_K: np.ndarray
    p_total_W: float
    p_true_W: np.ndarray | None = None
    p_est_W: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.temps_K, dtype=np.float64).copy()
        if t.ndim != 1 or t.size == 0:
            raise DimensionMismatch("temps_K must be a non-empty vector")
        if not np.all(np.isfinite(t)):
            raise NonFiniteValue("non-finite temperature")
        if np.any(t <= 0):
            raise NonFiniteValue("absolute temperature must be positive")
        t.setflags(write=False)
        object.__setattr__(self, "temps_K", t)
        if not np.isfinite(self.time_s):
            raise NonFiniteValue("non-finite timestamp")
        if not np.isfinite(self.p_total_W):
            raise NonFiniteValue("non-finite total power")
        for attr in ("p_true_W", "p_est_W"):
            v = getattr(self, attr)
            if v is None:
                continue
            v = np.asarray(v, dtype=np.float64).copy()
            if v.shape != t.shape:
                raise DimensionMismatch(f"{attr} shape {v.shape} != temps {t.shape}")
            if not np.all(np.isfinite(v)):
                raise NonFiniteValue(f"non-finite {attr}")
            v.setflags(write=False)
            object.__setattr__(self, attr, v)

    @property
    def n_units(self) -> int:
        return self.temps_K.size


@dataclass(frozen=True)
class TraceDataset:
    """Ordered trace samples plus optional model hint.

    segments records contiguous runs of original adjacency (lengths
    summing to the sample count). Splitting for cross-validation
    produces multi-segment datasets; consecutive-sample pairs are only
    formed inside a segment, never across the seam.
    """

    samples: tuple[TraceSample, ...]
    source: str = "synthetic"
    model_hint: ThermalModel | None = None
    segments: tuple[int, ...] = ()
    strict_power_balance: bool | None = None
    unit_names: tuple[str, ...] = ()

    def __post_init__(self):
        samples = tuple(self.samples)
        if not samples:
            raise TooFewSamples("dataset has no samples")
        object.__setattr__(self, "samples", samples)
        if self.source not in SOURCES:
            raise DimensionMismatch(f"unknown source {self.source!r}")
        n = samples[0].n_units
        for i, s in enumerate(samples):
            if s.n_units != n:
                raise DimensionMismatch(f"sample {i} has {s.n_units} units, expected {n}")
        if self.model_hint is not None and self.model_hint.n_units != n:
            raise DimensionMismatch("model hint unit count does not match samples")
        names = tuple(self.unit_names)
        if not names:
            names = (self.model_hint.unit_names if self.model_hint is not None
                     else tuple(f"u{i}" for i in range(n)))
        if len(names) != n:
            raise DimensionMismatch(f"{len(names)} unit names for {n} units")
        if self.model_hint is not None and names != self.model_hint.unit_names:
            raise DimensionMismatch("unit names disagree with the model hint")
        object.__setattr__(self, "unit_names", names)
        segs = tuple(self.segments) if self.segments else (len(samples),)
        if any(L <= 0 for L in segs) or sum(segs) != len(samples):
            raise DimensionMismatch(f"segments {segs} do not partition {len(samples)} samples")
        object.__setattr__(self, "segments", segs)

        times = np.array([s.time_s for s in samples])
        if np.any(np.diff(times) <= 0):
            bad = int(np.argmax(np.diff(times) <= 0)) + 1
            raise NonMonotonicTime(f"time does not increase at sample {bad}")

        strict = self.strict_power_balance
        if strict is None:
            strict = self.source == "synthetic"
            object.__setattr__(self, "strict_power_balance", strict)
        if strict:
            self._check_synthetic(times)

    def _check_synthetic(self, times: np.ndarray) -> None:
        dt_ref = self.model_hint.dt_s if self.model_hint is not None else None
        start = 0
        for length in self.segments:
            seg = times[start : start + length]
            if length > 1:
                deltas = np.diff(seg)
                ref = dt_ref if dt_ref is not None else deltas[0]
                if np.any(np.abs(deltas - ref) > _DT_RTOL * ref):
                    raise NonMonotonicTime(
                        f"non-uniform sampling in segment starting at index {start}"
                    )
            start += length
        for i, s in enumerate(self.samples):
            if s.p_true_W is not None:
                gap = abs(float(np.sum(s.p_true_W)) - s.p_total_W)
                if gap > _BALANCE_RTOL * max(1.0, abs(s.p_total_W)):
                    raise DimensionMismatch(
                        f"per-unit power does not balance total at sample {i} (gap {gap:.3e} W)"
                    )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n_units(self) -> int:
        return self.samples[0].n_units

    @property
    def has_ground_truth(self) -> bool:
        return all(s.p_true_W is not None for s in self.samples)

    def times(self) -> np.ndarray:
        return np.array([s.time_s for s in self.samples])

    def temps_K(self) -> np.ndarray:
        return np.stack([s.temps_K for s in self.samples])

    def p_total_W(self) -> np.ndarray:
        return np.array([s.p_total_W for s in self.samples])

    def p_true_W(self) -> np.ndarray:
        if not self.has_ground_truth:
            raise DimensionMismatch("dataset has no complete ground-truth power")
        return np.stack([s.p_true_W for s in self.samples])

    def segment_bounds(self) -> list[tuple[int, int]]:
        """Half-open (start, end) index ranges of the contiguous segments."""
        out, start = [], 0
        for length in self.segments:
            out.append((start, start + length))
            start += length
        return out

    def pair_indices(self) -> list[tuple[int, int]]:
        """(prev, curr) index pairs of adjacent samples within segments."""
        pairs = []
        for a, b in self.segment_bounds():
            pairs.extend((i, i + 1) for i in range(a, b - 1))
        return pairs

    def iter_segments(self) -> Iterator[tuple[int, int]]:
        return iter(self.segment_bounds())


def replace_samples(d: TraceDataset, samples: Sequence[TraceSample],
                    segments: tuple[int, ...] = ()) -> TraceDataset:
    """New dataset with the same provenance but different samples."""
    return TraceDataset(
        samples=tuple(samples),
        source=d.source,
        model_hint=d.model_hint,
        segments=segments,
        strict_power_balance=d.strict_power_balance,
        unit_names=d.unit_names,
    )


# ---- dataset splitting ----


def split_chronological(d: TraceDataset, train_fraction: float = 0.8
                        ) -> tuple[TraceDataset, TraceDataset]:
    """Earlier samples for training, the remainder for testing."""
    if not 0.0 < train_fraction < 1.0:
        raise DimensionMismatch(f"train_fraction must be in (0,1), got {train_fraction}")
    if len(d) < 2:
        raise TooFewSamples("need at least 2 samples to split")
    n_train = min(max(int(train_fraction * len(d)), 1), len(d) - 1)
    return _take(d, [(0, n_train)]), _take(d, [(n_train, len(d))])


def split_k_fold(d: TraceDataset, k: int = 10) -> list[tuple[TraceDataset, TraceDataset]]:
    """k contiguous folds; every sample lands in exactly one test fold.

    Training partitions keep the surrounding blocks as separate
    segments so no training pair spans the excised fold.
    """
    if k < 2:
        raise DimensionMismatch(f"k must be >= 2, got {k}")
    if len(d) < k + 1:
        raise TooFewSamples(f"need at least {k + 1} samples for {k} folds, have {len(d)}")
    n = len(d)
    base, extra = divmod(n, k)
    folds, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append((start, start + size))
        start += size
    out = []
    for a, b in folds:
        train_ranges = [r for r in ((0, a), (b, n)) if r[1] > r[0]]
        out.append((_take(d, train_ranges), _take(d, [(a, b)])))
    return out


def _take(d: TraceDataset, ranges: list[tuple[int, int]]) -> TraceDataset:
    samples: list[TraceSample] = []
    segments: list[int] = []
    for a, b in ranges:
        samples.extend(d.samples[a:b])
        segments.append(b - a)
    return replace_samples(d, samples, tuple(segments))


# ---- trace CSV persistence ----
# Layout: time_s, T_<unit>..., P_total, then optional P_<unit>... and
# Pest_<unit>... groups. Optional groups may be empty on a given row
# (all cells of the group at once), e.g. the first sample after a
# physics-inversion pass has no estimate.


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_trace_csv(d: TraceDataset, path: str | Path) -> None:
    """Write a dataset; numbers keep full f64 round-trip precision."""
    names = d.unit_names
    has_true = any(s.p_true_W is not None for s in d.samples)
    has_est = any(s.p_est_W is not None for s in d.samples)
    header = ["time_s"] + [f"T_{u}" for u in names] + ["P_total"]
    if has_true:
        header += [f"P_{u}" for u in names]
    if has_est:
        header += [f"Pest_{u}" for u in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in d.samples:
            row = [_fmt(s.time_s)] + [_fmt(t) for t in s.temps_K] + [_fmt(s.p_total_W)]
            if has_true:
                row += [_fmt(p) for p in s.p_true_W] if s.p_true_W is not None else [""] * len(names)
            if has_est:
                row += [_fmt(p) for p in s.p_est_W] if s.p_est_W is not None else [""] * len(names)
            w.writerow(row)


def _parse_header(header: list[str], schema: Mapping[str, str] | None
                  ) -> tuple[list[str], bool, bool]:
    if schema:
        rename = {v: k for k, v in schema.items()}
        header = [rename.get(h, h) for h in header]
    if not header or header[0] != "time_s":
        raise MalformedHeader(f"first column must be time_s, got {header[:1]}")
    i = 1
    units = []
    while i < len(header) and header[i].startswith("T_"):
        units.append(header[i][2:])
        i += 1
    if not units:
        raise MalformedHeader("no T_<unit> temperature columns found")
    if i >= len(header) or header[i] != "P_total":
        raise MalformedHeader("P_total column must follow the temperature block")
    i += 1
    has_true = has_est = False
    if i < len(header) and header[i].startswith("P_") and not header[i].startswith("Pest_"):
        expect = [f"P_{u}" for u in units]
        if header[i : i + len(units)] != expect:
            raise MalformedHeader("P_<unit> columns must mirror the temperature units in order")
        has_true = True
        i += len(units)
    if i < len(header):
        expect = [f"Pest_{u}" for u in units]
        if header[i : i + len(units)] != expect:
            raise MalformedHeader("Pest_<unit> columns must mirror the temperature units in order")
        has_est = True
        i += len(units)
    if i != len(header):
        raise MalformedHeader(f"unrecognised trailing columns: {header[i:]}")
    return units, has_true, has_est


def load_trace_csv(path: str | Path, schema: Mapping[str, str] | None = None,
                   source: str = "synthetic",
                   model_hint: ThermalModel | None = None) -> TraceDataset:
    """Parse a trace CSV; raises MalformedHeader / NonFiniteValue / NonMonotonicTime."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedHeader("empty file") from None
        units, has_true, has_est = _parse_header([h.strip() for h in header], schema)
        n = len(units)
        samples = []
        for ridx, row in enumerate(reader):
            if not row:
                continue
            want = 2 + n + (n if has_true else 0) + (n if has_est else 0)
            if len(row) != want:
                raise MalformedHeader(f"row {ridx} has {len(row)} cells, expected {want}")

            def num(cell: str, what: str) -> float:
                try:
                    v = float(cell)
                except ValueError:
                    raise NonFiniteValue(f"unparseable {what} at row {ridx}: {cell!r}", row=ridx)
                if not np.isfinite(v):
                    raise NonFiniteValue(f"non-finite {what} at row {ridx}", row=ridx)
                return v

            def group(cells: list[str], what: str) -> np.ndarray | None:
                blank = [c.strip() == "" for c in cells]
                if all(blank):
                    return None
                if any(blank):
                    raise NonFiniteValue(f"partially empty {what} group at row {ridx}", row=ridx)
                return np.array([num(c, what) for c in cells])

            time = num(row[0], "time")
            temps = np.array([num(c, "temperature") for c in row[1 : 1 + n]])
            p_total = num(row[1 + n], "total power")
            pos = 2 + n
            p_true = group(row[pos : pos + n], "per-unit power") if has_true else None
            if has_true:
                pos += n
            p_est = group(row[pos : pos + n], "power estimate") if has_est else None
            try:
                samples.append(TraceSample(time, temps, p_total, p_true, p_est))
            except NonFiniteValue as e:
                raise NonFiniteValue(f"{e} at row {ridx}", row=ridx) from None
    if model_hint is not None and model_hint.unit_names != tuple(units):
        raise DimensionMismatch("model hint units do not match trace columns")
    return TraceDataset(tuple(samples), source=source, model_hint=model_hint,
                        unit_names=tuple(units))


# ---- model JSON persistence ----


def save_model_json(model: ThermalModel, path: str | Path) -> None:
    doc = {
        "unit_names": list(model.unit_names),
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "ambient_K": model.ambient_K,
        "dt_s": model.dt_s,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model_json(path: str | Path) -> ThermalModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        return ThermalModel(
            unit_names=tuple(doc["unit_names"]),
            A=np.array(doc["A"], dtype=np.float64),
            B=np.array(doc["B"], dtype=np.float64),
            ambient_K=float(doc["ambient_K"]),
            dt_s=float(doc["dt_s"]),
        )
    except KeyError as e:
        raise MalformedHeader(f"model json missing key {e}") from None
