"""Study design, file ingestion, and variance-propagating transforms.

The study is defined over L variables, each observed on its own time window
inside 1..T, on areal units connected by an adjacency graph. Prediction
locations (variable, time, unit) come from the covariate file; observed
locations are a subset of them and carry a response value with a known
measurement-error variance.

All matrices use a fixed row ordering: variables ascending, then units by
their first-seen dense index. Ingestion is pure; every structure here is
immutable after construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MissingInputError, ValidationError


@dataclass(frozen=True)
class StudyDesign:
    """Dimensions of the study: variable count, time windows, covariate and basis rank."""

    num_variables: int
    windows: tuple[tuple[int, int], ...]  # per variable: (first, last) time, 1-based
    p: int
    r: int

    def __post_init__(self):
        if self.num_variables < 1 or len(self.windows) != self.num_variables:
            raise ValidationError("need one (first, last) window per variable")
        for ell, (lo, hi) in enumerate(self.windows, start=1):
            if lo > hi:
                raise ValidationError(f"variable {ell}: window {lo}..{hi} is empty")
        if min(lo for lo, _ in self.windows) != 1:
            raise ValidationError("earliest window must start at time 1")
        if self.p < 1:
            raise ValidationError("covariate dimension p must be >= 1")
        if self.r < 1:
            raise ValidationError("basis rank r must be >= 1")

    @property
    def T(self) -> int:
        return max(hi for _, hi in self.windows)

    def active_variables(self, t: int) -> list[int]:
        """1-based variables whose window contains t."""
        return [
            ell
            for ell, (lo, hi) in enumerate(self.windows, start=1)
            if lo <= t <= hi
        ]

    def in_window(self, variable: int, t: int) -> bool:
        if not 1 <= variable <= self.num_variables:
            return False
        lo, hi = self.windows[variable - 1]
        return lo <= t <= hi


@dataclass(frozen=True)
class ArealGraph:
    """Areal units and their symmetric adjacency, with per-time active subsets."""

    units: tuple[str, ...]
    edges: frozenset[tuple[int, int]]  # (i, j) with i < j, dense unit indices
    per_time_active: dict[int, tuple[int, ...]] | None = None

    def __post_init__(self):
        n = len(self.units)
        if len(set(self.units)) != n:
            raise ValidationError("duplicate unit identifiers")
        for i, j in self.edges:
            if i == j:
                raise ValidationError(f"self-loop on unit {self.units[i]!r}")
            if not (0 <= i < n and 0 <= j < n):
                raise ValidationError("edge endpoint is not a declared unit")
            if i > j:
                raise ValidationError("edges must be stored as (i, j) with i < j")

    def unit_index(self, unit: str) -> int:
        try:
            return self.units.index(unit)
        except ValueError:
            raise ValidationError(f"unknown unit {unit!r}") from None

    def active_units(self, t: int) -> tuple[int, ...]:
        if self.per_time_active is None:
            return tuple(range(len(self.units)))
        return self.per_time_active.get(t, tuple(range(len(self.units))))

    def adjacency(self, unit_indices: tuple[int, ...] | None = None) -> np.ndarray:
        """0/1 symmetric adjacency over the given units (default: all)."""
        if unit_indices is None:
            unit_indices = tuple(range(len(self.units)))
        pos = {u: k for k, u in enumerate(unit_indices)}
        a = np.zeros((len(unit_indices), len(unit_indices)))
        for i, j in self.edges:
            if i in pos and j in pos:
                a[pos[i], pos[j]] = 1.0
                a[pos[j], pos[i]] = 1.0
        return a


@dataclass(frozen=True)
class Observation:
    variable: int
    time: int
    unit: str
    z: float
    v: float


@dataclass(frozen=True)
class TransformSpec:
    """Per-variable link applied to raw survey estimates and their variances."""

    kind: str  # identity | logit | log

    KINDS = ("identity", "logit", "log")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValidationError(f"unknown transform {self.kind!r}")

    def inverse(self, z: float | np.ndarray):
        if self.kind == "identity":
            return z
        if self.kind == "logit":
            return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=float)))
        return np.exp(z)


def apply_transform(
    raw_value: float, raw_variance: float, spec: TransformSpec
) -> tuple[float, float]:
    """Map a raw estimate and variance to the model scale.

    First-order (delta method) variance propagation:
    logit: z = log(w/(1-w)), v = raw_variance / (w(1-w))^2
    log:   z = log(w),       v = raw_variance / w^2
    """
    w = float(raw_value)
    s = float(raw_variance)
    if spec.kind == "identity":
        return w, s
    if spec.kind == "logit":
        if not 0.0 < w < 1.0:
            raise ValidationError(f"logit transform needs a value in (0,1), got {w}")
        return math.log(w / (1.0 - w)), s / (w * (1.0 - w)) ** 2
    if not w > 0.0:
        raise ValidationError(f"log transform needs a positive value, got {w}")
    return math.log(w), s / w**2


@dataclass(frozen=True)
class ObservationSet:
    """Validated observations plus per-time counts."""

    design: StudyDesign
    observations: tuple[Observation, ...]

    @property
    def n(self) -> int:
        return len(self.observations)

    def n_t(self, t: int) -> int:
        return sum(1 for o in self.observations if o.time == t)

    def count_by_time(self) -> dict[int, int]:
        out = {t: 0 for t in range(1, self.design.T + 1)}
        for o in self.observations:
            out[o.time] += 1
        return out

    def keys(self) -> set[tuple[int, int, str]]:
        return {(o.variable, o.time, o.unit) for o in self.observations}


def _open_csv(path: str | Path, expected_header: list[str]) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != expected_header:
            raise ValidationError(
                f"{path}: expected header {','.join(expected_header)}, "
                f"got {','.join(reader.fieldnames or [])}"
            )
        return list(reader)


def load_observations(
    obs_file: str | Path,
    design: StudyDesign,
    transforms: dict[int, TransformSpec] | None = None,
    design_set: "DesignSet | None" = None,
) -> ObservationSet:
    """Read and validate observations.csv (header variable,time,unit,z,v).

    When ``transforms`` is given, each row's value/variance pair is pushed
    through the declared per-variable transform so the returned set is on the
    model scale. When ``design_set`` is given, every observed location must
    be a prediction location.
    """
    rows = _open_csv(obs_file, ["variable", "time", "unit", "z", "v"])
    seen: set[tuple[int, int, str]] = set()
    obs: list[Observation] = []
    for k, row in enumerate(rows, start=2):
        try:
            ell = int(row["variable"])
            t = int(row["time"])
        except ValueError as exc:
            raise ValidationError(f"{obs_file}:{k}: bad index ({exc})") from None
        unit = row["unit"].strip()
        z = float(row["z"])
        v = float(row["v"])
        if not design.in_window(ell, t):
            raise ValidationError(
                f"{obs_file}:{k}: ({ell},{t}) outside the window for variable {ell}"
            )
        key = (ell, t, unit)
        if key in seen:
            raise ValidationError(f"{obs_file}:{k}: duplicate observation {key}")
        seen.add(key)
        if transforms is not None:
            z, v = apply_transform(z, v, transforms.get(ell, TransformSpec("identity")))
        if not v > 0.0:
            raise ValidationError(f"{obs_file}:{k}: nonpositive variance for {key}")
        if not (np.isfinite(z) and np.isfinite(v)):
            raise ValidationError(f"{obs_file}:{k}: non-finite value for {key}")
        if design_set is not None and key not in design_set.row_lookup:
            raise ValidationError(
                f"{obs_file}:{k}: {key} is not a prediction location "
                "(unknown unit or missing covariate row)"
            )
        obs.append(Observation(ell, t, unit, z, v))
    return ObservationSet(design, tuple(obs))


def build_adjacency(
    edge_file: str | Path,
    units: list[str],
    per_time_active: dict[int, tuple[int, ...]] | None = None,
) -> ArealGraph:
    """Read edges.csv (header unit_a,unit_b) into a symmetric, irreflexive graph."""
    index = {u: i for i, u in enumerate(units)}
    if len(index) != len(units):
        raise ValidationError("duplicate unit identifiers")
    rows = _open_csv(edge_file, ["unit_a", "unit_b"])
    edges: set[tuple[int, int]] = set()
    for k, row in enumerate(rows, start=2):
        a, b = row["unit_a"].strip(), row["unit_b"].strip()
        for u in (a, b):
            if u not in index:
                raise ValidationError(f"{edge_file}:{k}: unknown unit {u!r}")
        if a == b:
            raise ValidationError(f"{edge_file}:{k}: self-loop on unit {a!r}")
        i, j = sorted((index[a], index[b]))
        edges.add((i, j))
    return ArealGraph(tuple(units), frozenset(edges), per_time_active)


@dataclass(frozen=True)
class DesignSet:
    """Stacked per-time design matrices and the (variable, unit) row layout.

    ``layout[t]`` lists the prediction rows at time t as (variable, unit
    index) pairs in the canonical order; ``matrices[t]`` is the N_t x p
    covariate matrix over those rows.
    """

    design: StudyDesign
    graph: ArealGraph
    layout: dict[int, tuple[tuple[int, int], ...]]
    matrices: dict[int, np.ndarray]
    row_lookup: dict[tuple[int, int, str], int] = field(repr=False, default_factory=dict)

    def N_t(self, t: int) -> int:
        return len(self.layout[t])

    def prediction_units(self, variable: int, t: int) -> tuple[int, ...]:
        return tuple(u for ell, u in self.layout[t] if ell == variable)

    def stacked_adjacency(self, t: int) -> np.ndarray:
        """Block-diagonal N_t x N_t adjacency over the (variable, unit) rows."""
        n = self.N_t(t)
        a = np.zeros((n, n))
        offset = 0
        for ell in self.design.active_variables(t):
            units = self.prediction_units(ell, t)
            block = self.graph.adjacency(units)
            m = len(units)
            a[offset : offset + m, offset : offset + m] = block
            offset += m
        return a

    def stacked_car_precision(self, t: int) -> np.ndarray:
        a = self.stacked_adjacency(t)
        return np.diag(a.sum(axis=1)) - a


@dataclass(frozen=True)
class AlignedData:
    """Per-time observation vectors aligned to the canonical prediction rows.

    ``obs_idx[t]`` indexes the time-t prediction rows that are observed;
    ``z[t]`` and ``v[t]`` hold the response and its known variance in the
    same order.
    """

    obs_idx: dict[int, np.ndarray]
    z: dict[int, np.ndarray]
    v: dict[int, np.ndarray]

    def n_t(self, t: int) -> int:
        return len(self.obs_idx[t])


def align_observations(design_set: DesignSet, obs_set: ObservationSet) -> AlignedData:
    """Sort observations into canonical per-time row order of the design."""
    design = design_set.design
    by_cell = {}
    for o in obs_set.observations:
        key = (o.variable, o.time, o.unit)
        if key not in design_set.row_lookup:
            raise ValidationError(
                f"observation {key} is not a prediction location"
            )
        by_cell[key] = o
    obs_idx: dict[int, np.ndarray] = {}
    z: dict[int, np.ndarray] = {}
    v: dict[int, np.ndarray] = {}
    for t in range(1, design.T + 1):
        idx, zz, vv = [], [], []
        for pos, (ell, u) in enumerate(design_set.layout[t]):
            o = by_cell.get((ell, t, design_set.graph.units[u]))
            if o is not None:
                idx.append(pos)
                zz.append(o.z)
                vv.append(o.v)
        obs_idx[t] = np.asarray(idx, dtype=int)
        z[t] = np.asarray(zz)
        v[t] = np.asarray(vv)
    return AlignedData(obs_idx, z, v)


def scan_units(covariate_file: str | Path, p: int) -> list[str]:
    """Unit identifiers from the covariate file in first-seen order."""
    header = ["variable", "time", "unit"] + [f"x{j}" for j in range(1, p + 1)]
    rows = _open_csv(covariate_file, header)
    seen: dict[str, None] = {}
    for row in rows:
        seen.setdefault(row["unit"].strip(), None)
    if not seen:
        raise ValidationError(f"{covariate_file}: no covariate rows")
    return list(seen)


def _rank(mat: np.ndarray) -> int:
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size == 0:
        return 0
    return int(np.sum(s > mat.shape[0] * np.finfo(float).eps * s[0]))


def assemble_design(
    covariate_file: str | Path, design: StudyDesign, graph: ArealGraph
) -> DesignSet:
    """Read covariates.csv and build the stacked X_t with rank and intercept checks.

    The covariate file defines the prediction locations: one row per
    (variable, time, unit) with p covariate values. Every X_t must have full
    column rank and contain an exact-ones intercept column.
    """
    header = ["variable", "time", "unit"] + [f"x{j}" for j in range(1, design.p + 1)]
    rows = _open_csv(covariate_file, header)
    unit_index = {u: i for i, u in enumerate(graph.units)}
    per_cell: dict[tuple[int, int, str], np.ndarray] = {}
    units_at: dict[tuple[int, int], list[int]] = {}
    for k, row in enumerate(rows, start=2):
        ell = int(row["variable"])
        t = int(row["time"])
        unit = row["unit"].strip()
        if unit not in unit_index:
            raise ValidationError(f"{covariate_file}:{k}: unknown unit {unit!r}")
        if not design.in_window(ell, t):
            raise ValidationError(
                f"{covariate_file}:{k}: ({ell},{t}) outside the window for variable {ell}"
            )
        key = (ell, t, unit)
        if key in per_cell:
            raise ValidationError(f"{covariate_file}:{k}: duplicate covariate row {key}")
        per_cell[key] = np.array([float(row[f"x{j}"]) for j in range(1, design.p + 1)])
        units_at.setdefault((ell, t), []).append(unit_index[unit])

    layout: dict[int, tuple[tuple[int, int], ...]] = {}
    matrices: dict[int, np.ndarray] = {}
    row_lookup: dict[tuple[int, int, str], int] = {}
    for t in range(1, design.T + 1):
        rows_t: list[tuple[int, int]] = []
        for ell in design.active_variables(t):
            units_here = sorted(units_at.get((ell, t), []))
            if not units_here:
                raise ValidationError(
                    f"missing covariate rows for variable {ell} at t={t} (inside its window)"
                )
            rows_t.extend((ell, u) for u in units_here)
        layout[t] = tuple(rows_t)
        x_t = np.vstack(
            [per_cell[(ell, t, graph.units[u])] for ell, u in rows_t]
        )
        if _rank(x_t) < design.p:
            raise ValidationError(f"design matrix X_t is rank-deficient at t={t}")
        if not np.any(np.all(x_t == 1.0, axis=0)):
            raise ValidationError(f"design matrix X_t at t={t} has no exact-ones intercept column")
        matrices[t] = x_t
        for pos, (ell, u) in enumerate(rows_t):
            row_lookup[(ell, t, graph.units[u])] = pos

    min_capacity = min(len(layout[t]) - design.p for t in layout)
    if design.r > min_capacity:
        raise ValidationError(
            f"basis rank r={design.r} exceeds min over t of (N_t - p) = {min_capacity}"
        )
    return DesignSet(design, graph, layout, matrices, row_lookup)
