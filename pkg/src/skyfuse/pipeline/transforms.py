"""Replication, normalization, fusion and stratified splitting."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import List, Sequence, Tuple, TypeVar

import networkx as nx
import numpy as np

from .. import CLASS_NAMES
from ..errors import ContractError, ParameterError, SplitError
from ..rng import shuffle_indices, stage_seed

T = TypeVar("T")

ZSCORE_EPS = 1e-8


def frame_rate_reduce(frames):
    """Keep frames 0, 2, 4, ... (30 FPS -> 15 FPS)."""
    return frames[::2]


def per_label_cap(records: Sequence, cap: int = 10) -> list:
    """Keep at most ``cap`` video records per (modality, label), preserving order."""
    if cap < 0:
        raise ParameterError("cap must be non-negative")
    seen: Counter = Counter()
    kept = []
    for r in records:
        if not r.modality.startswith("video"):
            kept.append(r)
            continue
        key = (r.modality, r.label)
        if seen[key] < cap:
            seen[key] += 1
            kept.append(r)
    return kept


def cyclic_replicate(samples: Sequence[T], target: int) -> List[T]:
    """``out[i] = samples[i % N]`` for i < target; never subsamples."""
    n = len(samples)
    if n < 1:
        raise ParameterError("cannot replicate an empty sample list")
    if target < n:
        raise ParameterError(f"replication target {target} is below the sample count {n}")
    return [samples[i % n] for i in range(target)]


@dataclass(frozen=True)
class NormalizationStats:
    modality: str
    mu: float
    sigma: float


def zscore_fit_apply(matrices, modality: str = "") -> Tuple[np.ndarray, NormalizationStats]:
    """Fit one mean/std over every element of a modality and standardize.

    The population standard deviation is used and floored at 1e-8.
    """
    stack = np.asarray(matrices, dtype=np.float32)
    if stack.size == 0:
        raise ParameterError("z-score needs at least one matrix")
    flat = stack.astype(np.float64)
    mu = float(flat.mean())
    sigma = max(float(flat.std()), ZSCORE_EPS)
    out = ((flat - mu) / sigma).astype(np.float32)
    return out, NormalizationStats(modality, mu, sigma)


def zscore_apply(matrices, stats: NormalizationStats) -> np.ndarray:
    flat = np.asarray(matrices, dtype=np.float32).astype(np.float64)
    return ((flat - stats.mu) / stats.sigma).astype(np.float32)


@dataclass
class Dataset:
    """Fused samples: ``x`` has shape (N, steps, features), ``y`` holds class indices."""

    x: np.ndarray
    y: np.ndarray
    class_names: Tuple[str, ...] = CLASS_NAMES
    modality: np.ndarray | None = None  # per-sample modality index, informational

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.shape[0] != self.y.shape[0]:
            raise ContractError(f"{self.x.shape[0]} samples but {self.y.shape[0]} labels")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= len(self.class_names)):
            raise ContractError("label index outside the class list")

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        mod = None if self.modality is None else self.modality[idx]
        return Dataset(self.x[idx], self.y[idx], self.class_names, mod)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=len(self.class_names))


def fuse(modality_sets: Sequence[Tuple[np.ndarray, np.ndarray]], class_names=CLASS_NAMES) -> Dataset:
    """Concatenate per-modality (matrices, labels) along the sample axis."""
    lengths = [len(labels) for _, labels in modality_sets]
    if len(set(lengths)) > 1:
        raise ContractError(f"modality sets differ in length: {lengths}")
    for mats, labels in modality_sets:
        if len(mats) != len(labels):
            raise ContractError("matrix count and label count differ within a modality")
    x = np.concatenate([np.asarray(m, dtype=np.float32) for m, _ in modality_sets], axis=0)
    y = np.concatenate([np.asarray(l, dtype=np.int64) for _, l in modality_sets])
    mod = np.repeat(np.arange(len(modality_sets)), lengths)
    return Dataset(x, y, tuple(class_names), mod)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.55
    val_fraction: float = 0.25
    test_fraction: float = 0.20
    seed: int = 0

    def __post_init__(self):
        fr = self.fractions
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ParameterError(f"split fractions must be positive and sum to 1, got {fr}")

    @property
    def fractions(self) -> Tuple[float, float, float]:
        return (self.train_fraction, self.val_fraction, self.test_fraction)


def largest_remainder(total: int, fractions: Sequence[float]) -> np.ndarray:
    """Integer apportionment of ``total``; leftover units go to the largest remainders."""
    exact = np.round(np.asarray(fractions, dtype=np.float64) * total, 9)  # absorb fp noise like 0.2*160
    out = np.floor(exact).astype(np.int64)
    rem = exact - out
    order = sorted(range(len(out)), key=lambda j: (-rem[j], j))
    for j in order[: total - int(out.sum())]:
        out[j] += 1
    return out


def allocate(class_counts: Sequence[int], fractions: Sequence[float]) -> np.ndarray:
    """Per-class split sizes, shape (classes, splits).

    Every cell is its exact share rounded down or up, rows sum to the class
    counts and split totals equal the largest-remainder apportionment of the
    whole dataset. Among such tables the one using the largest fractional
    remainders is chosen (a min-cost flow), ties going to lower class then
    lower split indices.
    """
    counts = np.asarray(class_counts, dtype=np.int64)
    fr = np.asarray(fractions, dtype=np.float64)
    exact = np.round(counts[:, None] * fr[None, :], 9)
    cells = np.floor(exact).astype(np.int64)
    n_rows, n_cols = cells.shape
    row_need = counts - cells.sum(axis=1)
    col_need = largest_remainder(int(counts.sum()), fr) - cells.sum(axis=0)
    if not row_need.any():
        return cells

    # integer costs: remainder in units of 1e-9, then a tie rank; cells with no
    # remainder are allowed only as a last resort
    n_cells = n_rows * n_cols
    big = 10 ** 10 * (n_cells + 1)
    g = nx.DiGraph()
    for c in range(n_rows):
        g.add_edge("src", ("r", c), capacity=int(row_need[c]), weight=0)
    for j in range(n_cols):
        g.add_edge(("c", j), "snk", capacity=int(col_need[j]), weight=0)
    for c in range(n_rows):
        for j in range(n_cols):
            rem = int(round((exact[c, j] - cells[c, j]) * 1e9))
            rank = c * n_cols + j
            weight = -(rem * (n_cells + 1)) + rank if rem > 0 else big + rank
            g.add_edge(("r", c), ("c", j), capacity=1, weight=weight)
    g.nodes["src"]["demand"] = -int(row_need.sum())
    g.nodes["snk"]["demand"] = int(row_need.sum())
    try:
        flow = nx.min_cost_flow(g)
    except nx.NetworkXUnfeasible as e:
        raise SplitError(f"no stratified allocation for class counts {counts.tolist()}") from e
    for c in range(n_rows):
        for j in range(n_cols):
            cells[c, j] += flow[("r", c)][("c", j)]
    return cells


def stratified_split_indices(labels, spec: SplitSpec, n_classes: int = len(CLASS_NAMES)):
    """Index arrays (train, val, test) of a stratified, seeded split."""
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=n_classes)
    for c, n in enumerate(counts):
        if 0 < n < 3:
            raise SplitError(f"class {c} has only {n} samples; at least 3 are needed")
    present = counts > 0
    table = np.zeros((n_classes, 3), dtype=np.int64)
    table[present] = allocate(counts[present], spec.fractions)
    parts: List[List[int]] = [[], [], []]
    for c in range(n_classes):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        members = members[shuffle_indices(members.size, stage_seed(spec.seed, f"split/class/{c}"))]
        start = 0
        for j in range(3):
            parts[j].extend(members[start:start + table[c, j]].tolist())
            start += table[c, j]
    out = []
    for j, p in enumerate(parts):
        arr = np.array(p, dtype=np.int64)
        out.append(arr[shuffle_indices(arr.size, stage_seed(spec.seed, f"split/part/{j}"))])
    return tuple(out)


def stratified_split(ds: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset, Dataset]:
    tr, va, te = stratified_split_indices(ds.y, spec, len(ds.class_names))
    return ds.subset(tr), ds.subset(va), ds.subset(te)
