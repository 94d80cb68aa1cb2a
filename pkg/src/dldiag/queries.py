"""Diagnosis query sets over query cells, and sample-accuracy scoring.

A query cell is one (layer, class, correctness) slice of a run.  Three
query sets are computed per cell:

* S1 -- top-k neurons by aggregate activation, scored by precision;
* S2 -- per-neuron average activation, scored by cosine distance;
* S3 -- distribution of per-item argmax neurons, scored by
  Jensen-Shannon distance (base-2 logs, so the maximum is exactly 1).

Sample-side results are plug-in estimates: the same aggregate computed on
the sampled items only.  A cell that the sample misses entirely scores 0
for S1 and 1 for S2/S3; cells empty in the full data are excluded from
aggregates (there is no ground truth to compare against).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .artifacts import RunArtifacts
from .samplers import Sample

CORRECT = "correct"
INCORRECT = "incorrect"
QUERY_SETS = ("S1", "S2", "S3")


@dataclass(frozen=True)
class QueryCell:
    layer_name: str
    class_label: int
    correctness: str  # "correct" | "incorrect"


@dataclass(frozen=True)
class TopK:
    indices: np.ndarray  # distinct neuron indices, ranked

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class AvgVector:
    values: np.ndarray  # (neuron_count,) per-neuron means
    empty: bool = False


@dataclass(frozen=True)
class MaxDist:
    probs: np.ndarray  # (neuron_count,) nonnegative, sums to 1 when nonempty
    empty: bool = False


def enumerate_cells(run: RunArtifacts) -> list[QueryCell]:
    return [
        QueryCell(name, cls, corr)
        for name in run.layer_names
        for cls in range(run.class_count)
        for corr in (CORRECT, INCORRECT)
    ]


def _restrict_mask(run: RunArtifacts, restrict: Sample | None) -> np.ndarray | None:
    if restrict is None:
        return None
    ids = restrict.item_ids
    if len(ids) and (ids.min() < 0 or ids.max() >= run.item_count):
        raise ValueError(
            f"sample/run mismatch: item id {int(ids.max())} out of range "
            f"[0, {run.item_count})"
        )
    mask = np.zeros(run.item_count, dtype=bool)
    mask[ids] = True
    return mask


def cell_items(
    run: RunArtifacts,
    cell: QueryCell | None = None,
    restrict: Sample | None = None,
    pair: tuple[int, int] | None = None,
) -> np.ndarray:
    """Item ids matching the cell predicate, ascending.

    With ``pair=(a, b)`` the predicate is instead "true class a predicted
    as class b" (the confusion-pair query family)."""
    if pair is not None:
        true_cls, pred_cls = pair
        keep = (run.true_labels == true_cls) & (run.predicted_labels == pred_cls)
    elif cell is not None:
        keep = run.true_labels == cell.class_label
        if cell.correctness == CORRECT:
            keep = keep & run.correctness
        else:
            keep = keep & ~run.correctness
    else:
        raise ValueError("either cell or pair is required")
    mask = _restrict_mask(run, restrict)
    if mask is not None:
        keep = keep & mask
    return np.flatnonzero(keep).astype(np.int64)


def _ranked_topk(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k indices by descending score, ties by ascending index.

    Selects candidates with a partition (cheap for k << n), then orders
    only the candidate set exactly."""
    n = len(scores)
    k = min(k, n)
    if k == n:
        cand = np.arange(n)
    else:
        thresh = np.partition(scores, n - k)[n - k]
        cand = np.flatnonzero(scores >= thresh)  # includes every boundary tie
    order = np.lexsort((cand, -scores[cand]))
    return cand[order[:k]].astype(np.int64)


def s1_topk(
    run: RunArtifacts,
    cell: QueryCell,
    k: int,
    restrict: Sample | None = None,
    rank_by: str = "mean",
) -> TopK:
    """Top-k neurons of the cell's layer by mean (or max) activation."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if rank_by not in ("mean", "max"):
        raise ValueError(f"rank_by must be 'mean' or 'max', got '{rank_by}'")
    ids = cell_items(run, cell, restrict)
    if len(ids) == 0:
        return TopK(indices=np.empty(0, dtype=np.int64))
    values = run.layer(cell.layer_name).values[ids].astype(np.float64)
    scores = values.mean(axis=0) if rank_by == "mean" else values.max(axis=0)
    return TopK(indices=_ranked_topk(scores, k))


def s2_avg(
    run: RunArtifacts, cell: QueryCell, restrict: Sample | None = None
) -> AvgVector:
    """Per-neuron mean activation over the cell's items."""
    ids = cell_items(run, cell, restrict)
    width = run.layer(cell.layer_name).values.shape[1]
    if len(ids) == 0:
        return AvgVector(values=np.zeros(width), empty=True)
    values = run.layer(cell.layer_name).values[ids].astype(np.float64)
    return AvgVector(values=values.mean(axis=0))


def s3_maxdist(
    run: RunArtifacts, cell: QueryCell, restrict: Sample | None = None
) -> MaxDist:
    """Normalized histogram of each item's argmax neuron (ties and all-zero
    rows resolve to the lowest index)."""
    ids = cell_items(run, cell, restrict)
    width = run.layer(cell.layer_name).values.shape[1]
    if len(ids) == 0:
        return MaxDist(probs=np.zeros(width), empty=True)
    values = run.layer(cell.layer_name).values[ids]
    winners = values.argmax(axis=1)
    counts = np.bincount(winners, minlength=width).astype(np.float64)
    return MaxDist(probs=counts / counts.sum())


def precision_at_k(sample_topk: TopK, full_topk: TopK) -> float:
    """|sample ∩ full| / k with k taken from the full-data result."""
    k = len(full_topk)
    if k == 0 or len(sample_topk) == 0:
        return 0.0
    common = np.intersect1d(sample_topk.indices, full_topk.indices)
    return len(common) / k


def cosine_distance(a: AvgVector, b: AvgVector) -> float:
    """1 - cos(a, b); 1.0 when either side is empty or a zero vector.

    Activations are nonnegative (post-ReLU), so the result lies in [0, 1]."""
    if len(a.values) != len(b.values):
        raise ValueError(
            f"dimension mismatch: {len(a.values)} vs {len(b.values)}"
        )
    if a.empty or b.empty:
        return 1.0
    na = float(np.linalg.norm(a.values))
    nb = float(np.linalg.norm(b.values))
    if na == 0.0 or nb == 0.0:
        return 1.0
    value = 1.0 - float(a.values @ b.values) / (na * nb)
    return min(1.0, max(0.0, value))


def js_distance(p: MaxDist, q: MaxDist) -> float:
    """Square root of the Jensen-Shannon divergence with base-2 logs."""
    if len(p.probs) != len(q.probs):
        raise ValueError(
            f"dimension mismatch: {len(p.probs)} vs {len(q.probs)}"
        )
    if p.empty or q.empty:
        return 1.0
    for name, vec in (("p", p.probs), ("q", q.probs)):
        if abs(float(vec.sum()) - 1.0) > 1e-9:
            raise ValueError(f"{name} is not normalized: sums to {vec.sum()}")
        if (vec < 0).any():
            raise ValueError(f"{name} has negative entries")
    m = (p.probs + q.probs) / 2.0
    div = 0.0
    for vec in (p.probs, q.probs):
        nz = vec > 0
        div += float((vec[nz] * np.log2(vec[nz] / m[nz])).sum())
    return min(1.0, math.sqrt(max(0.0, div / 2.0)))


@dataclass(frozen=True)
class CellMetric:
    strategy: str
    fraction: float
    seed: int
    query_set: str
    layer: str
    class_label: int
    correctness: str
    k: int | None  # None for S2/S3
    value: float


@dataclass(frozen=True)
class AggregateMetric:
    strategy: str
    fraction: float
    query_set: str
    k: int | None
    accuracy: float


@dataclass(frozen=True)
class TimingRecord:
    strategy: str
    fraction: float
    seconds: float


class FullResults:
    """Full-data query answers for every non-empty cell, cached for reuse."""

    def __init__(self, run: RunArtifacts, ks: Sequence[int], rank_by: str = "mean"):
        self.run = run
        self.ks = tuple(ks)
        self.rank_by = rank_by
        self.cells = [c for c in enumerate_cells(run) if len(cell_items(run, c)) > 0]
        self.topk = {
            (c, k): s1_topk(run, c, k, rank_by=rank_by)
            for c in self.cells
            for k in self.ks
        }
        self.avg = {c: s2_avg(run, c) for c in self.cells}
        self.maxdist = {c: s3_maxdist(run, c) for c in self.cells}


def _sort_key(row: CellMetric):
    return (
        row.strategy,
        row.fraction,
        row.seed,
        row.query_set,
        -1 if row.k is None else row.k,
        row.layer,
        row.class_label,
        row.correctness,
    )


@dataclass
class EvalReport:
    cells: list[CellMetric]
    timings: list[TimingRecord]

    def aggregates(self) -> list[AggregateMetric]:
        """Mean metric over cells (and seeds) per strategy/fraction/query set."""
        groups: dict[tuple, list[float]] = {}
        for row in self.cells:
            groups.setdefault(
                (row.strategy, row.fraction, row.query_set, row.k), []
            ).append(row.value)
        out = [
            AggregateMetric(s, f, qs, k, sum(vals) / len(vals))
            for (s, f, qs, k), vals in groups.items()
        ]
        out.sort(key=lambda a: (a.strategy, a.fraction, a.query_set,
                                -1 if a.k is None else a.k))
        return out

    def write_cells_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["strategy", "fraction", "seed", "query_set", "layer", "class",
                 "correctness", "k", "metric_value"]
            )
            for r in sorted(self.cells, key=_sort_key):
                w.writerow(
                    [r.strategy, repr(r.fraction), r.seed, r.query_set, r.layer,
                     r.class_label, r.correctness,
                     "" if r.k is None else r.k, repr(r.value)]
                )

    def write_aggregates_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["strategy", "fraction", "query_set", "k", "accuracy"])
            for a in self.aggregates():
                w.writerow(
                    [a.strategy, repr(a.fraction), a.query_set,
                     "" if a.k is None else a.k, repr(a.accuracy)]
                )

    def write_timings_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["strategy", "fraction", "seconds"])
            for t in sorted(self.timings, key=lambda t: (t.strategy, t.fraction)):
                w.writerow([t.strategy, repr(t.fraction), repr(t.seconds)])


def evaluate(
    run: RunArtifacts,
    samples: Sequence[Sample],
    ks: Sequence[int] = (10,),
    rank_by: str = "mean",
    timings: Sequence[TimingRecord] | None = None,
    full: FullResults | None = None,
) -> EvalReport:
    """Score every sample against full-data results on every non-empty cell."""
    if full is None or full.run is not run or full.ks != tuple(ks) or full.rank_by != rank_by:
        full = FullResults(run, ks, rank_by)
    rows: list[CellMetric] = []
    for sample in samples:
        _restrict_mask(run, sample)  # validates ids against the run
        spec = sample.spec
        for cell in full.cells:
            for k in full.ks:
                p = precision_at_k(
                    s1_topk(run, cell, k, restrict=sample, rank_by=rank_by),
                    full.topk[(cell, k)],
                )
                rows.append(
                    CellMetric(spec.strategy, spec.fraction, spec.seed, "S1",
                               cell.layer_name, cell.class_label,
                               cell.correctness, k, p)
                )
            d2 = cosine_distance(s2_avg(run, cell, restrict=sample), full.avg[cell])
            rows.append(
                CellMetric(spec.strategy, spec.fraction, spec.seed, "S2",
                           cell.layer_name, cell.class_label, cell.correctness,
                           None, d2)
            )
            d3 = js_distance(s3_maxdist(run, cell, restrict=sample), full.maxdist[cell])
            rows.append(
                CellMetric(spec.strategy, spec.fraction, spec.seed, "S3",
                           cell.layer_name, cell.class_label, cell.correctness,
                           None, d3)
            )
    rows.sort(key=_sort_key)
    return EvalReport(cells=rows, timings=list(timings or []))
