"""Sampling strategies over a model run's latent space.

Strategies fall into three groups:

* baselines that ignore the latent geometry: ``uniform`` and
  ``stratified_cm`` (proportional to confusion-matrix cells);
* latent-space baselines: ``latent_grid`` (equal draws from a PCA grid),
  ``vas`` (greedy interchange minimizing a pairwise Gaussian-kernel
  loss), and ``eb_tree`` (boundary-tree stitching, emergent size);
* boundary-aware strategies: ``gmm_full``, ``gmm_spherical`` and
  ``max_margin`` take, per cluster, a ``j`` fraction from the outlier end
  and ``1 - j`` from the exemplar end of the odds-ratio-sorted items, and
  ``weighted`` draws with probability proportional to the reciprocal
  odds ratio.

Every strategy is a pure function of (run, fitted model, spec) and is
deterministic for a fixed seed.  Ties are always broken by ascending
item id.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .artifacts import RunArtifacts
from .latent import MembershipTable, gmm_fit, margin_fit, memberships, pca_fit

STRATEGIES = (
    "uniform",
    "stratified_cm",
    "latent_grid",
    "gmm_full",
    "gmm_spherical",
    "max_margin",
    "weighted",
    "vas",
    "eb_tree",
)
CLUSTERED_STRATEGIES = ("gmm_full", "gmm_spherical", "max_margin")
# eb_tree produces a single sample whose size is emergent, not fraction-driven
FRACTION_CONTROLLED = tuple(s for s in STRATEGIES if s != "eb_tree")

HEAD = "head"  # outlier end (low odds ratio)
TAIL = "tail"  # exemplar end (high odds ratio)
NA = "n/a"


@dataclass(frozen=True)
class SampleSpec:
    strategy: str
    fraction: float = 1.0
    j: float = 0.7  # share of each cluster budget taken from the outlier end
    seed: int = 0
    grid_dims: int = 5
    grid_bins: int = 2
    vas_epsilon: float | str = "auto"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy '{self.strategy}'")
        if self.strategy != "eb_tree" and not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"fraction must be in (0, 1], got {self.fraction}")
        if not 0.0 <= self.j <= 1.0:
            raise ValueError(f"tuning factor j must be in [0, 1], got {self.j}")


@dataclass
class Sample:
    """Distinct item ids plus the spec and per-item provenance that produced them."""

    item_ids: np.ndarray
    spec: SampleSpec
    clusters: np.ndarray | None = None  # -1 where not applicable
    ends: tuple[str, ...] | None = None

    def __post_init__(self):
        self.item_ids = np.asarray(self.item_ids, dtype=np.int64)
        if self.clusters is None:
            self.clusters = np.full(len(self.item_ids), -1, dtype=np.int64)
        else:
            self.clusters = np.asarray(self.clusters, dtype=np.int64)
        if self.ends is None:
            self.ends = tuple(NA for _ in self.item_ids)
        else:
            self.ends = tuple(self.ends)
        n = len(self.item_ids)
        if len(self.clusters) != n or len(self.ends) != n:
            raise ValueError("clusters/ends must match item_ids length")
        if len(np.unique(self.item_ids)) != n:
            raise ValueError("sample contains duplicate item ids")

    def __len__(self) -> int:
        return len(self.item_ids)

    @property
    def provenance(self) -> dict[int, tuple[int, int]]:
        """Per-cluster (head, tail) counts for clustered strategies."""
        out: dict[int, tuple[int, int]] = {}
        for cl, end in zip(self.clusters, self.ends):
            if cl < 0:
                continue
            h, t = out.get(int(cl), (0, 0))
            if end == HEAD:
                h += 1
            elif end == TAIL:
                t += 1
            out[int(cl)] = (h, t)
        return out


@dataclass
class BoundaryTree:
    """Tree of items in which every child's predicted label differs from its parent's."""

    root: int
    parent: dict[int, int | None] = field(default_factory=dict)
    children: dict[int, list[int]] = field(default_factory=dict)
    labels: dict[int, int] = field(default_factory=dict)

    @property
    def node_ids(self) -> list[int]:
        return list(self.parent.keys())

    def __len__(self) -> int:
        return len(self.parent)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _floor_count(fraction: float, n: int) -> int:
    # the epsilon keeps exact products like 0.7 * 10 from flooring to 6
    return int(math.floor(fraction * n + 1e-9))


def uniform_sample(run: RunArtifacts, spec: SampleSpec) -> Sample:
    """floor(fraction * item_count) ids drawn uniformly without replacement."""
    rng = np.random.default_rng(spec.seed)
    n = _floor_count(spec.fraction, run.item_count)
    ids = rng.choice(run.item_count, size=n, replace=False)
    return Sample(item_ids=ids, spec=spec)


def _proportional_quotas(
    sizes: dict, fraction: float, n_target: int
) -> dict:
    """round(fraction * size) per cell, nonempty cells floored at one item,
    then trimmed/padded against the largest cells to hit n_target exactly."""
    quotas = {}
    for key, size in sizes.items():
        q = _round_half_up(fraction * size)
        if size > 0 and q == 0:
            q = 1
        quotas[key] = min(q, size)
    total = sum(quotas.values())
    while total > n_target:
        key = max(
            (k for k in quotas if quotas[k] > 0),
            key=lambda k: (sizes[k], quotas[k], k),
        )
        quotas[key] -= 1
        total -= 1
    while total < n_target:
        key = max(
            (k for k in quotas if quotas[k] < sizes[k]),
            key=lambda k: (sizes[k], k),
        )
        quotas[key] += 1
        total += 1
    return quotas


def stratified_cm_sample(run: RunArtifacts, spec: SampleSpec) -> Sample:
    """Draws from each confusion-matrix cell in proportion to its size."""
    rng = np.random.default_rng(spec.seed)
    n_target = _floor_count(spec.fraction, run.item_count)
    cells: dict[tuple[int, int], np.ndarray] = {}
    for t in range(run.class_count):
        of_class = run.true_labels == t
        for p in range(run.class_count):
            members = np.flatnonzero(of_class & (run.predicted_labels == p))
            if len(members):
                cells[(t, p)] = members
    quotas = _proportional_quotas({k: len(v) for k, v in cells.items()}, spec.fraction, n_target)
    picked = []
    for key in sorted(cells):
        q = quotas[key]
        if q > 0:
            picked.append(rng.choice(cells[key], size=q, replace=False))
    ids = np.concatenate(picked) if picked else np.empty(0, dtype=np.int64)
    return Sample(item_ids=ids, spec=spec)


def _equal_quotas(sizes: list[int], n: int) -> list[int]:
    """n split equally across cells; the remainder and any over-capacity
    shortfall go to the most populous cells with spare room."""
    m = len(sizes)
    base = n // m
    quotas = [base] * m
    order = sorted(range(m), key=lambda i: (-sizes[i], i))
    for i in order[: n - base * m]:
        quotas[i] += 1
    shortfall = 0
    for i in range(m):
        if quotas[i] > sizes[i]:
            shortfall += quotas[i] - sizes[i]
            quotas[i] = sizes[i]
    while shortfall > 0:
        progressed = False
        for i in order:
            if shortfall == 0:
                break
            if quotas[i] < sizes[i]:
                quotas[i] += 1
                shortfall -= 1
                progressed = True
        if not progressed:
            break
    return quotas


def latent_grid_sample(run: RunArtifacts, spec: SampleSpec) -> Sample:
    """Equal draws from each non-empty cell of an equal-width grid over the
    PCA-reduced latent space."""
    latent = np.asarray(run.latent, dtype=np.float64)
    d = latent.shape[1]
    if spec.grid_dims > d:
        raise ValueError(f"grid_dims {spec.grid_dims} exceeds latent dimension {d}")
    rng = np.random.default_rng(spec.seed)
    n_target = _floor_count(spec.fraction, run.item_count)

    z = pca_fit(latent, spec.grid_dims).transform(latent)
    lo = z.min(axis=0)
    width = z.max(axis=0) - lo
    bins = spec.grid_bins
    idx = np.zeros_like(z, dtype=np.int64)
    nonzero = width > 0
    scaled = (z[:, nonzero] - lo[nonzero]) / width[nonzero] * bins
    idx[:, nonzero] = np.clip(scaled.astype(np.int64), 0, bins - 1)

    cells: dict[tuple, np.ndarray] = {}
    keys = [tuple(row) for row in idx]
    for i, key in enumerate(keys):
        cells.setdefault(key, []).append(i)
    cell_keys = sorted(cells)
    members = [np.asarray(cells[k], dtype=np.int64) for k in cell_keys]
    quotas = _equal_quotas([len(m) for m in members], n_target)
    picked = []
    for mem, q in zip(members, quotas):
        if q > 0:
            picked.append(rng.choice(mem, size=q, replace=False))
    ids = np.concatenate(picked) if picked else np.empty(0, dtype=np.int64)
    return Sample(item_ids=ids, spec=spec)


def _sorted_cluster_members(
    table: MembershipTable, cluster: int
) -> np.ndarray:
    members = np.flatnonzero(table.assignment == cluster)
    order = np.lexsort((members, table.likelihood_ratio[members]))
    return members[order]  # ascending ratio: head = outliers, tail = exemplars


def clustered_sample(
    run: RunArtifacts, table: MembershipTable, spec: SampleSpec
) -> Sample:
    """Per cluster, take floor(n_c * j) items from the outlier end and the
    rest of n_c = round(fraction * cluster_size) from the exemplar end."""
    if len(table.assignment) != run.item_count:
        raise ValueError("membership table does not match run")
    ids, clusters, ends = [], [], []
    for cluster in range(table.n_clusters):
        ordered = _sorted_cluster_members(table, cluster)
        size = len(ordered)
        if size == 0:
            continue
        n_c = _round_half_up(spec.fraction * size)
        head_n = int(math.floor(n_c * spec.j))
        if n_c >= size:
            head_n = min(head_n, size)
            chosen = [(i, HEAD) for i in ordered[:head_n]]
            chosen += [(i, TAIL) for i in ordered[head_n:]]
        else:
            tail_n = n_c - head_n
            chosen = [(i, HEAD) for i in ordered[:head_n]]
            chosen += [(i, TAIL) for i in ordered[size - tail_n :]]
        for i, end in chosen:
            ids.append(int(i))
            clusters.append(cluster)
            ends.append(end)
    return Sample(
        item_ids=np.asarray(ids, dtype=np.int64),
        spec=spec,
        clusters=np.asarray(clusters, dtype=np.int64),
        ends=tuple(ends),
    )


def weighted_sample(
    run: RunArtifacts, table: MembershipTable, spec: SampleSpec
) -> Sample:
    """Per cluster, draw n_c items without replacement with probability
    proportional to the reciprocal odds ratio (boundary items favored)."""
    if len(table.assignment) != run.item_count:
        raise ValueError("membership table does not match run")
    rng = np.random.default_rng(spec.seed)
    ids, clusters = [], []
    for cluster in range(table.n_clusters):
        members = np.flatnonzero(table.assignment == cluster)
        size = len(members)
        if size == 0:
            continue
        n_c = _round_half_up(spec.fraction * size)
        if n_c >= size:
            chosen = members
        elif n_c == 0:
            chosen = members[:0]
        else:
            w = 1.0 / np.maximum(table.likelihood_ratio[members], 1e-12)
            # Efraimidis-Spirakis keys: top-n_c of log(u)/w is a weighted
            # draw without replacement
            keys = np.log(rng.random(size)) / w
            order = np.lexsort((members, -keys))
            chosen = members[order[:n_c]]
        ids.extend(int(i) for i in chosen)
        clusters.extend([cluster] * len(chosen))
    return Sample(
        item_ids=np.asarray(ids, dtype=np.int64),
        spec=spec,
        clusters=np.asarray(clusters, dtype=np.int64),
        ends=tuple(NA for _ in ids),
    )


def _auto_epsilon(latent: np.ndarray, rng: np.random.Generator) -> float:
    n = latent.shape[0]
    sub = latent[rng.choice(n, size=min(1000, n), replace=False)]
    diffs = sub[:, None, :] - sub[None, :, :]
    dist = np.sqrt((diffs**2).sum(axis=2))
    upper = dist[np.triu_indices(len(sub), k=1)]
    med = float(np.median(upper)) if len(upper) else 0.0
    return med if med > 0 else 1.0


def vas_sample(run: RunArtifacts, spec: SampleSpec) -> tuple[Sample, list[float]]:
    """Greedy interchange minimizing sum of pairwise Gaussian kernels.

    Starts from a seeded uniform subset, then streams every non-member
    once in seeded order, swapping it with the member whose removal gives
    the lowest loss whenever that strictly decreases the loss.  Returns
    the sample and the sequence of accepted loss values (strictly
    decreasing, starting at the initial subset's loss).
    """
    latent = np.asarray(run.latent, dtype=np.float64)
    n = run.item_count
    k = _floor_count(spec.fraction, n)
    if k < 2:
        raise ValueError(f"vas needs a sample of at least 2 items, got {k}")
    rng = np.random.default_rng(spec.seed)
    if spec.vas_epsilon == "auto":
        eps = _auto_epsilon(latent, rng)
    else:
        eps = float(spec.vas_epsilon)
        if eps <= 0:
            raise ValueError("vas_epsilon must be positive")
    eps2 = eps * eps

    members = rng.choice(n, size=k, replace=False)
    in_sample = np.zeros(n, dtype=bool)
    in_sample[members] = True

    def kernel_to_members(i: int) -> np.ndarray:
        d2 = ((latent[members] - latent[i]) ** 2).sum(axis=1)
        return np.exp(-d2 / eps2)

    # rowsum[j] = sum of kernels from member j to every other member
    rowsum = np.zeros(k)
    for j in range(k):
        kv = kernel_to_members(members[j])
        rowsum[j] = kv.sum() - 1.0  # drop the self-kernel
    loss = float(rowsum.sum() / 2.0)
    losses = [loss]

    outsiders = rng.permutation(np.flatnonzero(~in_sample))
    for x in outsiders:
        cand = kernel_to_members(int(x))
        gain = float(cand.sum())
        victim = int(np.argmax(rowsum + cand))
        new_loss = loss + gain - float(rowsum[victim] + cand[victim])
        if new_loss < loss:
            kv_victim = kernel_to_members(int(members[victim]))
            rowsum += cand - kv_victim
            rowsum[victim] = gain - cand[victim]
            in_sample[members[victim]] = False
            in_sample[x] = True
            members[victim] = x
            loss = new_loss
            losses.append(loss)
    return Sample(item_ids=members.copy(), spec=spec), losses


def ebtree_sample(run: RunArtifacts, spec: SampleSpec) -> tuple[Sample, BoundaryTree]:
    """Boundary-tree stitching: sample size is emergent, not fraction-driven.

    Items are streamed in seeded random order.  Each item descends the
    tree toward its latent-space nearest node and is attached as a child
    only if its predicted label differs from the stopping node's.
    """
    latent = np.asarray(run.latent, dtype=np.float64)
    pred = run.predicted_labels
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(run.item_count)
    root = int(order[0])
    tree = BoundaryTree(root=root)
    tree.parent[root] = None
    tree.children[root] = []
    tree.labels[root] = int(pred[root])
    insertion = [root]

    for raw in order[1:]:
        x = int(raw)
        node = root
        while True:
            cand = [node] + tree.children[node]
            d2 = ((latent[cand] - latent[x]) ** 2).sum(axis=1)
            best = cand[int(np.argmin(d2))]  # first minimum keeps the current node on ties
            if best == node:
                break
            node = best
        if int(pred[x]) != tree.labels[node]:
            tree.parent[x] = node
            tree.children[x] = []
            tree.children[node].append(x)
            tree.labels[x] = int(pred[x])
            insertion.append(x)

    ids = np.asarray(insertion, dtype=np.int64)
    sample = Sample(item_ids=ids, spec=spec)
    return sample, tree


def fit_memberships(
    run: RunArtifacts, strategy: str, model_seed: int = 0
) -> MembershipTable:
    """Fit the latent model a clustered strategy needs and tabulate memberships."""
    latent = run.latent
    if strategy == "gmm_full":
        model = gmm_fit(latent, run.class_count, mode="full", seed=model_seed)
    elif strategy == "gmm_spherical":
        model = gmm_fit(latent, run.class_count, mode="spherical", seed=model_seed)
    elif strategy == "max_margin":
        model = margin_fit(latent, run.true_labels, seed=model_seed,
                           class_count=run.class_count)
    else:
        raise ValueError(f"strategy '{strategy}' does not use a latent model")
    return memberships(model, latent)


def make_sample(
    run: RunArtifacts,
    spec: SampleSpec,
    table: MembershipTable | None = None,
    model_seed: int = 0,
    weighted_model: str = "max_margin",
) -> Sample:
    """Build a sample for any strategy, fitting latent models on demand."""
    s = spec.strategy
    if s == "uniform":
        return uniform_sample(run, spec)
    if s == "stratified_cm":
        return stratified_cm_sample(run, spec)
    if s == "latent_grid":
        return latent_grid_sample(run, spec)
    if s == "vas":
        return vas_sample(run, spec)[0]
    if s == "eb_tree":
        return ebtree_sample(run, spec)[0]
    if s in CLUSTERED_STRATEGIES:
        if table is None:
            table = fit_memberships(run, s, model_seed)
        return clustered_sample(run, table, spec)
    if s == "weighted":
        if table is None:
            table = fit_memberships(run, weighted_model, model_seed)
        return weighted_sample(run, table, spec)
    raise ValueError(f"unknown strategy '{s}'")


def save_sample(sample: Sample, path: Path, seconds: float | None = None) -> None:
    """Write `item_id,cluster,end` CSV plus a sidecar .meta.json with the spec."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item_id", "cluster", "end"])
        for i, cl, end in zip(sample.item_ids, sample.clusters, sample.ends):
            w.writerow([int(i), "" if cl < 0 else int(cl), end])
    meta = {
        "strategy": sample.spec.strategy,
        "fraction": sample.spec.fraction,
        "j": sample.spec.j,
        "seed": sample.spec.seed,
        "grid_dims": sample.spec.grid_dims,
        "grid_bins": sample.spec.grid_bins,
        "vas_epsilon": sample.spec.vas_epsilon,
    }
    if seconds is not None:
        meta["seconds"] = seconds
    path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_sample(path: Path) -> tuple[Sample, float | None]:
    """Read a sample CSV and its sidecar metadata."""
    path = Path(path)
    ids, clusters, ends = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["item_id", "cluster", "end"]:
            raise ValueError(f"{path}: unexpected sample header {header}")
        for row in reader:
            ids.append(int(row[0]))
            clusters.append(int(row[1]) if row[1] else -1)
            ends.append(row[2])
    meta_path = path.with_suffix(".meta.json")
    if not meta_path.exists():
        raise ValueError(f"sample metadata not found: {meta_path}")
    meta = json.loads(meta_path.read_text())
    spec = SampleSpec(
        strategy=meta["strategy"],
        fraction=meta["fraction"],
        j=meta["j"],
        seed=meta["seed"],
        grid_dims=meta.get("grid_dims", 5),
        grid_bins=meta.get("grid_bins", 2),
        vas_epsilon=meta.get("vas_epsilon", "auto"),
    )
    sample = Sample(
        item_ids=np.asarray(ids, dtype=np.int64),
        spec=spec,
        clusters=np.asarray(clusters, dtype=np.int64),
        ends=tuple(ends),
    )
    return sample, meta.get("seconds")
