"""On-disk format for model-run artifacts and validated loading.

A run is a directory containing:

* ``manifest.json`` -- run metadata: item and class counts, the layer
  table, the designated latent layer, and paths (relative to the
  manifest) of the tensor files and the labels CSV.
* one ``*.dldg`` tensor file per layer -- magic bytes ``DLDG``, format
  version (u16), row count (u64), column count (u64), then row-major
  IEEE-754 float32 values.  All multi-byte integers little-endian.
* ``labels.csv`` -- header ``item_id,true_label,predicted_label``, with
  ``item_id`` equal to the row index.

Loaded runs are immutable (arrays are marked read-only), so they can be
shared freely across threads.
"""

from __future__ import annotations

import csv
import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"DLDG"
TENSOR_VERSION = 1
_HEADER = struct.Struct("<4sHQQ")


class ArtifactError(Exception):
    """A run directory failed structural or value validation."""


@dataclass(frozen=True)
class ActivationMatrix:
    """Dense activations for one layer: one row per item, one column per neuron."""

    layer_name: str
    values: np.ndarray  # (item_count, neuron_count) float32


@dataclass(frozen=True)
class RunArtifacts:
    """One model run: per-layer activations plus per-item metadata."""

    run_id: str
    class_count: int
    layers: tuple[ActivationMatrix, ...]
    true_labels: np.ndarray  # (item_count,) int64
    predicted_labels: np.ndarray  # (item_count,) int64
    latent_layer: str

    @property
    def item_count(self) -> int:
        return int(self.true_labels.shape[0])

    @property
    def layer_names(self) -> tuple[str, ...]:
        return tuple(m.layer_name for m in self.layers)

    def layer(self, name: str) -> ActivationMatrix:
        for m in self.layers:
            if m.layer_name == name:
                return m
        raise KeyError(f"no layer named '{name}'")

    @property
    def latent(self) -> np.ndarray:
        """Activation matrix of the designated last hidden layer."""
        return self.layer(self.latent_layer).values

    @property
    def correctness(self) -> np.ndarray:
        return self.true_labels == self.predicted_labels


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def make_run(
    run_id: str,
    class_count: int,
    layers: list[tuple[str, np.ndarray]],
    true_labels: np.ndarray,
    predicted_labels: np.ndarray,
    latent_layer: str,
) -> RunArtifacts:
    """Assemble and validate a RunArtifacts from raw arrays."""
    mats = tuple(
        ActivationMatrix(name, _freeze(np.ascontiguousarray(v, dtype=np.float32)))
        for name, v in layers
    )
    run = RunArtifacts(
        run_id=run_id,
        class_count=int(class_count),
        layers=mats,
        true_labels=_freeze(np.asarray(true_labels, dtype=np.int64).copy()),
        predicted_labels=_freeze(np.asarray(predicted_labels, dtype=np.int64).copy()),
        latent_layer=latent_layer,
    )
    validate_artifacts(run)
    return run


def validate_artifacts(run: RunArtifacts) -> None:
    """Check every structural invariant; raise ArtifactError with coordinates."""
    if run.class_count < 2:
        raise ArtifactError(f"class_count must be >= 2, got {run.class_count}")
    n = run.item_count
    if n < 1:
        raise ArtifactError("run must contain at least one item")
    names = run.layer_names
    if len(set(names)) != len(names):
        raise ArtifactError(f"duplicate layer names in {names}")
    if run.latent_layer not in names:
        raise ArtifactError(
            f"latent_layer '{run.latent_layer}' is not one of the layers {names}"
        )
    for m in run.layers:
        v = m.values
        if v.ndim != 2:
            raise ArtifactError(f"layer '{m.layer_name}': expected 2-D matrix")
        if v.shape[0] != n:
            raise ArtifactError(
                f"layer '{m.layer_name}': {v.shape[0]} rows but run has {n} items"
            )
        if v.dtype != np.float32:
            raise ArtifactError(f"layer '{m.layer_name}': values must be float32")
        bad = ~np.isfinite(v)
        if bad.any():
            i, jn = np.argwhere(bad)[0]
            raise ArtifactError(
                f"layer '{m.layer_name}': non-finite value at item {i}, neuron {jn}"
            )
    for field, labels in (
        ("true_label", run.true_labels),
        ("predicted_label", run.predicted_labels),
    ):
        if labels.shape != (n,):
            raise ArtifactError(f"{field}s: expected {n} entries, got {labels.shape}")
        bad = (labels < 0) | (labels >= run.class_count)
        if bad.any():
            i = int(np.argmax(bad))
            raise ArtifactError(
                f"item {i}: {field} {labels[i]} out of range [0, {run.class_count})"
            )


def write_tensor(path: Path, values: np.ndarray) -> None:
    values = np.ascontiguousarray(values, dtype="<f4")
    rows, cols = values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, rows, cols))
        fh.write(values.tobytes(order="C"))


def read_tensor(path: Path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise ArtifactError(f"tensor file not found: {path}") from None
    if len(raw) < _HEADER.size:
        raise ArtifactError(f"{path}: truncated tensor header")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != TENSOR_MAGIC:
        raise ArtifactError(f"{path}: bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
    if version != TENSOR_VERSION:
        raise ArtifactError(f"{path}: unsupported tensor format version {version}")
    expected = _HEADER.size + rows * cols * 4
    if len(raw) != expected:
        raise ArtifactError(
            f"{path}: expected {expected} bytes for {rows}x{cols} tensor, found {len(raw)}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return _freeze(data.reshape(rows, cols).copy())


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def write_run(run: RunArtifacts, out_dir: Path) -> Path:
    """Write tensors, labels CSV and manifest; returns the manifest path.

    load_run(write_run(run)) reproduces the run bit-exactly.
    """
    validate_artifacts(run)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    layer_entries = []
    for i, m in enumerate(run.layers):
        fname = f"layer{i:02d}_{_safe_name(m.layer_name)}.dldg"
        write_tensor(out_dir / fname, m.values)
        layer_entries.append(
            {
                "layer_name": m.layer_name,
                "neuron_count": int(m.values.shape[1]),
                "tensor_path": fname,
            }
        )
    labels_name = "labels.csv"
    with open(out_dir / labels_name, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item_id", "true_label", "predicted_label"])
        for i in range(run.item_count):
            w.writerow([i, int(run.true_labels[i]), int(run.predicted_labels[i])])
    manifest = {
        "run_id": run.run_id,
        "item_count": run.item_count,
        "class_count": run.class_count,
        "layers": layer_entries,
        "latent_layer": run.latent_layer,
        "labels_path": labels_name,
        "predictions_path": labels_name,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def _read_items_csv(path: Path, item_count: int) -> tuple[np.ndarray, np.ndarray]:
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise ArtifactError(f"labels file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["item_id", "true_label", "predicted_label"]:
            raise ArtifactError(f"{path}: unexpected header {header}")
        true = np.empty(item_count, dtype=np.int64)
        pred = np.empty(item_count, dtype=np.int64)
        rows = 0
        for i, row in enumerate(reader):
            if i >= item_count:
                raise ArtifactError(f"{path}: more rows than item_count {item_count}")
            if int(row[0]) != i:
                raise ArtifactError(f"{path}: row {i} has item_id {row[0]}")
            true[i] = int(row[1])
            pred[i] = int(row[2])
            rows += 1
        if rows != item_count:
            raise ArtifactError(f"{path}: {rows} rows but manifest says {item_count} items")
    return true, pred


def load_run(manifest_path: Path) -> RunArtifacts:
    """Load and fully validate a run from its manifest."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise ArtifactError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as e:
        raise ArtifactError(f"{manifest_path}: invalid JSON: {e}") from None
    base = manifest_path.parent
    try:
        item_count = int(manifest["item_count"])
        class_count = int(manifest["class_count"])
        layer_entries = manifest["layers"]
        latent_layer = manifest["latent_layer"]
        labels_path = base / manifest["labels_path"]
        predictions_path = base / manifest["predictions_path"]
        run_id = manifest["run_id"]
    except KeyError as e:
        raise ArtifactError(f"{manifest_path}: missing manifest key {e}") from None

    mats = []
    for entry in layer_entries:
        name = entry["layer_name"]
        neuron_count = int(entry["neuron_count"])
        values = read_tensor(base / entry["tensor_path"])
        if values.shape != (item_count, neuron_count):
            raise ArtifactError(
                f"layer '{name}': header mismatch, tensor is "
                f"{values.shape[0]}x{values.shape[1]} but manifest expects "
                f"{item_count}x{neuron_count}"
            )
        mats.append(ActivationMatrix(name, values))

    true_labels, predicted = _read_items_csv(labels_path, item_count)
    if predictions_path != labels_path:
        _, predicted = _read_items_csv(predictions_path, item_count)

    run = RunArtifacts(
        run_id=run_id,
        class_count=class_count,
        layers=tuple(mats),
        true_labels=_freeze(true_labels),
        predicted_labels=_freeze(predicted),
        latent_layer=latent_layer,
    )
    validate_artifacts(run)
    return run
