import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dldiag.artifacts import (
    ArtifactError,
    load_run,
    make_run,
    read_tensor,
    write_run,
    write_tensor,
)


def _roundtrip(run, tmp_path):
    manifest = write_run(run, tmp_path / "run")
    return load_run(manifest)


class TestRoundTrip:
    def test_bit_exact(self, small_run, tmp_path):
        loaded = _roundtrip(small_run, tmp_path)
        assert loaded.run_id == small_run.run_id
        assert loaded.class_count == small_run.class_count
        assert loaded.layer_names == small_run.layer_names
        assert loaded.latent_layer == small_run.latent_layer
        for a, b in zip(loaded.layers, small_run.layers):
            assert a.values.tobytes() == b.values.tobytes()
        assert np.array_equal(loaded.true_labels, small_run.true_labels)
        assert np.array_equal(loaded.predicted_labels, small_run.predicted_labels)

    def test_structure_on_disk(self, small_run, tmp_path):
        manifest_path = write_run(small_run, tmp_path / "run")
        manifest = json.loads(manifest_path.read_text())
        assert manifest["item_count"] == small_run.item_count
        assert len(manifest["layers"]) == len(small_run.layers)
        assert (tmp_path / "run" / manifest["labels_path"]).exists()
        for entry in manifest["layers"]:
            assert (tmp_path / "run" / entry["tensor_path"]).exists()

    @settings(max_examples=25, deadline=None)
    @given(
        items=st.integers(1, 8),
        neurons=st.integers(1, 5),
        classes=st.integers(2, 4),
        seed=st.integers(0, 10_000),
    )
    def test_random_artifacts_roundtrip(self, tmp_path_factory, items, neurons, classes, seed):
        rng = np.random.default_rng(seed)
        run = make_run(
            run_id=f"prop-{seed}",
            class_count=classes,
            layers=[("only", rng.random((items, neurons)) * 10)],
            true_labels=rng.integers(0, classes, items),
            predicted_labels=rng.integers(0, classes, items),
            latent_layer="only",
        )
        out = tmp_path_factory.mktemp("rt")
        loaded = load_run(write_run(run, out))
        assert loaded.layers[0].values.tobytes() == run.layers[0].values.tobytes()
        assert np.array_equal(loaded.true_labels, run.true_labels)


class TestTensorFormat:
    def test_header_layout(self, tmp_path):
        values = np.arange(6, dtype=np.float32).reshape(2, 3)
        path = tmp_path / "t.dldg"
        write_tensor(path, values)
        raw = path.read_bytes()
        assert raw[:4] == b"DLDG"
        assert int.from_bytes(raw[4:6], "little") == 1
        assert int.from_bytes(raw[6:14], "little") == 2
        assert int.from_bytes(raw[14:22], "little") == 3
        assert np.array_equal(read_tensor(path), values)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.dldg"
        path.write_bytes(b"NOPE" + bytes(18))
        with pytest.raises(ArtifactError, match="magic"):
            read_tensor(path)

    def test_truncated_payload(self, tmp_path):
        values = np.ones((4, 4), dtype=np.float32)
        path = tmp_path / "t.dldg"
        write_tensor(path, values)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ArtifactError, match="expected"):
            read_tensor(path)


class TestValidation:
    def test_header_mismatch(self, small_run, tmp_path):
        manifest_path = write_run(small_run, tmp_path / "run")
        manifest = json.loads(manifest_path.read_text())
        manifest["item_count"] = small_run.item_count - 1
        manifest_path.write_text(json.dumps(manifest))
        with pytest.raises(ArtifactError, match="mismatch"):
            load_run(manifest_path)

    def test_nan_names_item_and_neuron(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.random((5, 3)).astype(np.float32)
        values[3, 1] = np.nan
        run = make_run(
            "ok", 2, [("fc", rng.random((5, 3)))], [0, 1, 0, 1, 0], [0, 1, 0, 1, 0], "fc"
        )
        manifest_path = write_run(run, tmp_path / "run")
        tensor_path = json.loads(manifest_path.read_text())["layers"][0]["tensor_path"]
        write_tensor(tmp_path / "run" / tensor_path, values)
        with pytest.raises(ArtifactError, match="item 3, neuron 1"):
            load_run(manifest_path)

    def test_nan_rejected_at_construction(self):
        values = np.ones((2, 2))
        values[1, 0] = np.inf
        with pytest.raises(ArtifactError, match="item 1, neuron 0"):
            make_run("bad", 2, [("fc", values)], [0, 1], [0, 1], "fc")

    def test_label_out_of_range(self, tmp_path):
        run = make_run("ok", 2, [("fc", np.ones((3, 2)))], [0, 1, 0], [0, 1, 1], "fc")
        manifest_path = write_run(run, tmp_path / "run")
        labels = tmp_path / "run" / "labels.csv"
        labels.write_text(
            "item_id,true_label,predicted_label\n0,0,0\n1,5,1\n2,0,0\n"
        )
        with pytest.raises(ArtifactError, match=r"item 1: true_label 5"):
            load_run(manifest_path)

    def test_missing_tensor_file(self, small_run, tmp_path):
        manifest_path = write_run(small_run, tmp_path / "run")
        manifest = json.loads(manifest_path.read_text())
        manifest["layers"][0]["tensor_path"] = "gone.dldg"
        manifest_path.write_text(json.dumps(manifest))
        with pytest.raises(ArtifactError, match="not found"):
            load_run(manifest_path)

    def test_latent_layer_must_exist(self):
        with pytest.raises(ArtifactError, match="latent_layer"):
            make_run("bad", 2, [("fc", np.ones((2, 2)))], [0, 1], [0, 1], "nope")

    def test_duplicate_layer_names(self):
        with pytest.raises(ArtifactError, match="duplicate"):
            make_run(
                "bad",
                2,
                [("fc", np.ones((2, 2))), ("fc", np.ones((2, 3)))],
                [0, 1],
                [0, 1],
                "fc",
            )

    def test_write_failure_is_io_error(self, small_run, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("a plain file where the run directory should go")
        with pytest.raises(OSError):
            write_run(small_run, blocker / "run")

    def test_loaded_arrays_are_readonly(self, small_run, tmp_path):
        loaded = _roundtrip(small_run, tmp_path)
        with pytest.raises(ValueError):
            loaded.layers[0].values[0, 0] = 1.0
