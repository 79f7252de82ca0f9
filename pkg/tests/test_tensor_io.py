import numpy as np
import numpy.lib.format as npy_format
import pytest

from chip.errors import (
    ManifestError,
    NonFiniteValueError,
    NpyFormatError,
    ShapeMismatchError,
)
from chip.tensor_io import (
    ActivationMatrix,
    DumpManifest,
    FeatureMapSet,
    LayerEntry,
    dematricize,
    load_feature_maps,
    load_sample,
    matricize,
    read_npy,
    write_feature_maps,
    write_npy,
)


def one_layer_manifest(c, h, w, layer_id="l0", num_samples=1, dtype="f32"):
    return DumpManifest(
        model_name="test",
        layers=(LayerEntry(layer_id, c, h, w, "{layer}_s{sample}.npy"),),
        num_samples=num_samples,
        dtype=dtype,
    )


class TestNpyRoundTrip:
    def test_f32_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.standard_normal((16, 8, 8)).astype(np.float32)
        path = tmp_path / "a.npy"
        write_npy(path, arr, dtype="f32")
        man = one_layer_manifest(16, 8, 8)
        fms = load_feature_maps(path, man, "l0", 0)
        assert fms.c == 16 and fms.h == 8 and fms.w == 8
        np.testing.assert_array_equal(fms.data, arr.astype(np.float64))

    def test_write_then_load_random_tensor(self, tmp_path):
        rng = np.random.default_rng(1)
        fms = FeatureMapSet("l0", 0, rng.standard_normal((8, 4, 4)))
        path = tmp_path / "b.npy"
        write_feature_maps(fms, path, dtype="f64")
        man = one_layer_manifest(8, 4, 4, dtype="f64")
        again = load_feature_maps(path, man, "l0", 0)
        np.testing.assert_array_equal(again.data, fms.data)

    def test_f64_narrowed_to_f32(self, tmp_path):
        rng = np.random.default_rng(2)
        orig = rng.standard_normal((4, 3, 3))
        fms = FeatureMapSet("l0", 0, orig)
        path = tmp_path / "c.npy"
        write_feature_maps(fms, path, dtype="f32")
        loaded = load_feature_maps(path, one_layer_manifest(4, 3, 3), "l0", 0)
        np.testing.assert_array_equal(loaded.data, orig.astype(np.float32))
        np.testing.assert_allclose(loaded.data, orig, rtol=1e-6, atol=1e-7)

    def test_write_into_missing_parent_creates_it(self, tmp_path):
        fms = FeatureMapSet("l0", 0, np.ones((2, 2, 2)))
        path = tmp_path / "sub" / "dir" / "d.npy"
        write_feature_maps(fms, path)
        assert read_npy(path).shape == (2, 2, 2)

    def test_write_io_failure(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("plain file")
        fms = FeatureMapSet("l0", 0, np.ones((2, 2, 2)))
        with pytest.raises(OSError):
            write_feature_maps(fms, blocker / "nested" / "e.npy")


class TestNpyValidation:
    def test_rejects_v2_header(self, tmp_path):
        path = tmp_path / "v2.npy"
        with path.open("wb") as fp:
            npy_format.write_array(fp, np.zeros((3, 3)), version=(2, 0))
        with pytest.raises(NpyFormatError, match="version 2.0"):
            read_npy(path)

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "bad.npy"
        path.write_bytes(b"NOTNUMPYDATA")
        with pytest.raises(NpyFormatError, match="magic"):
            read_npy(path)

    def test_rejects_garbage_header(self, tmp_path):
        path = tmp_path / "garbage.npy"
        path.write_bytes(b"\x93NUMPY\x01\x00" + b"\xff" * 32)
        with pytest.raises(NpyFormatError):
            read_npy(path)

    def test_rejects_truncated_data(self, tmp_path):
        path = tmp_path / "trunc.npy"
        write_npy(path, np.ones((8, 8)), dtype="f64")
        raw = path.read_bytes()
        path.write_bytes(raw[:-64])
        with pytest.raises(NpyFormatError, match="truncated"):
            read_npy(path)

    def test_rejects_int_dtype(self, tmp_path):
        path = tmp_path / "ints.npy"
        with path.open("wb") as fp:
            npy_format.write_array(fp, np.zeros((2, 2), dtype=np.int32), version=(1, 0))
        with pytest.raises(NpyFormatError, match="dtype"):
            read_npy(path)

    def test_shape_mismatch_against_manifest(self, tmp_path):
        path = tmp_path / "flat.npy"
        write_npy(path, np.zeros((16, 64), dtype=np.float32), dtype="f32")
        with pytest.raises(ShapeMismatchError, match=r"\(16, 64\)"):
            load_feature_maps(path, one_layer_manifest(16, 8, 8), "l0", 0)

    def test_nan_names_layer_and_sample(self, tmp_path):
        arr = np.zeros((16, 8, 8), dtype=np.float32)
        arr[3, 2, 1] = np.nan
        path = tmp_path / "nan.npy"
        write_npy(path, arr, dtype="f32")
        with pytest.raises(NonFiniteValueError, match="'l0' sample 7"):
            load_feature_maps(path, one_layer_manifest(16, 8, 8), "l0", 7)


class TestManifest:
    def test_round_trip(self, tmp_path):
        man = one_layer_manifest(4, 2, 2, num_samples=5)
        path = tmp_path / "manifest.json"
        man.save(path)
        assert DumpManifest.load(path) == man

    def test_duplicate_layer_ids_rejected(self):
        entry = LayerEntry("dup", 2, 2, 2, "{layer}_{sample}.npy")
        with pytest.raises(ManifestError, match="unique"):
            DumpManifest("m", (entry, entry), 1, "f32")

    def test_bad_dtype_rejected(self):
        with pytest.raises(ManifestError, match="dtype"):
            one_layer_manifest(2, 2, 2, dtype="f16")

    def test_pattern_substitution(self, tmp_path):
        man = one_layer_manifest(2, 2, 2, layer_id="convA", num_samples=3)
        fms = FeatureMapSet("convA", 2, np.ones((2, 2, 2)))
        write_feature_maps(fms, man.sample_path(tmp_path, "convA", 2), dtype="f32")
        assert (tmp_path / "convA_s2.npy").exists()
        loaded = load_sample(tmp_path, man, "convA", 2)
        np.testing.assert_array_equal(loaded.data, fms.data)

    def test_unknown_layer(self):
        with pytest.raises(ManifestError, match="not in manifest"):
            one_layer_manifest(2, 2, 2).layer("nope")


class TestMatricize:
    def test_two_channel_example(self):
        t = np.array([[[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]]])
        m = matricize(FeatureMapSet("l0", 0, t))
        np.testing.assert_array_equal(m.data, [[1, 2, 3, 4], [5, 6, 7, 8]])

    def test_degenerate_spatial(self):
        t = np.arange(5.0).reshape(5, 1, 1)
        m = matricize(FeatureMapSet("l0", 0, t))
        assert m.rows == 5 and m.cols == 1
        np.testing.assert_array_equal(m.data[:, 0], np.arange(5.0))

    def test_round_trip_random(self):
        rng = np.random.default_rng(42)
        fms = FeatureMapSet("l0", 3, rng.standard_normal((4, 3, 5)))
        m = matricize(fms)
        assert m.rows == 4 and m.cols == 15
        back = dematricize(m, 3, 5, sample_id=3)
        np.testing.assert_array_equal(back.data, fms.data)
        assert back.layer_id == fms.layer_id and back.sample_id == fms.sample_id

    def test_dematricize_shape_check(self):
        m = ActivationMatrix("l0", np.ones((2, 6)))
        with pytest.raises(ShapeMismatchError):
            dematricize(m, 4, 4)

    def test_immutability(self):
        fms = FeatureMapSet("l0", 0, np.ones((2, 2, 2)))
        with pytest.raises(ValueError):
            fms.data[0, 0, 0] = 5.0
