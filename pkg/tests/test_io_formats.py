import json

import numpy as np
import pytest

from rtlkit.errors import DatasetError, ParseError, RtlkitError, UnsupportedFormatError
from rtlkit.evaluation import make_eval_result
from rtlkit.io_formats import (
    DatasetManifest,
    ManifestEntry,
    parse_manifest,
    parse_off,
    parse_ply,
    read_labels,
    write_metrics,
    write_ply,
)
from rtlkit.pointcloud import ClassTaxonomy, Mesh, PointCloud

MINI_OFF = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"


class TestOff:
    def test_minimal(self):
        mesh = parse_off(MINI_OFF)
        assert mesh.vertices.shape == (3, 3)
        assert mesh.faces.shape == (1, 3)

    def test_fused_header(self):
        mesh = parse_off("OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
        np.testing.assert_array_equal(mesh.faces, [[0, 1, 2]])

    def test_bytes_input(self):
        assert parse_off(MINI_OFF.encode()).vertices.shape == (3, 3)

    def test_fan_triangulation(self):
        text = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"
        mesh = parse_off(text)
        np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3]])

    def test_comments_ignored(self):
        text = "# made by hand\nOFF\n3 1 0\n0 0 0 # origin\n1 0 0\n0 1 0\n3 0 1 2\n"
        assert parse_off(text).vertices.shape == (3, 3)

    def test_missing_header(self):
        with pytest.raises(ParseError):
            parse_off("3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")

    def test_index_out_of_range_names_line(self):
        text = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n"
        with pytest.raises(ParseError) as info:
            parse_off(text)
        assert info.value.line == 6

    def test_truncated(self):
        with pytest.raises(ParseError):
            parse_off("OFF\n3 1 0\n0 0 0\n")


class TestPly:
    def test_binary_roundtrip_bit_exact(self):
        rng = np.random.default_rng(0)
        pos = rng.normal(size=(1000, 3)).astype(np.float32)
        pc = PointCloud(pos, labels=rng.integers(0, 7, 1000))
        back = parse_ply(write_ply(pc))
        np.testing.assert_array_equal(back.positions, pos.astype(np.float64))
        np.testing.assert_array_equal(back.labels, pc.labels)

    def test_ascii_roundtrip(self):
        rng = np.random.default_rng(1)
        pc = PointCloud(rng.normal(size=(50, 3)))
        back = parse_ply(write_ply(pc, mode="ascii"))
        np.testing.assert_allclose(back.positions, pc.positions, rtol=1e-6, atol=1e-7)

    def test_label_property_populates_labels(self):
        text = (
            "ply\nformat ascii 1.0\nelement vertex 2\n"
            "property float x\nproperty float y\nproperty float z\n"
            "property int label\nend_header\n0 0 0 3\n1 1 1 0\n"
        )
        pc = parse_ply(text.encode())
        np.testing.assert_array_equal(pc.labels, [3, 0])

    def test_extra_properties_become_features(self):
        rng = np.random.default_rng(2)
        pc = PointCloud(rng.normal(size=(20, 3)), features=rng.random((20, 2)).astype(np.float32))
        data = write_ply(pc, feature_names=["p_a", "p_b"])
        back = parse_ply(data)
        np.testing.assert_allclose(back.features, pc.features, rtol=1e-6)

    def test_missing_z_is_parse_error(self):
        text = (
            "ply\nformat ascii 1.0\nelement vertex 1\n"
            "property float x\nproperty float y\nend_header\n0 0\n"
        )
        with pytest.raises(ParseError):
            parse_ply(text.encode())

    def test_big_endian_unsupported(self):
        text = "ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n"
        with pytest.raises(UnsupportedFormatError):
            parse_ply(text.encode())

    def test_mesh_roundtrip(self):
        mesh = Mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float), np.array([[0, 1, 2]]))
        text = (
            "ply\nformat ascii 1.0\nelement vertex 3\n"
            "property float x\nproperty float y\nproperty float z\n"
            "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
            "0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"
        )
        parsed = parse_ply(text.encode())
        assert isinstance(parsed, Mesh)
        np.testing.assert_array_equal(parsed.faces, mesh.faces)

    def test_roundtrip_property_random_clouds(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            n = int(rng.integers(1, 200))
            pc = PointCloud(
                rng.normal(size=(n, 3)).astype(np.float32),
                labels=rng.integers(0, 4, n),
            )
            back = parse_ply(write_ply(pc))
            np.testing.assert_array_equal(back.positions, pc.positions)
            np.testing.assert_array_equal(back.labels, pc.labels)

    def test_fuzzed_inputs_raise_structured_errors(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            blob = bytes(rng.integers(0, 256, size=int(rng.integers(0, 120)), dtype=np.uint8))
            try:
                parse_ply(b"ply\n" + blob)
            except RtlkitError:
                pass
        for _ in range(200):
            blob = bytes(rng.integers(32, 127, size=int(rng.integers(0, 120)), dtype=np.uint8))
            try:
                parse_off(b"OFF" + blob)
            except RtlkitError:
                pass


class TestLabelsAndMetrics:
    def test_read_labels(self, tmp_path):
        p = tmp_path / "labels.txt"
        p.write_text("0\n3\n1\n")
        np.testing.assert_array_equal(read_labels(p), [0, 3, 1])

    def test_read_labels_empty(self, tmp_path):
        p = tmp_path / "labels.txt"
        p.write_text("")
        assert read_labels(p).size == 0

    def test_read_labels_bad_line(self, tmp_path):
        p = tmp_path / "labels.txt"
        p.write_text("0\nx\n")
        with pytest.raises(ParseError) as info:
            read_labels(p)
        assert info.value.line == 2

    def test_metrics_json_mean(self):
        result = make_eval_result(
            {"a": 1.0, "b": 0.5}, {"points": 10}, "cafe", seed=3
        )
        doc = json.loads(write_metrics(result))
        assert doc["amap"] == pytest.approx(0.75)
        assert doc["config_hash"] == "cafe"
        assert doc["seed"] == 3


class TestManifest:
    def tax(self):
        return ClassTaxonomy(("background", "box"))

    def test_roundtrip(self):
        manifest = DatasetManifest(
            self.tax(),
            (
                ManifestEntry("models/a.ply", "model", 1),
                ManifestEntry("scenes/s.ply", "scene"),
            ),
        )
        back = parse_manifest(manifest.to_json())
        assert back.num_models == 1
        assert back.num_scenes == 1
        assert back.taxonomy.names == ("background", "box")

    def test_duplicate_paths_rejected(self):
        with pytest.raises(DatasetError):
            DatasetManifest(
                self.tax(),
                (
                    ManifestEntry("a.ply", "model", 1),
                    ManifestEntry("a.ply", "scene"),
                ),
            )

    def test_model_needs_class(self):
        with pytest.raises(DatasetError):
            DatasetManifest(self.tax(), (ManifestEntry("a.ply", "model"),))

    def test_scene_must_not_carry_class(self):
        with pytest.raises(DatasetError):
            DatasetManifest(self.tax(), (ManifestEntry("a.ply", "scene", 1),))
