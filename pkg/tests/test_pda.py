import numpy as np
import pytest

from rtlkit.errors import ConfigError, DatasetError, DegenerateModelError, PlacementError
from rtlkit.pda import (
    PdaConfig,
    anchor_crop,
    class_prior_scale,
    mix,
    nearest_anchor_partition,
    place_on_floor,
    random_rotate_z,
    random_scale,
)
from rtlkit.pointcloud import PointCloud, bounding_box, transform_points, voxelize


def grid_cloud(rng, n=64, extent=1.0):
    return PointCloud(rng.random((n, 3)) * extent)


class TestPdaConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            PdaConfig(scale_range=(0, 1.1))
        with pytest.raises(ConfigError):
            PdaConfig(crop_anchor_range=(1, 5))
        with pytest.raises(ConfigError):
            PdaConfig(crop_probability=1.5)
        with pytest.raises(ConfigError):
            PdaConfig(mix_mode="both")


class TestPriorScale:
    def test_ratio(self):
        pc = PointCloud(np.array([[0, 0, 0], [0, 0, 2.0]]))
        out = class_prior_scale(pc, 1, {1: 1.0})
        lo, hi = bounding_box(out)
        assert hi[2] - lo[2] == pytest.approx(1.0)

    def test_identity_when_matching(self):
        pc = PointCloud(np.array([[0, 0, 0], [0.3, 0.1, 1.0]]))
        out = class_prior_scale(pc, 2, {2: 1.0})
        np.testing.assert_allclose(out.positions, pc.positions, atol=1e-12)

    def test_flat_model_errors(self):
        pc = PointCloud(np.array([[0, 0, 0.5], [1, 1, 0.5]]))
        with pytest.raises(DegenerateModelError):
            class_prior_scale(pc, 1, {1: 1.0})

    def test_missing_prior(self):
        pc = PointCloud(np.array([[0, 0, 0], [0, 0, 1.0]]))
        with pytest.raises(ConfigError):
            class_prior_scale(pc, 3, {1: 1.0})


class TestRandomRotateScale:
    def test_rotation_reproducible(self):
        rng = np.random.default_rng(0)
        pc = grid_cloud(rng)
        a = random_rotate_z(pc, np.random.default_rng(1))
        b = random_rotate_z(pc, np.random.default_rng(1))
        np.testing.assert_array_equal(a.positions, b.positions)

    def test_rotation_keeps_z(self):
        rng = np.random.default_rng(2)
        pc = grid_cloud(rng)
        out = random_rotate_z(pc, rng)
        np.testing.assert_allclose(out.positions[:, 2], pc.positions[:, 2], atol=1e-9)

    def test_rotation_is_isometry(self):
        rng = np.random.default_rng(3)
        pc = grid_cloud(rng, 40)
        out = random_rotate_z(pc, rng)
        d_in = np.linalg.norm(pc.positions[:20] - pc.positions[20:], axis=1)
        d_out = np.linalg.norm(out.positions[:20] - out.positions[20:], axis=1)
        np.testing.assert_allclose(d_in, d_out, atol=1e-6)

    def test_scale_collapsed_range_is_identity(self):
        rng = np.random.default_rng(4)
        pc = grid_cloud(rng)
        out = random_scale(pc, rng, (1.0, 1.0))
        np.testing.assert_allclose(out.positions, pc.positions, atol=1e-12)

    def test_scale_support(self):
        rng = np.random.default_rng(5)
        pc = PointCloud(np.array([[0, 0, 0], [1, 1, 1.0]]))
        for _ in range(200):
            out = random_scale(pc, rng)
            diag_ratio = np.linalg.norm(out.positions[1] - out.positions[0]) / np.sqrt(3)
            assert 0.9 - 1e-9 <= diag_ratio <= 1.1 + 1e-9

    def test_scale_affects_bbox_diagonal_exactly(self):
        rng = np.random.default_rng(6)
        pc = grid_cloud(rng, 30)
        out = random_scale(pc, np.random.default_rng(7), (1.05, 1.05))
        lo, hi = bounding_box(pc)
        lo2, hi2 = bounding_box(out)
        assert np.linalg.norm(hi2 - lo2) == pytest.approx(1.05 * np.linalg.norm(hi - lo))


class TestAnchorCrop:
    def test_partition_fixture(self):
        # 6 collinear points with anchors at both ends: the tie at x=2 goes
        # to the nearer anchor 0, x=3 to anchor 1
        positions = np.column_stack([np.arange(6.0), np.zeros(6), np.zeros(6)])
        labels = nearest_anchor_partition(positions, positions[[0, 5]])
        np.testing.assert_array_equal(labels, [0, 0, 0, 1, 1, 1])

    def test_zero_probability_is_identity(self):
        rng = np.random.default_rng(0)
        pc = grid_cloud(rng, 20)
        cfg = PdaConfig(crop_probability=0.0)
        out = anchor_crop(pc, rng, cfg)
        np.testing.assert_array_equal(out.positions, pc.positions)

    def test_small_cloud_noop(self):
        rng = np.random.default_rng(1)
        pc = grid_cloud(rng, 5)
        out = anchor_crop(pc, rng, PdaConfig(crop_probability=1.0))
        assert out.count == 5

    def test_subset_property(self):
        rng = np.random.default_rng(2)
        cfg = PdaConfig(crop_probability=1.0)
        for _ in range(300):
            pc = grid_cloud(rng, int(rng.integers(6, 60)))
            out = anchor_crop(pc, rng, cfg)
            assert 0 < out.count <= pc.count
            pool = {tuple(p) for p in pc.positions}
            assert all(tuple(p) in pool for p in out.positions)

    def test_removed_set_is_single_cluster(self):
        rng = np.random.default_rng(3)
        cfg = PdaConfig(crop_probability=1.0)
        for _ in range(50):
            pc = grid_cloud(rng, 40)
            out = anchor_crop(pc, rng, cfg)
            if out.count == pc.count:
                continue
            kept = {tuple(p) for p in out.positions}
            removed = np.array([p for p in pc.positions if tuple(p) not in kept])
            # removed points must be farther from every kept point's anchor
            # cell; verify removal count is between 1 and n-1
            assert 1 <= len(removed) <= pc.count - 1


class TestPlaceOnFloor:
    def test_min_z_alignment(self):
        pc = PointCloud(np.array([[0, 0, 0.3], [0.1, 0.1, 1.1]]))
        tr = place_on_floor(pc, (np.zeros(3), np.array([4, 4, 0])), 0.0, np.random.default_rng(0))
        assert tr.translation[2] == pytest.approx(-0.3)

    def test_footprint_equal_to_box_errors(self):
        pc = PointCloud(np.array([[0, 0, 0], [1, 1, 1.0]]))
        with pytest.raises(PlacementError):
            place_on_floor(pc, (np.zeros(3), np.array([1, 1, 0])), 0.0, np.random.default_rng(0))

    def test_placement_statistics(self):
        rng = np.random.default_rng(1)
        pc = PointCloud(rng.random((30, 3)) * 0.4)
        box = (np.array([-2.0, -2.0, 0.0]), np.array([2.0, 2.0, 0.0]))
        for _ in range(300):
            tr = place_on_floor(pc, box, 0.25, rng)
            placed = transform_points(pc, tr)
            lo, hi = bounding_box(placed)
            assert lo[2] == pytest.approx(0.25, abs=1e-6)
            assert lo[0] >= -2 - 1e-9 and hi[0] <= 2 + 1e-9
            assert lo[1] >= -2 - 1e-9 and hi[1] <= 2 + 1e-9


class TestMix:
    def scene(self, n=100):
        rng = np.random.default_rng(10)
        return PointCloud(rng.random((n, 3)) * 2.0)

    def model(self, n=50, offset=5.0):
        rng = np.random.default_rng(11)
        return PointCloud(rng.random((n, 3)) * 0.3 + offset)

    def test_disjoint_concatenation(self):
        cfg = PdaConfig()
        out = mix(self.scene(), [(self.model(), 2)], np.random.default_rng(0), cfg)
        assert out.count == 150
        assert (out.labels == 0).sum() == 100
        assert (out.labels == 2).sum() == 50
        assert set(np.unique(out.source)) == {"scene", "model-0"}

    def test_overlap_filter_removes_scene_points(self):
        # model sits on top of part of the scene; force the filter branch
        scene = PointCloud(np.array([[0.01, 0.01, 0.01], [0.09, 0.01, 0.01], [3, 3, 3]]))
        model = PointCloud(np.array([[0.02, 0.02, 0.02], [0.08, 0.02, 0.02]]))
        cfg = PdaConfig(overlap_keep_probability=0.0, voxel_size=0.05)
        out = mix(scene, [(model, 1)], np.random.default_rng(0), cfg)
        scene_left = out.positions[out.source == "scene"]
        # both near-origin scene points shared voxels with the model
        assert len(scene_left) == 1
        np.testing.assert_array_equal(scene_left[0], [3, 3, 3])

    def test_overlap_keep_retains_everything(self):
        scene = PointCloud(np.array([[0.01, 0.01, 0.01], [3, 3, 3]]))
        model = PointCloud(np.array([[0.02, 0.02, 0.02]]))
        cfg = PdaConfig(overlap_keep_probability=1.0, voxel_size=0.05)
        out = mix(scene, [(model, 1)], np.random.default_rng(0), cfg)
        assert out.count == 3

    def test_models_only_mode(self):
        cfg = PdaConfig(mix_mode="models_only")
        models = [(self.model(offset=i), i + 1) for i in range(4)]
        out = mix(None, models, np.random.default_rng(0), cfg)
        assert np.all(out.source != "scene")
        assert set(np.unique(out.labels)) == {1, 2, 3, 4}

    def test_zero_models_rejected(self):
        with pytest.raises(DatasetError):
            mix(self.scene(), [], np.random.default_rng(0), PdaConfig())

    def test_label_rule_by_source(self):
        cfg = PdaConfig()
        scene = self.scene()
        out = mix(scene, [(self.model(), 3)], np.random.default_rng(1), cfg)
        assert np.all(out.labels[out.source == "scene"] == 0)
        assert np.all(out.labels[out.source != "scene"] == 3)

    def test_flip_filter_side(self):
        scene = PointCloud(np.array([[0.01, 0.01, 0.01], [3, 3, 3]]))
        model = PointCloud(np.array([[0.02, 0.02, 0.02], [5, 5, 5]]))
        cfg = PdaConfig(
            overlap_keep_probability=0.0, voxel_size=0.05, filter_overlap_side="model"
        )
        out = mix(scene, [(model, 1)], np.random.default_rng(0), cfg)
        kept_model = out.positions[out.source == "model-0"]
        np.testing.assert_array_equal(kept_model, [[5, 5, 5]])


class TestDeterminism:
    def test_full_pipeline_reproducible(self):
        cfg = PdaConfig(crop_probability=0.7, class_prior_heights={1: 0.5})
        rng_pc = np.random.default_rng(20)
        model = PointCloud(rng_pc.random((40, 3)))
        scene = PointCloud(rng_pc.random((200, 3)) * 3.0)

        def run(seed):
            rng = np.random.default_rng(seed)
            m = class_prior_scale(model, 1, cfg.class_prior_heights)
            m = random_rotate_z(m, rng)
            m = random_scale(m, rng, cfg.scale_range)
            m = anchor_crop(m, rng, cfg)
            tr = place_on_floor(m, bounding_box(scene), 0.0, rng)
            return mix(scene, [(transform_points(m, tr), 1)], rng, cfg)

        a, b = run(5), run(5)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.labels, b.labels)
