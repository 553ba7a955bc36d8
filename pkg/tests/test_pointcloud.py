import numpy as np
import pytest

from rtlkit.errors import (
    EmptyInputError,
    InvalidParameterError,
    InvalidTransformError,
    ShapeError,
)
from rtlkit.pointcloud import (
    ClassTaxonomy,
    Mesh,
    PointCloud,
    RigidScaleTransform,
    bounding_box,
    estimate_floor_z,
    transform_points,
    voxelize,
)


def random_cloud(rng, n=64):
    return PointCloud(rng.normal(size=(n, 3)))


class TestPointCloud:
    def test_defaults(self):
        pc = PointCloud(np.zeros((4, 3)))
        assert pc.count == 4
        assert pc.features.shape == (4, 1)
        assert np.all(pc.features == 1.0)
        assert np.all(pc.labels == 0)
        assert np.all(pc.source == "scene")

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidParameterError):
            PointCloud(np.array([[0.0, 0.0, np.inf]]))

    def test_rejects_mismatched_rows(self):
        with pytest.raises(ShapeError):
            PointCloud(np.zeros((3, 3)), features=np.zeros((2, 1)))
        with pytest.raises(ShapeError):
            PointCloud(np.zeros((3, 3)), labels=np.zeros(2, dtype=int))

    def test_arrays_are_immutable(self):
        pc = PointCloud(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            pc.positions[0, 0] = 1.0


class TestMesh:
    def test_face_index_out_of_range(self):
        with pytest.raises(InvalidParameterError):
            Mesh(np.zeros((2, 3)), np.array([[0, 1, 2]]))

    def test_repeated_vertex_in_face(self):
        with pytest.raises(InvalidParameterError):
            Mesh(np.zeros((3, 3)), np.array([[0, 1, 1]]))

    def test_surface_area(self):
        m = Mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))
        assert m.surface_area() == pytest.approx(0.5)


class TestTaxonomy:
    def test_background_reserved(self):
        tax = ClassTaxonomy(("background", "chair"))
        assert tax.num_classes == 2
        assert tax.foreground == (1,)

    def test_needs_two_classes(self):
        with pytest.raises(InvalidParameterError):
            ClassTaxonomy(("background",))


class TestTransformPoints:
    def test_identity(self):
        rng = np.random.default_rng(0)
        pc = random_cloud(rng)
        out = transform_points(pc, RigidScaleTransform.identity())
        np.testing.assert_array_equal(out.positions, pc.positions)

    def test_quarter_turn(self):
        pc = PointCloud(np.array([[1.0, 0.0, 0.0]]))
        out = transform_points(pc, RigidScaleTransform(yaw=np.pi / 2))
        np.testing.assert_allclose(out.positions, [[0.0, 1.0, 0.0]], atol=1e-12)

    def test_scale_then_translate(self):
        pc = PointCloud(np.array([[1.0, 1.0, 0.0]]))
        tr = RigidScaleTransform(scale=2.0, translation=(0, 0, 1))
        np.testing.assert_allclose(
            transform_points(pc, tr).positions, [[2.0, 2.0, 1.0]], atol=1e-12
        )

    def test_invalid_scale(self):
        with pytest.raises(InvalidTransformError):
            RigidScaleTransform(scale=0.0)
        with pytest.raises(InvalidTransformError):
            RigidScaleTransform(scale=-1.0)

    def test_preserves_distance_ratios(self):
        rng = np.random.default_rng(1)
        pc = random_cloud(rng, 32)
        tr = RigidScaleTransform(yaw=0.7, scale=2.5, translation=(1, -2, 3))
        out = transform_points(pc, tr)
        d_in = np.linalg.norm(pc.positions[:16] - pc.positions[16:], axis=1)
        d_out = np.linalg.norm(out.positions[:16] - out.positions[16:], axis=1)
        ratios = d_out / d_in
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-9)

    def test_unit_scale_is_isometry(self):
        rng = np.random.default_rng(2)
        pc = random_cloud(rng, 40)
        out = transform_points(pc, RigidScaleTransform(yaw=1.2, translation=(0.3, 0, -1)))
        d_in = np.linalg.norm(pc.positions[:20] - pc.positions[20:], axis=1)
        d_out = np.linalg.norm(out.positions[:20] - out.positions[20:], axis=1)
        np.testing.assert_allclose(d_in, d_out, atol=1e-9)

    def test_metadata_unchanged(self):
        pc = PointCloud(
            np.ones((2, 3)), labels=np.array([1, 2]), source=np.array(["a", "b"])
        )
        out = transform_points(pc, RigidScaleTransform(yaw=0.5))
        np.testing.assert_array_equal(out.labels, pc.labels)
        np.testing.assert_array_equal(out.source, pc.source)


class TestVoxelize:
    def test_basic_cell(self):
        pc = PointCloud(np.array([[0.07, 0.12, 0.02]]))
        grid = voxelize(pc, 0.05)
        assert list(grid.cells) == [(1, 2, 0)]

    def test_duplicate_points_share_cell(self):
        pc = PointCloud(np.array([[0.2, 0.2, 0.2], [0.2, 0.2, 0.2]]))
        grid = voxelize(pc, 0.05)
        (indices,) = grid.cells.values()
        np.testing.assert_array_equal(indices, [0, 1])

    def test_floor_toward_negative_infinity(self):
        pc = PointCloud(np.array([[-0.01, 0.0, 0.0]]))
        grid = voxelize(pc, 0.05)
        assert list(grid.cells) == [(-1, 0, 0)]

    def test_invalid_size(self):
        pc = PointCloud(np.zeros((1, 3)))
        with pytest.raises(InvalidParameterError):
            voxelize(pc, 0.0)

    def test_flatten_recovers_index_set(self):
        rng = np.random.default_rng(3)
        pc = random_cloud(rng, 200)
        grid = voxelize(pc, 0.3)
        np.testing.assert_array_equal(grid.flatten_indices(), np.arange(200))


class TestFloorEstimate:
    def test_uniform_grid(self):
        z = np.arange(100) / 100.0
        pc = PointCloud(np.column_stack([np.zeros(100), np.zeros(100), z]))
        assert estimate_floor_z(pc) == pytest.approx(0.01)

    def test_constant(self):
        pc = PointCloud(np.column_stack([np.zeros(5), np.zeros(5), np.full(5, 0.3)]))
        assert estimate_floor_z(pc) == pytest.approx(0.3)

    def test_outlier_resistant(self):
        # oracle: nearest-rank percentile of 99 zeros and one outlier is 0
        z = np.concatenate([np.zeros(99), [5.0]])
        pc = PointCloud(np.column_stack([np.zeros(100), np.zeros(100), z]))
        assert estimate_floor_z(pc) == 0.0

    def test_translation_equivariance(self):
        rng = np.random.default_rng(4)
        pc = random_cloud(rng, 50)
        tr = RigidScaleTransform(translation=(0, 0, 2.5))
        assert estimate_floor_z(transform_points(pc, tr)) == pytest.approx(
            estimate_floor_z(pc) + 2.5
        )

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            estimate_floor_z(PointCloud(np.zeros((0, 3))))


class TestBoundingBox:
    def test_single_point(self):
        pc = PointCloud(np.array([[1.0, 2.0, 3.0]]))
        lo, hi = bounding_box(pc)
        np.testing.assert_array_equal(lo, [1, 2, 3])
        np.testing.assert_array_equal(hi, [1, 2, 3])

    def test_two_points(self):
        pc = PointCloud(np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]))
        lo, hi = bounding_box(pc)
        np.testing.assert_array_equal(lo, [0, 0, 0])
        np.testing.assert_array_equal(hi, [1, 2, 3])

    def test_translation_shifts_box(self):
        rng = np.random.default_rng(5)
        pc = random_cloud(rng, 30)
        out = transform_points(pc, RigidScaleTransform(translation=(1, 0, 0)))
        lo, hi = bounding_box(pc)
        lo2, hi2 = bounding_box(out)
        np.testing.assert_allclose(lo2, lo + np.array([1, 0, 0]), atol=1e-12)
        np.testing.assert_allclose(hi2, hi + np.array([1, 0, 0]), atol=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            bounding_box(PointCloud(np.zeros((0, 3))))
