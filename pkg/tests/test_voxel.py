import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from primscene.categories import LABEL_ID, N_CLASSES
from primscene.exceptions import ConfigError, LayoutParseError, UnsupportedVersionError
from primscene.geometry import yaw_rotation
from primscene.scene import GroundPolygon, SceneLayout, ScenePrimitive
from primscene.voxel import (
    LayoutVoxelizer,
    VoxelGrid,
    VoxelSpec,
    iou,
    load_voxels,
    memory_footprint,
    primscene_breakdown,
    save_voxels,
    upsample_labels,
    voxel_from_bytes,
    voxel_to_bytes,
    voxelize,
)

SMALL = VoxelSpec(48, 48, 16, 0.25, (0.0, -6.0, -1.0))
small_labels = arrays(np.int32, (6, 5, 4), elements=st.integers(0, 4))
TINY = VoxelSpec(6, 5, 4, 1.0, (0.0, 0.0, 0.0))


def loop_iou(a, b, present_only=True):
    """Per-class IoU by direct set counting."""
    fa, fb = a.ravel().tolist(), b.ravel().tolist()
    occ_i = sum(1 for x, y in zip(fa, fb) if x and y)
    occ_u = sum(1 for x, y in zip(fa, fb) if x or y)
    binary = 100.0 if occ_u == 0 else 100.0 * occ_i / occ_u
    scores = {}
    for c in range(1, N_CLASSES + 1):
        inter = sum(1 for x, y in zip(fa, fb) if x == c and y == c)
        union = sum(1 for x, y in zip(fa, fb) if x == c or y == c)
        if union:
            scores[c] = 100.0 * inter / union
    keep = [c for c in scores if c in fa or (not present_only and c in fb)]
    return binary, keep, scores


def test_unit_cube_fills_sixty_four_voxels():
    cube = ScenePrimitive.from_pose("CB", np.eye(3), (1.0, 1.0, 1.0), (10.0, 0.0, 2.0))
    grid = voxelize(SceneLayout(primitives=[cube]))
    assert grid.n_occupied == 64
    assert set(np.unique(grid.labels)) == {0, LABEL_ID["CB"]}


def test_ellipsoid_volume():
    ball = ScenePrimitive.from_pose("VE", yaw_rotation(0.2), (2.0, 2.0, 2.0), (3.1, 0.05, 1.7))
    grid = voxelize(SceneLayout(primitives=[ball]), SMALL)
    assert grid.n_occupied * 0.25 ** 3 == pytest.approx(4 / 3 * np.pi, rel=0.05)


def test_rotated_box_volume():
    box = ScenePrimitive.from_pose("VS", yaw_rotation(0.6), (4.0, 2.0, 1.5), (6.0, 0.0, 1.0))
    grid = voxelize(SceneLayout(primitives=[box]), SMALL)
    assert grid.n_occupied * 0.25 ** 3 == pytest.approx(12.0, rel=0.05)


def test_smaller_object_wins_overlap():
    big = ScenePrimitive.from_pose("O", np.eye(3), (4, 4, 2), (6, 0, 1))
    small = ScenePrimitive.from_pose("P", np.eye(3), (0.5, 0.5, 2), (6, 0, 1))
    for order in ([big, small], [small, big]):
        grid = voxelize(SceneLayout(primitives=order), SMALL)
        assert (grid.labels == LABEL_ID["P"]).sum() == 2 * 2 * 8


def test_ground_surface_layer_and_object_priority():
    road = GroundPolygon("road", [(0, -6, 0.3), (12, -6, 0.3), (12, 6, 0.3), (0, 6, 0.3)])
    car = ScenePrimitive.from_pose("VS", np.eye(3), (2.0, 2.0, 2.0), (6.0, 0.0, 1.0))
    grid = voxelize(SceneLayout(ground=[road], primitives=[car]), SMALL)
    k = int(np.floor((0.3 + 1.0) / 0.25))
    layer = grid.labels[..., k]
    assert (layer == LABEL_ID["road"]).sum() == 48 * 48 - 8 * 8
    assert (layer == LABEL_ID["VS"]).sum() == 64
    assert (grid.labels == LABEL_ID["road"]).sum() == (layer == LABEL_ID["road"]).sum()


def test_objects_outside_grid_are_skipped():
    far = ScenePrimitive.from_pose("CB", np.eye(3), (1, 1, 1), (500, 0, 0))
    assert voxelize(SceneLayout(primitives=[far]), SMALL).n_occupied == 0


class TestIoU:
    def test_known_values(self):
        a = np.zeros(TINY.dims, np.int32)
        b = np.zeros(TINY.dims, np.int32)
        a[0, 0, :] = 1            # 4 road voxels
        b[0, 0, :2] = 1           # 2 of them predicted as road
        b[0, 0, 2:] = 7           # 2 as another class
        b[1, 1, 1] = 7
        res = iou(VoxelGrid(a, TINY), VoxelGrid(b, TINY))
        assert res.iou == pytest.approx(100 * 4 / 5)
        assert res.per_class == {1: pytest.approx(50.0), 7: pytest.approx(0.0)}
        assert res.miou == pytest.approx(50.0)
        assert iou(VoxelGrid(a, TINY), VoxelGrid(b, TINY), classes="union").miou == pytest.approx(25.0)

    def test_both_empty_is_perfect(self):
        empty = VoxelGrid(np.zeros(TINY.dims, np.int32), TINY)
        res = iou(empty, empty)
        assert res.iou == 100.0 and res.miou == 100.0 and res.per_class == {}

    def test_empty_truth_with_prediction(self):
        empty = VoxelGrid(np.zeros(TINY.dims, np.int32), TINY)
        full = VoxelGrid(np.full(TINY.dims, 3, np.int32), TINY)
        res = iou(empty, full)
        assert res.iou == 0.0 and res.miou == 0.0

    @given(small_labels, small_labels, st.sampled_from(["present", "union"]))
    @settings(max_examples=100, deadline=None)
    def test_matches_loop_oracle(self, a, b, mode):
        res = iou(VoxelGrid(a, TINY), VoxelGrid(b, TINY), classes=mode)
        binary, keep, scores = loop_iou(a, b, present_only=mode == "present")
        assert res.iou == pytest.approx(binary)
        assert res.per_class.keys() == scores.keys()
        for c in scores:
            assert res.per_class[c] == pytest.approx(scores[c])
        if keep:
            assert res.miou == pytest.approx(np.mean([scores[c] for c in keep]))
        assert 0.0 <= res.iou <= 100.0 and 0.0 <= res.miou <= 100.0

    @given(small_labels, small_labels, st.integers(1, 3))
    @settings(max_examples=40, deadline=None)
    def test_upsampling_preserves_scores(self, a, b, factor):
        ga, gb = VoxelGrid(a, TINY), VoxelGrid(b, TINY)
        base = iou(ga, gb)
        up = iou(upsample_labels(ga, factor), upsample_labels(gb, factor))
        assert up.iou == pytest.approx(base.iou) and up.miou == pytest.approx(base.miou)

    def test_self_iou(self, scene):
        grid = voxelize(scene, SMALL)
        res = iou(grid, grid)
        assert res.iou == 100.0 and res.miou == 100.0

    def test_errors(self):
        g = VoxelGrid(np.zeros(TINY.dims, np.int32), TINY)
        other = VoxelGrid(np.zeros((6, 5, 4), np.int32), VoxelSpec(6, 5, 4, 0.5))
        with pytest.raises(ConfigError):
            iou(g, other)
        with pytest.raises(ConfigError):
            iou(g, g, classes="all")


def test_coarse_voxelization_upsampled_stays_close(scene):
    coarse = VoxelSpec(64, 64, 8, 1.0, (0.0, -32.0, -1.0))
    fine = VoxelSpec(256, 256, 32, 0.25, (0.0, -32.0, -1.0))
    res = iou(voxelize(scene, fine), upsample_labels(voxelize(scene, coarse), 4))
    assert 0.0 < res.iou <= 100.0
    assert res.iou < 100.0  # coarse cells lose detail


def test_upsample_geometry():
    up = upsample_labels(VoxelGrid(np.arange(120).reshape(6, 5, 4) % 5, TINY), 2)
    assert up.spec.dims == (12, 10, 8) and up.spec.res == 0.5
    assert up.labels[3, 9, 7] == (np.arange(120).reshape(6, 5, 4) % 5)[1, 4, 3]
    with pytest.raises(ConfigError):
        upsample_labels(up, 1.5)


class TestMemory:
    def test_voxel(self):
        report = memory_footprint("voxel", (256, 256, 32))
        assert report.bytes == 256 * 256 * 32 * 4 and report.mib == 8.0

    def test_primscene(self):
        report = memory_footprint("primscene")
        assert report.bytes == (256 * 256 * 10 + 514 * 9) * 4
        raster, prims = primscene_breakdown()
        assert raster + prims == pytest.approx(report.mib)
        assert raster == 2.5

    @pytest.mark.parametrize("kind, dims", [("voxel", (256, 256)), ("voxel", None), ("mesh", None)])
    def test_errors(self, kind, dims):
        with pytest.raises(ConfigError):
            memory_footprint(kind, dims)


class TestVoxelIO:
    def test_round_trip(self, tmp_path, scene):
        grid = voxelize(scene, SMALL)
        save_voxels(grid, tmp_path / "v.bin")
        assert load_voxels(tmp_path / "v.bin") == grid

    def test_x_fastest_layout(self):
        lab = np.zeros(TINY.dims, np.int32)
        lab[1, 0, 0] = 9
        data = voxel_to_bytes(VoxelGrid(lab, TINY))
        assert np.frombuffer(data[-4 * 120:], "<i4")[1] == 9

    def test_corrupt(self):
        data = voxel_to_bytes(VoxelGrid(np.zeros(TINY.dims, np.int32), TINY))
        with pytest.raises(LayoutParseError):
            voxel_from_bytes(b"NOPE" + data[4:])
        with pytest.raises(LayoutParseError):
            voxel_from_bytes(data[:-4])
        with pytest.raises(UnsupportedVersionError):
            voxel_from_bytes(data[:4] + (2).to_bytes(4, "little") + data[8:])

    def test_rejects_out_of_range_labels(self):
        with pytest.raises(ConfigError):
            VoxelGrid(np.full(TINY.dims, N_CLASSES + 1, np.int32), TINY)


def test_estimator(scene):
    est = clone(LayoutVoxelizer(nx=48, ny=48, nz=16, origin=(0.0, -6.0, -1.0)))
    X = est.fit([scene]).transform([scene, SceneLayout()])
    assert X.shape == (2, 48, 48, 16)
    assert np.array_equal(X[0], voxelize(scene, SMALL).labels) and not X[1].any()
