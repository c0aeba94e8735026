import math

import numpy as np
import pytest
from PIL import Image

from geowarp.config import ConfigError, parse_config, read_config, write_config
from geowarp.dataset import (CAM_TO_WORLD, WORLD_TO_CAM, DatasetError, FrameRecord, InvalidPoseError, frame_paths,
                             load_frame, load_sequence, pair_frames, range_filter, read_pose_file, resize_frame,
                             save_frame, sparsify_depth, write_pose_file, write_sequence)
from geowarp.geometry import Intrinsics, Pose
from geowarp.imaging import DepthMap, ImageBuffer, ImagingError

from conftest import random_pose


def write_frame_files(tmp_path, rgb, depth_mm, pose_matrix, stem="f"):
    rgb_path, depth_path, pose_path = (tmp_path / f"{stem}.color.png", tmp_path / f"{stem}.depth.png",
                                       tmp_path / f"{stem}.pose.txt")
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(rgb_path)
    Image.fromarray(np.asarray(depth_mm, dtype=np.uint16)).save(depth_path)
    np.savetxt(pose_path, pose_matrix)
    return rgb_path, depth_path, pose_path


def frame(h=6, w=8, seed=0, depth=None):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.5, 4, (h, w)) if depth is None else depth
    return FrameRecord(ImageBuffer(rng.uniform(0, 1, (h, w, 3))), DepthMap(d), Pose.identity(), 0)


class TestLoadFrame:
    def test_decoding(self, tmp_path):
        rgb = np.zeros((2, 3, 3))
        rgb[0, 0] = [255, 0, 51]
        depth = np.array([[1500, 0, 65535], [1, 2000, 65534]])
        f = load_frame(*write_frame_files(tmp_path, rgb, depth, np.eye(4)))
        np.testing.assert_allclose(f.image.data[0, 0], [1.0, 0.0, 0.2])
        assert f.depth.depth[0, 0] == 1.5 and f.depth.valid[0, 0]
        np.testing.assert_array_equal(f.depth.valid, [[True, False, False], [True, True, True]])
        assert f.depth.depth[1, 2] == 65.534
        assert f.pose_gt == Pose.identity()

    def test_missing_file_names_path(self, tmp_path):
        paths = write_frame_files(tmp_path, np.zeros((2, 2, 3)), np.ones((2, 2)), np.eye(4))
        paths[1].unlink()
        with pytest.raises(DatasetError, match="f.depth.png"):
            load_frame(*paths)

    def test_corrupt_files(self, tmp_path):
        paths = write_frame_files(tmp_path, np.zeros((2, 2, 3)), np.ones((2, 2)), np.eye(4))
        paths[0].write_bytes(b"not a png")
        with pytest.raises(DatasetError, match="f.color.png"):
            load_frame(*paths)
        paths = write_frame_files(tmp_path, np.zeros((2, 2, 3)), np.ones((2, 2)), np.eye(4), stem="g")
        paths[2].write_text("1 2 3\n")
        with pytest.raises(DatasetError, match="g.pose.txt"):
            load_frame(*paths)

    def test_size_mismatch(self, tmp_path):
        with pytest.raises(DatasetError):
            load_frame(*write_frame_files(tmp_path, np.zeros((2, 3, 3)), np.ones((3, 2)), np.eye(4)))

    def test_non_rigid_pose(self, tmp_path):
        M = np.eye(4)
        M[0, 0] = 1.01
        with pytest.raises(InvalidPoseError):
            load_frame(*write_frame_files(tmp_path, np.zeros((2, 2, 3)), np.ones((2, 2)), M))
        M = np.diag([1.0, 1.0, -1.0, 1.0])
        with pytest.raises(InvalidPoseError):
            load_frame(*write_frame_files(tmp_path, np.zeros((2, 2, 3)), np.ones((2, 2)), M, stem="r"))

    def test_slightly_noisy_rotation_is_accepted(self, tmp_path):
        M = np.eye(4)
        M[0, 1] = 1e-4
        p = read_pose_file(write_frame_files(tmp_path, np.zeros((2, 2, 3)), np.ones((2, 2)), M)[2])
        assert abs(np.linalg.norm(p.orientation) - 1) < 1e-12


class TestPoseFiles:
    def test_conventions(self, tmp_path):
        rng = np.random.default_rng(0)
        pose = random_pose(rng)
        for conv in (CAM_TO_WORLD, WORLD_TO_CAM):
            path = tmp_path / f"{conv}.txt"
            write_pose_file(path, pose, conv)
            back = read_pose_file(path, conv)
            np.testing.assert_allclose(back.position, pose.position, atol=1e-12)
            np.testing.assert_allclose(back.orientation, pose.orientation, atol=1e-12)

    def test_cam_to_world_file_holds_camera_centre(self, tmp_path):
        # camera at world (1, 2, 3) with no rotation
        M = np.eye(4)
        M[:3, 3] = [1, 2, 3]
        np.savetxt(tmp_path / "p.txt", M)
        p = read_pose_file(tmp_path / "p.txt")
        np.testing.assert_allclose(p.camera_center(), [1, 2, 3])
        np.testing.assert_allclose(p.position, [-1, -2, -3])
        p = read_pose_file(tmp_path / "p.txt", WORLD_TO_CAM)
        np.testing.assert_allclose(p.position, [1, 2, 3])

    def test_unknown_convention(self, tmp_path):
        with pytest.raises(ValueError):
            read_pose_file(tmp_path / "p.txt", "sideways")


class TestRoundTrip:
    def test_save_load(self, tmp_path):
        rng = np.random.default_rng(1)
        depth = np.round(rng.uniform(0.3, 8, (5, 7)), 3)
        depth[0, 0] = 0
        f = FrameRecord(ImageBuffer(rng.uniform(0, 1, (5, 7, 3))), DepthMap(depth), random_pose(rng), 3)
        paths = frame_paths(tmp_path, 3)
        save_frame(f, *paths)
        g = load_frame(*paths, frame_id=3)
        np.testing.assert_array_equal(g.depth.depth, f.depth.depth)
        np.testing.assert_array_equal(g.depth.valid, f.depth.valid)
        assert np.abs(g.image.data - f.image.data).max() <= 1 / 255
        np.testing.assert_allclose(g.pose_gt.position, f.pose_gt.position, atol=1e-12)

    def test_sequence(self, tmp_path):
        K = Intrinsics(50.0, 51.0, 3.5, 2.5, 8, 6)
        frames = [FrameRecord(frame(seed=i).image, frame(seed=i).depth, Pose([i, 0, 0], [1, 0, 0, 0]), i)
                  for i in range(3)]
        write_sequence(tmp_path, frames, K, WORLD_TO_CAM)
        loaded, K2 = load_sequence(tmp_path)
        assert K2 == K
        assert [f.frame_id for f in loaded] == [0, 1, 2]
        assert loaded[2].pose_gt.position[0] == 2
        only, _ = load_sequence(tmp_path, ids=[1])
        assert len(only) == 1

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DatasetError):
            load_sequence(tmp_path / "nothing")


class TestResize:
    def test_halving_intrinsics(self):
        K = Intrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)
        f = frame(480, 640)
        g, K2 = resize_frame(f, K, 320, 240)
        assert (K2.fx, K2.fy, K2.cx, K2.cy, K2.width, K2.height) == (262.5, 262.5, 159.5, 119.5, 320, 240)
        assert g.image.shape == g.depth.shape == (240, 320)
        assert g.depth.valid_count <= f.depth.valid_count

    def test_identity(self):
        K = Intrinsics(5.0, 5.0, 3.5, 2.5, 8, 6)
        f = frame()
        g, K2 = resize_frame(f, K, 8, 6)
        assert g is f and K2 == K

    def test_refuses_upsampling(self):
        with pytest.raises(ImagingError):
            resize_frame(frame(), Intrinsics(5.0, 5.0, 3.5, 2.5, 8, 6), 16, 6)

    def test_image_is_block_average_for_halving(self):
        # sampling at (2i + 0.5) blends the 2x2 block equally
        f = frame(4, 4)
        g, _ = resize_frame(f, Intrinsics(5.0, 5.0, 1.5, 1.5, 4, 4), 2, 2)
        block = f.image.data[:2, :2].mean(axis=(0, 1))
        np.testing.assert_allclose(g.image.data[0, 0], block, atol=1e-15)

    def test_depth_nearest_never_blends(self):
        d = np.ones((4, 6))
        d[:, 3:] = 5.0
        d[1, 1] = 0.0
        g, _ = resize_frame(frame(4, 6, depth=d), Intrinsics(5.0, 5.0, 2.5, 1.5, 6, 4), 3, 2)
        assert set(np.unique(g.depth.depth)) <= {0.0, 1.0, 5.0}

    def test_pixel_centre_maps_consistently(self):
        # the same viewing ray lands on the same point before and after rescaling
        K = Intrinsics(100.0, 90.0, 40.3, 30.2, 80, 60)
        _, K2 = resize_frame(frame(60, 80), K, 20, 15)
        u = 40.3 + 100.0 * 0.1
        u2 = (u + 0.5) * 0.25 - 0.5
        assert u2 == pytest.approx(K2.cx + K2.fx * 0.1)


class TestDepthTools:
    def test_sparsify_counts(self):
        d = DepthMap(np.ones((25, 40)))
        assert sparsify_depth(d, 0.0, seed=0) is d
        assert sparsify_depth(d, 0.4, seed=0).valid_count == 600
        assert sparsify_depth(d, 0.8, seed=0).valid_count == 200
        assert sparsify_depth(d, 1.0, seed=0).valid_count == 0

    def test_sparsify_rounding_and_existing_holes(self):
        v = np.ones((1, 7), bool)
        v[0, 0] = False
        d = DepthMap(np.ones((1, 7)), v)
        # 6 valid pixels, 0.25 * 6 = 1.5 rounds half up to 2
        assert sparsify_depth(d, 0.25, seed=1).valid_count == 4

    def test_sparsify_seeded(self):
        rng = np.random.default_rng(2)
        d = DepthMap(rng.uniform(1, 2, (20, 20)))
        a, b, c = (sparsify_depth(d, 0.5, seed=s) for s in (7, 7, 8))
        np.testing.assert_array_equal(a.valid, b.valid)
        assert not np.array_equal(a.valid, c.valid)
        for m in (a, c):
            np.testing.assert_array_equal(m.depth[m.valid], d.depth[m.valid])

    def test_sparsify_bounds(self):
        with pytest.raises(ValueError):
            sparsify_depth(DepthMap(np.ones((2, 2))), 1.5)

    def test_range_filter(self):
        d = DepthMap(np.array([[25.0, 5.0, 20.0]]))
        np.testing.assert_array_equal(range_filter(d, 20.0).valid, [[False, True, False]])
        np.testing.assert_array_equal(range_filter(d, math.inf).valid, d.valid)
        once = range_filter(d, 10.0)
        np.testing.assert_array_equal(range_filter(once, 10.0).valid, once.valid)
        with pytest.raises(ValueError):
            range_filter(d, 0.0)

    def test_pair_frames(self):
        K = Intrinsics(5.0, 5.0, 3.5, 2.5, 8, 6)
        frames = [FrameRecord(frame(seed=i).image, frame(seed=i).depth, Pose.identity(), i) for i in range(5)]
        assert [p.frame_ids for p in pair_frames(frames[:3], K, 1)] == [(0, 1), (1, 2)]
        assert [p.frame_ids for p in pair_frames(frames[:3], K, 2)] == [(0, 2)]
        for s in range(1, 7):
            assert len(pair_frames(frames, K, s)) == max(0, 5 - s)
        p = pair_frames(frames, K, 1)[0]
        assert p.depth_prev is frames[0].depth
        with pytest.raises(ValueError):
            pair_frames(frames, K, 0)


class TestConfig:
    def test_parse(self):
        text = "# comment\n\nbeta = 3\nmode=anchored\n  h = 10.5  \n"
        assert parse_config(text) == {"beta": "3", "mode": "anchored", "h": "10.5"}

    def test_colon_separator(self):
        assert parse_config("pose_convention: world_to_cam\nurl = a:b\n") == {
            "pose_convention": "world_to_cam", "url": "a:b"}

    def test_bad_line(self):
        with pytest.raises(ConfigError, match=":2:"):
            parse_config("a = 1\nnot a pair\n")

    def test_round_trip(self, tmp_path):
        values = {"a": 0.1, "b": 3, "c": "text", "d": None, "e": True}
        write_config(tmp_path / "x.cfg", values)
        back = read_config(tmp_path / "x.cfg")
        assert back == {"a": "0.1", "b": "3", "c": "text", "d": "none", "e": "true"}
