import json

import numpy as np
import pytest

from planenerf import scene
from planenerf.rendering import Camera


def overhead_camera(scene_aabb, size=32, height_factor=3.0):
    aabb = np.asarray(scene_aabb, dtype=np.float64)
    center = aabb.mean(axis=0)
    eye = center.copy()
    eye[2] = aabb[1, 2] * height_factor + 1.0
    return Camera(fx=size, fy=size, cx=size / 2, cy=size / 2, width=size, height=size,
                  c2w=scene.look_at_pose(eye, center), near=0.1, far=100.0)


class TestGenerateScene:
    def test_zero_boxes_is_ground_only(self):
        s = scene.generate_synthetic_scene(0, seed=1)
        assert s.boxes == []

    def test_same_seed_identical(self):
        a = scene.generate_synthetic_scene(8, seed=42)
        b = scene.generate_synthetic_scene(8, seed=42)
        np.testing.assert_array_equal(a.ground_color, b.ground_color)
        for ba, bb in zip(a.boxes, b.boxes):
            np.testing.assert_array_equal(ba.aabb, bb.aabb)
            np.testing.assert_array_equal(ba.color, bb.color)

    def test_containment_invariants_many_scenes(self):
        for seed in range(1000):
            s = scene.generate_synthetic_scene(seed % 9, seed=seed)
            for box in s.boxes:
                assert np.all(box.aabb[0] >= s.aabb[0] - 1e-9)
                assert np.all(box.aabb[1] <= s.aabb[1] + 1e-9)
                assert box.aabb[0, 2] == pytest.approx(s.ground_z)  # rests on ground
                assert np.all((box.color >= 0) & (box.color <= 1))

    def test_boxes_do_not_overlap(self):
        s = scene.generate_synthetic_scene(12, seed=5)
        for i, a in enumerate(s.boxes):
            for b in s.boxes[i + 1:]:
                separated = (np.any(a.aabb[1, :2] <= b.aabb[0, :2])
                             or np.any(b.aabb[1, :2] <= a.aabb[0, :2]))
                assert separated


class TestOracleRender:
    def test_straight_down_empty_scene_is_uniform_ground(self):
        s = scene.generate_synthetic_scene(0, seed=2)
        cam = overhead_camera(s.aabb, size=16)
        img = scene.oracle_render(s, cam)
        # the footprint fills the view at this height: all ground or background
        ground_pixels = np.all(img == s.ground_color, axis=2)
        assert ground_pixels.mean() > 0.5
        # remaining pixels fall off the finite footprint: pure background
        assert np.all(img[~ground_pixels] == 0.0)

    def test_box_face_returns_exact_box_color(self):
        s = scene.generate_synthetic_scene(0, seed=3)
        s.boxes.append(scene.Box(aabb=np.array([[3.0, 3.0, 0.0], [5.0, 5.0, 2.0]]),
                                 color=np.array([0.9, 0.1, 0.4])))
        cam = overhead_camera(s.aabb, size=32)
        img = scene.oracle_render(s, cam)
        center_pixel = img[16, 16]
        np.testing.assert_array_equal(center_pixel, [0.9, 0.1, 0.4])

    def test_no_blending_every_pixel_is_a_palette_color(self):
        s = scene.generate_synthetic_scene(6, seed=4)
        cam = overhead_camera(s.aabb, size=48, height_factor=1.2)
        bg = np.array([0.0, 0.0, 0.0])
        img = scene.oracle_render(s, cam, background=bg)
        palette = [bg, s.ground_color] + [b.color for b in s.boxes]
        flat = img.reshape(-1, 3)
        matches = np.zeros(len(flat), dtype=bool)
        for color in palette:
            matches |= np.all(flat == color, axis=1)
        assert matches.all()

    def test_deterministic(self):
        s = scene.generate_synthetic_scene(5, seed=9)
        cam = overhead_camera(s.aabb)
        np.testing.assert_array_equal(scene.oracle_render(s, cam),
                                      scene.oracle_render(s, cam))

    def test_resolution_consistency_at_pixel_centers(self):
        """A 2x render subsampled on the shared pixel lattice equals the
        1x render: the renderer is a pure point sampler."""
        s = scene.generate_synthetic_scene(7, seed=11)
        cam1 = overhead_camera(s.aabb, size=24)
        cam2 = Camera(fx=2 * cam1.fx, fy=2 * cam1.fy, cx=2 * cam1.cx, cy=2 * cam1.cy,
                      width=48, height=48, c2w=cam1.c2w, near=cam1.near, far=cam1.far)
        img1 = scene.oracle_render(s, cam1)
        img2 = scene.oracle_render(s, cam2)
        np.testing.assert_array_equal(img2[::2, ::2], img1)


class TestLookAt:
    def test_pose_is_orthonormal_and_looks_at_target(self):
        c2w = scene.look_at_pose([4.0, -2.0, 5.0], [1.0, 1.0, 0.0])
        rot = c2w[:3, :3]
        np.testing.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-12)
        forward = rot[:, 2]
        to_target = np.array([1.0, 1.0, 0.0]) - np.array([4.0, -2.0, 5.0])
        np.testing.assert_allclose(forward, to_target / np.linalg.norm(to_target), atol=1e-12)

    def test_straight_down_pose_valid(self):
        c2w = scene.look_at_pose([0.0, 0.0, 5.0], [0.0, 0.0, 0.0])
        rot = c2w[:3, :3]
        np.testing.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-12)


class TestDatasetIO:
    @pytest.fixture(scope="class")
    def dataset_dir(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("ds")
        scene.synthesize_dataset(out, n_boxes=4, seed=6, n_views=14, image_size=24)
        return out

    def test_round_trip_rerender_pixel_identical(self, dataset_dir):
        ds = scene.load_dataset(dataset_dir / "manifest.json")
        s = scene.generate_synthetic_scene(4, seed=6)
        for frame in ds.frames[:3]:
            rendered = scene.oracle_render(s, frame.camera)
            stored_bytes = np.round(frame.image * 255.0)
            np.testing.assert_array_equal(stored_bytes, np.round(rendered * 255.0))

    def test_manifest_resave_byte_identical(self, dataset_dir):
        path = dataset_dir / "manifest.json"
        original = path.read_bytes()
        ds = scene.load_dataset(path, load_images=False)
        resaved = dataset_dir / "again.json"
        scene.save_manifest(resaved, ds.aabb, ds.frames)
        assert resaved.read_bytes() == original

    def test_split_labels_partition(self, dataset_dir):
        ds = scene.load_dataset(dataset_dir / "manifest.json", load_images=False)
        train = {f.file for f in ds.frames_for("train")}
        test = {f.file for f in ds.frames_for("test")}
        assert train | test == {f.file for f in ds.frames}
        assert not train & test
        assert train and test

    def test_near_ge_far_rejected(self, dataset_dir, tmp_path):
        doc = json.loads((dataset_dir / "manifest.json").read_text())
        doc["frames"][0]["near"] = doc["frames"][0]["far"] + 1.0
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        with pytest.raises(scene.DataError, match="near"):
            scene.load_dataset(bad)

    def test_missing_image_rejected(self, dataset_dir, tmp_path):
        doc = json.loads((dataset_dir / "manifest.json").read_text())
        doc["frames"][0]["file"] = "nope.png"
        bad = tmp_path / "missing.json"
        bad.write_text(json.dumps(doc))
        with pytest.raises(scene.DataError, match="missing image"):
            scene.load_dataset(bad)

    def test_non_orthonormal_rotation_rejected(self, dataset_dir, tmp_path):
        doc = json.loads((dataset_dir / "manifest.json").read_text())
        doc["frames"][0]["c2w"][0] = 2.0
        bad = tmp_path / "rot.json"
        bad.write_text(json.dumps(doc))
        with pytest.raises(scene.DataError, match="orthonormal"):
            scene.load_dataset(bad)

    def test_bad_split_rejected(self, dataset_dir, tmp_path):
        doc = json.loads((dataset_dir / "manifest.json").read_text())
        doc["frames"][0]["split"] = "validation"
        bad = tmp_path / "split.json"
        bad.write_text(json.dumps(doc))
        with pytest.raises(scene.DataError, match="split"):
            scene.load_dataset(bad)

    def test_wrong_resolution_rejected(self, dataset_dir):
        doc = json.loads((dataset_dir / "manifest.json").read_text())
        doc["frames"][0]["w"] = 999
        doc["frames"][0]["cx"] = 499.5
        bad = dataset_dir / "bad_res.json"  # beside the images it references
        bad.write_text(json.dumps(doc))
        with pytest.raises(scene.DataError, match="manifest says"):
            scene.load_dataset(bad)

    def test_png_round_trip_is_exact_bytes(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(9, 7, 3)).astype(np.float64) / 255.0
        scene.write_png(tmp_path / "x.png", img)
        back = scene.read_png(tmp_path / "x.png")
        np.testing.assert_array_equal(back, img)
