import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewfuse.errors import EmptyCloudError
from viewfuse.metrics import chamfer, image_metrics, mask_metrics, sample_mesh_points


class TestChamfer:
    def test_identical_clouds(self):
        pts = np.random.default_rng(0).uniform(size=(200, 3))
        assert chamfer(pts, pts) == 0.0

    def test_uniform_shift(self):
        pts = np.random.default_rng(1).uniform(size=(300, 3))
        shifted = pts + np.array([0.01, 0.0, 0.0])
        # nearest neighbor of a shifted point may be nearer than its twin, so
        # the distance is bounded by the shift; dense enough clouds hit it
        assert chamfer(pts, shifted) <= 1.0 + 1e-9

    def test_separated_uniform_shift_exact(self):
        # points on a sparse grid, shift much smaller than spacing: every
        # nearest neighbor is the twin, distance exactly 1 cm
        g = np.stack(np.meshgrid(*[np.arange(5.0)] * 3), axis=-1).reshape(-1, 3)
        shifted = g + np.array([0.01, 0.0, 0.0])
        assert chamfer(g, shifted) == pytest.approx(1.0, abs=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(size=(1000, 3))
        b = rng.uniform(size=(700, 3))
        d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
        expected = (d.min(axis=1).mean() + d.min(axis=0).mean()) / 2 * 100
        assert chamfer(a, b) == pytest.approx(expected, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(size=(100, 3))
        b = rng.uniform(size=(150, 3))
        assert chamfer(a, b) == chamfer(b, a)

    def test_union_is_no_farther(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(size=(100, 3))
        b = rng.uniform(size=(80, 3))
        assert chamfer(a, np.concatenate([a, b])) <= chamfer(a, b) + 1e-12

    def test_empty_cloud(self):
        with pytest.raises(EmptyCloudError):
            chamfer(np.zeros((0, 3)), np.zeros((5, 3)))


class TestImageMetrics:
    def test_identical_images(self):
        img = np.random.default_rng(0).integers(0, 256, size=(32, 40, 3), dtype=np.uint8)
        m = image_metrics(img, img)
        assert m["l1"] == 0.0 and m["l2"] == 0.0
        assert m["psnr"] == float("inf")
        assert m["ssim"] == pytest.approx(1.0, abs=1e-9)

    def test_uniform_half_gray(self):
        truth = np.zeros((24, 24, 3), dtype=np.uint8)
        render = np.full((24, 24, 3), 128, dtype=np.uint8)  # 128/255 ~ 0.502
        m = image_metrics(render, truth)
        level = 128 / 255
        assert m["l1"] == pytest.approx(level, abs=1e-12)
        assert m["l2"] == pytest.approx(level, abs=1e-12)
        assert m["psnr"] == pytest.approx(20 * np.log10(1 / level), abs=1e-9)

    def test_closed_form_psnr_at_half(self):
        # exact 0.5 offset gives 20*log10(2) ~ 6.02 dB
        truth = np.zeros((16, 16, 3))
        render = np.full((16, 16, 3), 0.5)
        diff = render - truth
        rmse = np.sqrt((diff ** 2).mean())
        assert 20 * np.log10(1 / rmse) == pytest.approx(6.0206, abs=1e-3)

    def test_corruption_strictly_worse(self):
        rng = np.random.default_rng(5)
        img = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        bad = img.copy()
        bad[..., 0] = 255 - bad[..., 0]
        m_good = image_metrics(img, img)
        m_bad = image_metrics(bad, img)
        assert m_bad["l1"] > m_good["l1"]
        assert m_bad["ssim"] < m_good["ssim"]
        assert m_bad["psnr"] < 1e308

    def test_region_restriction(self):
        rng = np.random.default_rng(6)
        truth = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        render = truth.copy()
        region = np.zeros((32, 32), dtype=bool)
        region[:16] = True
        render[~region] = 0  # corrupt only outside the region
        m = image_metrics(render, truth, region=region)
        assert m["l1_region"] == 0.0
        assert m["l1"] > 0.0

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_permutation_invariance_of_pointwise_metrics(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.integers(0, 256, size=(12, 12, 3), dtype=np.uint8)
        b = rng.integers(0, 256, size=(12, 12, 3), dtype=np.uint8)
        perm = rng.permutation(12 * 12)
        ap = a.reshape(-1, 3)[perm].reshape(12, 12, 3)
        bp = b.reshape(-1, 3)[perm].reshape(12, 12, 3)
        m1, m2 = image_metrics(a, b), image_metrics(ap, bp)
        assert m1["l1"] == pytest.approx(m2["l1"], abs=1e-12)
        assert m1["l2"] == pytest.approx(m2["l2"], abs=1e-12)
        assert m1["psnr"] == pytest.approx(m2["psnr"], abs=1e-9)


class TestMaskMetrics:
    def test_perfect(self):
        mask = np.zeros((10, 10), dtype=bool)
        mask[2:5, 3:7] = True
        m = mask_metrics(mask, mask)
        assert m["iou_clutter"] == 1.0 and m["iou_non_clutter"] == 1.0
        assert m["miou"] == 1.0 and m["precision"] == 1.0 and m["recall"] == 1.0

    def test_empty_prediction(self):
        gt = np.zeros((10, 10), dtype=bool)
        gt[0, 0] = True
        m = mask_metrics(np.zeros((10, 10), dtype=bool), gt)
        assert m["iou_clutter"] == 0.0
        assert m["recall"] == 0.0
        assert m["precision"] is None

    def test_half_overlap_squares(self):
        # two squares of area A with intersection A/2: IoU = 1/3
        pred = np.zeros((10, 20), dtype=bool)
        gt = np.zeros((10, 20), dtype=bool)
        pred[0:10, 0:10] = True
        gt[0:10, 5:15] = True
        m = mask_metrics(pred, gt)
        assert m["iou_clutter"] == pytest.approx(1 / 3)

    def test_undefined_class_reports_none(self):
        empty = np.zeros((5, 5), dtype=bool)
        m = mask_metrics(empty, empty)
        assert m["iou_clutter"] is None
        assert m["iou_non_clutter"] == 1.0
        assert m["miou"] == 1.0


def test_sample_mesh_points_lie_on_surface(small_bundle):
    mesh = small_bundle[0].mesh
    pts = sample_mesh_points(mesh, 500, seed=1)
    assert pts.shape == (500, 3)
    lo = mesh.vertices.min(axis=0) - 1e-9
    hi = mesh.vertices.max(axis=0) + 1e-9
    assert np.all(pts >= lo) and np.all(pts <= hi)
