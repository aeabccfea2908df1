import numpy as np
import pytest

from viewfuse.geometry import CameraModel, look_at_pose
from viewfuse.synth import CameraRigSpec, PrimitiveSpec, SceneSpec, generate


def small_scene_spec(seed=0, n_frames=6, width=96, height=72, clutter_on_floor=True):
    """Compact room with clutter on open floor, cameras ringed above."""
    clutter = (
        PrimitiveSpec(kind="box", size=(0.45, 0.4, 0.32), albedo=(0.8, 0.2, 0.2), position=(3.3, 2.8)),
        PrimitiveSpec(kind="box", size=(0.38, 0.33, 0.28), albedo=(0.3, 0.7, 0.2), position=(2.6, 2.2)),
    )
    return SceneSpec(
        room=(6.0, 5.0, 2.6),
        furniture=(PrimitiveSpec(kind="box", size=(0.8, 0.5, 0.45), albedo=(0.5, 0.3, 0.2),
                                 position=(1.2, 1.0)),),
        clutter=clutter if clutter_on_floor else (),
        cameras=CameraRigSpec(count=n_frames, width=width, height=height,
                              distance=(2.2, 3.0), elevation=(0.75, 1.15), lookat_jitter=0.25),
        seed=seed,
    )


@pytest.fixture(scope="session")
def small_bundle():
    """One cached cluttered/clean bundle pair shared by read-only tests."""
    return generate(small_scene_spec(seed=5))


def random_camera(rng, width=8, height=8, fov=60.0):
    """Valid random camera: random rotation, position near the origin."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, 2 * np.pi)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    rot = np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
    pose = np.eye(4)
    pose[:3, :3] = rot
    pose[:3, 3] = rng.uniform(-0.5, 0.5, size=3)
    fx = width / (2 * np.tan(np.radians(fov) / 2))
    return CameraModel(fx=fx, fy=fx, cx=(width - 1) / 2, cy=(height - 1) / 2,
                       width=width, height=height, pose=pose)


def overlapping_cameras(rng, n, width=8, height=8):
    """Cameras on a small arc looking at a common target so frustums overlap."""
    cams = []
    target = np.array([0.0, 0.0, 2.5]) + rng.uniform(-0.2, 0.2, size=3)
    for i in range(n):
        az = -0.5 + i * 1.0 / max(n - 1, 1) + rng.uniform(-0.1, 0.1)
        eye = target + 2.5 * np.array([np.sin(az), 0.3 * rng.uniform(-1, 1), -np.cos(az)])
        pose = look_at_pose(eye, target, up=(0.0, 1.0, 0.0))
        fx = width / (2 * np.tan(np.radians(70.0) / 2))
        cams.append(CameraModel(fx=fx, fy=fx, cx=(width - 1) / 2, cy=(height - 1) / 2,
                                width=width, height=height, pose=pose))
    return cams


def random_consistency_case(seed, n_frames=3, width=8, height=8):
    """Random frames with overlapping cameras, random depths, random holes;
    the raw material for brute-force equivalence checks."""
    rng = np.random.default_rng(seed)
    cams = overlapping_cameras(rng, n_frames, width=width, height=height)
    captured, inpainted, holes = [], [], []
    for _ in range(n_frames):
        cap = rng.uniform(0.5, 5.0, size=(height, width))
        cap[rng.random((height, width)) < 0.15] = 0.0
        hole = rng.random((height, width)) < rng.uniform(0.1, 0.5)
        pre = cap.copy()
        fill = np.where(rng.random((height, width)) < 0.5,
                        cap + rng.uniform(0.0, 1.0, size=cap.shape),
                        rng.uniform(0.2, 6.0, size=cap.shape))
        pre[hole] = fill[hole]
        captured.append(cap)
        inpainted.append(pre)
        holes.append(hole)
    return captured, inpainted, holes, cams
