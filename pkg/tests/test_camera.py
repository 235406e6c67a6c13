import numpy as np
import pytest

from deskagent.simworld import (
    BehindCamera,
    CameraModel,
    NonPositiveDepth,
    deproject_pixel,
    look_at,
    project_point,
    top_down,
)


def _cam():
    return look_at(eye=np.array([0.0, -1.05, 0.80]),
                   target=np.array([0.0, 0.0, 0.05]),
                   fx=70.0, fy=70.0, width=64, height=64)


def test_principal_ray_hits_image_center():
    cam = _cam()
    (u, v), z = project_point(np.array([0.0, 0.0, 0.05]), cam)
    assert u == pytest.approx(cam.cx, abs=1e-9)
    assert v == pytest.approx(cam.cy, abs=1e-9)
    assert z > 0


def test_point_behind_camera_raises():
    cam = _cam()
    eye = np.array([0.0, -1.05, 0.80])
    behind = eye + (eye - np.array([0.0, 0.0, 0.05]))
    with pytest.raises(BehindCamera):
        project_point(behind, cam)


def test_deproject_rejects_nonpositive_depth():
    cam = _cam()
    with pytest.raises(NonPositiveDepth):
        deproject_pixel((32.0, 32.0), 0.0, cam)
    with pytest.raises(NonPositiveDepth):
        deproject_pixel((32.0, 32.0), -1.0, cam)


def test_round_trip_random_points():
    cam = _cam()
    rng = np.random.default_rng(0)
    for _ in range(1000):
        p = rng.uniform([-0.5, -0.4, 0.0], [0.5, 0.4, 0.4])
        (u, v), z = project_point(p, cam)
        back = deproject_pixel((u, v), z, cam)
        assert np.linalg.norm(back - p) < 1e-6


def test_top_down_axes():
    cam = top_down(eye=np.array([0.0, 0.0, 1.0]),
                   fx=40.0, fy=40.0, width=32, height=32)
    # +x world stays +u; +y world maps down the image (-y cam convention flip)
    (u0, v0), _ = project_point(np.array([0.0, 0.0, 0.0]), cam)
    (u1, v1), _ = project_point(np.array([0.1, 0.0, 0.0]), cam)
    (u2, v2), _ = project_point(np.array([0.0, 0.1, 0.0]), cam)
    assert u1 > u0 and v1 == pytest.approx(v0)
    assert v2 < v0 and u2 == pytest.approx(u0)


def test_rotation_must_be_orthonormal():
    with pytest.raises(AssertionError):
        CameraModel(fx=1.0, fy=1.0, cx=0.0, cy=0.0, image_w=2, image_h=2,
                    rotation=np.ones((3, 3)), translation=np.zeros(3))


def test_depth_matches_camera_frame_distance_along_axis():
    cam = _cam()
    p = np.array([0.1, -0.2, 0.1])
    (_, _), z = project_point(p, cam)
    cam_pt = cam.rotation @ p + cam.translation
    assert z == pytest.approx(cam_pt[2], abs=1e-12)
