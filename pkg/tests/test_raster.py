"""Silhouette rendering: coverage fractions, shift equivariance, binary range."""

import numpy as np

from clothbench import simworld as S


def grid_positions(x0, y0, dx, dy):
    """Node layout as a perfect rectangle: rows across width, cols along length."""
    pts = np.zeros((18, 2))
    for r in range(3):
        for c in range(6):
            pts[r * 6 + c] = [x0 + c * dx, y0 - r * dy]
    return pts


def test_rasterize_is_binary_with_expected_area():
    cam = S.Camera(center=(0.0, 0.0), pitch=0.01, width=128, height=96)
    # rectangle spanning exactly half the viewport width, a third of height
    w_m = 64 * cam.pitch
    h_m = 32 * cam.pitch
    pts = grid_positions(-w_m / 2, h_m / 2, w_m / 5, h_m / 2)
    img = S.rasterize(cam, pts)
    assert img.dtype == np.uint8
    assert set(np.unique(img)) <= {0, 1}
    frac = img.mean()
    expected = (64 * 32) / (128 * 96)
    # within roughly one boundary row + column of pixels
    tol = (64 + 32 + 1) / (128 * 96)
    assert abs(frac - expected) <= tol


def test_rasterize_shift_equivariance():
    cam = S.Camera(center=(0.0, 0.0), pitch=0.01)
    pts = grid_positions(-0.22, 0.13, 0.07, 0.11)
    img = S.rasterize(cam, pts)
    img_dx = S.rasterize(cam, pts + np.array([cam.pitch, 0.0]))
    img_dy = S.rasterize(cam, pts + np.array([0.0, -cam.pitch]))
    assert np.array_equal(img_dx[:, 1:], img[:, :-1])
    assert np.array_equal(img_dy[1:, :], img[:-1, :])


def test_rasterize_offscreen_is_empty():
    cam = S.Camera()
    pts = grid_positions(50.0, 50.0, 0.1, 0.1)
    assert S.rasterize(cam, pts).sum() == 0


def test_rasterize_handles_folded_quads():
    rng = np.random.default_rng(0)
    cam = S.Camera()
    pts = rng.uniform(-0.5, 0.5, size=(18, 2))  # scrambled: quads self-intersect
    img = S.rasterize(cam, pts)
    assert set(np.unique(img)) <= {0, 1}


def test_rasterize_real_state_nonempty():
    world = S.SimWorld(S.ArmModel(), S.ClothModel(), S.Camera())
    state = world.initial_state()
    img = S.rasterize(world.camera, state.x)
    assert img.sum() > 20
