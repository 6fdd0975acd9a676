"""Binary silhouette rendering of the cloth lattice.

Each of the 2x5 lattice cells is split into two triangles and filled by a
pixel-center half-plane test, so the output is a deterministic 0/1 image and
translating the cloth by one pixel pitch shifts the silhouette by one pixel.
"""

import numpy as np

from .model import CLOTH_LENGTH_NODES, CLOTH_WIDTH_NODES


def _fill_triangle(img, pts):
    h, w = img.shape
    xs, ys = pts[:, 0], pts[:, 1]
    c0 = max(int(np.floor(xs.min() - 0.5)), 0)
    c1 = min(int(np.ceil(xs.max() + 0.5)), w - 1)
    r0 = max(int(np.floor(ys.min() - 0.5)), 0)
    r1 = min(int(np.ceil(ys.max() + 0.5)), h - 1)
    if c0 > c1 or r0 > r1:
        return
    cols, rows = np.meshgrid(np.arange(c0, c1 + 1) + 0.5,
                             np.arange(r0, r1 + 1) + 0.5)
    a, b, c = pts[0], pts[1], pts[2]

    def edge(p, q):
        return (q[0] - p[0]) * (rows - p[1]) - (q[1] - p[1]) * (cols - p[0])

    d1, d2, d3 = edge(a, b), edge(b, c), edge(c, a)
    neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
    pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
    inside = ~(neg & pos)  # either all-nonnegative or all-nonpositive winding
    img[r0:r1 + 1, c0:c1 + 1] |= inside


def rasterize(camera, node_positions):
    """Cloth node positions (18,2) in metres -> (H,W) uint8 image of 0/1."""
    img = np.zeros((camera.height, camera.width), dtype=bool)
    px = camera.world_to_pixel(node_positions)
    idx = lambda row, col: row * CLOTH_LENGTH_NODES + col
    for row in range(CLOTH_WIDTH_NODES - 1):
        for col in range(CLOTH_LENGTH_NODES - 1):
            p00 = px[idx(row, col)]
            p01 = px[idx(row, col + 1)]
            p11 = px[idx(row + 1, col + 1)]
            p10 = px[idx(row + 1, col)]
            _fill_triangle(img, np.array([p00, p01, p11]))
            _fill_triangle(img, np.array([p00, p11, p10]))
    return img.astype(np.uint8)
