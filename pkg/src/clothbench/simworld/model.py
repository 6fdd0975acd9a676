"""World description: planar two-joint servo arm holding a mass-spring cloth.

Everything lives in a vertical plane (x right, y up, gravity -y).  The arm
links are idealized torque servos without link gravity; the cloth is a 3x6
lattice of point masses joined by structural and diagonal shear springs, its
two corner nodes of one short edge rigidly carried by the end-effector frame.
"""

import math
from dataclasses import dataclass, field

import numpy as np

CLOTH_WIDTH_NODES = 3
CLOTH_LENGTH_NODES = 6
N_NODES = CLOTH_WIDTH_NODES * CLOTH_LENGTH_NODES


class CommandOutOfBoundsError(ValueError):
    pass


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialParams:
    """Cloth material: inter-node damping [N s/m] and total mass [kg]."""

    c_damp: float
    c_mass: float

    def __post_init__(self):
        if not (self.c_damp > 0 and math.isfinite(self.c_damp)):
            raise MaterialError(f"c_damp must be positive, got {self.c_damp}")
        if not (self.c_mass > 0 and math.isfinite(self.c_mass)):
            raise MaterialError(f"c_mass must be positive, got {self.c_mass}")

    @property
    def node_mass(self):
        return self.c_mass / N_NODES

    @property
    def tag(self):
        return f"cd{self.c_damp:g}_cm{self.c_mass:g}"


@dataclass(frozen=True)
class ServoCommand:
    """Per-tick command: joint target angles and a PD gain factor."""

    theta_ref: tuple
    k_ref: float

    def as_array(self):
        return np.array([self.theta_ref[0], self.theta_ref[1], self.k_ref])


@dataclass
class ArmModel:
    link_lengths: tuple = (0.3, 0.3)
    joint_limits: tuple = ((-math.pi / 2, math.pi), (-2.4, 0.0))
    k_ref_range: tuple = (10.0, 70.0)
    kp0: float = 1.2     # servo stiffness per unit k_ref [N m / rad]
    kd0: float = 0.266   # damping ratio stays ~0.7 for any k_ref by sqrt scaling
    inertia: tuple = (0.03, 0.03)
    base: tuple = (0.0, 0.0)

    def limits_lo(self):
        return np.array([self.joint_limits[0][0], self.joint_limits[1][0]])

    def limits_hi(self):
        return np.array([self.joint_limits[0][1], self.joint_limits[1][1]])


@dataclass
class ClothModel:
    """3x6 lattice; node (r, c) has index r*6 + c, short edge c=0 is grasped."""

    spacing: float = 0.1
    k_spring: float = 4.0  # soft on purpose: free hang stretches >= 20 percent
    attach_nodes: tuple = (0, 2 * CLOTH_LENGTH_NODES)  # corner nodes of edge c=0
    edges: np.ndarray = field(default=None, repr=False)
    rest: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.edges is None:
            e, r = [], []
            idx = lambda row, col: row * CLOTH_LENGTH_NODES + col
            for row in range(CLOTH_WIDTH_NODES):
                for col in range(CLOTH_LENGTH_NODES):
                    if col + 1 < CLOTH_LENGTH_NODES:
                        e.append((idx(row, col), idx(row, col + 1)))
                        r.append(self.spacing)
                    if row + 1 < CLOTH_WIDTH_NODES:
                        e.append((idx(row, col), idx(row + 1, col)))
                        r.append(self.spacing)
                    if col + 1 < CLOTH_LENGTH_NODES and row + 1 < CLOTH_WIDTH_NODES:
                        e.append((idx(row, col), idx(row + 1, col + 1)))
                        r.append(self.spacing * math.sqrt(2.0))
                        e.append((idx(row + 1, col), idx(row, col + 1)))
                        r.append(self.spacing * math.sqrt(2.0))
            self.edges = np.array(e, dtype=np.intp)
            self.rest = np.array(r)
        # signed incidence matrix turns per-edge forces into per-node sums
        inc = np.zeros((N_NODES, len(self.edges)))
        inc[self.edges[:, 0], np.arange(len(self.edges))] = 1.0
        inc[self.edges[:, 1], np.arange(len(self.edges))] = -1.0
        self.incidence = inc
        # offsets of the grasped corners in the end-effector frame, normal axis
        self.attach_offsets = np.array([[0.0, self.spacing], [0.0, -self.spacing]])

    @property
    def rest_length(self):
        return self.spacing * (CLOTH_LENGTH_NODES - 1)


@dataclass
class Camera:
    """Orthographic viewport mapping world metres to a 128x96 binary image."""

    center: tuple = (0.25, -0.05)
    pitch: float = 0.024  # metres per pixel
    width: int = 128
    height: int = 96

    def world_to_pixel(self, pts):
        """(N,2) world -> (N,2) continuous pixel coords (u=col, v=row)."""
        pts = np.asarray(pts, dtype=float)
        u = (pts[:, 0] - self.center[0]) / self.pitch + self.width / 2.0
        v = self.height / 2.0 - (pts[:, 1] - self.center[1]) / self.pitch
        return np.stack([u, v], axis=1)


@dataclass
class WorldState:
    t: float
    theta: np.ndarray       # (2,)
    theta_dot: np.ndarray   # (2,)
    x: np.ndarray           # (18,2) node positions
    v: np.ndarray           # (18,2) node velocities

    def copy(self):
        return WorldState(self.t, self.theta.copy(), self.theta_dot.copy(),
                          self.x.copy(), self.v.copy())
