from .model import (
    CLOTH_LENGTH_NODES,
    CLOTH_WIDTH_NODES,
    N_NODES,
    ArmModel,
    Camera,
    ClothModel,
    CommandOutOfBoundsError,
    MaterialError,
    MaterialParams,
    ServoCommand,
    WorldState,
)
from .physics import (
    IntegrationDivergedError,
    SettleError,
    SimWorld,
    forward_kinematics,
    jacobian,
    semi_implicit_step,
    spring_forces,
    stiffness_ellipsoid,
)
from .raster import rasterize
from .policy import random_policy, scripted_policy
