"""Shared layout of the rig's sensorimotor vectors.

The 7-dimensional state is [latent(3), joint angles(2), joint velocities(2)]
and the 3-dimensional command is [joint targets(2), servo gain factor(1)].
Data collection, the controller, and the experiment harness all assemble and
slice these vectors through this module so the convention lives in one place.
"""

from __future__ import annotations

import numpy as np

from .perception.ae import LATENT_DIM
from .tensor import ContractError

N_JOINTS = 2
STATE_DIM = LATENT_DIM + 2 * N_JOINTS   # 7
COMMAND_DIM = N_JOINTS + 1              # 3

LATENT = slice(0, LATENT_DIM)                            # image embedding
JOINT_POS = slice(LATENT_DIM, LATENT_DIM + N_JOINTS)     # theta
JOINT_VEL = slice(LATENT_DIM + N_JOINTS, STATE_DIM)      # theta_dot
THETA_REF = slice(0, N_JOINTS)
K_REF = COMMAND_DIM - 1

__all__ = [
    "COMMAND_DIM", "JOINT_POS", "JOINT_VEL", "K_REF", "LATENT", "LATENT_DIM",
    "N_JOINTS", "STATE_DIM", "THETA_REF",
    "assemble_command", "assemble_state", "command_bounds", "split_state",
]


def assemble_state(z, theta, theta_dot) -> np.ndarray:
    """Pack one observation into the canonical (7,) state vector."""
    z = np.asarray(z, dtype=np.float64).ravel()
    theta = np.asarray(theta, dtype=np.float64).ravel()
    theta_dot = np.asarray(theta_dot, dtype=np.float64).ravel()
    if z.shape != (LATENT_DIM,) or theta.shape != (N_JOINTS,) \
            or theta_dot.shape != (N_JOINTS,):
        raise ContractError(
            f"state blocks must be ({LATENT_DIM},), ({N_JOINTS},), ({N_JOINTS},); "
            f"got {z.shape}, {theta.shape}, {theta_dot.shape}")
    return np.concatenate([z, theta, theta_dot])


def split_state(s) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of assemble_state: (latent, theta, theta_dot)."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (STATE_DIM,):
        raise ContractError(f"state must have shape ({STATE_DIM},), got {s.shape}")
    return s[LATENT].copy(), s[JOINT_POS].copy(), s[JOINT_VEL].copy()


def assemble_command(theta_ref, k_ref) -> np.ndarray:
    """Pack one servo command into the canonical (3,) vector."""
    theta_ref = np.asarray(theta_ref, dtype=np.float64).ravel()
    if theta_ref.shape != (N_JOINTS,):
        raise ContractError(f"theta_ref must have shape ({N_JOINTS},), got {theta_ref.shape}")
    return np.concatenate([theta_ref, [float(k_ref)]])


def command_bounds(arm) -> tuple[np.ndarray, np.ndarray]:
    """Raw lower/upper command bounds (3,) for an arm model."""
    lo = np.concatenate([arm.limits_lo(), [arm.k_ref_range[0]]])
    hi = np.concatenate([arm.limits_hi(), [arm.k_ref_range[1]]])
    return lo, hi
