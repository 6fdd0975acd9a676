"""Desk-scale cloth manipulation workbench.

Subpackages:
    tensor      taped reverse-mode autodiff on dense float64 arrays
    simworld    planar mass-spring cloth plus a two-joint servo arm
    perception  convolutional autoencoder compressing silhouettes to 3 numbers
    dpmpb       recurrent one-step dynamics model with per-trial bias inputs
    controller  gradient-descent receding-horizon command optimizer
    analysis    embedding and image metrics used by the experiment reports
    harness     dataset layout, CLI entry points, teleop service
"""

__version__ = "0.1.0"
