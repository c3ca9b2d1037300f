"""Gumbel-Sinkhorn graph attention Q-learning for multi-agent gridworlds.

The package is a self-contained desk-scale stack: a deterministic gridworld
simulator (Gather and Battle), small graph neural layers on a hand-rolled
reverse-mode tape, the Sinkhorn / Hungarian matching pipeline that learns a
latent permutation between consecutive timesteps, a DQN training loop, and a
CLI harness that runs ablation matrices and renders learning-curve figures.
"""

__version__ = "0.1.0"

from .autodiff import ParamStore, RngStream, Tensor

__all__ = ["ParamStore", "RngStream", "Tensor", "__version__"]
