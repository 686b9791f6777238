"""Endpoint (goal) generation heads.

The sampling variant maps (observation feature, latent draw) to a single
endpoint residual.  The mixture variant maps the observation feature alone
to per-component endpoint Gaussians; mixture weights are not produced here,
they come from the categorical latent so that component k means the same
mode everywhere.
"""

from __future__ import annotations

import torch

from .gmm import CORR_BOUND, GaussianMixture, cov_from_std_corr
from .nets import Mlp3, check_finite

LOG_STD_CLAMP = 10.0


class ResidualGoalHead(torch.nn.Module):
    """Endpoint residual from the observation feature and one latent draw."""

    def __init__(self, feature_dim: int, latent_dim: int, hidden_dim: int, out_dim: int):
        super().__init__()
        self.out_dim = out_dim
        self.net = Mlp3(feature_dim + latent_dim, hidden_dim, out_dim)

    def forward(self, feature: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        out = self.net(torch.cat([feature, z], dim=-1))
        return check_finite(out, "goal residual")


class MixtureGoalHead(torch.nn.Module):
    """Per-component endpoint Gaussians (2-D residual space).

    Separate heads produce means, per-axis log standard deviations (clamped
    to [-10, 10]) and a tanh-bounded correlation, so every covariance admits
    a Cholesky factorization by construction.  With all parameters at zero:
    means 0, unit stds, zero correlation.
    """

    def __init__(self, feature_dim: int, hidden_dim: int, n_components: int):
        super().__init__()
        self.n_components = n_components
        self.mean_head = Mlp3(feature_dim, hidden_dim, 2 * n_components)
        self.scale_head = Mlp3(feature_dim, hidden_dim, 2 * n_components)
        self.corr_head = Mlp3(feature_dim, hidden_dim, n_components)

    def forward(self, feature: torch.Tensor, weights: torch.Tensor) -> GaussianMixture:
        k = self.n_components
        if weights.shape[-1] != k:
            raise ValueError(f"expected {k} mixture weights, got {weights.shape[-1]}")
        batch = feature.shape[:-1]
        means = self.mean_head(feature).reshape(batch + (k, 2))
        log_std = self.scale_head(feature).reshape(batch + (k, 2))
        std = torch.exp(torch.clamp(log_std, -LOG_STD_CLAMP, LOG_STD_CLAMP))
        corr = torch.tanh(self.corr_head(feature)) * CORR_BOUND
        covs = cov_from_std_corr(std, corr)
        check_finite(means, "goal mixture means")
        return GaussianMixture(weights, means, covs)
