"""Full predictor assemblies.

Both variants share the same skeleton: a recurrent observation encoder, a
(training-only) recurrent future encoder, prior/recognition latent networks,
a goal head, and the bi-directional decoder.  Inputs and outputs live in
residual coordinates relative to the current position, so a window's past is
fed to the encoder as ``past - origin`` and predictions are residuals that
callers re-anchor at the origin.

``NonparametricPredictor`` draws Gaussian latents and decodes coordinates;
its best-of-many loss keeps the samples diverse.  ``MixturePredictor`` uses
a categorical latent over K modes, decodes one velocity Gaussian per mode
per step, and is trained by the integrated mixture NLL.  Training always
enumerates all K categories; testing draws categories from the prior
weights.
"""

from __future__ import annotations

import torch
from torch import nn

from .decoder import BiDirectionalDecoder
from .errors import NumericalError
from .gmm import (CORR_BOUND, GaussianMixture, MixtureSequence,
                  cov_from_std_corr, integrate_forward, mixture_trajectory_loss)
from .goals import LOG_STD_CLAMP, MixtureGoalHead, ResidualGoalHead
from .latent import (CategoricalLatentNet, GaussianLatentNet, kl_categorical,
                     kl_gaussian, sample_categorical, sample_gaussian)
from .nets import DTYPE, TrajectoryEncoder, as_tensor


def best_of_many_loss(goal_true: torch.Tensor, future_true: torch.Tensor,
                      goals: torch.Tensor, trajs: torch.Tensor,
                      kld: torch.Tensor) -> torch.Tensor:
    """Best-of-many L2 loss plus KL divergence, per window.

    The goal term and the trajectory term each take their own minimum over
    the N samples, so the best endpoint and the best path may come from
    different draws.

    goal_true: (B, D); future_true: (B, T, D); goals: (N, B, D);
    trajs: (N, B, T, D); kld: (B,).  All residual coordinates.
    """
    if goals.shape[0] < 1:
        raise ValueError("best-of-many loss needs at least one sample")
    goal_dist = torch.linalg.vector_norm(goal_true.unsqueeze(0) - goals, dim=-1)
    traj_dist = torch.linalg.vector_norm(
        future_true.unsqueeze(0) - trajs, dim=-1).sum(dim=-1)
    return goal_dist.min(dim=0).values + traj_dist.min(dim=0).values + kld


def _residualize(past: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    origin = past[..., -1, :]
    return past - origin.unsqueeze(-2), origin


class NonparametricPredictor(nn.Module):
    """Gaussian-latent CVAE decoding trajectory coordinates.

    ``deterministic=True`` fixes the latent at the prior mean (single-output
    ablation); ``use_backward=False`` disables the decoder's backward chain.
    """

    def __init__(self, input_dim: int, hidden_dim: int, latent_dim: int,
                 deterministic: bool = False, use_backward: bool = True):
        super().__init__()
        self.input_dim = input_dim
        self.latent_dim = latent_dim
        self.deterministic = deterministic
        self.obs_encoder = TrajectoryEncoder(input_dim, hidden_dim)
        self.target_encoder = TrajectoryEncoder(input_dim, hidden_dim)
        self.prior_net = GaussianLatentNet(hidden_dim, hidden_dim, latent_dim)
        self.posterior_net = GaussianLatentNet(2 * hidden_dim, hidden_dim, latent_dim)
        self.goal_head = ResidualGoalHead(hidden_dim, latent_dim, hidden_dim, input_dim)
        self.decoder = BiDirectionalDecoder(hidden_dim, latent_dim, input_dim,
                                            input_dim, hidden_dim,
                                            use_backward=use_backward)

    def _decode_samples(self, feature: torch.Tensor, z: torch.Tensor,
                        steps: int) -> tuple[torch.Tensor, torch.Tensor]:
        """z: (N, B, L) -> goals (N, B, D), trajectories (N, B, steps, D)."""
        n, b = z.shape[0], z.shape[1]
        feat = feature.unsqueeze(0).expand(n, b, -1).reshape(n * b, -1)
        z_flat = z.reshape(n * b, -1)
        goals = self.goal_head(feat, z_flat)
        trajs = self.decoder(feat, z_flat, goals, steps)
        return goals.reshape(n, b, -1), trajs.reshape(n, b, steps, -1)

    def loss(self, past, future, n_samples: int,
             generator: torch.Generator | None = None):
        """Mean training loss over the batch, plus per-term diagnostics."""
        past = as_tensor(past, "past")
        future = as_tensor(future, "future")
        past_res, origin = _residualize(past)
        future_res = future - origin.unsqueeze(-2)

        h = self.obs_encoder(past_res)
        if self.deterministic:
            prior = self.prior_net(h)
            z = prior.mu.unsqueeze(0)
            kld = torch.zeros(h.shape[0], dtype=DTYPE)
        else:
            h_y = self.target_encoder(future_res)
            posterior = self.posterior_net(torch.cat([h, h_y], dim=-1))
            prior = self.prior_net(h)
            kld = kl_gaussian(posterior, prior)
            z = sample_gaussian(posterior, n_samples, generator=generator)
        goals, trajs = self._decode_samples(h, z, future.shape[-2])
        per_window = best_of_many_loss(future_res[..., -1, :], future_res,
                                       goals, trajs, kld)
        loss = per_window.mean()
        parts = {"kld": float(kld.mean().detach()), "loss": float(loss.detach())}
        return loss, parts

    @torch.no_grad()
    def predict(self, past, steps: int, n_samples: int,
                generator: torch.Generator | None = None) -> torch.Tensor:
        """Sample n_samples residual trajectories for one window: (n, steps, D)."""
        past = as_tensor(past, "past")
        if past.ndim != 2:
            raise ValueError("predict expects a single window (steps, dim)")
        past_res, _ = _residualize(past)
        h = self.obs_encoder(past_res.unsqueeze(0))
        prior = self.prior_net(h)
        if self.deterministic:
            z = prior.mu.unsqueeze(0).expand(n_samples, 1, self.latent_dim)
        else:
            z = sample_gaussian(prior, n_samples, generator=generator)
        _, trajs = self._decode_samples(h, z, steps)
        return trajs[:, 0]


class MixturePredictor(nn.Module):
    """Categorical-latent CVAE decoding per-step velocity mixtures (2-D)."""

    RAW_PARAMS = 5  # per step: 2 means, 2 log-stds, 1 correlation

    def __init__(self, input_dim: int, hidden_dim: int, n_components: int, dt: float,
                 use_backward: bool = True):
        super().__init__()
        if input_dim != 2:
            raise ValueError("the mixture variant models 2-D positions; "
                             "convert boxes to centers first")
        self.input_dim = input_dim
        self.n_components = n_components
        self.dt = dt
        self.obs_encoder = TrajectoryEncoder(input_dim, hidden_dim)
        self.target_encoder = TrajectoryEncoder(input_dim, hidden_dim)
        self.prior_net = CategoricalLatentNet(hidden_dim, hidden_dim, n_components)
        self.posterior_net = CategoricalLatentNet(2 * hidden_dim, hidden_dim, n_components)
        self.goal_head = MixtureGoalHead(hidden_dim, hidden_dim, n_components)
        self.decoder = BiDirectionalDecoder(hidden_dim, n_components, input_dim,
                                            self.RAW_PARAMS, hidden_dim,
                                            use_backward=use_backward)

    def _decode_velocity(self, feature: torch.Tensor, goal: GaussianMixture,
                         weights: torch.Tensor, steps: int) -> MixtureSequence:
        """One decode per component, assembled into a velocity mixture."""
        b = feature.shape[0]
        k = self.n_components
        feat = feature.unsqueeze(1).expand(b, k, -1).reshape(b * k, -1)
        z = torch.eye(k, dtype=DTYPE).unsqueeze(0).expand(b, k, k).reshape(b * k, k)
        goal_means = goal.means.reshape(b * k, 2)
        raw = self.decoder(feat, z, goal_means, steps)          # (B*K, T, 5)
        raw = raw.reshape(b, k, steps, self.RAW_PARAMS).permute(0, 2, 1, 3)
        means = raw[..., 0:2]
        std = torch.exp(torch.clamp(raw[..., 2:4], -LOG_STD_CLAMP, LOG_STD_CLAMP))
        corr = torch.tanh(raw[..., 4]) * CORR_BOUND
        covs = cov_from_std_corr(std, corr)
        return MixtureSequence(weights, means, covs, self.dt, "velocity")

    def forward_mixtures(self, past, steps: int, mode: str = "test"):
        """Goal mixture and integrated position mixture for given windows.

        mode "test" weights come from the prior; "train" from the posterior
        (which then also needs the future — use ``loss`` for that path).
        """
        past = as_tensor(past, "past")
        squeeze = past.ndim == 2
        if squeeze:
            past = past.unsqueeze(0)
        past_res, _ = _residualize(past)
        h = self.obs_encoder(past_res)
        weights = self.prior_net(h).probs
        goal = self.goal_head(h, weights)
        vel = self._decode_velocity(h, goal, weights, steps)
        pos = integrate_forward(torch.zeros(2, dtype=DTYPE), vel)
        if squeeze:
            goal = GaussianMixture(goal.weights[0], goal.means[0], goal.covs[0])
            pos = MixtureSequence(pos.weights[0], pos.means[0], pos.covs[0],
                                  pos.dt, pos.space)
        return goal, pos

    def loss(self, past, future, n_samples: int = 0,
             generator: torch.Generator | None = None):
        """Mean integrated-mixture NLL loss over the batch (full enumeration)."""
        past = as_tensor(past, "past")
        future = as_tensor(future, "future")
        past_res, origin = _residualize(past)
        future_res = future - origin.unsqueeze(-2)

        h = self.obs_encoder(past_res)
        h_y = self.target_encoder(future_res)
        posterior = self.posterior_net(torch.cat([h, h_y], dim=-1))
        prior = self.prior_net(h)
        kld = kl_categorical(posterior, prior)

        goal = self.goal_head(h, posterior.probs)
        vel = self._decode_velocity(h, goal, posterior.probs, future.shape[-2])
        per_window = mixture_trajectory_loss(goal, vel, future_res, kld)
        loss = per_window.mean()
        parts = {"kld": float(kld.mean().detach()), "loss": float(loss.detach())}
        return loss, parts

    @torch.no_grad()
    def predict(self, past, steps: int, n_samples: int,
                generator: torch.Generator | None = None):
        """Sample trajectories for one window.

        Component indices are drawn from the prior weights; waypoints are
        drawn independently per step from the sampled component's integrated
        position Gaussian.  Returns (trajectories (n, steps, 2), goal
        mixture, position mixture sequence), all in residual coordinates.
        """
        past = as_tensor(past, "past")
        if past.ndim != 2:
            raise ValueError("predict expects a single window (steps, dim)")
        goal, pos = self.forward_mixtures(past, steps, mode="test")
        from .latent import CategoricalLatentParams

        comps = sample_categorical(CategoricalLatentParams(pos.weights), "test",
                                   n_samples, generator=generator)
        sel_means = pos.means[:, comps]                       # (T, n, 2)
        sel_covs = pos.covs[:, comps]                         # (T, n, 2, 2)
        chol = torch.linalg.cholesky(sel_covs)
        eps = torch.randn(steps, n_samples, 2, 1, generator=generator, dtype=DTYPE)
        draws = sel_means + (chol @ eps).squeeze(-1)
        trajs = draws.permute(1, 0, 2)
        if not torch.isfinite(trajs).all():
            raise NumericalError("non-finite trajectory samples")
        return trajs, goal, pos
