"""Bivariate Gaussian-mixture dynamics.

The parametric model variant describes pedestrian velocity at every future
step as a K-component bivariate mixture.  Position mixtures follow from
single-integrator propagation: each component integrates independently,
means accumulate mu_vel * dt and covariances accumulate cov_vel * dt**2.
Forward integration starts from the current position; backward integration
starts from the (predicted) goal mixture and subtracts velocity sums, so the
last backward step reproduces the goal mixture exactly.

Mixture weights are shared across the horizon: component identity is carried
by the categorical latent, and index k refers to the same mode in the goal
mixture, every velocity step, and every integrated position step.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch

from .errors import NumericalError
from .nets import DTYPE, check_finite

COV_FLOOR = 1e-6
CORR_BOUND = 1.0 - 1e-6
LOG_2PI = 1.8378770664093453  # log(2*pi)

VELOCITY = "velocity"
POSITION = "position"


@dataclass
class GaussianMixture:
    """K-component bivariate mixture at a single instant."""

    weights: torch.Tensor  # (..., K)
    means: torch.Tensor    # (..., K, 2)
    covs: torch.Tensor     # (..., K, 2, 2)

    @property
    def n_components(self) -> int:
        return self.means.shape[-2]


@dataclass
class MixtureSequence:
    """Per-step mixture parameters over a horizon, plus the frame period.

    Weights are constant over the horizon and therefore stored once.
    """

    weights: torch.Tensor  # (..., K)
    means: torch.Tensor    # (..., T, K, 2)
    covs: torch.Tensor     # (..., T, K, 2, 2)
    dt: float
    space: str             # "velocity" or "position"

    @property
    def steps(self) -> int:
        return self.means.shape[-3]

    @property
    def n_components(self) -> int:
        return self.means.shape[-2]

    def step(self, idx: int) -> GaussianMixture:
        return GaussianMixture(self.weights,
                               self.means[..., idx, :, :],
                               self.covs[..., idx, :, :, :])


def cov_from_std_corr(std: torch.Tensor, corr: torch.Tensor) -> torch.Tensor:
    """Assemble 2x2 covariances from per-axis stds and a bounded correlation.

    std: (..., 2) strictly positive; corr: (...) in (-1, 1).  The result is
    symmetric positive definite by construction.
    """
    sx = std[..., 0]
    sy = std[..., 1]
    off = corr * sx * sy
    row0 = torch.stack([sx * sx, off], dim=-1)
    row1 = torch.stack([off, sy * sy], dim=-1)
    return torch.stack([row0, row1], dim=-2)


def _chol(covs: torch.Tensor, cov_floor: float) -> torch.Tensor:
    eye = torch.eye(2, dtype=covs.dtype)
    try:
        return torch.linalg.cholesky(covs + cov_floor * eye)
    except Exception as exc:  # LinAlgError
        raise NumericalError(f"covariance is not positive definite: {exc}") from None


def mixture_log_density(mix: GaussianMixture, y: torch.Tensor,
                        cov_floor: float = COV_FLOOR) -> torch.Tensor:
    """log sum_k w_k N(y | mu_k, cov_k + floor*I), via log-sum-exp.

    ``y`` broadcasts against the mixture's batch shape: means (..., K, 2)
    with y (..., 2) give a (...) result.
    """
    chol = _chol(mix.covs, cov_floor)
    diff = (y.unsqueeze(-2) - mix.means).unsqueeze(-1)          # (..., K, 2, 1)
    sol = torch.linalg.solve_triangular(chol, diff, upper=False)
    maha = (sol.squeeze(-1) ** 2).sum(dim=-1)                   # (..., K)
    logdet = 2.0 * torch.log(torch.diagonal(chol, dim1=-2, dim2=-1)).sum(dim=-1)
    log_comp = -LOG_2PI - 0.5 * logdet - 0.5 * maha
    tiny = torch.finfo(DTYPE).tiny
    return torch.logsumexp(torch.log(mix.weights.clamp_min(tiny)) + log_comp, dim=-1)


def integrate_forward(origin: torch.Tensor, vel: MixtureSequence) -> MixtureSequence:
    """Propagate a velocity mixture to position mixtures from ``origin``.

    Step n has mean origin + sum_{j<=n} mu_j * dt and covariance
    sum_{j<=n} cov_j * dt**2, per component; weights are unchanged.
    """
    if vel.space != VELOCITY:
        raise ValueError(f"expected a velocity sequence, got space={vel.space!r}")
    origin = torch.as_tensor(origin, dtype=vel.means.dtype)
    means = origin.unsqueeze(-2).unsqueeze(-3) + torch.cumsum(vel.means, dim=-3) * vel.dt
    covs = torch.cumsum(vel.covs, dim=-4) * (vel.dt ** 2)
    return MixtureSequence(vel.weights, means, covs, vel.dt, POSITION)


def integrate_backward(goal: GaussianMixture, vel: MixtureSequence) -> MixtureSequence:
    """Propagate backwards from a goal mixture through the velocity mixture.

    Returns T+1 position steps indexed j = 0..T, where step j is the
    position at j frames past the current time: mean mu_goal minus the sum
    of the remaining velocity means, covariance cov_goal plus the remaining
    velocity covariances (dt-scaled).  Step T is the goal mixture itself;
    step 0 sits at the current time.
    """
    if vel.space != VELOCITY:
        raise ValueError(f"expected a velocity sequence, got space={vel.space!r}")
    if goal.n_components != vel.n_components:
        raise ValueError(
            f"goal has {goal.n_components} components, velocities have {vel.n_components}"
        )
    cum_mean = torch.cumsum(vel.means, dim=-3) * vel.dt          # (..., T, K, 2)
    cum_cov = torch.cumsum(vel.covs, dim=-4) * (vel.dt ** 2)
    total_mean = cum_mean[..., -1:, :, :]
    total_cov = cum_cov[..., -1:, :, :, :]
    # remaining sums after step j: total - cumulative up to j; prepend j=0 (all remaining)
    rem_mean = torch.cat([total_mean, total_mean - cum_mean], dim=-3)
    rem_cov = torch.cat([total_cov, total_cov - cum_cov], dim=-4)
    means = goal.means.unsqueeze(-3) - rem_mean
    covs = goal.covs.unsqueeze(-4) + rem_cov
    return MixtureSequence(vel.weights, means, covs, vel.dt, POSITION)


def sequence_nll(pos: MixtureSequence, targets: torch.Tensor,
                 cov_floor: float = COV_FLOOR) -> torch.Tensor:
    """Sum over steps of the negative mixture log-density at the targets.

    targets: (..., T, 2) matching the sequence length.
    """
    if pos.space != POSITION:
        raise ValueError(f"expected a position sequence, got space={pos.space!r}")
    if targets.shape[-2] != pos.steps:
        raise ValueError(f"{targets.shape[-2]} targets for {pos.steps} steps")
    mix = GaussianMixture(pos.weights.unsqueeze(-2), pos.means, pos.covs)
    return -mixture_log_density(mix, targets, cov_floor).sum(dim=-1)


def forward_nll(pos: MixtureSequence, future: torch.Tensor) -> torch.Tensor:
    """NLL of the future waypoints under forward-integrated positions."""
    return sequence_nll(pos, future)


def backward_nll(back: MixtureSequence, future: torch.Tensor) -> torch.Tensor:
    """NLL of waypoints under backward-integrated positions.

    ``back`` has T+1 steps (see integrate_backward); the goal step duplicates
    the goal-estimation NLL and is excluded here, while step 0 scores the
    known current position (a zero residual) and is included: it ties the
    goal estimate and the velocity sums back to where the agent actually is.
    """
    horizon = back.steps - 1
    if future.shape[-2] != horizon:
        raise ValueError(f"{future.shape[-2]} waypoints for a {horizon}-step horizon")
    zero = torch.zeros_like(future[..., :1, :])
    targets = torch.cat([zero, future[..., :-1, :]], dim=-2)
    trimmed = MixtureSequence(back.weights,
                              back.means[..., :horizon, :, :],
                              back.covs[..., :horizon, :, :, :],
                              back.dt, POSITION)
    return sequence_nll(trimmed, targets)


def _delta_mixture(point: torch.Tensor, k: int) -> GaussianMixture:
    """A pseudo-mixture with every component pinned at ``point``, zero spread."""
    means = point.unsqueeze(-2).expand(*point.shape[:-1], k, 2)
    covs = torch.zeros(means.shape + (2,), dtype=point.dtype)
    weights = torch.full(means.shape[:-1], 1.0 / k, dtype=point.dtype)
    return GaussianMixture(weights, means, covs)


def mixture_trajectory_loss(goal: GaussianMixture, vel: MixtureSequence,
                            future: torch.Tensor, kld: torch.Tensor,
                            goal_anchor: str = "predicted") -> torch.Tensor:
    """Total mixture loss: goal NLL + forward NLL + backward NLL + KLD.

    Everything is evaluated in residual coordinates relative to the current
    position, so ``future`` is (..., T, 2) residual waypoints whose last row
    is the goal residual.  ``goal_anchor`` selects what the backward pass is
    anchored to: the predicted goal mixture (default) or the ground-truth
    endpoint ("truth", mostly for ablation).
    """
    future = torch.as_tensor(future, dtype=vel.means.dtype)
    goal_res = future[..., -1, :]

    goal_term = -mixture_log_density(goal, goal_res)
    fwd = integrate_forward(torch.zeros(2, dtype=future.dtype), vel)
    fwd_term = forward_nll(fwd, future)
    if goal_anchor == "predicted":
        anchor = goal
    elif goal_anchor == "truth":
        anchor = _delta_mixture(goal_res, vel.n_components)
    else:
        raise ValueError(f"unknown goal_anchor {goal_anchor!r}")
    bwd_term = backward_nll(integrate_backward(anchor, vel), future)

    total = goal_term + fwd_term + bwd_term + kld
    if not torch.isfinite(total).all():
        for name, term in [("goal", goal_term), ("forward", fwd_term),
                           ("backward", bwd_term), ("kld", kld)]:
            if not torch.isfinite(term).all():
                raise NumericalError(f"non-finite {name} term in mixture loss")
        raise NumericalError("non-finite mixture loss")
    return total


def window_mixture_loss(goal: GaussianMixture, vel: MixtureSequence,
                        window, kld: torch.Tensor | float = 0.0,
                        goal_anchor: str = "predicted") -> torch.Tensor:
    """Convenience wrapper evaluating the loss for one trajectory window."""
    future_res = torch.as_tensor(window.future - window.origin, dtype=DTYPE)
    kld_t = torch.as_tensor(kld, dtype=DTYPE)
    return mixture_trajectory_loss(goal, vel, future_res, kld_t, goal_anchor)
