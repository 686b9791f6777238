"""CVAE latent machinery.

Two latent families share one interface: a diagonal Gaussian (sampled with
the reparameterization trick) and a categorical over K mixture components.
Conditioning networks are three-layer MLPs; the prior sees only the
observation feature, the recognition network additionally sees the encoded
ground-truth future.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import NumericalError
from .nets import DTYPE, Mlp3, check_finite

LOG_VAR_CLAMP = 10.0
PROB_TOL = 1e-6


@dataclass
class GaussianLatentParams:
    """Mean and per-dimension standard deviation of a diagonal Gaussian."""

    mu: torch.Tensor     # (..., L)
    sigma: torch.Tensor  # (..., L), strictly positive

    def __post_init__(self):
        with torch.no_grad():
            check_finite(self.mu, "latent mean")
            check_finite(self.sigma, "latent std")
            if not (self.sigma > 0).all():
                raise NumericalError("latent std must be strictly positive")


@dataclass
class CategoricalLatentParams:
    """Mixture weights of a categorical latent over K components."""

    probs: torch.Tensor  # (..., K)

    def __post_init__(self):
        with torch.no_grad():
            check_finite(self.probs, "mixture weights")
            if (self.probs < -PROB_TOL).any():
                raise NumericalError("mixture weights must be nonnegative")
            sums = self.probs.sum(dim=-1)
            if not torch.allclose(sums, torch.ones_like(sums), atol=PROB_TOL):
                raise NumericalError("mixture weights must sum to 1")

    @property
    def n_components(self) -> int:
        return self.probs.shape[-1]


class GaussianLatentNet(torch.nn.Module):
    """Maps a conditioning feature to (mu, sigma) of the latent Gaussian.

    sigma = exp(raw / 2) with raw clamped to [-10, 10] for stability; with
    all parameters at zero this gives mu = 0, sigma = 1.
    """

    def __init__(self, input_dim: int, hidden_dim: int, latent_dim: int):
        super().__init__()
        self.latent_dim = latent_dim
        self.net = Mlp3(input_dim, hidden_dim, 2 * latent_dim)

    def forward(self, feature: torch.Tensor) -> GaussianLatentParams:
        out = self.net(feature)
        check_finite(out, "gaussian latent head output")
        mu, raw = out.chunk(2, dim=-1)
        sigma = torch.exp(torch.clamp(raw, -LOG_VAR_CLAMP, LOG_VAR_CLAMP) / 2.0)
        return GaussianLatentParams(mu, sigma)


class CategoricalLatentNet(torch.nn.Module):
    """Maps a conditioning feature to K softmax-normalized mixture weights."""

    def __init__(self, input_dim: int, hidden_dim: int, n_components: int):
        super().__init__()
        self.n_components = n_components
        self.net = Mlp3(input_dim, hidden_dim, n_components)

    def forward(self, feature: torch.Tensor) -> CategoricalLatentParams:
        logits = self.net(feature)
        check_finite(logits, "categorical latent logits")
        return CategoricalLatentParams(torch.softmax(logits, dim=-1))


def kl_gaussian(q: GaussianLatentParams, p: GaussianLatentParams) -> torch.Tensor:
    """Closed-form KL(q || p) for diagonal Gaussians, summed over dimensions."""
    if q.mu.shape != p.mu.shape:
        raise ValueError(f"latent shape mismatch: {tuple(q.mu.shape)} vs {tuple(p.mu.shape)}")
    var_q = q.sigma ** 2
    var_p = p.sigma ** 2
    term = torch.log(p.sigma) - torch.log(q.sigma) \
        + (var_q + (q.mu - p.mu) ** 2) / (2.0 * var_p) - 0.5
    return term.sum(dim=-1)


def kl_categorical(q: CategoricalLatentParams, p: CategoricalLatentParams) -> torch.Tensor:
    """KL(q || p) = sum_i q_i log(q_i / p_i), with 0 log 0 := 0.

    A component with q_i > 0 but p_i = 0 makes the divergence infinite; that
    is reported as an error rather than returned.
    """
    if q.probs.shape != p.probs.shape:
        raise ValueError("mixture weight shape mismatch")
    qp = q.probs
    pp = p.probs
    with torch.no_grad():
        if ((qp > 0) & (pp <= 0)).any():
            raise NumericalError("kl_categorical is infinite: q puts mass where p has none")
    ratio = torch.where(qp > 0, qp / pp.clamp_min(torch.finfo(DTYPE).tiny),
                        torch.ones_like(qp))
    return (qp * torch.log(ratio)).sum(dim=-1)


def _generator(seed: int | None, generator: torch.Generator | None) -> torch.Generator:
    if generator is not None:
        return generator
    gen = torch.Generator()
    gen.manual_seed(0 if seed is None else int(seed))
    return gen


def sample_gaussian(params: GaussianLatentParams, n: int, *,
                    seed: int | None = None,
                    generator: torch.Generator | None = None) -> torch.Tensor:
    """Draw n reparameterized samples z = mu + sigma * eps, eps ~ N(0, I).

    Output shape is (n, ...batch..., L); gradients flow into mu and sigma.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    gen = _generator(seed, generator)
    eps = torch.randn((n,) + tuple(params.mu.shape), generator=gen, dtype=DTYPE)
    return params.mu.unsqueeze(0) + params.sigma.unsqueeze(0) * eps


def sample_categorical(params: CategoricalLatentParams, mode: str, n: int = 1, *,
                       seed: int | None = None,
                       generator: torch.Generator | None = None) -> torch.Tensor:
    """Draw component indices.

    In "train" mode every component is returned exactly once (full
    enumeration, n is ignored); in "test" mode n indices are drawn from
    Cat(weights).  Only defined for unbatched weights.
    """
    if params.probs.ndim != 1:
        raise ValueError("sampling expects unbatched mixture weights")
    k = params.n_components
    if mode == "train":
        return torch.arange(k, dtype=torch.long)
    if mode == "test":
        if n < 1:
            raise ValueError("need at least one sample")
        gen = _generator(seed, generator)
        probs = params.probs.detach().clamp_min(0.0)
        return torch.multinomial(probs, n, replacement=True, generator=gen)
    raise ValueError(f"unknown sampling mode {mode!r}")


def one_hot(indices: torch.Tensor, n_components: int) -> torch.Tensor:
    return torch.nn.functional.one_hot(indices, n_components).to(DTYPE)
