"""
Simulator for latent-group data with high-cardinality categories.

A latent label L picks a block of observable categories with probability
p_assign, covariates are Gaussian around a latent mean, and the outcome is one
of three designs:
  global_linear     y = alpha_L + x'beta + eps
  latent_linear     y = alpha_L + x'beta_L + eps
  latent_piecewise  y = alpha_L + sum_j x_j (beta+_Lj if x_j > med_j else beta-_Lj) + eps

Each draw (params, latent, groups, covariates, noise) uses its own RNG stream
spawned from the seed, so replaying one stream never disturbs the others.
"""

import json
import logging
from dataclasses import dataclass, replace
from typing import Dict, Optional

import numpy as np
from scipy.linalg import cholesky

from dataset import Dataset
from errors import ConfigurationError, DataError

log = logging.getLogger(__name__)

SETUPS = ("global_linear", "latent_linear", "latent_piecewise")
STREAMS = ("params", "latent", "groups", "covariates", "noise")
SUPPORT_SIZE = 3
MAX_REGENERATIONS = 100


@dataclass(frozen=True)
class SimConfig:
    n: int = 2000
    num_latent: int = 2
    num_groups: int = 20
    p: int = 10
    p_assign: float = 0.9
    setup: str = "latent_linear"
    seed: int = 0
    shared_support: bool = False
    noise_scale: float = 1.0

    def validate(self) -> "SimConfig":
        if self.setup not in SETUPS:
            raise ConfigurationError(f"unknown setup {self.setup!r}; expected one of {SETUPS}")
        if self.n < 1 or self.num_latent < 1 or self.num_groups < 1:
            raise ConfigurationError("n, num_latent and num_groups must be positive")
        if self.num_groups % self.num_latent:
            raise ConfigurationError(
                f"num_groups={self.num_groups} is not a multiple of num_latent={self.num_latent}"
            )
        if not 0.5 < self.p_assign <= 1.0:
            raise ConfigurationError(f"p_assign={self.p_assign} outside (0.5, 1]")
        if self.p < SUPPORT_SIZE:
            raise ConfigurationError(f"p={self.p} must be at least {SUPPORT_SIZE}")
        if self.noise_scale < 0:
            raise ConfigurationError("noise_scale must be >= 0")
        return self


@dataclass(frozen=True, eq=False)
class SimParams:
    mu: np.ndarray  # num_latent x p
    sigma: np.ndarray  # p x p
    alpha: np.ndarray  # num_latent
    beta: Optional[np.ndarray] = None  # p
    beta_l: Optional[np.ndarray] = None  # num_latent x p
    beta_plus: Optional[np.ndarray] = None  # num_latent x p
    beta_minus: Optional[np.ndarray] = None  # num_latent x p
    medians: Optional[np.ndarray] = None  # p, set once x is drawn


@dataclass(frozen=True, eq=False)
class SimOutput:
    dataset: Dataset
    latent: np.ndarray
    params: SimParams
    regenerations: int = 0


def ar_covariance(p: int, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _unit_slope(rng: np.random.Generator, p: int) -> np.ndarray:
    while True:
        raw = rng.choice(np.array([0.0, 1.0, -1.0]), size=p)
        norm = np.linalg.norm(raw)
        if norm > 0:
            return raw / norm


def draw_params(cfg: SimConfig, rng: np.random.Generator) -> SimParams:
    n_lat, p = cfg.num_latent, cfg.p
    mu = np.zeros((n_lat, p))
    shared = rng.choice(p, SUPPORT_SIZE, replace=False) if cfg.shared_support else None
    for l in range(n_lat):
        support = shared if shared is not None else rng.choice(p, SUPPORT_SIZE, replace=False)
        mu[l, support] = rng.choice(np.array([-1.0, 1.0]), size=SUPPORT_SIZE)

    alpha = rng.laplace(0.0, 1.0, size=n_lat)
    params = SimParams(mu=mu, sigma=ar_covariance(p), alpha=alpha)
    if cfg.setup == "global_linear":
        return replace(params, beta=_unit_slope(rng, p))
    if cfg.setup == "latent_linear":
        return replace(params, beta_l=np.stack([_unit_slope(rng, p) for _ in range(n_lat)]))
    plus = np.stack([_unit_slope(rng, p) for _ in range(n_lat)])
    minus = np.stack([_unit_slope(rng, p) for _ in range(n_lat)])
    return replace(params, beta_plus=plus, beta_minus=minus)


def draw_latent(cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, cfg.num_latent, size=cfg.n)


def group_probabilities(cfg: SimConfig) -> np.ndarray:
    """num_latent x num_groups matrix of P(G = g | L = l)"""
    n_lat, m = cfg.num_latent, cfg.num_groups
    block = m // n_lat
    if n_lat == 1:
        return np.full((1, m), 1.0 / m)
    owner = np.arange(m) // block
    inside = owner[None, :] == np.arange(n_lat)[:, None]
    return np.where(inside, cfg.p_assign / block, (1.0 - cfg.p_assign) / (m - block))


def draw_groups(latent: np.ndarray, cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    probs = group_probabilities(cfg)
    g = np.empty(latent.shape[0], dtype=np.int64)
    for l in range(cfg.num_latent):
        rows = np.flatnonzero(latent == l)
        g[rows] = rng.choice(cfg.num_groups, size=rows.size, p=probs[l])
    return g


def draw_covariates(latent: np.ndarray, params: SimParams, rng: np.random.Generator) -> np.ndarray:
    chol = cholesky(params.sigma, lower=True)
    z = rng.standard_normal((latent.shape[0], params.sigma.shape[0]))
    return params.mu[latent] + z @ chol.T


def gen_outcome(
    setup: str,
    x: np.ndarray,
    latent: np.ndarray,
    params: SimParams,
    rng: np.random.Generator,
    noise_scale: float = 1.0,
) -> np.ndarray:
    eps = rng.standard_normal(x.shape[0]) * noise_scale
    base = params.alpha[latent]
    if setup == "global_linear":
        return base + x @ params.beta + eps
    if setup == "latent_linear":
        return base + np.sum(x * params.beta_l[latent], axis=1) + eps
    if setup == "latent_piecewise":
        med = params.medians if params.medians is not None else np.median(x, axis=0)
        slopes = np.where(x > med, params.beta_plus[latent], params.beta_minus[latent])
        return base + np.sum(x * slopes, axis=1) + eps
    raise ConfigurationError(f"unknown setup {setup!r}")


def substreams(seed: int, attempt: int = 0) -> Dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed, spawn_key=(attempt,)).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


def compose(cfg: SimConfig, streams: Dict[str, np.random.Generator]) -> SimOutput:
    """One pass of the generative model from explicit RNG streams"""
    params = draw_params(cfg, streams["params"])
    latent = draw_latent(cfg, streams["latent"])
    g = draw_groups(latent, cfg, streams["groups"])
    x = draw_covariates(latent, params, streams["covariates"])
    if cfg.setup == "latent_piecewise":
        params = replace(params, medians=np.median(x, axis=0))
    y = gen_outcome(cfg.setup, x, latent, params, streams["noise"], cfg.noise_scale)

    dataset = Dataset(
        x=x,
        g=g,
        level_names=tuple(f"g{i + 1}" for i in range(cfg.num_groups)),
        y=y,
        require_all_levels=False,
    )
    return SimOutput(dataset=dataset, latent=latent, params=params)


def simulate(cfg: SimConfig) -> SimOutput:
    """Draw a dataset; redraw (and log) if some category ends up empty"""
    cfg.validate()
    for attempt in range(MAX_REGENERATIONS):
        out = compose(cfg, substreams(cfg.seed, attempt))
        if out.dataset.present.all():
            return replace(out, regenerations=attempt)
        missing = int((~out.dataset.present).sum())
        log.warning("seed %d attempt %d: %d empty categories, regenerating", cfg.seed, attempt, missing)
    raise DataError(
        f"could not populate all {cfg.num_groups} categories after {MAX_REGENERATIONS} attempts"
    )


def write_params(params: SimParams, path) -> None:
    payload = {
        name: getattr(params, name).tolist()
        for name in ("mu", "sigma", "alpha", "beta", "beta_l", "beta_plus", "beta_minus", "medians")
        if getattr(params, name) is not None
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
