"""
Enumerable latent worlds for checking sufficient representations exactly.

A LatentWorld has K latent levels, M categories and a finite covariate support,
so E[Y | X=x, G=g] can be computed by brute-force enumeration and compared with
the closed forms that go through psi(g), omega(g) = E[X | G=g] (via A^+) and
the rows of the left singular matrix of Omega^T.

The multinomial-logit identity is checked on sampled data instead, since a
world whose P(G | X) is exactly logit cannot be built from discrete parts.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from errors import DomainError, FixtureError
from numlin import fit_mnl, mnl_probabilities, pseudo_inverse, svd

log = logging.getLogger(__name__)

MAX_WORLD_ATTEMPTS = 100
MIN_SINGULAR = 1e-6
RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LatentWorld:
    K: int
    M: int
    x_support: np.ndarray  # S x p
    pi_l: np.ndarray  # K
    pg_given_l: np.ndarray  # K x M, generative P(G | L)
    psi: np.ndarray  # K x M, P(L | G)
    px_given_l: np.ndarray  # K x S
    m_yl: np.ndarray  # S x K, E[Y | X=x, L=l]
    pg: np.ndarray  # M

    @property
    def support_size(self) -> int:
        return self.x_support.shape[0]


def world_from_parts(pi_l, pg_given_l, x_support, px_given_l, m_yl) -> LatentWorld:
    """Derive P(G) and Psi from the generative pieces"""
    pi_l = np.asarray(pi_l, dtype=np.float64)
    pg_given_l = np.asarray(pg_given_l, dtype=np.float64)
    joint = pi_l[:, None] * pg_given_l
    pg = joint.sum(axis=0)
    return LatentWorld(
        K=pi_l.shape[0],
        M=pg_given_l.shape[1],
        x_support=np.asarray(x_support, dtype=np.float64),
        pi_l=pi_l,
        pg_given_l=pg_given_l,
        psi=joint / pg,
        px_given_l=np.asarray(px_given_l, dtype=np.float64),
        m_yl=np.asarray(m_yl, dtype=np.float64),
        pg=pg,
    )


def a_matrix(world: LatentWorld) -> np.ndarray:
    """p x K matrix of E[X | L = l]"""
    return (world.px_given_l @ world.x_support).T


def joint_table(world: LatentWorld) -> np.ndarray:
    """K x M x S table of P(L=l, G=g, X=x)"""
    return (
        world.pi_l[:, None, None]
        * world.pg_given_l[:, :, None]
        * world.px_given_l[:, None, :]
    )


def omega_matrix(world: LatentWorld) -> np.ndarray:
    """p x M matrix of E[X | G = g], by enumeration of the joint"""
    p_gx = joint_table(world).sum(axis=0)
    return (p_gx / p_gx.sum(axis=1, keepdims=True) @ world.x_support).T


def build_world(K: int, M: int, p: int, support_size: int, rng: np.random.Generator) -> LatentWorld:
    """Random strictly positive world whose A is left-invertible"""
    if support_size < K or p < K:
        raise FixtureError(f"need support_size >= K and p >= K (K={K}, p={p}, S={support_size})")
    for attempt in range(MAX_WORLD_ATTEMPTS):
        world = world_from_parts(
            pi_l=rng.dirichlet(np.ones(K)),
            pg_given_l=rng.dirichlet(np.ones(M), size=K),
            x_support=rng.normal(size=(support_size, p)),
            px_given_l=rng.dirichlet(np.ones(support_size), size=K),
            m_yl=rng.normal(size=(support_size, K)),
        )
        if svd(a_matrix(world)).d[-1] > MIN_SINGULAR:
            return world
        log.debug("world attempt %d: A not left-invertible", attempt)
    raise FixtureError(f"no left-invertible A after {MAX_WORLD_ATTEMPTS} attempts")


def _x_index(world: LatentWorld, x) -> int:
    if isinstance(x, (int, np.integer)):
        idx = int(x)
        if 0 <= idx < world.support_size:
            return idx
        raise DomainError(f"support index {idx} out of range")
    hits = np.flatnonzero(np.all(world.x_support == np.asarray(x, dtype=np.float64), axis=1))
    if hits.size == 0:
        raise DomainError("x is not a support point of this world")
    return int(hits[0])


def _bayes_mean(world: LatentWorld, xi: int, weights: np.ndarray) -> float:
    """sum_l E[Y|x,l] P(x|l) w_l / sum_l P(x|l) w_l"""
    lik = world.px_given_l[:, xi] * weights
    denom = lik.sum()
    if not np.isfinite(denom) or abs(denom) <= 1e-300:
        raise DomainError("conditioning event has zero probability")
    return float(world.m_yl[xi] @ lik / denom)


def mu_direct(world: LatentWorld, x, g: int) -> float:
    """E[Y | X=x, G=g] from the enumerated joint of (L, G, X)"""
    xi = _x_index(world, x)
    column = joint_table(world)[:, g, xi]
    total = column.sum()
    if total <= 0:
        raise DomainError(f"P(X=x, G={g}) is zero")
    return float(world.m_yl[xi] @ (column / total))


def mu_via_psi(world: LatentWorld, x, g: int) -> float:
    return _bayes_mean(world, _x_index(world, x), world.psi[:, g])


def _left_inverse(world: LatentWorld) -> np.ndarray:
    a = a_matrix(world)
    if svd(a).d[-1] <= MIN_SINGULAR:
        raise DomainError("A is not left-invertible")
    return pseudo_inverse(a)


def mu_via_means(world: LatentWorld, x, g: int) -> float:
    """Same formula with psi(g) recovered as A^+ omega(g)"""
    psi_g = _left_inverse(world) @ omega_matrix(world)[:, g]
    return _bayes_mean(world, _x_index(world, x), psi_g)


def lowrank_omega(world: LatentWorld) -> np.ndarray:
    """Columns V D u(g)^T rebuilt from the rank-k SVD of Omega^T"""
    f = svd(omega_matrix(world).T)
    k = int(np.sum(f.d > RANK_TOL * f.d[0]))
    return (f.v[:, :k] * f.d[:k]) @ f.u[:, :k].T


def mu_via_lowrank(world: LatentWorld, x, g: int) -> float:
    """Same formula with psi(g) recovered as A^+ V D u(g)^T"""
    psi_g = _left_inverse(world) @ lowrank_omega(world)[:, g]
    return _bayes_mean(world, _x_index(world, x), psi_g)


# ---------------------------------------------------------------------------
# Multinomial logit moment identity
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MnlMomentReport:
    n: int
    out_of_sample_discrepancy: float  # f evaluated on an independent X draw
    in_sample_discrepancy: float  # f evaluated on the fitting sample
    discrepancy: np.ndarray  # M x p, on the independent draw
    converged: bool
    resamples: int


def sample_mnl_world(theta_star, n: int, rng: np.random.Generator, max_resamples: int = 100):
    """Draw X ~ N(0, I) and G | X from the logit with coefficients theta_star (M x (p+1))"""
    theta_star = np.asarray(theta_star, dtype=np.float64)
    m, p = theta_star.shape[0], theta_star.shape[1] - 1
    for attempt in range(max_resamples):
        x = rng.standard_normal((n, p))
        logits = np.column_stack([np.ones(n), x]) @ theta_star.T
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        u = rng.random(n)
        g = np.minimum((u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1), m - 1)
        if np.all(np.bincount(g, minlength=m) > 0):
            return x, g, attempt
        log.debug("mnl sample attempt %d left a category empty", attempt)
    raise FixtureError(f"a category stayed empty after {max_resamples} draws")


def f_theta(theta, x) -> np.ndarray:
    """M x p matrix of E[X Lambda(g|X)] / E[Lambda(g|X)] averaged over the rows of x"""
    theta = np.asarray(theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    logits = np.column_stack([np.ones(x.shape[0]), x]) @ theta.T
    lam = np.exp(logits - logits.max(axis=1, keepdims=True))
    lam /= lam.sum(axis=1, keepdims=True)
    return (lam.T @ x) / lam.sum(axis=0)[:, None]


def mnl_moment_check(
    theta_star, n: int, rng: np.random.Generator, reg: float = 1e-8
) -> MnlMomentReport:
    """
    Fit the logit on a sample of size n and compare f(theta_hat_g) with the
    empirical group means. f is averaged over a fresh X draw of the same size;
    on the fitting sample itself the score equations make the two agree to
    optimizer precision.
    """
    x, g, resamples = sample_mnl_world(theta_star, n, rng)
    m = np.asarray(theta_star).shape[0]
    model = fit_mnl(x, g, reg=reg, n_categories=m)

    counts = np.bincount(g, minlength=m)
    omega_hat = np.zeros((m, x.shape[1]))
    np.add.at(omega_hat, g, x)
    omega_hat /= counts[:, None]

    x_fresh = rng.standard_normal(x.shape)
    diff = f_theta(model.theta, x_fresh) - omega_hat
    in_sample = f_theta(model.theta, x) - omega_hat
    return MnlMomentReport(
        n=n,
        out_of_sample_discrepancy=float(np.max(np.abs(diff))),
        in_sample_discrepancy=float(np.max(np.abs(in_sample))),
        discrepancy=diff,
        converged=model.converged,
        resamples=resamples,
    )


def default_theta_star(m: int = 4, p: int = 3) -> np.ndarray:
    """Fixed logit coefficients for the moment check; last row is the reference"""
    theta = np.zeros((m, p + 1))
    for g in range(m - 1):
        theta[g, 0] = 0.25 * (g + 1) - 0.5
        theta[g, 1 + g % p] = 0.8
        theta[g, 1 + (g + 1) % p] = -0.4
    return theta


# ---------------------------------------------------------------------------
# Suite
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckRow:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= self.tolerance)


def world_checks(world: LatentWorld) -> List[CheckRow]:
    """Every identity on the full support x category grid"""
    a = a_matrix(world)
    omega = omega_matrix(world)
    a_pinv = pseudo_inverse(a)
    direct = np.array(
        [[mu_direct(world, xi, g) for g in range(world.M)] for xi in range(world.support_size)]
    )

    def sweep(fn):
        vals = [[fn(world, xi, g) for g in range(world.M)] for xi in range(world.support_size)]
        return float(np.max(np.abs(np.array(vals) - direct)))

    joint_lg = world.psi * world.pg
    return [
        CheckRow("omega = A psi", float(np.max(np.abs(omega - a @ world.psi))), 1e-12),
        CheckRow(
            "joint P(L,G) consistency",
            float(np.max(np.abs(joint_lg - world.pi_l[:, None] * world.pg_given_l))),
            1e-12,
        ),
        CheckRow("A+ omega = psi", float(np.max(np.abs(a_pinv @ omega - world.psi))), 1e-10),
        CheckRow("V D u(g) = omega", float(np.max(np.abs(lowrank_omega(world) - omega))), 1e-10),
        CheckRow("mu_via_psi vs direct", sweep(mu_via_psi), 1e-10),
        CheckRow("mu_via_means vs direct", sweep(mu_via_means), 1e-8),
        CheckRow("mu_via_lowrank vs direct", sweep(mu_via_lowrank), 1e-8),
    ]


def run_oracle_suite(
    K: int,
    M: int,
    support_size: int,
    seed: int = 0,
    p: Optional[int] = None,
    worlds: int = 1,
    mnl_n: int = 100_000,
) -> List[CheckRow]:
    """Worst case of each identity over `worlds` random worlds, plus the logit moment check"""
    p = K if p is None else p
    root = np.random.SeedSequence(seed)
    world_seq, mnl_seq = root.spawn(2)
    worst = {}
    for i, child in enumerate(world_seq.spawn(worlds)):
        world = build_world(K, M, p, support_size, np.random.default_rng(child))
        for row in world_checks(world):
            prev = worst.get(row.name)
            if prev is None or row.max_error > prev.max_error:
                worst[row.name] = row
        log.info("oracle world %d/%d checked", i + 1, worlds)

    rows = list(worst.values())
    if mnl_n > 0:
        report = mnl_moment_check(default_theta_star(), mnl_n, np.random.default_rng(mnl_seq))
        rows.append(
            CheckRow(f"f(theta_g) = omega(g), n={mnl_n}", report.out_of_sample_discrepancy, 0.05)
        )
    return rows
