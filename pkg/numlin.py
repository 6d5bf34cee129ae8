"""
Numerical kernels: thin SVD with a fixed sign convention, Moore-Penrose
pseudo-inverse, elastic-net sparse PCA and multinomial logit maximum likelihood.

All functions are pure; the same input bits give the same output bits.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg
from scipy.special import logsumexp

from errors import ConfigurationError, DimensionError, FitError, NumericError, UnsupportedError

log = logging.getLogger(__name__)

SPCA_MAX_ITER = 200
SPCA_TOL = 1e-6
MNL_MAX_ITER = 500
MNL_GTOL = 1e-6
DEFAULT_MNL_REG = 1e-8


def _check_finite(m: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{what} contains non-finite values")


# ---------------------------------------------------------------------------
# SVD and pseudo-inverse
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SvdFactors:
    u: np.ndarray  # M x r
    d: np.ndarray  # r, nonincreasing
    v: np.ndarray  # p x r

    @property
    def rank_bound(self) -> int:
        return self.d.shape[0]

    def reconstruct(self, k: Optional[int] = None) -> np.ndarray:
        k = self.rank_bound if k is None else k
        return (self.u[:, :k] * self.d[:k]) @ self.v[:, :k].T


def svd(m) -> SvdFactors:
    """Thin SVD; each u column has its largest-magnitude entry positive"""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or min(m.shape) < 1:
        raise DimensionError(f"svd needs a non-empty matrix, got shape {m.shape}")
    _check_finite(m, "svd input")

    u, d, vt = np.linalg.svd(m, full_matrices=False)
    pivot = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivot, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return SvdFactors(u=u * signs, d=d, v=vt.T * signs)


def pseudo_inverse(m, tol: Optional[float] = None) -> np.ndarray:
    """Moore-Penrose inverse; singular values below tol * d_max are dropped"""
    m = np.asarray(m, dtype=np.float64)
    f = svd(m)
    if tol is None:
        tol = max(m.shape) * np.finfo(np.float64).eps
    if f.d.size == 0 or f.d[0] == 0:
        return np.zeros((m.shape[1], m.shape[0]))
    keep = f.d > tol * f.d[0]
    inv_d = np.zeros_like(f.d)
    inv_d[keep] = 1.0 / f.d[keep]
    return (f.v * inv_d) @ f.u.T


# ---------------------------------------------------------------------------
# Sparse PCA
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpcaFactors:
    a: np.ndarray  # p x k, orthonormal columns
    b: np.ndarray  # p x k sparse loadings
    lam: float
    lam1: np.ndarray  # per-component L1 weights
    objective_trace: np.ndarray
    converged: bool
    n_iter: int


def spca_objective(m, a, b, lam: float, lam1) -> float:
    """sum_i ||m_i - A B^T m_i||^2 + lam sum_j ||b_j||^2 + sum_j lam1_j ||b_j||_1"""
    m = np.asarray(m, dtype=np.float64)
    resid = m - m @ b @ a.T
    lam1 = np.broadcast_to(np.asarray(lam1, dtype=np.float64), (b.shape[1],))
    return float(
        np.sum(resid**2) + lam * np.sum(b**2) + np.sum(lam1 * np.sum(np.abs(b), axis=0))
    )


def _soft(z: float, t: float) -> float:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def _elastic_net_cd(
    h: np.ndarray, c: np.ndarray, l1: float, b0: np.ndarray, max_sweeps: int = 1000
) -> np.ndarray:
    """
    Coordinate descent for  min_b  b^T H b - 2 c^T b + l1 |b|_1  (H = G + lam I).

    Each coordinate step is an exact minimizer, so the objective never increases.
    """
    b = b0.copy()
    hb = h @ b
    diag = np.diag(h)
    for _ in range(max_sweeps):
        max_delta = 0.0
        for i in range(b.shape[0]):
            old = b[i]
            if diag[i] <= 0:
                new = 0.0
            else:
                partial = c[i] - (hb[i] - diag[i] * old)
                new = _soft(partial, l1 / 2.0) / diag[i]
            if new != old:
                hb += h[:, i] * (new - old)
                b[i] = new
                max_delta = max(max_delta, abs(new - old))
        if max_delta <= 1e-13 * (1.0 + np.max(np.abs(b))):
            break
    return b


def sparse_pca(
    m,
    k: int,
    lam: float = 0.0,
    lam1=0.0,
    max_iter: int = SPCA_MAX_ITER,
    tol: float = SPCA_TOL,
) -> SpcaFactors:
    """
    Elastic-net sparse PCA by alternating minimization.

    B-step: k elastic-net problems solved by coordinate descent on the Gram
    matrix. A-step: orthogonal Procrustes, A = U V^T from the SVD of m^T m B.
    B starts at the top-k right singular vectors of m.
    """
    m = np.asarray(m, dtype=np.float64)
    _check_finite(m, "sparse_pca input")
    if k < 1 or k > min(m.shape):
        raise DimensionError(f"k={k} outside [1, {min(m.shape)}]")
    lam1 = np.array(np.broadcast_to(np.asarray(lam1, dtype=np.float64), (k,)))
    if lam < 0 or np.any(lam1 < 0):
        raise ConfigurationError("sparse PCA penalties must be >= 0")

    gram = m.T @ m
    h = gram + lam * np.eye(gram.shape[0])
    v = svd(m).v[:, :k]
    a = v.copy()
    b = v.copy()

    trace = [spca_objective(m, a, b, lam, lam1)]
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        c = gram @ a
        for j in range(k):
            b[:, j] = _elastic_net_cd(h, c[:, j], lam1[j], b[:, j])

        target = gram @ b
        if np.any(target != 0):
            f = svd(target)
            a = f.u @ f.v.T

        trace.append(spca_objective(m, a, b, lam, lam1))
        prev, cur = trace[-2], trace[-1]
        if abs(prev - cur) <= tol * max(abs(prev), np.finfo(np.float64).tiny):
            converged = True
            break

    if not converged:
        log.warning("sparse PCA stopped after %d iterations without converging", n_iter)
    return SpcaFactors(
        a=a,
        b=b,
        lam=float(lam),
        lam1=lam1,
        objective_trace=np.asarray(trace),
        converged=converged,
        n_iter=n_iter,
    )


# ---------------------------------------------------------------------------
# Multinomial logit
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MnlModel:
    """
    theta is M x (p+1) in the original covariate scale; column 0 is the
    intercept and the last row (reference category) is exactly zero.
    """

    theta: np.ndarray
    reg: float
    converged: bool
    grad_norm: float
    n_iter: int
    x_mean: np.ndarray
    x_scale: np.ndarray

    @property
    def n_categories(self) -> int:
        return self.theta.shape[0]

    def standardized_theta(self) -> np.ndarray:
        """Free (M-1) x (p+1) coefficients in the z-scored parametrization"""
        free = self.theta[:-1]
        slopes = free[:, 1:] * self.x_scale
        intercept = free[:, 0] + free[:, 1:] @ self.x_mean
        return np.column_stack([intercept, slopes])


def standardize(x, mean: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Design matrix [1, (x - mean) / scale]"""
    x = np.asarray(x, dtype=np.float64)
    return np.column_stack([np.ones(x.shape[0]), (x - mean) / scale])


def mnl_objective(theta_free, z, g, reg: float) -> Tuple[float, np.ndarray]:
    """
    Negative penalized log-likelihood and its gradient.

    theta_free is (M-1) x (p+1); the reference category has zero logits.
    The ridge term (reg/2)||theta||^2 skips the intercept column.
    """
    theta_free = np.asarray(theta_free, dtype=np.float64)
    g = np.asarray(g, dtype=np.int64)
    problem = _MnlProblem(np.asarray(z, dtype=np.float64), g, theta_free.shape[0] + 1, reg)
    value, grad, _ = problem.value_grad(theta_free)
    return value, grad


def _mnl_state(theta_free, z, g, reg) -> Tuple[np.ndarray, float]:
    n = z.shape[0]
    logits = np.column_stack([z @ theta_free.T, np.zeros(n)])
    lse = logsumexp(logits, axis=1)
    log_probs = logits - lse[:, None]
    value = -np.sum(log_probs[np.arange(n), g]) + 0.5 * reg * np.sum(theta_free[:, 1:] ** 2)
    return np.exp(log_probs), float(value)


def mnl_probabilities(model: MnlModel, x) -> np.ndarray:
    """P(G = g | x) for every row of x, shape n x M"""
    x = np.asarray(x, dtype=np.float64)
    logits = np.column_stack([np.ones(x.shape[0]), x]) @ model.theta.T
    return np.exp(logits - logsumexp(logits, axis=1)[:, None])


class _MnlProblem:
    """Objective, gradient and Hessian-vector products for one dataset"""

    def __init__(self, z: np.ndarray, g: np.ndarray, n_categories: int, reg: float):
        self.z = z
        self.g = g
        self.reg = reg
        self.shape = (n_categories - 1, z.shape[1])
        self.onehot = np.zeros((z.shape[0], n_categories))
        self.onehot[np.arange(z.shape[0]), g] = 1.0

    def value_grad(self, theta: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        probs, value = _mnl_state(theta, self.z, self.g, self.reg)
        grad = (probs - self.onehot)[:, :-1].T @ self.z
        grad[:, 1:] += self.reg * theta[:, 1:]
        return value, grad, probs

    def hessp(self, probs: np.ndarray, vec: np.ndarray) -> np.ndarray:
        vmat = vec.reshape(self.shape)
        p_free = probs[:, :-1]
        a = self.z @ vmat.T
        r = p_free * (a - np.sum(p_free * a, axis=1, keepdims=True))
        out = r.T @ self.z
        out[:, 1:] += self.reg * vmat[:, 1:]
        return out.ravel()


def fit_mnl(
    x,
    g,
    reg: float = DEFAULT_MNL_REG,
    n_categories: Optional[int] = None,
    max_iter: int = MNL_MAX_ITER,
    gtol: float = MNL_GTOL,
) -> MnlModel:
    """
    Ridge-penalized multinomial logit MLE by truncated Newton iterations.

    Covariates are z-scored internally (constant columns are only centered)
    and the coefficients are mapped back to the original scale.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    g = np.asarray(g, dtype=np.int64).ravel()
    _check_finite(x, "mnl covariates")
    if reg < 0:
        raise ConfigurationError("mnl ridge weight must be >= 0")
    n_cat = int(n_categories if n_categories is not None else g.max() + 1)
    if n_cat < 2:
        raise UnsupportedError("encoding undefined for single category")
    counts = np.bincount(g, minlength=n_cat)
    if np.any(counts == 0):
        raise FitError(f"category index {int(np.flatnonzero(counts == 0)[0])} has no rows")

    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    z = standardize(x, mean, scale)

    problem = _MnlProblem(z, g, n_cat, reg)
    theta = np.zeros(problem.shape)
    value, grad, probs = problem.value_grad(theta)
    grad_norm = float(np.max(np.abs(grad)))
    n_iter = 0
    while grad_norm > gtol and n_iter < max_iter:
        n_iter += 1
        flat_grad = grad.ravel()
        op = LinearOperator(
            (flat_grad.size, flat_grad.size),
            matvec=lambda v, probs=probs: problem.hessp(probs, v),
            dtype=np.float64,
        )
        forcing = min(0.5, np.sqrt(np.linalg.norm(flat_grad)))
        step, _ = cg(op, -flat_grad, rtol=forcing, maxiter=max(50, 2 * flat_grad.size))
        step = step.reshape(problem.shape)
        slope = float(np.sum(grad * step))
        if slope >= 0:
            step, slope = -grad, -float(np.sum(grad * grad))

        # backtracking; near the optimum f differences drown in rounding, so a
        # step that shrinks the gradient is accepted as well
        t = 1.0
        while True:
            cand = theta + t * step
            c_value, c_grad, c_probs = problem.value_grad(cand)
            c_norm = float(np.max(np.abs(c_grad)))
            noise = 1e-12 * max(1.0, abs(value))
            if c_value <= value + 1e-4 * t * slope or (
                abs(c_value - value) <= noise and c_norm < grad_norm
            ):
                break
            t *= 0.5
            if t < 1e-10:
                break
        if t < 1e-10:
            log.warning("mnl line search stalled at gradient norm %.3e", grad_norm)
            break
        theta, value, grad, probs, grad_norm = cand, c_value, c_grad, c_probs, c_norm

    converged = grad_norm <= gtol
    if not converged:
        log.warning("mnl fit stopped after %d iterations, gradient norm %.3e", n_iter, grad_norm)

    slopes = theta[:, 1:] / scale
    intercept = theta[:, 0] - slopes @ mean
    full = np.zeros((n_cat, x.shape[1] + 1))
    full[:-1, 0] = intercept
    full[:-1, 1:] = slopes
    return MnlModel(
        theta=full,
        reg=float(reg),
        converged=converged,
        grad_norm=grad_norm,
        n_iter=n_iter,
        x_mean=mean,
        x_scale=scale,
    )
