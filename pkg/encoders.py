"""
Categorical encoders.

Every method learns a per-level lookup table (M x output_dim) from a training
Dataset; transform replaces each row's category by its table row. Levels that
had no training rows are "unseen" and follow the encoder's unseen_policy.

Proposed encodings (use the covariates X):
  means          group-wise covariate means omega(g)
  lowrank        truncated left singular vectors of Omega^T
  sparselowrank  Omega^T projected on sparse principal loadings
  mnl            multinomial logit coefficients of G on X
Baselines:
  onehot, deviation, difference, helmert, repeated   fixed contrast tables
  permutation, multiperm, fisher                     integer mappings
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from dataset import Dataset
from errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    FitError,
    TransformError,
    UnsupportedError,
)
from numlin import DEFAULT_MNL_REG, fit_mnl, sparse_pca, svd

log = logging.getLogger(__name__)

CONTRAST_SCHEMES = ("onehot", "deviation", "difference", "helmert", "repeated")
INTEGER_SCHEMES = ("permutation", "multiperm", "fisher")
PROPOSED = ("means", "lowrank", "sparselowrank", "mnl")
METHODS = CONTRAST_SCHEMES + INTEGER_SCHEMES + PROPOSED

UNSEEN_POLICIES = ("error", "global-mean-fallback")
MODEL_FORMAT_VERSION = 1
DEFAULT_MULTIPERM_COPIES = 4


@dataclass(frozen=True, eq=False)
class GroupMeans:
    omega: np.ndarray  # p x M
    counts: np.ndarray  # M


@dataclass(frozen=True, eq=False)
class FittedEncoder:
    method: str
    table: np.ndarray  # M x output_dim, row g encodes level g
    level_names: Tuple[str, ...]
    seen: np.ndarray  # levels with training rows
    fallback: np.ndarray  # row used for unseen levels
    column_labels: Tuple[str, ...]
    unseen_policy: str = "global-mean-fallback"
    params: Dict[str, object] = field(default_factory=dict)

    @property
    def output_dim(self) -> int:
        return self.table.shape[1]


@dataclass(frozen=True, eq=False)
class EncodingMatrix:
    s: np.ndarray
    column_labels: Tuple[str, ...]


def _check_policy(policy: str) -> str:
    if policy not in UNSEEN_POLICIES:
        raise ConfigurationError(f"unknown unseen-level policy {policy!r}")
    return policy


def _seen_levels(d: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    """Indices of levels with rows, and g re-coded onto those levels"""
    seen = np.flatnonzero(d.present)
    recode = np.full(d.M, -1, dtype=np.int64)
    recode[seen] = np.arange(seen.size)
    return seen, recode[d.g]


def _expand(d: Dataset, seen: np.ndarray, rows: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    table = np.tile(fallback, (d.M, 1))
    table[seen] = rows
    return table


def _build(
    method: str,
    d: Dataset,
    seen: np.ndarray,
    rows: np.ndarray,
    fallback: np.ndarray,
    labels: Sequence[str],
    policy: str,
    params: Optional[Dict[str, object]] = None,
) -> FittedEncoder:
    mask = np.zeros(d.M, dtype=bool)
    mask[seen] = True
    return FittedEncoder(
        method=method,
        table=_expand(d, seen, rows, fallback),
        level_names=d.level_names,
        seen=mask,
        fallback=np.asarray(fallback, dtype=np.float64),
        column_labels=tuple(labels),
        unseen_policy=_check_policy(policy),
        params=params or {},
    )


# ---------------------------------------------------------------------------
# Group means
# ---------------------------------------------------------------------------


def group_averages(x, g, n_levels: Optional[int] = None, level_names=None) -> GroupMeans:
    """Column g of omega is the mean of the rows of x with G = g"""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.int64)
    m = int(n_levels if n_levels is not None else g.max() + 1)
    counts = np.bincount(g, minlength=m)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        name = level_names[empty[0]] if level_names is not None else str(empty[0])
        raise FitError(f"level {name!r} has no rows; group mean undefined")
    sums = np.zeros((m, x.shape[1]))
    np.add.at(sums, g, x)
    return GroupMeans(omega=(sums / counts[:, None]).T, counts=counts)


def _seen_means(d: Dataset) -> Tuple[np.ndarray, GroupMeans]:
    seen, g = _seen_levels(d)
    names = [d.level_names[i] for i in seen]
    return seen, group_averages(d.x, g, seen.size, names)


def fit_means(d: Dataset, unseen_policy: str = "global-mean-fallback") -> FittedEncoder:
    if d.p < 1:
        raise DimensionError("means encoding needs at least one covariate")
    seen, gm = _seen_means(d)
    labels = [f"mean_{c}" for c in d.covariate_names]
    return _build(
        "means", d, seen, gm.omega.T, d.x.mean(axis=0), labels, unseen_policy,
        {"omega": gm.omega, "counts": gm.counts},
    )


# ---------------------------------------------------------------------------
# Low-rank encodings
# ---------------------------------------------------------------------------


def _check_rank(k: int, n_seen: int, p: int) -> None:
    if k < 1 or k > min(n_seen, p):
        raise DimensionError(f"k={k} outside [1, min(M={n_seen}, p={p})]")


def fit_lowrank(d: Dataset, k: int, unseen_policy: str = "global-mean-fallback") -> FittedEncoder:
    """Rows of U[:, :k] from the SVD Omega^T = U D V^T"""
    seen, gm = _seen_means(d)
    _check_rank(k, seen.size, d.p)
    f = svd(gm.omega.T)
    labels = [f"u{j + 1}" for j in range(k)]
    return _build(
        "lowrank", d, seen, f.u[:, :k], np.zeros(k), labels, unseen_policy,
        {"k": k, "u": f.u, "d": f.d, "v": f.v},
    )


def fit_sparse_lowrank(
    d: Dataset,
    k: int,
    lam: float = 0.0,
    lam1: float = 0.0,
    unseen_policy: str = "global-mean-fallback",
) -> FittedEncoder:
    """Z = Omega^T B[:, :k] with B the sparse PCA loadings of Omega^T"""
    seen, gm = _seen_means(d)
    _check_rank(k, seen.size, d.p)
    factors = sparse_pca(gm.omega.T, k, lam, lam1)
    z = gm.omega.T @ factors.b[:, :k]
    labels = [f"z{j + 1}" for j in range(k)]
    return _build(
        "sparselowrank", d, seen, z, np.zeros(k), labels, unseen_policy,
        {
            "k": k,
            "lam": factors.lam,
            "lam1": factors.lam1,
            "a": factors.a,
            "b": factors.b,
            "converged": factors.converged,
        },
    )


# ---------------------------------------------------------------------------
# Multinomial logit coefficients
# ---------------------------------------------------------------------------


def fit_mnl_encoder(
    d: Dataset, reg: float = DEFAULT_MNL_REG, unseen_policy: str = "global-mean-fallback"
) -> FittedEncoder:
    """theta_g (intercept + p slopes) of a logit of G on X; last seen level is the reference"""
    seen, g = _seen_levels(d)
    if seen.size < 2:
        raise UnsupportedError("encoding undefined for single category")
    model = fit_mnl(d.x, g, reg=reg, n_categories=seen.size)
    labels = ["theta0"] + [f"theta_{c}" for c in d.covariate_names]
    return _build(
        "mnl", d, seen, model.theta, np.zeros(d.p + 1), labels, unseen_policy,
        {
            "theta": model.theta,
            "reg": model.reg,
            "converged": model.converged,
            "grad_norm": model.grad_norm,
        },
    )


# ---------------------------------------------------------------------------
# Contrast tables
# ---------------------------------------------------------------------------


def contrast_encode(scheme: str, n_levels: int) -> np.ndarray:
    """M x (M-1) contrast table; row i is the code of level i"""
    if scheme not in CONTRAST_SCHEMES:
        raise ConfigurationError(f"unknown contrast scheme {scheme!r}")
    m = int(n_levels)
    if m < 2:
        raise DimensionError(f"contrast coding needs at least 2 levels, got {m}")

    i = np.arange(m)[:, None]
    j = np.arange(m - 1)[None, :]
    if scheme == "onehot":
        # first level is the all-zero reference
        return (i == j + 1).astype(np.float64)
    if scheme == "deviation":
        table = (i == j).astype(np.float64)
        table[m - 1, :] = -1.0
        return table
    if scheme == "difference":
        # column j: level j+1 against the mean of the levels before it
        return np.where(i <= j, -1.0 / (j + 2), np.where(i == j + 1, (j + 1) / (j + 2), 0.0))
    if scheme == "helmert":
        # column j: level j against the mean of the levels after it
        return np.where(i == j, (m - j - 1) / (m - j), np.where(i > j, -1.0 / (m - j), 0.0))
    # repeated: levels up to j against the levels after j
    return np.where(i <= j, (m - j - 1) / m, -(j + 1) / m)


def fit_contrast(
    scheme: str, d: Dataset, unseen_policy: str = "global-mean-fallback"
) -> FittedEncoder:
    table = contrast_encode(scheme, d.M)
    seen = np.flatnonzero(d.present)
    labels = [f"{d.category_name}_{name}" for name in d.level_names[1:]]
    return _build(
        scheme, d, seen, table[seen], np.zeros(d.M - 1), labels, unseen_policy,
        {"contrast": table},
    )


# ---------------------------------------------------------------------------
# Integer mappings
# ---------------------------------------------------------------------------


def integer_encode(
    scheme: str,
    d: Dataset,
    seed: int = 0,
    copies: Optional[int] = None,
    unseen_policy: str = "global-mean-fallback",
) -> FittedEncoder:
    """
    permutation / multiperm: seeded random bijections of the levels onto 1..M.
    fisher: levels ranked 1.. by increasing training mean of y, ties by level index.
    """
    if scheme not in INTEGER_SCHEMES:
        raise ConfigurationError(f"unknown integer scheme {scheme!r}")
    fallback_value = float(d.M + 1)

    if scheme == "fisher":
        if d.y is None:
            raise ConfigurationError("fisher encoding needs a response column")
        seen, g = _seen_levels(d)
        means = np.bincount(g, weights=d.y, minlength=seen.size) / np.bincount(g, minlength=seen.size)
        order = np.lexsort((np.arange(seen.size), means))
        ranks = np.empty(seen.size)
        ranks[order] = np.arange(1, seen.size + 1)
        return _build(
            "fisher", d, seen, ranks[:, None], np.array([fallback_value]), ["fisher"],
            unseen_policy, {"level_means": means},
        )

    if copies is None:
        copies = 1 if scheme == "permutation" else DEFAULT_MULTIPERM_COPIES
    if scheme == "permutation" and copies != 1:
        raise ConfigurationError("permutation encoding uses exactly one mapping")
    if copies < 1:
        raise ConfigurationError("copies must be >= 1")

    rng = np.random.default_rng(seed)
    table = np.column_stack([rng.permutation(d.M) + 1.0 for _ in range(copies)])
    labels = ["perm"] if scheme == "permutation" else [f"perm{c + 1}" for c in range(copies)]
    seen = np.flatnonzero(d.present)
    return _build(
        scheme, d, seen, table[seen], np.full(copies, fallback_value), labels,
        unseen_policy, {"seed": seed, "copies": copies},
    )


# ---------------------------------------------------------------------------
# Dispatch, transform and persistence
# ---------------------------------------------------------------------------


def fit_encoder(method: str, d: Dataset, **params) -> FittedEncoder:
    """Fit any encoder by method tag; extra keyword arguments go to the fitter"""
    policy = params.pop("unseen_policy", "global-mean-fallback")
    try:
        if method in CONTRAST_SCHEMES:
            enc = fit_contrast(method, d, policy)
        elif method in INTEGER_SCHEMES:
            enc = integer_encode(
                method, d, seed=params.pop("seed", 0), copies=params.pop("copies", None),
                unseen_policy=policy,
            )
        elif method == "means":
            enc = fit_means(d, policy)
        elif method == "lowrank":
            enc = fit_lowrank(d, int(params.pop("k")), policy)
        elif method == "sparselowrank":
            enc = fit_sparse_lowrank(
                d, int(params.pop("k")), params.pop("lam", 0.0), params.pop("lam1", 0.0), policy
            )
        elif method == "mnl":
            enc = fit_mnl_encoder(d, params.pop("reg", DEFAULT_MNL_REG), policy)
        else:
            raise ConfigurationError(f"unknown encoding method {method!r}")
    except KeyError as e:
        raise ConfigurationError(f"{method} encoding needs parameter {e}") from e
    if params:
        log.debug("ignoring parameters %s for %s", sorted(params), method)
    return enc


def transform(e: FittedEncoder, d: Dataset) -> EncodingMatrix:
    index = {name: i for i, name in enumerate(e.level_names)}
    level_map = np.array([index.get(name, -1) for name in d.level_names], dtype=np.int64)
    codes = level_map[d.g]
    known = codes >= 0
    known[known] = e.seen[codes[known]]

    if not known.all():
        first = d.level_names[d.g[np.flatnonzero(~known)[0]]]
        if e.unseen_policy == "error":
            raise TransformError(f"level {first!r} was not seen when fitting {e.method}")
        log.debug("%d rows with unseen levels get the %s fallback", int((~known).sum()), e.method)

    s = np.tile(e.fallback, (d.n, 1))
    s[known] = e.table[codes[known]]
    return EncodingMatrix(s=s, column_labels=e.column_labels)


def encode_dataset(e: FittedEncoder, d: Dataset) -> Tuple[np.ndarray, Tuple[str, ...]]:
    """Design matrix with the category column replaced by its encoding"""
    enc = transform(e, d)
    return np.hstack([d.x, enc.s]), tuple(d.covariate_names) + enc.column_labels


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    return value


def save_encoder(e: FittedEncoder, path) -> None:
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "method": e.method,
        "unseen_policy": e.unseen_policy,
        "level_names": list(e.level_names),
        "column_labels": list(e.column_labels),
        "seen": e.seen.tolist(),
        "fallback": e.fallback.tolist(),
        "table": e.table.tolist(),
        "params": {k: _jsonable(v) for k, v in e.params.items()},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)


def load_encoder(path) -> FittedEncoder:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read encoder model {path}: {e}") from e
    version = payload.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ConfigurationError(f"{path}: unsupported model format version {version!r}")
    if payload.get("method") not in METHODS:
        raise ConfigurationError(f"{path}: unknown method {payload.get('method')!r}")
    table = np.asarray(payload["table"], dtype=np.float64)
    fallback = np.asarray(payload["fallback"], dtype=np.float64)
    return FittedEncoder(
        method=payload["method"],
        table=table.reshape(len(payload["level_names"]), fallback.size),
        level_names=tuple(payload["level_names"]),
        seen=np.asarray(payload["seen"], dtype=bool),
        fallback=fallback,
        column_labels=tuple(payload["column_labels"]),
        unseen_policy=_check_policy(payload["unseen_policy"]),
        params={
            k: np.asarray(v) if isinstance(v, list) else v for k, v in payload["params"].items()
        },
    )


# ---------------------------------------------------------------------------
# Cross-validated hyperparameters
# ---------------------------------------------------------------------------


def select_k_by_cv(
    d: Dataset,
    scheme: str,
    folds: int = 4,
    learner_k: Optional[int] = None,
    seed: int = 0,
    grid: Optional[Sequence[int]] = None,
    lam: float = 0.0,
    lam1: float = 0.0,
) -> int:
    """Rank k with the smallest mean out-of-fold k-NN MSE; ties go to the smallest k"""
    from evalbench import select_by_cv

    if scheme not in ("lowrank", "sparselowrank"):
        raise ConfigurationError(f"k selection applies to lowrank/sparselowrank, not {scheme!r}")
    upper = min(int(d.present.sum()), d.p)
    grid = sorted(set(grid)) if grid is not None else list(range(1, upper + 1))
    if not grid:
        raise DimensionError("empty k grid")
    for k in grid:
        _check_rank(k, upper, d.p)

    extra = {"lam": lam, "lam1": lam1} if scheme == "sparselowrank" else {}
    candidates = [(scheme, dict(k=k, **extra)) for k in grid]
    best = select_by_cv(d, candidates, folds=folds, learner_k=learner_k, seed=seed)
    return grid[best]


def select_lambda1_by_cv(
    d: Dataset,
    k: int,
    grid: Sequence[float],
    lam: float = 0.0,
    folds: int = 4,
    learner_k: Optional[int] = None,
    seed: int = 0,
) -> float:
    """L1 weight for sparselowrank with the smallest CV MSE; ties go to the smallest weight"""
    from evalbench import select_by_cv

    grid = sorted(set(float(v) for v in grid))
    if not grid or grid[0] < 0:
        raise ConfigurationError("lambda1 grid must be non-empty and non-negative")
    candidates = [("sparselowrank", {"k": k, "lam": lam, "lam1": v}) for v in grid]
    return grid[select_by_cv(d, candidates, folds=folds, learner_k=learner_k, seed=seed)]
