"""
Evaluation harness: stratified folds, a brute-force k-NN learner, MSE and
percent improvement over one-hot, paired t-tests and the benchmark runner.

Every random choice is drawn from a seed derived from (master_seed, seed
index, fold), never from thread scheduling or method order, so a run is
reproducible bit for bit and adding methods leaves the others untouched.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist
from scipy.special import betaln

from dataset import Dataset, infer_schema, load_csv, load_schema, read_headers, split_rows
from dgp_sim import SETUPS, SimConfig, simulate
from encoders import METHODS, fit_encoder, select_k_by_cv, select_lambda1_by_cv, transform
from errors import (
    CatencError,
    ConfigurationError,
    DimensionError,
    DomainError,
    FitError,
    UndefinedImprovementError,
)

log = logging.getLogger(__name__)

BASELINE_METHOD = "onehot"
DEFAULT_LAMBDA1_GRID = (0.0, 0.01, 0.1, 1.0)
BETACF_MAX_ITER = 300
BETACF_EPS = 1e-15
KNN_CHUNK = 2048


def derive_seed(*keys: int) -> int:
    """Stable 32-bit seed from a tuple of non-negative integers"""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FoldPlan:
    folds: int
    assignment: np.ndarray  # fold index per row, -1 for train-only rows

    def test_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


def stratified_kfold(g, folds: int, rng: np.random.Generator) -> FoldPlan:
    """
    Shuffle the rows of each category and deal them round-robin to the folds.
    Dealing continues where the previous category stopped so fold sizes stay
    balanced. Categories with fewer rows than folds are kept for training only.
    """
    if folds < 2:
        raise ConfigurationError(f"folds={folds}; need at least 2")
    g = np.asarray(g, dtype=np.int64)
    assignment = np.full(g.shape[0], -1, dtype=np.int64)
    small = []
    start = 0
    for level in np.unique(g):
        rows = np.flatnonzero(g == level)
        if rows.size < folds:
            small.append(int(level))
            continue
        rows = rng.permutation(rows)
        assignment[rows] = (start + np.arange(rows.size)) % folds
        start = (start + rows.size) % folds
    if small:
        log.warning(
            "%d categories have fewer than %d rows and stay in every training fold", len(small), folds
        )
    return FoldPlan(folds=folds, assignment=assignment)


# ---------------------------------------------------------------------------
# Learner and metrics
# ---------------------------------------------------------------------------


def zscore_fit(x) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    return x.mean(axis=0), x.std(axis=0)


def zscore_apply(x, mean: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Columns with zero training spread map to 0"""
    x = np.asarray(x, dtype=np.float64)
    safe = np.where(scale > 0, scale, 1.0)
    return np.where(scale > 0, (x - mean) / safe, 0.0)


def default_learner_k(n_train: int) -> int:
    return max(1, int(round(math.sqrt(n_train))))


def _clip_k(k: int, n_train: int) -> int:
    if k < 1:
        raise ConfigurationError(f"k={k}; need k >= 1")
    if k > n_train:
        log.warning("k=%d exceeds %d training rows; using k=%d", k, n_train, n_train)
        return n_train
    return k


def nearest_mean(dist: np.ndarray, train_y: np.ndarray, k: int) -> np.ndarray:
    """
    Mean of train_y over the k smallest distances in each row. Among rows tied
    at the k-th distance the lower training indices are taken, which is the
    set a stable sort would select.
    """
    kth = np.partition(dist, k - 1, axis=1)[:, k - 1:k]
    take = dist <= kth
    crowded = np.flatnonzero(take.sum(axis=1) > k)
    if crowded.size:
        rows, edge_at = dist[crowded], kth[crowded]
        inside = rows < edge_at
        edge = rows == edge_at
        room = k - inside.sum(axis=1, keepdims=True)
        take[crowded] = inside | (edge & (np.cumsum(edge, axis=1) <= room))
    return take.astype(np.float64) @ train_y / k


def knn_regress(train_x, train_y, test_x, k: int) -> np.ndarray:
    """Mean response of the k nearest training rows; distance ties go to the lower row index"""
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.float64)
    if train_x.ndim != 2 or test_x.ndim != 2 or train_x.shape[1] != test_x.shape[1]:
        raise DimensionError("train and test features must be matrices with equal column counts")
    if train_y.shape[0] != train_x.shape[0]:
        raise DimensionError("train_y length differs from the number of training rows")
    k = _clip_k(k, train_x.shape[0])

    mean, scale = zscore_fit(train_x)
    ztrain = zscore_apply(train_x, mean, scale)
    ztest = zscore_apply(test_x, mean, scale)

    pred = np.empty(test_x.shape[0])
    for lo in range(0, test_x.shape[0], KNN_CHUNK):
        dist = cdist(ztest[lo:lo + KNN_CHUNK], ztrain, "sqeuclidean")
        pred[lo:lo + KNN_CHUNK] = nearest_mean(dist, train_y, k)
    return pred


def mse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise DimensionError(f"{pred.size} predictions for {truth.size} targets")
    if pred.size == 0:
        raise DimensionError("mse of empty vectors")
    return float(np.mean((pred - truth) ** 2))


def percent_improvement(mse_method: float, mse_onehot: float) -> float:
    if not mse_onehot > 0:
        raise UndefinedImprovementError(f"one-hot MSE is {mse_onehot}; improvement undefined")
    return 100.0 * (mse_onehot - mse_method) / mse_onehot


# ---------------------------------------------------------------------------
# Student t distribution
# ---------------------------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)"""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < BETACF_EPS:
            return h
    log.warning("incomplete beta continued fraction hit %d iterations (a=%g b=%g x=%g)",
                BETACF_MAX_ITER, a, b, x)
    return h


def incomplete_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)"""
    if a <= 0 or b <= 0:
        raise DomainError(f"incomplete beta needs a, b > 0 (a={a}, b={b})")
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"incomplete beta argument {x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return float(x)
    front = math.exp(a * math.log(x) + b * math.log1p(-x) - betaln(a, b))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _t_tail(t: float, df: float) -> float:
    """P(|T| >= |t|)"""
    if math.isinf(t):
        return 0.0
    return incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def student_t_cdf(t: float, df: float) -> float:
    if df <= 0:
        raise DomainError(f"degrees of freedom must be > 0, got {df}")
    half = 0.5 * _t_tail(t, df)
    return 1.0 - half if t > 0 else half


def paired_t_test(a, b) -> Tuple[float, float]:
    """Two-sided paired t-test on d = a - b; returns (t, p)"""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"paired samples differ in length ({a.size} vs {b.size})")
    m = a.size
    if m < 2:
        raise DimensionError("paired t-test needs at least 2 pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(m))
    p = min(1.0, max(0.0, _t_tail(t, m - 1.0)))
    return t, p


# ---------------------------------------------------------------------------
# Cross-validated selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Fold:
    train: Dataset
    test: Dataset
    ztrain: np.ndarray  # covariates z-scored with the train statistics
    ztest: np.ndarray


def _make_fold(train: Dataset, test: Dataset) -> _Fold:
    mean, scale = zscore_fit(train.x)
    return _Fold(train, test, zscore_apply(train.x, mean, scale), zscore_apply(test.x, mean, scale))


def _fold_mse(
    fold: _Fold, method: str, params: Mapping, learner_ks: Sequence[Optional[int]]
) -> List[float]:
    """
    Out-of-fold k-NN MSE for each neighbor count, with the covariates and the
    encoding fitted on the train rows as features.

    z-scoring is per column, so squared distances split into a covariate part
    and an encoding part. Encoding rows repeat per category; only the distinct
    rows are compared.
    """
    tr, te = fold.train, fold.test
    enc = fit_encoder(method, tr, **dict(params))
    train_s, test_s = transform(enc, tr).s, transform(enc, te).s
    mean, scale = zscore_fit(train_s)
    test_u, test_inv = np.unique(zscore_apply(test_s, mean, scale), axis=0, return_inverse=True)
    train_u, train_inv = np.unique(zscore_apply(train_s, mean, scale), axis=0, return_inverse=True)
    code_dist = cdist(test_u, train_u, "sqeuclidean")
    test_inv, train_inv = test_inv.ravel(), train_inv.ravel()

    ks = [_clip_k(k if k is not None else default_learner_k(tr.n), tr.n) for k in learner_ks]
    pred = np.empty((len(ks), te.n))
    for lo in range(0, te.n, KNN_CHUNK):
        hi = min(lo + KNN_CHUNK, te.n)
        dist = code_dist[test_inv[lo:hi]][:, train_inv]
        if tr.p:
            dist += cdist(fold.ztest[lo:hi], fold.ztrain, "sqeuclidean")
        for j, k in enumerate(ks):
            pred[j, lo:hi] = nearest_mean(dist, tr.y, k)
    return [mse(row, te.y) for row in pred]


def _score_fold(
    train: Dataset, test: Dataset, method: str, params: Mapping, learner_k: Optional[int]
) -> float:
    return _fold_mse(_make_fold(train, test), method, params, [learner_k])[0]


def _encoder_key(method: str, params: Mapping) -> str:
    return json.dumps([method, dict(params)], sort_keys=True, default=str)


def cv_scores(
    d: Dataset,
    candidates: Sequence[Tuple[str, Mapping, Optional[int]]],
    folds: int = 4,
    seed: int = 0,
) -> np.ndarray:
    """
    Mean out-of-fold MSE of each (method, params, learner_k); inf where a fit failed.
    Folds are split and z-scored once; candidates that differ only in learner_k
    share one encoder fit per fold.
    """
    if d.y is None:
        raise ConfigurationError("cross-validation needs a response column")
    plan = stratified_kfold(d.g, folds, np.random.default_rng(seed))
    splits = []
    for f in range(folds):
        test_idx = plan.test_index(f)
        if test_idx.size:
            splits.append(_make_fold(split_rows(d, plan.train_index(f)), split_rows(d, test_idx)))
    if not splits:
        raise FitError("no category has enough rows for a test fold")

    groups: Dict[str, List[int]] = {}
    for i, (method, params, _) in enumerate(candidates):
        groups.setdefault(_encoder_key(method, params), []).append(i)

    scores = np.full(len(candidates), np.inf)
    for members in groups.values():
        method, params, _ = candidates[members[0]]
        learner_ks = [candidates[i][2] for i in members]
        try:
            fold_mse = np.array([_fold_mse(fold, method, params, learner_ks) for fold in splits])
        except CatencError as e:
            log.warning("candidate %s %s failed in cross-validation: %s", method, dict(params), e)
            continue
        scores[members] = fold_mse.mean(axis=0)
    return scores


def _argmin_first(scores: np.ndarray) -> int:
    if not np.any(np.isfinite(scores)):
        raise FitError("every cross-validation candidate failed")
    return int(np.argmin(scores))


def select_by_cv(
    d: Dataset,
    candidates: Sequence[Tuple[str, Mapping]],
    folds: int = 4,
    learner_k: Optional[int] = None,
    seed: int = 0,
) -> int:
    """Index of the (method, params) candidate with the smallest CV MSE; ties go to the first"""
    scores = cv_scores(d, [(m, p, learner_k) for m, p in candidates], folds, seed)
    return _argmin_first(scores)


def learner_k_grid(n_train: int) -> List[int]:
    root = math.sqrt(n_train)
    grid = {1, 3, 5, int(round(root)), int(round(2 * root))}
    return sorted(k for k in grid if 1 <= k <= n_train)


def select_learner_k(
    d: Dataset, method: str, params: Mapping, folds: int = 3, seed: int = 0
) -> int:
    """Neighbor count from the fixed grid with the smallest CV MSE for one encoder"""
    n_inner = int(d.n * (folds - 1) / folds)
    grid = learner_k_grid(max(1, n_inner))
    scores = cv_scores(d, [(method, params, k) for k in grid], folds, seed)
    return grid[_argmin_first(scores)]


# ---------------------------------------------------------------------------
# Benchmark configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodSpec:
    """A named encoder entry; params values of "cv" are chosen by inner cross-validation"""

    name: str
    method: str
    params: Mapping[str, object] = field(default_factory=dict)

    @classmethod
    def parse(cls, item: Union[str, Mapping]) -> "MethodSpec":
        if isinstance(item, str):
            return cls(name=item, method=item)
        if isinstance(item, Mapping):
            unknown = set(item) - {"name", "method", "params"}
            if unknown:
                raise ConfigurationError(f"unknown method entry keys: {sorted(unknown)}")
            method = item.get("method") or item.get("name")
            return cls(
                name=str(item.get("name", method)), method=str(method), params=dict(item.get("params", {}))
            )
        raise ConfigurationError(f"cannot read method entry {item!r}")


DEFAULT_METHODS = tuple(MethodSpec.parse(m) for m in ("onehot", "means", "lowrank", "mnl"))


@dataclass(frozen=True)
class BenchConfig:
    methods: Tuple[MethodSpec, ...] = DEFAULT_METHODS
    folds: int = 4
    seeds: int = 20
    master_seed: int = 0
    learner_k: Optional[Union[int, str]] = None
    inner_folds: int = 3
    threads: int = 1
    mnl_reg: float = 1.0
    input: Optional[str] = None
    schema: Optional[str] = None
    setup: str = "latent_linear"
    n: int = 5000
    num_latent: int = 10
    num_groups: int = 100
    p: int = 10
    p_assign: float = 0.9
    sweep_setups: Tuple[str, ...] = SETUPS
    sweep_latent: Tuple[int, ...] = (2, 10)

    @classmethod
    def from_mapping(cls, mapping: Mapping, base: Optional["BenchConfig"] = None) -> "BenchConfig":
        """Overlay a JSON-style mapping on base (or the defaults); unknown keys are rejected"""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigurationError(f"unknown bench config key(s): {', '.join(unknown)}")
        values = dict(mapping)
        if "methods" in values:
            values["methods"] = tuple(MethodSpec.parse(m) for m in values["methods"])
        for key in ("sweep_setups", "sweep_latent"):
            if key in values:
                values[key] = tuple(values[key])
        try:
            return replace(base or cls(), **values).validate()
        except TypeError as e:
            raise ConfigurationError(f"bad bench config: {e}") from e

    def validate(self) -> "BenchConfig":
        if self.folds < 2 or self.inner_folds < 2:
            raise ConfigurationError("folds and inner_folds must be >= 2")
        if self.seeds < 1 or self.threads < 1:
            raise ConfigurationError("seeds and threads must be >= 1")
        if self.master_seed < 0:
            raise ConfigurationError("master_seed must be >= 0")
        if self.learner_k is not None and self.learner_k != "cv":
            if not isinstance(self.learner_k, int) or self.learner_k < 1:
                raise ConfigurationError(f"learner_k must be a positive integer or 'cv', got {self.learner_k!r}")
        if self.mnl_reg < 0:
            raise ConfigurationError("mnl_reg must be >= 0")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigurationError("method names must be unique")
        for spec in self.methods:
            if spec.method not in METHODS:
                raise ConfigurationError(f"unknown method {spec.method!r} in entry {spec.name!r}")
        if not any(m.method == BASELINE_METHOD for m in self.methods):
            raise ConfigurationError("the method list needs a onehot baseline")
        if self.input is None:
            self.sim_config(0)
        return self

    def sim_config(self, seed: int) -> SimConfig:
        return SimConfig(
            n=self.n,
            num_latent=self.num_latent,
            num_groups=self.num_groups,
            p=self.p,
            p_assign=self.p_assign,
            setup=self.setup,
            seed=seed,
        ).validate()

    @property
    def baseline(self) -> str:
        return next(m.name for m in self.methods if m.method == BASELINE_METHOD)


def load_bench_config(path, base: Optional[BenchConfig] = None) -> BenchConfig:
    try:
        with open(path, encoding="utf-8") as f:
            mapping = json.load(f)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read bench config {path}: {e}") from e
    if not isinstance(mapping, dict):
        raise ConfigurationError(f"{path}: bench config must be a JSON object")
    return BenchConfig.from_mapping(mapping, base)


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MethodResult:
    name: str
    method: str
    mean_mse: float
    improvement: float
    t_stat: float
    p_value: float
    fold_mse: np.ndarray  # seeds x folds, nan where the cell failed
    failures: Tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class BenchReport:
    config: BenchConfig
    baseline: str
    results: Tuple[MethodResult, ...]
    label: str = ""

    def result(self, name: str) -> MethodResult:
        return next(r for r in self.results if r.name == name)


def _resolve_params(
    spec: MethodSpec, config: BenchConfig, train: Dataset, cell_seed: int
) -> Dict[str, object]:
    params = dict(spec.params)
    if spec.method in ("lowrank", "sparselowrank"):
        params.setdefault("k", "cv")
    if spec.method == "mnl":
        params.setdefault("reg", config.mnl_reg)
    if spec.method in ("permutation", "multiperm"):
        params.setdefault("seed", cell_seed)
    inner_k = config.learner_k if isinstance(config.learner_k, int) else None

    if params.get("lam1") == "cv":
        k = params.get("k")
        if k == "cv":
            k = min(int(train.present.sum()), train.p)
        grid = params.pop("lam1_grid", DEFAULT_LAMBDA1_GRID)
        params["lam1"] = select_lambda1_by_cv(
            train, int(k), grid, lam=float(params.get("lam", 0.0)),
            folds=config.inner_folds, learner_k=inner_k, seed=cell_seed,
        )
    params.pop("lam1_grid", None)
    if params.get("k") == "cv":
        extra = {"lam": params.get("lam", 0.0), "lam1": params.get("lam1", 0.0)}
        params["k"] = select_k_by_cv(
            train, spec.method, folds=config.inner_folds, learner_k=inner_k, seed=cell_seed,
            **(extra if spec.method == "sparselowrank" else {}),
        )
    return params


def _run_cell(spec: MethodSpec, config: BenchConfig, train: Dataset, test: Dataset, cell_seed: int) -> float:
    params = _resolve_params(spec, config, train, cell_seed)
    learner_k = config.learner_k
    if learner_k == "cv":
        learner_k = select_learner_k(train, spec.method, params, config.inner_folds, cell_seed)
    return _score_fold(train, test, spec.method, params, learner_k)


def _load_source(config: BenchConfig) -> Optional[Dataset]:
    if config.input is None:
        return None
    if config.schema:
        schema = load_schema(config.schema)
    else:
        schema = infer_schema(read_headers(config.input))
    d = load_csv(config.input, schema)
    if d.y is None:
        raise ConfigurationError(f"{config.input}: benchmarking needs a response column")
    return d


def _run_seed(config: BenchConfig, s: int, source: Optional[Dataset]) -> Dict[str, list]:
    """MSE (or failure message) per method and fold for one seed"""
    d = source if source is not None else simulate(
        config.sim_config(derive_seed(config.master_seed, s))
    ).dataset
    plan = stratified_kfold(d.g, config.folds, np.random.default_rng(derive_seed(config.master_seed, s, 0)))
    out = {spec.name: [] for spec in config.methods}
    for f in range(config.folds):
        test_idx = plan.test_index(f)
        if test_idx.size == 0:
            for spec in config.methods:
                out[spec.name].append((math.nan, f"seed {s} fold {f}: empty test fold"))
            continue
        train, test = split_rows(d, plan.train_index(f)), split_rows(d, test_idx)
        cell_seed = derive_seed(config.master_seed, s, f + 1)
        for spec in config.methods:
            try:
                out[spec.name].append((_run_cell(spec, config, train, test, cell_seed), None))
            except CatencError as e:
                log.warning("seed %d fold %d %s failed: %s", s, f, spec.name, e)
                out[spec.name].append((math.nan, f"seed {s} fold {f}: {e}"))
    return out


def _summarize(config: BenchConfig, per_seed: List[Dict[str, list]], label: str) -> BenchReport:
    grids = {
        spec.name: np.array([[v for v, _ in cells[spec.name]] for cells in per_seed])
        for spec in config.methods
    }
    base_grid = grids[config.baseline]
    base_mse = float(np.nanmean(base_grid)) if np.any(np.isfinite(base_grid)) else math.nan

    results = []
    for spec in config.methods:
        grid = grids[spec.name]
        failures = tuple(msg for cells in per_seed for _, msg in cells[spec.name] if msg)
        ok = np.isfinite(grid)
        mean_mse = float(np.nanmean(grid)) if ok.any() else math.nan
        try:
            improvement = percent_improvement(mean_mse, base_mse) if ok.any() else math.nan
        except UndefinedImprovementError as e:
            log.warning("%s: %s", spec.name, e)
            improvement = math.nan
        if spec.name == config.baseline:
            improvement = 0.0 if ok.any() else math.nan

        pairs = ok & np.isfinite(base_grid)
        if pairs.sum() >= 2:
            t_stat, p_value = paired_t_test(grid[pairs], base_grid[pairs])
        else:
            t_stat, p_value = math.nan, math.nan
        results.append(
            MethodResult(
                name=spec.name,
                method=spec.method,
                mean_mse=mean_mse,
                improvement=improvement,
                t_stat=t_stat,
                p_value=p_value,
                fold_mse=grid,
                failures=failures,
            )
        )
    return BenchReport(config=config, baseline=config.baseline, results=tuple(results), label=label)


def run_benchmark(config: BenchConfig, label: str = "") -> BenchReport:
    """Evaluate every method over seeds x folds; failures are recorded per cell"""
    config.validate()
    source = _load_source(config)
    if any(spec.method == "mnl" and "reg" not in spec.params for spec in config.methods):
        log.info("mnl ridge weight for this run: %g", config.mnl_reg)
    per_seed: List[Optional[Dict[str, list]]] = [None] * config.seeds

    if config.threads == 1:
        for s in range(config.seeds):
            per_seed[s] = _run_seed(config, s, source)
            log.info("%sseed %d/%d done", f"{label} " if label else "", s + 1, config.seeds)
    else:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            futures = {pool.submit(_run_seed, config, s, source): s for s in range(config.seeds)}
            for done, (future, s) in enumerate(futures.items(), start=1):
                per_seed[s] = future.result()
                log.info("%sseed %d/%d done", f"{label} " if label else "", done, config.seeds)
    return _summarize(config, per_seed, label)


def run_sweep(config: BenchConfig) -> List[BenchReport]:
    """run_benchmark over every (setup, latent count) pair of the sweep grid"""
    if config.input is not None:
        raise ConfigurationError("a sweep needs simulated data, not an input file")
    reports = []
    for setup in config.sweep_setups:
        for num_latent in config.sweep_latent:
            cell = replace(config, setup=setup, num_latent=int(num_latent)).validate()
            reports.append(run_benchmark(cell, label=f"{setup}/L={num_latent}"))
    return reports


# ---------------------------------------------------------------------------
# Report writers
# ---------------------------------------------------------------------------


def _summary_rows(reports: Sequence[BenchReport]) -> List[dict]:
    rows = []
    for report in reports:
        for r in report.results:
            rows.append(
                {
                    "cell": report.label,
                    "name": r.name,
                    "method": r.method,
                    "mse": r.mean_mse,
                    "improvement": r.improvement,
                    "t": r.t_stat,
                    "p": r.p_value,
                    "failed_cells": len(r.failures),
                }
            )
    return rows


def report_to_csv(reports: Sequence[BenchReport], path, raw_path=None) -> None:
    """One row per method (and sweep cell); raw_path gets the per-seed, per-fold MSEs"""
    pd.DataFrame(_summary_rows(reports)).to_csv(path, index=False, lineterminator="\n")
    if raw_path is None:
        return
    raw = []
    for report in reports:
        for r in report.results:
            for s, row in enumerate(r.fold_mse):
                for f, value in enumerate(row):
                    raw.append({"cell": report.label, "name": r.name, "seed": s, "fold": f, "mse": value})
    pd.DataFrame(raw).to_csv(raw_path, index=False, lineterminator="\n")


def _finite_or_none(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def report_to_json(reports: Sequence[BenchReport], path) -> None:
    payload = []
    for report in reports:
        payload.append(
            {
                "cell": report.label,
                "baseline": report.baseline,
                "config": asdict(report.config),
                "methods": [
                    {
                        "name": r.name,
                        "method": r.method,
                        "mse": _finite_or_none(r.mean_mse),
                        "improvement": _finite_or_none(r.improvement),
                        "t": _finite_or_none(r.t_stat),
                        "p": _finite_or_none(r.p_value),
                        "fold_mse": [[_finite_or_none(float(v)) for v in row] for row in r.fold_mse],
                        "failures": list(r.failures),
                    }
                    for r in report.results
                ],
            }
        )
    if hasattr(path, "write"):
        json.dump(payload, path, indent=2)
        path.write("\n")
        return
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
