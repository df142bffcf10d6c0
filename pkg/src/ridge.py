"""
Cross-validated ridge regression from layer activations to brain targets.

One SVD of the (preprocessed) training activations serves every lambda:
W(lam) = V diag(s / (s^2 + lam)) U^T Y. The thin SVD has r = min(n, d) so
the same expression is the primal solution when n >= d and the dual
(kernel) solution when d > n.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from src.errors import ConfigError, DegenerateInputError, StimulusAlignmentError
from src.numeric import CENTER, ZSCORE, as_matrix, center_standardize, columnwise_pearson, thin_svd

logger = logging.getLogger(__name__)

NONE = "none"
GCV = "gcv"
KFOLD = "kfold"
DEFAULT_SPLITS = 5
MIN_TEST_STIMULI = 3


@dataclass(frozen=True)
class LambdaGrid:
    values: tuple[float, ...] = tuple(np.logspace(0, 8, 10).tolist())

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ConfigError("lambda_grid", "grid is empty")
        if any(v < 0 or not np.isfinite(v) for v in vals):
            raise ConfigError("lambda_grid", f"values must be finite and >= 0: {vals}")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("lambda_grid", f"values must be strictly ascending: {vals}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def parse(cls, text: str) -> "LambdaGrid":
        """'logspace:START:STOP:NUM' (base-10 exponents) or comma-separated values."""
        text = text.strip()
        try:
            if text.startswith("logspace:"):
                start, stop, num = text.split(":")[1:]
                return cls(tuple(np.logspace(float(start), float(stop), int(num)).tolist()))
            return cls(tuple(float(v) for v in text.split(",") if v.strip()))
        except ValueError as e:
            raise ConfigError("lambda_grid", f"cannot parse {text!r}: {e}") from e

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True, eq=False)
class FoldPlan:
    """Seeded shuffle, then contiguous blocks: fold sizes differ by at most one."""

    n_splits: int
    assignment: np.ndarray
    seed: int

    @classmethod
    def make(cls, n_stimuli: int, n_splits: int = DEFAULT_SPLITS, seed: int = 0) -> "FoldPlan":
        if n_splits < 2:
            raise ConfigError("folds", f"need at least 2 splits, got {n_splits}")
        if n_stimuli < n_splits:
            raise DegenerateInputError(f"{n_stimuli} stimuli cannot fill {n_splits} folds")
        order = np.random.default_rng(seed).permutation(n_stimuli)
        assignment = np.empty(n_stimuli, dtype=np.int64)
        for fold, block in enumerate(np.array_split(order, n_splits)):
            assignment[block] = fold
        return cls(n_splits, assignment, seed)

    @property
    def n_stimuli(self) -> int:
        return self.assignment.size

    def splits(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [
            (np.flatnonzero(self.assignment != f), np.flatnonzero(self.assignment == f))
            for f in range(self.n_splits)
        ]

    def permuted(self, perm) -> "FoldPlan":
        """Plan for rows reordered as `rows[perm]`: each stimulus keeps its fold."""
        return FoldPlan(self.n_splits, self.assignment[np.asarray(perm)], self.seed)


@dataclass(frozen=True, eq=False)
class RidgeFit:
    weights: np.ndarray
    lambda_selected: float | np.ndarray
    x_means: np.ndarray
    x_scales: np.ndarray
    y_means: np.ndarray
    y_scales: np.ndarray
    min_norm: bool = False

    def predict(self, X) -> np.ndarray:
        xs = (as_matrix(X) - self.x_means) / self.x_scales
        return (xs @ self.weights) * self.y_scales + self.y_means


@dataclass(frozen=True, eq=False)
class LambdaSelection:
    lambda_: float
    scores: np.ndarray  # mean validation score per grid value
    target_scores: np.ndarray  # n_lambda x m
    per_target: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class EncodingResult:
    per_target_R: np.ndarray
    per_fold_R: np.ndarray
    lambda_per_fold: list
    mask: np.ndarray
    seed: int
    fits: tuple[RidgeFit, ...] | None = field(default=None, repr=False)

    @property
    def n_splits(self) -> int:
        return self.per_fold_R.shape[0]

    @property
    def n_targets(self) -> int:
        return self.per_target_R.size

    def mean_score(self) -> float:
        valid = self.per_target_R[~self.mask]
        return float(valid.mean()) if valid.size else float("nan")


def _preprocess(x: np.ndarray, mode: str):
    if mode == NONE:
        return x, np.zeros(x.shape[1]), np.ones(x.shape[1]), np.zeros(x.shape[1], dtype=bool)
    if mode not in (CENTER, ZSCORE):
        raise ConfigError("preprocess", f"unknown mode {mode!r}")
    return center_standardize(x, mode)


def _argmax_last(scores: np.ndarray, axis: int = 0) -> np.ndarray:
    """argmax with ties resolved toward the highest index (largest lambda)."""
    flipped = np.flip(scores, axis=axis)
    return scores.shape[axis] - 1 - np.argmax(flipped, axis=axis)


class RidgePath:
    """Ridge solutions for many lambdas from one SVD of the training activations."""

    def __init__(self, X, Y, preprocess: str = CENTER):
        X = as_matrix(X)
        Y = as_matrix(Y)
        if X.shape[0] != Y.shape[0]:
            raise DegenerateInputError(f"X has {X.shape[0]} rows, Y has {Y.shape[0]}")
        self.preprocess = preprocess
        self.Xs, self.x_means, self.x_scales, _ = _preprocess(X, preprocess)
        self.Ys, self.y_means, self.y_scales, self.y_constant = _preprocess(Y, preprocess)
        self.svd = thin_svd(self.Xs)
        self.UtY = self.svd.U.T @ self.Ys
        S = self.svd.S
        self.tol = max(X.shape) * np.finfo(np.float64).eps * (S[0] if S.size else 0.0)
        self.rank = int(np.sum(S > self.tol))

    @property
    def rank_deficient(self) -> bool:
        return self.rank < self.Xs.shape[1]

    def _filter(self, lam: float) -> np.ndarray:
        S = self.svd.S
        if lam == 0:
            out = np.zeros_like(S)
            keep = S > self.tol
            out[keep] = 1.0 / S[keep]
            return out
        return S / (S**2 + lam)

    def shrinkage(self, lam: float) -> np.ndarray:
        """Diagonal of the hat operator in the singular basis, s^2 / (s^2 + lam)."""
        return self._filter(lam) * self.svd.S

    def weights(self, lam: float, columns=None) -> np.ndarray:
        UtY = self.UtY if columns is None else self.UtY[:, columns]
        return self.svd.Vt.T @ (self._filter(lam)[:, None] * UtY)

    def fit(self, lam, columns=None) -> RidgeFit:
        """Fit one lambda (scalar) or one lambda per target (array)."""
        lam_arr = np.atleast_1d(np.asarray(lam, dtype=np.float64))
        if np.any(lam_arr < 0):
            raise ConfigError("lambda", f"lambda must be >= 0, got {lam}")
        min_norm = bool(np.any(lam_arr == 0)) and self.rank_deficient
        if min_norm:
            logger.warning(f"lambda=0 on rank-deficient X (rank {self.rank} < {self.Xs.shape[1]}): minimum-norm solution")
        if lam_arr.size == 1:
            W = self.weights(float(lam_arr[0]))
            selected = float(lam_arr[0])
        else:
            W = np.empty((self.Xs.shape[1], self.Ys.shape[1]))
            for value in np.unique(lam_arr):
                cols = np.flatnonzero(lam_arr == value)
                W[:, cols] = self.weights(float(value), cols)
            selected = lam_arr
        return RidgeFit(W, selected, self.x_means, self.x_scales, self.y_means, self.y_scales, min_norm)


def fit_ridge(X_train, Y_train, lam: float, preprocess: str = CENTER) -> RidgeFit:
    """Minimize ||Y - XW||^2 + lam ||W||^2 on (by default centered) training data."""
    return RidgePath(X_train, Y_train, preprocess).fit(lam)


def _loo_scores(X: np.ndarray, Y: np.ndarray, grid: LambdaGrid, preprocess: str = CENTER) -> np.ndarray:
    """Negative leave-one-out MSE per (lambda, target), closed form.

    Refitting with centering on n-1 rows equals the unpenalized-intercept
    ridge, whose LOO residual is r_i / (1 - h_ii) with h_ii = 1/n + [Hc]_ii.
    Without preprocessing there is no intercept and h_ii = [H]_ii. zscore
    scales with the full-sample SDs, so residuals are in SD units.
    """
    path = RidgePath(X, Y, preprocess)
    n = X.shape[0]
    U = path.svd.U
    U2 = U**2
    scores = np.empty((len(grid), Y.shape[1]))
    for i, lam in enumerate(grid.values):
        shrink = path.shrinkage(lam)
        fitted = U @ (shrink[:, None] * path.UtY)
        leverage = U2 @ shrink + (0.0 if preprocess == NONE else 1.0 / n)
        with np.errstate(divide="ignore", invalid="ignore"):
            loo = (path.Ys - fitted) / (1.0 - leverage)[:, None]
        mse = np.mean(loo**2, axis=0)
        scores[i] = -np.where(np.isfinite(mse), mse, np.inf)
        logger.debug(f"gcv lambda={lam:.3g} mean score={scores[i].mean():.6g}")
    return scores


def _kfold_scores(X: np.ndarray, Y: np.ndarray, grid: LambdaGrid, k: int, seed: int, preprocess: str = CENTER) -> np.ndarray:
    """Negative held-out MSE per (lambda, target), in the preprocessed target units."""
    plan = FoldPlan.make(X.shape[0], k, seed)
    scores = np.zeros((len(grid), Y.shape[1]))
    for train, test in plan.splits():
        path = RidgePath(X[train], Y[train], preprocess)
        Xte = (X[test] - path.x_means) / path.x_scales
        Yte = (Y[test] - path.y_means) / path.y_scales
        for i, lam in enumerate(grid.values):
            scores[i] -= np.mean((Yte - Xte @ path.weights(lam)) ** 2, axis=0)
    return scores / plan.n_splits


def select_lambda(
    X_train,
    Y_train,
    grid: LambdaGrid | None = None,
    inner: str = GCV,
    inner_folds: int = DEFAULT_SPLITS,
    per_target: bool = False,
    seed: int = 0,
    preprocess: str = CENTER,
) -> LambdaSelection:
    """Pick the grid lambda with the best mean validation score (negative MSE).

    Ties go to the larger lambda. With `per_target`, each target also gets
    its own best lambda.
    """
    grid = grid or LambdaGrid()
    X = as_matrix(X_train)
    Y = as_matrix(Y_train)
    if X.shape[0] != Y.shape[0]:
        raise DegenerateInputError(f"X has {X.shape[0]} rows, Y has {Y.shape[0]}")
    if np.all(np.ptp(Y, axis=0) == 0):
        raise DegenerateInputError("every target is constant; lambda selection is undefined")

    if inner == GCV:
        target_scores = _loo_scores(X, Y, grid, preprocess)
    elif inner == KFOLD:
        target_scores = _kfold_scores(X, Y, grid, inner_folds, seed, preprocess)
    else:
        raise ConfigError("lambda_mode", f"unknown selection mode {inner!r}")

    mean_scores = target_scores.mean(axis=1)
    best = int(_argmax_last(mean_scores))
    chosen = grid.values[best]
    per = None
    if per_target:
        per = grid.as_array()[_argmax_last(target_scores, axis=0)]
    logger.debug(f"selected lambda={chosen:.3g} via {inner}")
    return LambdaSelection(chosen, mean_scores, target_scores, per)


def _encode_fold(X, Y, train, test, grid, inner, inner_folds, preprocess, per_target, seed):
    selection = select_lambda(X[train], Y[train], grid, inner, inner_folds, per_target, seed, preprocess)
    path = RidgePath(X[train], Y[train], preprocess)
    lam = selection.per_target if per_target else selection.lambda_
    fit = path.fit(lam)
    r, undefined = columnwise_pearson(fit.predict(X[test]), Y[test])
    masked = undefined | path.y_constant
    return r, masked, lam, fit


def encode(
    X,
    Y,
    plan: FoldPlan,
    grid: LambdaGrid | None = None,
    inner: str = GCV,
    inner_folds: int = DEFAULT_SPLITS,
    preprocess: str = CENTER,
    per_target: bool = False,
    n_jobs: int = 1,
    x_ids=None,
    y_ids=None,
    keep_fits: bool = False,
) -> EncodingResult:
    """Outer-fold encoding score: per fold select lambda and fit on the train
    split only, predict the test split, correlate per target; then average.

    Targets that are constant in any split are masked (NaN), never imputed.
    """
    grid = grid or LambdaGrid()
    X = as_matrix(X)
    Y = as_matrix(Y)
    if x_ids is not None and y_ids is not None and tuple(x_ids) != tuple(y_ids):
        diff = [i for i, (a, b) in enumerate(zip(x_ids, y_ids)) if a != b][:5]
        raise StimulusAlignmentError(f"activation and response stimulus orders differ (first rows: {diff})")
    if X.shape[0] != Y.shape[0]:
        raise StimulusAlignmentError(f"activations have {X.shape[0]} stimuli, responses {Y.shape[0]}")
    if plan.n_stimuli != X.shape[0]:
        raise StimulusAlignmentError(f"fold plan covers {plan.n_stimuli} stimuli, data has {X.shape[0]}")

    splits = plan.splits()
    for fold, (_, test) in enumerate(splits):
        if test.size < MIN_TEST_STIMULI:
            raise DegenerateInputError(f"fold {fold} has {test.size} test stimuli, need {MIN_TEST_STIMULI}")

    jobs = (
        delayed(_encode_fold)(X, Y, train, test, grid, inner, inner_folds, preprocess, per_target, plan.seed + 1 + fold)
        for fold, (train, test) in enumerate(splits)
    )
    results = Parallel(n_jobs=n_jobs, backend="threading")(jobs)

    per_fold = np.vstack([r for r, _, _, _ in results])
    mask = np.zeros(Y.shape[1], dtype=bool)
    for _, masked, _, _ in results:
        mask |= masked
    if mask.any():
        logger.warning(f"{int(mask.sum())} of {mask.size} targets masked as constant in some fold")
    per_fold[:, mask] = np.nan
    per_target_R = per_fold.mean(axis=0)
    lambdas = [lam.tolist() if isinstance(lam, np.ndarray) else lam for _, _, lam, _ in results]
    fits = tuple(f for _, _, _, f in results) if keep_fits else None
    return EncodingResult(per_target_R, per_fold, lambdas, mask, plan.seed, fits)
