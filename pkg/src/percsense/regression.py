"""Sensitivity regression: feature expansion, OLS, LASSO, random forests,
the sequential/LASSO ablation study and the published closed-form predictors.

Closed-form predictor registry
------------------------------
``functional_form_registry`` returns the published per-metric coefficient
sets for the two closed forms

    eq3:  S = w0 + w1 * logp_xt + w2 * logp_xt^2
    eq4:  S = w0 + w1 * logp_xt + w2 * logp_xt^2 + w3 * sigma_x

Ablation term universe (canonical order)
----------------------------------------
``b, p, p2, s, s2, inv_s, p_over_s, s_over_p, p_times_s`` built from
``p = logp_xt`` and ``s = sigma_x``.

Fractional powers in feature expansion are applied to the signed magnitude,
``sign(v) * |v|**gamma``; for log-probability columns they act on the
negative log-likelihood (a positive quantity) instead, since image
log-likelihoods are large-negative.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from .errors import (ConvergenceError, RankDeficiencyError, ValidationError)
from .infotheory import correlations
from .validation import as_column, as_matrix, check_same_length

log = logging.getLogger(__name__)

LOGP_COLUMNS = ("logp_x", "logp_xt")
FRACTIONAL_GAMMAS = (0.1, 0.2, 0.3, 1.0 / 3.0, 0.5)
INTEGER_POWERS = (2, 3, 6)

ABLATION_TERMS = ("b", "p", "p2", "s", "s2", "inv_s",
                  "p_over_s", "s_over_p", "p_times_s")

IQM_NAMES = ("MSSIM", "NLPD", "PIM", "LPIPS", "DISTS")

# Published closed-form coefficients, bias first.
_EQ3_COEFFS = {
    "MSSIM": (29.5, 4.9e-3, 2.05e-7),
    "NLPD": (65.0, 9.5e-3, 3.62e-7),
    "PIM": (15400.0, 2.62, 1.11e-4),
    "LPIPS": (198.0, 3.33e-2, 1.41e-6),
    "DISTS": (161.0, 2.58e-2, 1.05e-6),
}
_EQ4_COEFFS = {
    "MSSIM": (28.0, 4.69e-3, 1.96e-7, -0.597),
    "NLPD": (58.0, 8.19e-3, 3.09e-7, -3.74),
    "PIM": (15100.0, 2.57, 1.09e-4, -141.0),
    "LPIPS": (194.0, 3.26e-2, 1.37e-6, -1.93),
    "DISTS": (156.0, 2.49e-2, 1.00e-6, -2.54),
}


# ---------------------------------------------------------------------------
# Feature expansion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureTerm:
    """One design-matrix column: a named transform of descriptor columns."""

    name: str
    kind: str                  # bias | identity | power | fracpow | reciprocal
    columns: tuple = ()        # | product | ratio
    param: float | None = None

    def __post_init__(self):
        kinds = ("bias", "identity", "power", "fracpow", "reciprocal",
                 "product", "ratio")
        if self.kind not in kinds:
            raise ValidationError(f"unknown term kind {self.kind!r}")
        arity = {"bias": 0, "identity": 1, "power": 1, "fracpow": 1,
                 "reciprocal": 1, "product": 2, "ratio": 2}[self.kind]
        if len(self.columns) != arity:
            raise ValidationError(
                f"term {self.name!r}: kind {self.kind!r} takes {arity} column(s)"
            )
        if self.kind in ("power", "fracpow") and not isinstance(
                self.param, (int, float)):
            raise ValidationError(
                f"term {self.name!r}: kind {self.kind!r} needs a numeric param"
            )


@dataclass(frozen=True)
class FeatureSpec:
    terms: tuple

    def __post_init__(self):
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            raise ValidationError("feature term names must be unique")

    def names(self):
        return [t.name for t in self.terms]


def _column(table, name):
    values = table.column(name)
    if np.any(np.isnan(values)):
        raise ValidationError(f"column {name!r} has missing values")
    return values


def _signed_power(values, gamma, column_name):
    if column_name in LOGP_COLUMNS:
        # Log-likelihoods are large-negative; fractional powers act on the
        # positive NLL magnitude.
        return np.abs(values) ** gamma
    return np.sign(values) * np.abs(values) ** gamma


def expand_features(table, spec: FeatureSpec):
    """Build the design matrix for a feature spec; columns follow spec order."""
    n = len(table.pair_ids)
    columns = []
    for term in spec.terms:
        if term.kind == "bias":
            columns.append(np.ones(n))
            continue
        values = [_column(table, c) for c in term.columns]
        if term.kind == "identity":
            col = values[0]
        elif term.kind == "power":
            col = values[0] ** term.param
        elif term.kind == "fracpow":
            col = _signed_power(values[0], term.param, term.columns[0])
        elif term.kind == "reciprocal":
            if np.any(np.abs(values[0]) < 1e-12):
                raise ValidationError(
                    f"term {term.name!r}: reciprocal of a near-zero value"
                )
            col = 1.0 / values[0]
        elif term.kind == "product":
            col = values[0] * values[1]
        else:  # ratio
            if np.any(np.abs(values[1]) < 1e-12):
                raise ValidationError(
                    f"term {term.name!r}: ratio with near-zero denominator"
                )
            col = values[0] / values[1]
        if not np.all(np.isfinite(col)):
            raise ValidationError(f"term {term.name!r} produced non-finite values")
        columns.append(col)
    return np.column_stack(columns)


def ablation_feature_spec() -> FeatureSpec:
    """The nine-term universe over p = logp_xt and s = sigma_x."""
    p, s = "logp_xt", "sigma_x"
    return FeatureSpec(terms=(
        FeatureTerm("b", "bias"),
        FeatureTerm("p", "identity", (p,)),
        FeatureTerm("p2", "power", (p,), 2),
        FeatureTerm("s", "identity", (s,)),
        FeatureTerm("s2", "power", (s,), 2),
        FeatureTerm("inv_s", "reciprocal", (s,)),
        FeatureTerm("p_over_s", "ratio", (p, s)),
        FeatureTerm("s_over_p", "ratio", (s, p)),
        FeatureTerm("p_times_s", "product", (p, s)),
    ))


def polynomial_feature_spec(columns, include_reciprocal_logp=True) -> FeatureSpec:
    """Order-2 polynomial expansion of descriptor columns.

    Identities, squares and all pairwise products, plus the reciprocals of
    the log-probability columns.
    """
    terms = [FeatureTerm("b", "bias")]
    for c in columns:
        terms.append(FeatureTerm(c, "identity", (c,)))
    for c in columns:
        terms.append(FeatureTerm(f"{c}^2", "power", (c,), 2))
    for i, ci in enumerate(columns):
        for cj in columns[i + 1:]:
            terms.append(FeatureTerm(f"{ci}*{cj}", "product", (ci, cj)))
    if include_reciprocal_logp:
        for c in columns:
            if c in LOGP_COLUMNS:
                terms.append(FeatureTerm(f"1/{c}", "reciprocal", (c,)))
    return FeatureSpec(terms=tuple(terms))


# ---------------------------------------------------------------------------
# Held-out split and fit diagnostics
# ---------------------------------------------------------------------------

def holdout_split(n, fraction=0.3, seed=0):
    """Seeded uniform test split; returns (train_idx, test_idx)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(n)
    n_test = int(round(n * fraction))
    return np.sort(order[n_test:]), np.sort(order[:n_test])


@dataclass(frozen=True)
class FitReport:
    coef: np.ndarray
    residual_norm: float
    rank: int
    pearson_test: float | None = None
    spearman_test: float | None = None


def fit_ols(X, y, allow_rank_deficient=False) -> FitReport:
    """Least squares; rank deficiency needs an explicit opt-in flag."""
    X = as_matrix(X, "X")
    y = as_column(y, "y")
    check_same_length(X, y, "X", "y")
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        if not allow_rank_deficient:
            raise RankDeficiencyError(
                f"design matrix rank {rank} < {X.shape[1]} columns; "
                "pass allow_rank_deficient=True for the pseudo-solution"
            )
        warnings.warn(
            f"rank-deficient design ({rank} < {X.shape[1]}); "
            "returning minimum-norm pseudo-solution",
            stacklevel=2,
        )
    residual = y - X @ coef
    return FitReport(coef=coef, residual_norm=float(np.linalg.norm(residual)),
                     rank=int(rank))


def fit_ols_holdout(X, y, fraction=0.3, seed=0, allow_rank_deficient=False):
    """OLS on the train split plus test-split correlations.

    Correlations report None when either side of the test split is constant.
    """
    X = as_matrix(X, "X")
    y = as_column(y, "y")
    train, test = holdout_split(len(y), fraction, seed)
    report = fit_ols(X[train], y[train], allow_rank_deficient)
    pred = X[test] @ report.coef
    if (len(test) < 2 or np.all(pred == pred[0])
            or np.all(y[test] == y[test][0])):
        pearson = spearman = None
    else:
        pearson, spearman = correlations(pred, y[test])
    return FitReport(coef=report.coef, residual_norm=report.residual_norm,
                     rank=report.rank, pearson_test=pearson,
                     spearman_test=spearman)


# ---------------------------------------------------------------------------
# LASSO coordinate descent
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LassoReport:
    coef: np.ndarray            # original scale, penalized columns only
    intercept: float
    coef_standardized: np.ndarray
    active: tuple               # indices of nonzero standardized coefficients
    lam: float
    n_iter: int


def lasso_lambda_max(X, y):
    """Smallest lambda that zeroes every penalized coefficient."""
    X = as_matrix(X, "X")
    y = as_column(y, "y")
    Xs, _, _ = _standardize(X)
    return float(np.max(np.abs(Xs.T @ (y - y.mean()))))


def _standardize(X):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    if np.any(std == 0.0):
        raise ValidationError("constant column in LASSO design; drop bias terms")
    return (X - mean) / std, mean, std


def fit_lasso(X, y, lam, tol=1e-8, max_iter=100_000) -> LassoReport:
    """Coordinate descent for 0.5 * ||y - b - X w||^2 + lam * ||w||_1.

    Columns are standardized internally and the intercept is unpenalized.
    Convergence is declared when the largest coordinate change in a sweep
    drops below ``tol``.
    """
    X = as_matrix(X, "X")
    y = as_column(y, "y")
    check_same_length(X, y, "X", "y")
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    Xs, mean, std = _standardize(X)
    y_mean = float(y.mean())
    yc = y - y_mean
    n, p = Xs.shape
    col_sq = (Xs * Xs).sum(axis=0)

    w = np.zeros(p)
    residual = yc.copy()
    n_iter = 0
    for sweep in range(max_iter):
        n_iter = sweep + 1
        max_delta = 0.0
        for j in range(p):
            old = w[j]
            rho = Xs[:, j] @ residual + col_sq[j] * old
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_sq[j]
            if new != old:
                residual += Xs[:, j] * (old - new)
                w[j] = new
                max_delta = max(max_delta, abs(new - old))
        if max_delta < tol:
            break
    else:
        raise ConvergenceError(
            f"LASSO did not converge in {max_iter} sweeps "
            f"(last max coordinate change {max_delta:.3e}, lam={lam})"
        )
    active = tuple(int(j) for j in np.flatnonzero(w != 0.0))
    coef = w / std
    intercept = y_mean - float(mean @ coef)
    return LassoReport(coef=coef, intercept=intercept, coef_standardized=w,
                       active=active, lam=lam, n_iter=n_iter)


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 200
    max_depth: int | None = None
    min_samples_leaf: int = 5
    max_features: float = 1.0 / 3.0
    bootstrap: bool = True
    test_fraction: float = 0.3


@dataclass
class RandomForestModel:
    params: ForestParams
    seed: int
    forest: RandomForestRegressor
    importances: np.ndarray
    degenerate_target: bool

    def predict(self, X):
        return self.forest.predict(as_matrix(X, "X"))

    def trees(self):
        """Per-tree structures: (feature, threshold, children, leaf values)."""
        return [t.tree_ for t in self.forest.estimators_]


def fit_random_forest(X, y, params: ForestParams = ForestParams(), seed=0):
    """Bootstrap variance-reduction forest with normalized importances.

    Returns the model plus held-out Pearson/Spearman on a seeded
    ``params.test_fraction`` split.  A constant target still fits but is
    flagged and its importances are all zero.
    """
    X = as_matrix(X, "X")
    y = as_column(y, "y")
    check_same_length(X, y, "X", "y")
    if len(y) < 10:
        raise ValidationError("need at least 10 rows to fit a forest")
    train, test = holdout_split(len(y), params.test_fraction, seed)
    forest = RandomForestRegressor(
        n_estimators=params.n_trees,
        max_depth=params.max_depth,
        min_samples_leaf=params.min_samples_leaf,
        max_features=params.max_features,
        bootstrap=params.bootstrap,
        random_state=seed % (2 ** 32),  # sklearn caps seeds at 32 bits
    )
    forest.fit(X[train], y[train])
    degenerate = bool(np.all(y[train] == y[train][0]))
    if degenerate:
        importances = np.zeros(X.shape[1])
        log.warning("constant training target: feature importances are all zero")
    else:
        importances = forest.feature_importances_
        total = importances.sum()
        if total > 0:
            importances = importances / total
    model = RandomForestModel(params=params, seed=seed, forest=forest,
                              importances=importances,
                              degenerate_target=degenerate)
    if degenerate or len(test) < 2 or np.all(y[test] == y[test][0]):
        return model, {"pearson": None, "spearman": None}
    pred = model.predict(X[test])
    if np.all(pred == pred[0]):
        return model, {"pearson": None, "spearman": None}
    pearson, spearman = correlations(pred, y[test])
    return model, {"pearson": pearson, "spearman": spearman}


# ---------------------------------------------------------------------------
# Ablation study (sequential drop + LASSO path)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    mask: tuple                # inclusion bit per ABLATION_TERMS entry
    n_terms: int
    per_metric: dict           # metric -> held-out Pearson
    mean_correlation: float
    from_lasso: bool = False


def _ablation_design(table):
    spec = ablation_feature_spec()
    return expand_features(table, spec), spec


def _mask_correlations(X, targets, mask, fraction, seed):
    """Held-out Pearson per metric for one term subset.

    Columns are rescaled to unit max-abs before the solve (the terms span
    ~12 orders of magnitude, which would otherwise defeat the lstsq rank
    threshold); predictions and correlations are scale invariant.  Constant
    predictions report None.
    """
    cols = [i for i, keep in enumerate(mask) if keep]
    sub = X[:, cols]
    train, test = holdout_split(sub.shape[0], fraction, seed)
    scale = np.max(np.abs(sub[train]), axis=0)
    scale[scale == 0.0] = 1.0
    per_metric = {}
    for metric, y in targets.items():
        coef, _, _, _ = np.linalg.lstsq(sub[train] / scale, y[train], rcond=None)
        pred = (sub[test] / scale) @ coef
        if np.all(pred == pred[0]) or np.all(y[test] == y[test][0]):
            per_metric[metric] = None
        else:
            pearson, _ = correlations(pred, y[test])
            per_metric[metric] = pearson
    return per_metric


def ablation_study(table, metrics=None, mode="sequential",
                   fraction=0.3, seed=0, lasso_sizes=None):
    """Drop terms from the nine-term universe and report per-model quality.

    ``sequential`` starts from the full model and repeatedly removes the
    term whose removal least reduces the mean held-out Pearson across
    metrics (ties within 1e-4 drop the term later in the canonical
    ordering).  ``lasso-path`` sweeps the regularization to hit each active
    set size instead; the unpenalized bias stays in every starred row.
    Rows are ordered by descending term count.
    """
    if mode not in ("sequential", "lasso-path"):
        raise ValidationError(f"unknown ablation mode {mode!r}")
    if metrics is None:
        metrics = [c[2:] for c in table.metric_columns()]
    if not metrics:
        raise ValidationError("no metric columns in table")
    targets = {m: _column(table, f"S_{m}") for m in metrics}
    X, spec = _ablation_design(table)

    def mean_corr(per_metric):
        values = [v for v in per_metric.values() if v is not None]
        return float(np.mean(values)) if values else float("-inf")

    rows = []
    if mode == "sequential":
        mask = [True] * len(ABLATION_TERMS)
        while True:
            per_metric = _mask_correlations(X, targets, mask, fraction, seed)
            rows.append(AblationRow(
                mask=tuple(int(b) for b in mask), n_terms=sum(mask),
                per_metric=per_metric, mean_correlation=mean_corr(per_metric),
            ))
            if sum(mask) <= 2:  # bias-only models have no defined correlation
                break
            candidates = []
            for j, keep in enumerate(mask):
                if not keep:
                    continue
                trial = list(mask)
                trial[j] = False
                trial_metrics = _mask_correlations(X, targets, trial,
                                                   fraction, seed)
                candidates.append((j, mean_corr(trial_metrics)))
            best_corr = max(c for _, c in candidates)
            # Tied removals (within 1e-4) drop the later term.
            tied = [j for j, c in candidates if c >= best_corr - 1e-4]
            mask[max(tied)] = False
    else:
        y0 = targets[metrics[0]]
        penalized = X[:, 1:]  # bias column excluded from the penalty
        lam_max = lasso_lambda_max(penalized, y0)
        sizes = lasso_sizes or list(range(len(ABLATION_TERMS) - 1, 0, -1))
        grid = np.geomspace(lam_max * 1.001, lam_max * 1e-5, 200)
        found = {}
        for lam in grid:
            report = fit_lasso(penalized, y0, lam)
            size = len(report.active)
            if size in sizes and size not in found:
                found[size] = report
        for size in sorted(found, reverse=True):
            report = found[size]
            mask = [True] + [j in report.active
                             for j in range(len(ABLATION_TERMS) - 1)]
            per_metric = _mask_correlations(X, targets, mask, fraction, seed)
            rows.append(AblationRow(
                mask=tuple(int(b) for b in mask), n_terms=sum(mask),
                per_metric=per_metric,
                mean_correlation=mean_corr(per_metric),
                from_lasso=True,
            ))
        missing = sorted(set(sizes) - set(found))
        if missing:
            log.warning("lasso path never hit active-set size(s) %s", missing)
    return rows


# ---------------------------------------------------------------------------
# Published functional forms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FunctionalFormModel:
    iqm: str
    form: str                  # eq3 | eq4
    terms: tuple
    coefficients: tuple        # bias first
    provenance: str = "paper-table"


def functional_form_registry(iqm, form) -> FunctionalFormModel:
    """Published coefficients for one metric and closed form."""
    if iqm not in IQM_NAMES:
        raise ValidationError(f"unknown iqm {iqm!r}; expected one of {IQM_NAMES}")
    if form == "eq3":
        return FunctionalFormModel(
            iqm=iqm, form=form, terms=("b", "logp_xt", "logp_xt^2"),
            coefficients=_EQ3_COEFFS[iqm],
        )
    if form == "eq4":
        return FunctionalFormModel(
            iqm=iqm, form=form,
            terms=("b", "logp_xt", "logp_xt^2", "sigma_x"),
            coefficients=_EQ4_COEFFS[iqm],
        )
    raise ValidationError(f"unknown form {form!r}; expected eq3 or eq4")


def predict_sensitivity(model: FunctionalFormModel, logp_xt, sigma_x=None):
    """Evaluate a closed-form predictor; no clamping is applied."""
    w = model.coefficients
    value = w[0] + w[1] * logp_xt + w[2] * logp_xt ** 2
    if model.form == "eq4":
        if sigma_x is None:
            raise ValidationError("form eq4 requires sigma_x")
        value += w[3] * sigma_x
    return float(value)
