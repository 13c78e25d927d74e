"""Mutual information via iterative Gaussianization, ICC and histogram tools.

Total correlation is estimated by alternating rank-based marginal
Gaussianization with random orthonormal rotations.  Marginal transforms leave
total correlation unchanged, and a rotation moves exactly

    sum_i [ H(N(0,1)) - H(u_i) ]

of it into the marginals, where ``u`` is the rotated data.  Summing that
marginal negentropy over all layers after the first therefore recovers the
total correlation of the input; the first marginal pass only removes the
input's own marginal non-Gaussianity (scale included) and is excluded from
the sum (it is reported in the diagnostics instead).

Negentropy per dimension is estimated against the standard-normal entropy
using a histogram plug-in entropy with Miller-Madow correction, binned over
mean +/- 5 std.  Everything is deterministic given the rotation seed.

Mutual information between groups A and B is
``I(A;B) = TC([A|B]) - TC(A) - TC(B)`` (clamped at zero, raw value kept) and
is reported alongside the information coefficient of correlation
``ICC = sqrt(1 - exp(-2 I))`` which matches |rho| for bivariate Gaussians.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .errors import DegenerateColumnError, ValidationError
from .validation import as_column, as_matrix, check_same_length

GAUSSIAN_ENTROPY = 0.5 * math.log(2.0 * math.pi * math.e)
LN2 = math.log(2.0)


@dataclass(frozen=True)
class RbigConfig:
    """Iteration budget, histogram resolution, seeding and stopping rule.

    ``null_replicates`` controls the per-layer bias calibration: each layer's
    increment has the same-rotation increment of permutation-decoupled copies
    subtracted (averaged over this many seeded permutations), so increments
    are centered at zero for independent data.  ``stop_window`` consecutive
    increments below ``tc_tolerance`` end the run, which keeps one unlucky
    near-axis rotation from stalling it.
    """

    n_layers: int = 100
    marginal_bins: int = 100
    rotation_seed: int = 0
    tc_tolerance: float = 1e-3
    min_samples: int = 100
    null_replicates: int = 2
    stop_window: int = 2

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValidationError("n_layers must be >= 1")
        if self.marginal_bins < 16:
            raise ValidationError("marginal_bins must be >= 16")
        if self.tc_tolerance < 0:
            raise ValidationError("tc_tolerance must be >= 0")
        if self.null_replicates < 0:
            raise ValidationError("null_replicates must be >= 0")
        if self.stop_window < 1:
            raise ValidationError("stop_window must be >= 1")


@dataclass(frozen=True)
class TcResult:
    tc_nats: float          # clamped at 0
    tc_raw_nats: float      # accumulated sum before clamping
    layer_increments: tuple
    input_marginal_negentropy: float
    n_layers_run: int


@dataclass(frozen=True)
class MiResult:
    mi_nats: float
    mi_raw_nats: float
    icc: float
    n_samples: int
    group_a: tuple
    group_b: tuple
    layer_increments: dict = field(default_factory=dict)

    @property
    def mi_bits(self):
        return self.mi_nats / LN2


def negentropy_estimate(column, bins=100):
    """Standard-normal entropy minus the histogram plug-in entropy (nats).

    Bins span mean +/- 5 std; out-of-range samples land in the edge bins.
    The Miller-Madow correction adds (K - 1) / (2 n) for K occupied bins.
    """
    v = np.asarray(column, dtype=np.float64)
    n = v.size
    mean = float(v.mean())
    std = float(v.std())
    if std == 0.0:
        raise DegenerateColumnError("column has zero variance")
    lo, hi = mean - 5.0 * std, mean + 5.0 * std
    width = (hi - lo) / bins
    idx = np.clip(((v - lo) / width).astype(np.int64), 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    p = counts[counts > 0] / n
    h_discrete = float(-(p * np.log(p)).sum()) + (p.size - 1) / (2.0 * n)
    h_diff = h_discrete + math.log(width)
    return GAUSSIAN_ENTROPY - h_diff


def marginal_gaussianize(column, bins=100, min_samples=100):
    """Map a column through its empirical CDF then the normal inverse CDF.

    Uses mid-rank ties and clips the CDF to [1/(n+1), n/(n+1)].  Returns the
    transformed column and an estimate of the marginal negentropy consumed.
    The transform is monotone non-decreasing in the input.
    """
    v = as_column(column, "column")
    n = v.size
    if n < min_samples:
        raise ValidationError(f"need at least {min_samples} samples, got {n}")
    if np.all(v == v[0]):
        raise DegenerateColumnError("cannot gaussianize a constant column")
    negentropy = negentropy_estimate(v, bins)
    u = rankdata(v, method="average") / (n + 1.0)
    u = np.clip(u, 1.0 / (n + 1.0), n / (n + 1.0))
    return ndtri(u), negentropy


def _random_rotation(dim, rng):
    """Haar-distributed orthonormal matrix via QR with sign correction."""
    gauss = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(gauss)
    return q * np.sign(np.diag(r))


def _marginal_negentropy_sum(X, bins):
    return sum(negentropy_estimate(X[:, j], bins) for j in range(X.shape[1]))


def rbig_total_correlation(samples, cfg: RbigConfig = RbigConfig()) -> TcResult:
    """Total correlation (nats) of an (n, d) sample matrix.

    Alternates marginal Gaussianization with random rotations.  The first
    marginal pass removes only the input's own marginal non-Gaussianity and
    is reported in the diagnostics, not the sum; every later layer's
    calibrated increment is accumulated.  Layers run until ``cfg.n_layers``
    or until ``cfg.stop_window`` consecutive increments fall below
    ``cfg.tc_tolerance``.  One-dimensional input has zero total correlation
    by definition.
    """
    X = as_matrix(samples, "samples")
    n, d = X.shape
    if d == 1:
        return TcResult(0.0, 0.0, (), 0.0, 0)
    if n < cfg.min_samples:
        raise ValidationError(f"need at least {cfg.min_samples} samples, got {n}")

    rng = np.random.Generator(np.random.PCG64(cfg.rotation_seed))

    def gaussianize_all(M):
        for j in range(d):
            M[:, j], _ = marginal_gaussianize(M[:, j], cfg.marginal_bins,
                                              cfg.min_samples)
        return M

    input_negentropy = _marginal_negentropy_sum(X, cfg.marginal_bins)
    G = gaussianize_all(X.copy())

    increments = []
    tc_raw = 0.0
    layers_run = 1
    below = 0
    for _ in range(1, cfg.n_layers):
        layers_run += 1
        rotation = _random_rotation(d, rng)
        Y = G @ rotation.T
        measured = _marginal_negentropy_sum(Y, cfg.marginal_bins)
        null = 0.0
        for _ in range(cfg.null_replicates):
            decoupled = G.copy()
            for j in range(1, d):
                decoupled[:, j] = decoupled[rng.permutation(n), j]
            null += _marginal_negentropy_sum(decoupled @ rotation.T,
                                             cfg.marginal_bins)
        if cfg.null_replicates:
            null /= cfg.null_replicates
        increment = measured - null
        increments.append(increment)
        tc_raw += increment
        below = below + 1 if increment < cfg.tc_tolerance else 0
        if below >= cfg.stop_window:
            break
        G = gaussianize_all(Y)
    return TcResult(
        tc_nats=max(tc_raw, 0.0),
        tc_raw_nats=tc_raw,
        layer_increments=tuple(increments),
        input_marginal_negentropy=input_negentropy,
        n_layers_run=layers_run,
    )


def mutual_information(a, b, cfg: RbigConfig = RbigConfig(),
                       labels_a=None, labels_b=None) -> MiResult:
    """I(A;B) in nats between two sample groups with equal row counts."""
    A = as_matrix(a, "a")
    B = as_matrix(b, "b")
    check_same_length(A, B, "a", "b")
    joint = np.hstack([A, B])
    tc_joint = rbig_total_correlation(joint, cfg)
    tc_a = rbig_total_correlation(A, cfg)
    tc_b = rbig_total_correlation(B, cfg)
    raw = tc_joint.tc_raw_nats - tc_a.tc_raw_nats - tc_b.tc_raw_nats
    mi = max(raw, 0.0)
    return MiResult(
        mi_nats=mi,
        mi_raw_nats=raw,
        icc=icc(mi),
        n_samples=A.shape[0],
        group_a=tuple(labels_a) if labels_a else tuple(f"a{i}" for i in range(A.shape[1])),
        group_b=tuple(labels_b) if labels_b else tuple(f"b{i}" for i in range(B.shape[1])),
        layer_increments={
            "joint": tc_joint.layer_increments,
            "a": tc_a.layer_increments,
            "b": tc_b.layer_increments,
        },
    )


def icc(mi_nats: float) -> float:
    """Information coefficient of correlation, sqrt(1 - exp(-2 I))."""
    if mi_nats < 0:
        raise ValidationError(f"mutual information must be >= 0, got {mi_nats}")
    return math.sqrt(1.0 - math.exp(-2.0 * mi_nats))


# ---------------------------------------------------------------------------
# Factor selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepStep:
    size: int
    candidate: str
    factors: tuple
    mi_nats: float
    icc: float


@dataclass(frozen=True)
class SweepSelection:
    size: int
    factors: tuple
    mi_nats: float
    icc: float
    tie_with: tuple = ()


@dataclass(frozen=True)
class SweepResult:
    steps: tuple
    selections: tuple
    candidates: tuple
    metric: str


def factor_sweep(table, metric, max_factors=6, cfg: RbigConfig = RbigConfig(),
                 candidates=None) -> SweepResult:
    """Greedy forward selection of descriptor groups by ICC against a metric.

    At each size the descriptor maximizing the group ICC joins the incumbent
    set; exact ties go to the earlier column in table order and are recorded.
    Every candidate evaluation is kept so the full per-step ICC matrices can
    be audited.
    """
    s_col = f"S_{metric}"
    if s_col not in table.columns:
        raise ValidationError(f"table has no sensitivity column {s_col!r}")
    if candidates is None:
        candidates = table.complete_columns(table.descriptor_columns())
    else:
        for c in candidates:
            if c not in table.columns:
                raise ValidationError(f"unknown descriptor column {c!r}")
    if len(candidates) < 1:
        raise ValidationError("no usable descriptor columns")
    if max_factors > len(candidates):
        raise ValidationError(
            f"max_factors={max_factors} exceeds {len(candidates)} candidates"
        )
    s = table.column(s_col)[:, None]
    matrix = {c: table.column(c) for c in candidates}

    steps, selections = [], []
    incumbent = []
    for size in range(1, max_factors + 1):
        evaluated = []
        for cand in candidates:
            if cand in incumbent:
                continue
            group = incumbent + [cand]
            A = np.column_stack([matrix[c] for c in group])
            result = mutual_information(A, s, cfg, labels_a=group, labels_b=[s_col])
            step = SweepStep(size=size, candidate=cand, factors=tuple(group),
                             mi_nats=result.mi_nats, icc=result.icc)
            steps.append(step)
            evaluated.append(step)
        best = max(evaluated, key=lambda st: st.icc)
        ties = tuple(st.candidate for st in evaluated
                     if st.icc == best.icc and st.candidate != best.candidate)
        # max() already keeps the earliest candidate on exact ties because
        # candidates are scanned in table order.
        incumbent.append(best.candidate)
        selections.append(SweepSelection(
            size=size, factors=tuple(incumbent), mi_nats=best.mi_nats,
            icc=best.icc, tie_with=ties,
        ))
    return SweepResult(
        steps=tuple(steps), selections=tuple(selections),
        candidates=tuple(candidates), metric=metric,
    )


def single_factor_icc(table, metric, cfg: RbigConfig = RbigConfig(),
                      candidates=None):
    """ICC of each descriptor alone against one metric's sensitivity."""
    sweep = factor_sweep(table, metric, max_factors=1, cfg=cfg,
                         candidates=candidates)
    return {st.candidate: st.icc for st in sweep.steps if st.size == 1}


def pairwise_icc(table, metric, cfg: RbigConfig = RbigConfig(),
                 candidates=None):
    """ICC of every unordered descriptor pair against one metric."""
    s_col = f"S_{metric}"
    if s_col not in table.columns:
        raise ValidationError(f"table has no sensitivity column {s_col!r}")
    if candidates is None:
        candidates = table.complete_columns(table.descriptor_columns())
    s = table.column(s_col)[:, None]
    out = {}
    for i, ci in enumerate(candidates):
        for cj in candidates[i + 1:]:
            A = np.column_stack([table.column(ci), table.column(cj)])
            result = mutual_information(A, s, cfg, labels_a=[ci, cj],
                                        labels_b=[s_col])
            out[(ci, cj)] = result.icc
    return out


# ---------------------------------------------------------------------------
# Conditional histograms and rank correlations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionalHistogram:
    matrix: np.ndarray        # (s_bins, x_bins); columns sum to 1 or are zero
    x_edges: np.ndarray
    s_edges: np.ndarray
    empty_columns: tuple
    pearson: float
    spearman: float


def correlations(a, b):
    """(Pearson, Spearman) with mid-rank ties; zero variance is an error."""
    x = as_column(a, "a")
    y = as_column(b, "b")
    check_same_length(x, y, "a", "b")
    if x.size < 2:
        raise ValidationError("need at least 2 samples")
    if np.std(x) == 0.0 or np.std(y) == 0.0:
        raise DegenerateColumnError("correlation of a zero-variance input")
    pearson = float(np.corrcoef(x, y)[0, 1])
    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    spearman = float(np.corrcoef(rx, ry)[0, 1])
    return pearson, spearman


def conditional_histogram(x, s, m_bins=30) -> ConditionalHistogram:
    """Distribution of sensitivity conditioned on a binned descriptor.

    The descriptor is cut into ``m_bins`` equal-population bins; sensitivity
    into ``m_bins`` equal-width bins spanning its 1st..99th percentile range
    (outliers fall into the boundary bins).  Each descriptor column of the
    matrix is normalized to sum 1; empty columns stay all-zero and are
    flagged.
    """
    xv = as_column(x, "x")
    sv = as_column(s, "s")
    check_same_length(xv, sv, "x", "s")
    if m_bins < 2:
        raise ValidationError("m_bins must be >= 2")
    if np.all(sv == sv[0]):
        raise DegenerateColumnError("sensitivity column is constant")

    x_edges = np.quantile(xv, np.linspace(0.0, 1.0, m_bins + 1))
    x_idx = np.clip(np.searchsorted(x_edges[1:-1], xv, side="right"), 0, m_bins - 1)

    s_lo, s_hi = np.percentile(sv, [1.0, 99.0])
    if s_hi <= s_lo:
        s_lo, s_hi = float(sv.min()), float(sv.max())
    s_edges = np.linspace(s_lo, s_hi, m_bins + 1)
    width = (s_hi - s_lo) / m_bins
    s_idx = np.clip(((sv - s_lo) / width).astype(np.int64), 0, m_bins - 1)

    matrix = np.zeros((m_bins, m_bins), dtype=np.float64)
    np.add.at(matrix, (s_idx, x_idx), 1.0)
    sums = matrix.sum(axis=0)
    empty = tuple(int(i) for i in np.flatnonzero(sums == 0))
    nonzero = sums > 0
    matrix[:, nonzero] /= sums[nonzero]

    pearson, spearman = correlations(xv, sv)
    return ConditionalHistogram(
        matrix=matrix, x_edges=x_edges, s_edges=s_edges,
        empty_columns=empty, pearson=pearson, spearman=spearman,
    )
