import numpy as np
import pytest

from percsense.data import JoinedTable
from percsense.errors import RankDeficiencyError, ValidationError
from percsense.regression import (ABLATION_TERMS, FeatureSpec, FeatureTerm,
                                  ForestParams, ablation_feature_spec,
                                  ablation_study, expand_features, fit_lasso,
                                  fit_ols, fit_ols_holdout, fit_random_forest,
                                  functional_form_registry, holdout_split,
                                  lasso_lambda_max, polynomial_feature_spec,
                                  predict_sensitivity)


def table_from_columns(**columns):
    n = len(next(iter(columns.values())))
    return JoinedTable(pair_ids=[f"p{i}" for i in range(n)],
                       columns={k: list(v) for k, v in columns.items()})


def planted_nlpd_table(n=10_000, seed=0, noise_frac=0.01):
    """Rows drawn from the published two-factor NLPD form plus noise."""
    rng = np.random.Generator(np.random.PCG64(seed))
    p = rng.uniform(-8000.0, -4000.0, n)
    s = rng.uniform(0.05, 0.35, n)
    model = functional_form_registry("NLPD", "eq4")
    y = np.array([predict_sensitivity(model, pi, si) for pi, si in zip(p, s)])
    y += noise_frac * (y.max() - y.min()) * rng.standard_normal(n)
    extra = {name: list(rng.standard_normal(n))
             for name in JoinedTable.DESCRIPTOR_COLUMNS
             if name not in ("logp_xt", "sigma_x")}
    return table_from_columns(logp_xt=p, sigma_x=s, S_NLPD=y, **extra)


class TestExpandFeatures:
    def test_bias_p_p2_row(self):
        table = table_from_columns(logp_xt=[-5000.0], sigma_x=[0.25])
        spec = FeatureSpec(terms=(
            FeatureTerm("b", "bias"),
            FeatureTerm("p", "identity", ("logp_xt",)),
            FeatureTerm("p2", "power", ("logp_xt",), 2),
        ))
        X = expand_features(table, spec)
        assert np.array_equal(X, [[1.0, -5000.0, 2.5e7]])

    def test_reciprocal(self):
        table = table_from_columns(sigma_x=[0.25])
        spec = FeatureSpec(terms=(FeatureTerm("inv_s", "reciprocal", ("sigma_x",)),))
        assert expand_features(table, spec)[0, 0] == 4.0

    def test_ratios(self):
        table = table_from_columns(logp_xt=[-5000.0], sigma_x=[0.25])
        spec = FeatureSpec(terms=(
            FeatureTerm("p_over_s", "ratio", ("logp_xt", "sigma_x")),
            FeatureTerm("s_over_p", "ratio", ("sigma_x", "logp_xt")),
        ))
        X = expand_features(table, spec)
        assert X[0, 0] == -20000.0
        assert X[0, 1] == pytest.approx(-5e-5)

    def test_fractional_power_uses_nll_for_logp(self):
        table = table_from_columns(logp_xt=[-5000.0], mu_x=[-0.5])
        spec = FeatureSpec(terms=(
            FeatureTerm("p_frac", "fracpow", ("logp_xt",), 0.5),
            FeatureTerm("m_frac", "fracpow", ("mu_x",), 0.5),
        ))
        X = expand_features(table, spec)
        assert X[0, 0] == pytest.approx(5000.0 ** 0.5)   # positive NLL branch
        assert X[0, 1] == pytest.approx(-(0.5 ** 0.5))   # signed magnitude

    def test_near_zero_reciprocal_rejected(self):
        table = table_from_columns(sigma_x=[1e-13])
        spec = FeatureSpec(terms=(FeatureTerm("inv_s", "reciprocal", ("sigma_x",)),))
        with pytest.raises(ValidationError, match="near-zero"):
            expand_features(table, spec)

    def test_unknown_column_rejected(self):
        table = table_from_columns(sigma_x=[0.2])
        spec = FeatureSpec(terms=(FeatureTerm("q", "identity", ("quality",)),))
        with pytest.raises(ValidationError, match="quality"):
            expand_features(table, spec)

    def test_duplicate_term_names_rejected(self):
        with pytest.raises(ValidationError, match="unique"):
            FeatureSpec(terms=(FeatureTerm("b", "bias"), FeatureTerm("b", "bias")))

    def test_polynomial_spec_shape(self):
        spec = polynomial_feature_spec(["logp_x", "logp_xt", "mu_x"])
        # bias + 3 identities + 3 squares + 3 products + 2 logp reciprocals
        assert len(spec.terms) == 12


class TestOls:
    def test_exact_linear_recovery(self):
        x = np.linspace(-3, 3, 50)
        X = np.column_stack([np.ones(50), x])
        y = 3.0 + 2.0 * x
        report = fit_ols(X, y)
        assert report.coef == pytest.approx([3.0, 2.0], abs=1e-9)

    def test_noisy_monte_carlo(self):
        rng = np.random.Generator(np.random.PCG64(0))
        x = rng.uniform(-2, 2, 10_000)
        X = np.column_stack([np.ones_like(x), x])
        y = 3.0 + 2.0 * x + rng.normal(0, 0.1, x.size)
        report = fit_ols(X, y)
        assert report.coef == pytest.approx([3.0, 2.0], abs=0.01)

    def test_duplicated_column_needs_flag(self):
        x = np.linspace(0, 1, 30)
        X = np.column_stack([x, x])
        with pytest.raises(RankDeficiencyError):
            fit_ols(X, x)
        with pytest.warns(UserWarning, match="rank-deficient"):
            report = fit_ols(X, x, allow_rank_deficient=True)
        assert report.rank == 1

    def test_holdout_reports_correlations(self):
        rng = np.random.Generator(np.random.PCG64(1))
        x = rng.uniform(-2, 2, 500)
        X = np.column_stack([np.ones_like(x), x])
        y = 1.0 + 0.5 * x + rng.normal(0, 0.01, x.size)
        report = fit_ols_holdout(X, y, fraction=0.3, seed=0)
        assert report.pearson_test > 0.99

    def test_holdout_split_is_seeded_partition(self):
        train, test = holdout_split(100, 0.3, seed=5)
        train2, test2 = holdout_split(100, 0.3, seed=5)
        assert np.array_equal(train, train2) and np.array_equal(test, test2)
        assert len(test) == 30
        assert sorted(set(train) | set(test)) == list(range(100))


class TestLasso:
    def _problem(self, seed=0, n=400, p=6):
        rng = np.random.Generator(np.random.PCG64(seed))
        X = rng.standard_normal((n, p))
        w = np.array([2.0, -1.5, 0.0, 0.0, 0.5, 0.0])
        y = X @ w + 0.3 + rng.normal(0, 0.05, n)
        return X, y

    def test_zero_lambda_matches_ols(self):
        X, y = self._problem()
        lasso = fit_lasso(X, y, lam=0.0)
        Xb = np.column_stack([np.ones(len(y)), X])
        ols = fit_ols(Xb, y)
        assert lasso.intercept == pytest.approx(ols.coef[0], abs=1e-6)
        assert lasso.coef == pytest.approx(ols.coef[1:], abs=1e-6)

    def test_lambda_max_zeroes_everything(self):
        X, y = self._problem(1)
        lam_max = lasso_lambda_max(X, y)
        report = fit_lasso(X, y, lam=lam_max * 1.0001)
        assert report.active == ()
        assert np.all(report.coef_standardized == 0.0)

    def test_subgradient_optimality(self):
        X, y = self._problem(2)
        lam = 25.0
        report = fit_lasso(X, y, lam)
        Xs = (X - X.mean(axis=0)) / X.std(axis=0)
        residual = (y - y.mean()) - Xs @ report.coef_standardized
        grad = Xs.T @ residual
        for j in range(X.shape[1]):
            if j in report.active:
                assert abs(abs(grad[j]) - lam) <= 1e-6 * max(lam, 1.0)
            else:
                assert abs(grad[j]) <= lam + 1e-6

    def test_active_set_shrinks_along_path(self):
        X, y = self._problem(3)
        lam_max = lasso_lambda_max(X, y)
        sizes = []
        for lam in np.geomspace(lam_max * 1.1, lam_max * 1e-4, 25):
            sizes.append(len(fit_lasso(X, y, lam).active))
        assert all(b >= a for a, b in zip(sizes, sizes[1:]))

    def test_negative_lambda_rejected(self):
        X, y = self._problem(4)
        with pytest.raises(ValidationError):
            fit_lasso(X, y, lam=-1.0)


class TestRandomForest:
    def test_importances_sum_to_one(self):
        rng = np.random.Generator(np.random.PCG64(0))
        X = rng.standard_normal((300, 5))
        y = X[:, 2] + 0.1 * rng.standard_normal(300)
        model, _ = fit_random_forest(X, y, ForestParams(n_trees=30), seed=1)
        assert model.importances.sum() == pytest.approx(1.0, abs=1e-9)

    def test_planted_feature_recovery(self):
        rng = np.random.Generator(np.random.PCG64(1))
        X = rng.standard_normal((2000, 6))
        y = np.sin(2 * X[:, 3]) + 2 * X[:, 3]
        model, metrics = fit_random_forest(X, y, ForestParams(), seed=2)
        assert model.importances[3] >= 0.8
        assert metrics["pearson"] > 0.9

    def test_single_tree_interpolates(self):
        rng = np.random.Generator(np.random.PCG64(2))
        X = rng.standard_normal((64, 3))
        y = rng.standard_normal(64)
        params = ForestParams(n_trees=1, min_samples_leaf=1, bootstrap=False,
                              max_features=1.0, test_fraction=0.0)
        model, _ = fit_random_forest(X, y, params, seed=3)
        assert model.predict(X) == pytest.approx(y, abs=1e-12)

    def test_constant_target_flagged(self):
        rng = np.random.Generator(np.random.PCG64(3))
        X = rng.standard_normal((100, 4))
        model, metrics = fit_random_forest(X, np.ones(100),
                                           ForestParams(n_trees=10), seed=4)
        assert model.degenerate_target
        assert np.all(model.importances == 0.0)
        assert metrics["pearson"] is None

    def test_deterministic_given_seed(self):
        rng = np.random.Generator(np.random.PCG64(4))
        X = rng.standard_normal((300, 4))
        y = X[:, 0] + rng.standard_normal(300)
        params = ForestParams(n_trees=20)
        m1, r1 = fit_random_forest(X, y, params, seed=7)
        m2, r2 = fit_random_forest(X, y, params, seed=7)
        assert np.array_equal(m1.importances, m2.importances)
        assert r1 == r2

    def test_row_permutation_stability(self):
        rng = np.random.Generator(np.random.PCG64(5))
        X = rng.standard_normal((2000, 4))
        y = X[:, 1] ** 2 + 0.05 * rng.standard_normal(2000)
        params = ForestParams(n_trees=100)
        _, base = fit_random_forest(X, y, params, seed=8)
        order = rng.permutation(2000)
        _, permuted = fit_random_forest(X[order], y[order], params, seed=8)
        assert abs(base["pearson"] - permuted["pearson"]) <= 0.02

    def test_tree_structures_exposed(self):
        rng = np.random.Generator(np.random.PCG64(6))
        X = rng.standard_normal((100, 3))
        y = X[:, 0]
        model, _ = fit_random_forest(X, y, ForestParams(n_trees=5), seed=9)
        trees = model.trees()
        assert len(trees) == 5
        assert trees[0].feature is not None and trees[0].threshold is not None


class TestAblation:
    def test_full_model_row_shape(self):
        table = planted_nlpd_table(n=2000, seed=1)
        rows = ablation_study(table, ["NLPD"], mode="sequential", seed=0)
        assert rows[0].mask == (1,) * 9
        assert rows[0].n_terms == 9
        # Sequential drop stops at two terms (a bias-only model has no
        # defined correlation); one-term rows come from the lasso path.
        assert [r.n_terms for r in rows] == list(range(9, 1, -1))

    def test_planted_terms_survive_sequential_drop(self):
        table = planted_nlpd_table(n=10_000, seed=2)
        rows = ablation_study(table, ["NLPD"], mode="sequential", seed=0)
        four_term = next(r for r in rows if r.n_terms == 4)
        kept = {ABLATION_TERMS[i] for i, bit in enumerate(four_term.mask) if bit}
        assert kept == {"b", "p", "p2", "s"}
        # Qualitative ordering: rows still containing the planted terms
        # dominate rows that lost some of them.
        planted = {0, 1, 2, 3}
        full = [r.mean_correlation for r in rows
                if planted <= {i for i, b in enumerate(r.mask) if b}]
        partial = [r.mean_correlation for r in rows
                   if not planted <= {i for i, b in enumerate(r.mask) if b}]
        assert partial and min(full) > max(partial)

    def test_lasso_rows_hit_requested_sizes(self):
        table = planted_nlpd_table(n=2000, seed=3)
        rows = ablation_study(table, ["NLPD"], mode="lasso-path", seed=0)
        assert all(r.from_lasso for r in rows)
        assert all(r.mask[0] == 1 for r in rows)  # unpenalized bias stays
        sizes = [r.n_terms - 1 for r in rows]
        assert sizes == sorted(sizes, reverse=True)
        assert 1 in sizes  # smallest starred row has one active penalized term

    def test_unknown_mode_rejected(self):
        table = planted_nlpd_table(n=500, seed=4)
        with pytest.raises(ValidationError):
            ablation_study(table, ["NLPD"], mode="drop-all")

    def test_ablation_design_matches_canonical_terms(self):
        spec = ablation_feature_spec()
        assert spec.names() == list(ABLATION_TERMS)


class TestRegistry:
    def test_eq3_values_verbatim(self):
        assert functional_form_registry("MSSIM", "eq3").coefficients == \
            (29.5, 4.9e-3, 2.05e-7)
        assert functional_form_registry("PIM", "eq3").coefficients == \
            (15400.0, 2.62, 1.11e-4)

    def test_eq4_values_verbatim(self):
        assert functional_form_registry("NLPD", "eq4").coefficients == \
            (58.0, 8.19e-3, 3.09e-7, -3.74)

    def test_unknown_entries_rejected(self):
        with pytest.raises(ValidationError):
            functional_form_registry("SSIMULACRA", "eq3")
        with pytest.raises(ValidationError):
            functional_form_registry("NLPD", "eq5")

    def test_predict_mssim_eq3_at_minus_5000(self):
        model = functional_form_registry("MSSIM", "eq3")
        assert predict_sensitivity(model, -5000.0) == pytest.approx(10.125,
                                                                    abs=1e-9)

    def test_bias_only_point(self):
        for iqm in ("MSSIM", "NLPD", "PIM", "LPIPS", "DISTS"):
            model = functional_form_registry(iqm, "eq3")
            assert predict_sensitivity(model, 0.0) == model.coefficients[0]

    def test_eq4_is_eq3_plus_linear_sigma_term(self):
        model = functional_form_registry("NLPD", "eq4")
        w = model.coefficients
        direct = predict_sensitivity(model, -5000.0, 0.2)
        manual = (w[0] + w[1] * -5000.0 + w[2] * 25e6) + w[3] * 0.2
        assert direct == pytest.approx(manual, abs=1e-12)

    def test_eq4_requires_sigma(self):
        model = functional_form_registry("NLPD", "eq4")
        with pytest.raises(ValidationError):
            predict_sensitivity(model, -5000.0)


class TestPlantedRecovery:
    def test_ols_recovers_published_coefficients(self):
        table = planted_nlpd_table(n=10_000, seed=5)
        spec = FeatureSpec(terms=(
            FeatureTerm("b", "bias"),
            FeatureTerm("p", "identity", ("logp_xt",)),
            FeatureTerm("p2", "power", ("logp_xt",), 2),
            FeatureTerm("s", "identity", ("sigma_x",)),
        ))
        X = expand_features(table, spec)
        y = table.column("S_NLPD")
        report = fit_ols(X, y)
        expected = functional_form_registry("NLPD", "eq4").coefficients
        for fitted, true in zip(report.coef, expected):
            assert abs(fitted - true) <= 0.05 * abs(true)
