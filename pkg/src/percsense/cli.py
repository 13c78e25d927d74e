"""Command-line interface.

Exit codes: 0 success, 2 validation error, 3 stage failure.
"""

import json
import os
import sys

import click

from .data import (load_manifest, read_descriptors, read_joined,
                   read_sensitivities, join_tables, write_joined)
from .density import ExternalLogProbTable, GaussianDensity, fit_gaussian
from .distortion import DistortionConfig
from .errors import PercsenseError, StageError, ValidationError
from .infotheory import RbigConfig
from .metrics import MetricSpec
from .pipeline import (PLOT_FIGURES, RunConfig, ablation_stage, distort_stage,
                       emit_plot_data, fit_stage, hist_stage, metrics_stage,
                       mi_stage, run_pipeline, surrogates_stage)
from .regression import (FeatureSpec, FeatureTerm, ForestParams, fit_lasso,
                         functional_form_registry, predict_sensitivity)

EXIT_VALIDATION = 2
EXIT_STAGE = 3


@click.group()
def cli():
    """Probability surrogates vs. perceptual-metric sensitivity toolkit."""


def _fail(exc):
    click.echo(f"error: {exc}", err=True)
    if isinstance(exc, StageError):
        sys.exit(EXIT_STAGE)
    if isinstance(exc, ValidationError):
        sys.exit(EXIT_VALIDATION)
    sys.exit(1)


def _guarded(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PercsenseError as exc:
            _fail(exc)
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@cli.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--epsilon", default=0.2, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--rmse-min", default=0.0, show_default=True,
              help="Keep pairs with RMSE above this ([0,1] units).")
@click.option("--rmse-max", default=None, type=float)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--threads", default=1, show_default=True)
@_guarded
def distort(manifest_path, epsilon, seed, rmse_min, rmse_max, out_dir, threads):
    """Generate sphere-noise pairs and write an extended manifest."""
    manifest = load_manifest(manifest_path)
    cfg = DistortionConfig(epsilon=epsilon, seed=seed, rmse_min=rmse_min,
                           rmse_max=rmse_max)
    _, pairs = distort_stage(manifest, cfg, out_dir, threads)
    click.echo(f"kept {len(pairs)} pairs -> {out_dir}/manifest.json")


@cli.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--metric", "metric_arg", required=True,
              help="msssim | nlpd | rmse | external:FILE")
@click.option("--name", default=None,
              help="Metric name for external files (default: file stem).")
@click.option("--threads", default=1, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@_guarded
def metrics(manifest_path, metric_arg, name, threads, out_path):
    """Compute one metric's distances and sensitivities over manifest pairs."""
    manifest = load_manifest(manifest_path)
    if metric_arg.startswith("external:"):
        path = metric_arg[len("external:"):]
        metric_name = name or os.path.splitext(os.path.basename(path))[0]
        spec = MetricSpec(metric_name, "external-file", {"path": path})
    elif metric_arg in ("msssim", "nlpd", "rmse"):
        spec = MetricSpec(metric_arg, f"builtin-{metric_arg}")
    else:
        raise ValidationError(f"unknown metric {metric_arg!r}")
    table = metrics_stage(manifest, [spec], out_path, threads=threads)
    click.echo(f"wrote {len(table.rows)} rows -> {out_path}")


@cli.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--model", "model_arg", required=True,
              help="gaussian:FILE.npz | external:FILE.csv")
@click.option("--steps", default=16, show_default=True,
              help="Trapezoid intervals for the segment integral.")
@click.option("--fit-alpha", default=None, type=float,
              help="Fit a Gaussian on the manifest's reference images with "
                   "this shrinkage and save it to the gaussian: path first.")
@click.option("--out", "out_path", required=True, type=click.Path())
@_guarded
def surrogates(manifest_path, model_arg, steps, fit_alpha, out_path):
    """Compute the eight probability surrogates for every manifest pair."""
    manifest = load_manifest(manifest_path)
    if model_arg.startswith("gaussian:"):
        path = model_arg[len("gaussian:"):]
        if fit_alpha is not None:
            import numpy as np
            from .data import DIST_SUFFIX, load_image
            X = np.stack([load_image(manifest, e.id).data
                          for e in manifest.images
                          if not e.id.endswith(DIST_SUFFIX)])
            model = fit_gaussian(X, alpha=fit_alpha)
            model.save(path)
        elif os.path.exists(path):
            model = GaussianDensity.load(path)
        else:
            raise ValidationError(
                f"model file not found: {path} (use --fit-alpha to fit one)")
    elif model_arg.startswith("external:"):
        from .data import load_vector_payload
        gradients = {}
        for image_id, gpath in manifest.scores.gradients.items():
            entry = manifest.entry(image_id)
            gradients[image_id] = load_vector_payload(
                manifest.resolve(gpath),
                entry.height * entry.width * entry.channels)
        model = ExternalLogProbTable.from_csv(model_arg[len("external:"):],
                                              gradients)
    else:
        raise ValidationError(f"unknown model spec {model_arg!r}")
    records = surrogates_stage(manifest, model, steps, out_path)
    click.echo(f"wrote {len(records)} records -> {out_path}")


@cli.command()
@click.option("--descriptors", "descriptors_path", required=True,
              type=click.Path())
@click.option("--sensitivities", "sensitivities_path", required=True,
              type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@_guarded
def join(descriptors_path, sensitivities_path, out_path):
    """Join descriptor records with per-metric sensitivities."""
    records = read_descriptors(descriptors_path)
    table = read_sensitivities(sensitivities_path)
    joined = join_tables(records, table)
    write_joined(out_path, joined)
    click.echo(f"wrote {len(joined.pair_ids)} rows -> {out_path}")


@cli.command()
@click.option("--table", "table_path", required=True, type=click.Path())
@click.option("--metric", required=True)
@click.option("--max-factors", default=6, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@_guarded
def mi(table_path, metric, max_factors, seed, out_dir):
    """Greedy ICC factor sweep plus single/pairwise ICC matrices."""
    joined = read_joined(table_path)
    cfg = RbigConfig(rotation_seed=seed)
    sweep = mi_stage(joined, metric, cfg, max_factors, out_dir)
    for sel in sweep.selections:
        click.echo(f"{sel.size}D: {'+'.join(sel.factors)} icc={sel.icc:.3f}")


@cli.command()
@click.option("--table", "table_path", required=True, type=click.Path())
@click.option("--descriptor", required=True)
@click.option("--metric", required=True)
@click.option("--bins", default=30, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@_guarded
def hist(table_path, descriptor, metric, bins, out_path):
    """Conditional histogram of sensitivity given one descriptor."""
    joined = read_joined(table_path)
    result = hist_stage(joined, descriptor, metric, bins, out_path)
    click.echo(f"pearson={result.pearson:.3f} spearman={result.spearman:.3f} "
               f"-> {out_path}")


@cli.command()
@click.option("--table", "table_path", required=True, type=click.Path())
@click.option("--metric", required=True)
@click.option("--model", "model_kind", required=True,
              type=click.Choice(["rf", "ols", "lasso"]))
@click.option("--spec", "spec_path", default=None, type=click.Path(),
              help="Feature spec JSON (list of term objects); defaults per "
                   "model: rf order-2 polynomial, ols the two-factor closed "
                   "form, lasso the nine-term ablation universe.")
@click.option("--lam", default=1.0, show_default=True,
              help="LASSO regularization weight.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@_guarded
def fit(table_path, metric, model_kind, spec_path, lam, seed, out_dir):
    """Fit a regression model predicting one metric's sensitivity."""
    joined = read_joined(table_path)
    if spec_path is None:
        fit_default_models(joined, metric, model_kind, lam, seed, out_dir)
        return
    from .data import write_csv
    from .regression import (expand_features, fit_ols_holdout,
                             fit_random_forest)

    spec = load_feature_spec(spec_path)
    y = joined.column(f"S_{metric}")
    os.makedirs(out_dir, exist_ok=True)
    if model_kind == "ols":
        X = expand_features(joined, spec)
        report = fit_ols_holdout(X, y, seed=seed, allow_rank_deficient=True)
        write_csv(os.path.join(out_dir, f"ols_{metric}_coefficients.csv"),
                  ["term", "coefficient"],
                  [[name, float(c)] for name, c in zip(spec.names(),
                                                       report.coef)])
        write_csv(os.path.join(out_dir, f"ols_{metric}_metrics.csv"),
                  ["pearson_test", "spearman_test"],
                  [[report.pearson_test, report.spearman_test]])
        click.echo(f"wrote ols report -> {out_dir}")
        return
    terms = tuple(t for t in spec.terms if t.kind != "bias")
    X = expand_features(joined, FeatureSpec(terms=terms))
    names = [t.name for t in terms]
    if model_kind == "rf":
        import numpy as np
        model, metrics_report = fit_random_forest(X, y, ForestParams(), seed)
        order = np.argsort(model.importances)[::-1]
        write_csv(os.path.join(out_dir, f"rf_{metric}_importances.csv"),
                  ["feature", "importance"],
                  [[names[i], float(model.importances[i])] for i in order])
        write_csv(os.path.join(out_dir, f"rf_{metric}_metrics.csv"),
                  ["pearson_test", "spearman_test", "n_trees", "seed"],
                  [[metrics_report["pearson"], metrics_report["spearman"],
                    model.params.n_trees, seed]])
        click.echo(f"wrote rf report -> {out_dir}")
        return
    report = fit_lasso(X, y, lam)
    out_path = os.path.join(out_dir, f"lasso_{metric}.csv")
    write_csv(out_path, ["term", "coefficient", "active"],
              [[t.name, float(c), int(i in report.active)]
               for i, (t, c) in enumerate(zip(terms, report.coef))])
    click.echo(f"intercept={report.intercept:.6g} "
               f"active={len(report.active)} -> {out_path}")


def fit_default_models(joined, metric, model_kind, lam, seed, out_dir):
    if model_kind in ("rf", "ols"):
        fit_stage(joined, metric, [model_kind], ForestParams(), seed, out_dir)
        click.echo(f"wrote {model_kind} report -> {out_dir}")
        return
    from .data import write_csv
    from .regression import ablation_feature_spec, expand_features

    spec = ablation_feature_spec()
    terms = tuple(t for t in spec.terms if t.kind != "bias")
    X = expand_features(joined, FeatureSpec(terms=terms))
    y = joined.column(f"S_{metric}")
    report = fit_lasso(X, y, lam)
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, f"lasso_{metric}.csv")
    write_csv(out_path, ["term", "coefficient", "active"],
              [[t.name, float(c), int(i in report.active)]
               for i, (t, c) in enumerate(zip(terms, report.coef))])
    click.echo(f"intercept={report.intercept:.6g} "
               f"active={len(report.active)} -> {out_path}")


def load_feature_spec(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, list):
        raise ValidationError("feature spec must be a JSON list of terms")
    terms = []
    for i, item in enumerate(doc):
        try:
            terms.append(FeatureTerm(
                name=item["name"], kind=item["kind"],
                columns=tuple(item.get("columns", ())),
                param=item.get("param"),
            ))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"feature spec entry {i}: {exc}") from exc
    return FeatureSpec(terms=tuple(terms))


@cli.command()
@click.option("--table", "table_path", required=True, type=click.Path())
@click.option("--mode", default="both", show_default=True,
              type=click.Choice(["sequential", "lasso-path", "both"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@_guarded
def ablate(table_path, mode, seed, out_path):
    """Emit the term-ablation report over the nine-term universe."""
    joined = read_joined(table_path)
    if mode == "both":
        rows = ablation_stage(joined, out_path, seed)
    else:
        from .data import write_csv
        from .regression import ABLATION_TERMS, ablation_study
        rows = ablation_study(joined, mode=mode, seed=seed)
        metric_names = [c[2:] for c in joined.metric_columns()]
        write_csv(out_path,
                  list(ABLATION_TERMS) + metric_names + ["mean", "n_terms",
                                                         "lasso"],
                  [list(r.mask) + [r.per_metric[m] for m in metric_names]
                   + [r.mean_correlation, r.n_terms, int(r.from_lasso)]
                   for r in rows])
    click.echo(f"wrote {len(rows)} model rows -> {out_path}")


@cli.command()
@click.option("--iqm", required=True)
@click.option("--form", required=True, type=click.Choice(["eq3", "eq4"]))
@click.option("--logp", required=True, type=float)
@click.option("--sigma", default=None, type=float)
@_guarded
def predict(iqm, form, logp, sigma):
    """Evaluate a published closed-form sensitivity predictor."""
    model = functional_form_registry(iqm, form)
    click.echo(repr(predict_sensitivity(model, logp, sigma)))


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=None, type=int,
              help="Override the config's global seed.")
@click.option("--threads", default=None, type=int)
@_guarded
def run(config_path, out_dir, seed, threads):
    """Run the full pipeline from a config file into a report bundle."""
    config = RunConfig.from_file(config_path)
    if seed is not None:
        doc = dict(config.raw)
        doc["seed"] = seed
        config = RunConfig(doc, base_dir=config.base_dir)
    run_pipeline(config, out_dir, threads)
    click.echo(f"bundle complete -> {out_dir}")


@cli.command("emit-plots")
@click.option("--bundle", "bundle_dir", required=True, type=click.Path())
@click.option("--figure", required=True, type=click.Choice(PLOT_FIGURES))
@click.option("--metric", default=None)
@click.option("--descriptor", default=None)
@click.option("--top-k", default=6, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@_guarded
def emit_plots(bundle_dir, figure, metric, descriptor, top_k, out_path):
    """Reshape bundle tables into plot-ready long-form CSVs."""
    emit_plot_data(bundle_dir, figure, out_path, metric, descriptor, top_k)
    click.echo(f"wrote {out_path}")


def main():
    try:
        cli(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_VALIDATION)
    except click.exceptions.Abort:
        sys.exit(1)
    except PercsenseError as exc:
        _fail(exc)


if __name__ == "__main__":
    main()
