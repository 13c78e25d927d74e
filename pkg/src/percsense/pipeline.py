"""End-to-end orchestration: distort -> metrics -> surrogates -> join ->
mi/hist/fit/ablate, driven by one JSON config, emitting a reproducible
report bundle.

Bundle layout under the output directory::

    run_metadata.json      every resolved default and convention; the
                           "timestamp" field is the only run-varying value
    manifest.json          extended manifest (originals + distorted + pairs)
    payloads/*.f32         distorted image payloads
    distances.csv          pair_id,metric,distance,rmse,sensitivity
    descriptors.csv        the eight surrogates per pair
    joined.csv             descriptors joined with S_<metric> columns
    mi/…                   per-metric sweep, selection, single and pair ICCs
    hist/…                 conditional histograms + correlation sidecars
    fit/…                  forest importances / OLS coefficients per metric
    ablation.csv           term-mask rows with per-metric correlations

Stage seeds are derived from the global seed with the same 64-bit mix used
for per-pair seeds, so reruns (any thread count) are byte-identical except
the metadata timestamp.
"""

import datetime
import json
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .data import (DIST_SUFFIX, DatasetManifest, ImageEntry, ImagePair,
                   ImageTensor, PairEntry, ScoreFiles, SensitivityTable,
                   join_tables, load_image, load_manifest, load_pair,
                   load_vector_payload, read_csv, rmse_unit_range,
                   save_manifest, save_payload, write_csv,
                   write_descriptors, write_joined, write_sensitivities)
from .density import (ExternalLogProbTable, descriptor_records,
                      fit_gaussian)
from .distortion import (DistortionConfig, derive_pair_seed, distort_images,
                         distorted_id, filter_pairs)
from .errors import PercsenseError, StageError, ValidationError
from .infotheory import (RbigConfig, conditional_histogram, factor_sweep,
                         pairwise_icc)
from .metrics import (BUILTIN_KINDS, MetricSpec, evaluate_builtin,
                      ingest_external_distances, pair_geometry)
from .regression import (ABLATION_TERMS, FeatureSpec, FeatureTerm,
                         ForestParams, ablation_study, expand_features,
                         fit_ols_holdout, fit_random_forest,
                         polynomial_feature_spec)

LN2 = float(np.log(2.0))

MSSSIM_CONVENTION = "computed in [0,1] space, per channel, averaged"
NLPD_CONVENTION = "computed in canonical [-1,1] space, per channel, averaged"
CONVENTIONS = {
    "canonical_range": "[-1,1]",
    "rmse_units": "[0,1]-range (canonical differences divided by 2)",
    "sensitivity_denominator": "raw L2 norm in canonical units",
    "dir_proj_order": "(x - xt)^T J(x)",
    "path_integral": "segment average (length-normalized), trapezoid rule",
    "logp_units": "nats",
    "fractional_powers_of_logp": "applied to the negative log-likelihood",
    "pair_seed_scheme": "blake2b('<seed>\\x1f<image_id>', 8 bytes, little-endian)",
    "msssim": MSSSIM_CONVENTION,
    "nlpd": NLPD_CONVENTION,
    "ablation_tie_break": "ties within 1e-4 drop the later canonical term",
    "sweep_tie_break": "exact ties keep the earlier table column",
}


class RunConfig:
    """Validated run configuration (see README for the JSON schema)."""

    def __init__(self, doc, base_dir="."):
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object")
        self.base_dir = base_dir
        self.seed = int(doc.get("seed", 0))
        self.threads = int(doc.get("threads", 1))
        self.manifest_path = self._resolve(self._need(doc, "manifest", str))

        dist = doc.get("distortion", {})
        self.distortion = DistortionConfig(
            epsilon=float(dist.get("epsilon", 0.2)),
            seed=int(dist.get("seed", self._stage_seed("distort"))),
            rmse_min=float(dist.get("rmse_min", 0.0)),
            rmse_max=dist.get("rmse_max"),
        )

        self.metric_specs = []
        for i, m in enumerate(doc.get("metrics", [])):
            if not isinstance(m, dict) or "name" not in m or "kind" not in m:
                raise ValidationError(f"metrics[{i}] needs name and kind")
            params = dict(m.get("params", {}))
            if m["kind"] == "external-file":
                params["path"] = self._resolve(params.get("path", ""))
            self.metric_specs.append(MetricSpec(m["name"], m["kind"], params))
        if not self.metric_specs:
            raise ValidationError("config lists no metrics")
        names = [s.name for s in self.metric_specs]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate metric names in config: {names}")

        dens = doc.get("density", {"kind": "gaussian"})
        self.density_kind = dens.get("kind")
        if self.density_kind == "gaussian":
            self.density_alpha = float(dens.get("alpha", 0.5))
            self.density_logprobs = None
        elif self.density_kind == "external":
            # Falls back to the manifest's scores.logprobs entry when unset.
            self.density_alpha = None
            self.density_logprobs = (self._resolve(dens["logprobs"])
                                     if "logprobs" in dens else None)
        else:
            raise ValidationError(f"unknown density kind {self.density_kind!r}")
        self.n_steps = int(dens.get("n_steps", 16))

        rbig = doc.get("rbig", {})
        self.rbig = RbigConfig(
            n_layers=int(rbig.get("n_layers", 100)),
            marginal_bins=int(rbig.get("marginal_bins", 100)),
            rotation_seed=int(rbig.get("rotation_seed", self._stage_seed("rbig"))),
            tc_tolerance=float(rbig.get("tc_tolerance", 1e-3)),
            min_samples=int(rbig.get("min_samples", 100)),
        )

        analysis = doc.get("analysis", {})
        self.max_factors = int(analysis.get("max_factors", 4))
        self.hist_bins = int(analysis.get("hist_bins", 30))
        self.hist_descriptors = list(analysis.get("hist_descriptors",
                                                  ["logp_xt", "sigma_x"]))

        reg = doc.get("regression", {})
        self.fit_models = list(reg.get("models", ["rf", "ols"]))
        rf = reg.get("rf", {})
        self.forest_params = ForestParams(
            n_trees=int(rf.get("n_trees", 200)),
            max_depth=rf.get("max_depth"),
            min_samples_leaf=int(rf.get("min_samples_leaf", 5)),
            max_features=float(rf.get("max_features", 1.0 / 3.0)),
            bootstrap=bool(rf.get("bootstrap", True)),
            test_fraction=float(rf.get("test_fraction", 0.3)),
        )
        self.run_ablation = bool(reg.get("ablate", True))
        self.raw = doc

    def _need(self, doc, key, types):
        if key not in doc or not isinstance(doc[key], types):
            raise ValidationError(f"config field {key!r} missing or mistyped")
        return doc[key]

    def _resolve(self, path):
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def _stage_seed(self, stage):
        return derive_pair_seed(self.seed, f"stage:{stage}")

    @classmethod
    def from_file(cls, path):
        if not os.path.exists(path):
            raise ValidationError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"config is not valid JSON: {exc}") from exc
        return cls(doc, base_dir=os.path.dirname(os.path.abspath(path)))


# ---------------------------------------------------------------------------
# Stage implementations (shared by the CLI subcommands)
# ---------------------------------------------------------------------------

def distort_stage(manifest, cfg: DistortionConfig, out_dir, threads=1):
    """Distort every image, filter by RMSE and write the extended manifest.

    Distorted tensors are rounded through the float32 storage dtype before
    the RMSE is recorded, so every downstream number is recomputable from
    the written payloads bit-exactly.  Entries that are themselves distorted
    twins (id suffix) are skipped, so re-running on an extended manifest is
    safe.
    """
    images = [(e.id, load_image(manifest, e.id)) for e in manifest.images
              if not e.id.endswith(DIST_SUFFIX)]
    pairs = []
    for pair in distort_images(images, cfg, threads):
        stored = ImageTensor(
            pair.distorted.data.astype("<f4").astype(np.float64),
            pair.distorted.height, pair.distorted.width,
            pair.distorted.channels, pair.distorted.range,
        )
        pairs.append(ImagePair(
            reference=pair.reference, distorted=stored, epsilon=pair.epsilon,
            rmse=rmse_unit_range(pair.reference, stored),
            pair_id=pair.pair_id,
        ))
    kept = filter_pairs(pairs, cfg)

    payload_dir = os.path.join(out_dir, "payloads")
    os.makedirs(payload_dir, exist_ok=True)
    entries, pair_entries = [], []
    for entry in manifest.images:
        if entry.id.endswith(DIST_SUFFIX):
            continue  # stale twins are regenerated below
        rel = os.path.relpath(manifest.resolve(entry.path), out_dir)
        entries.append(ImageEntry(entry.id, rel, entry.height, entry.width,
                                  entry.channels, entry.range))
    for pair in kept:
        dist_id = distorted_id(pair.pair_id)
        rel = os.path.join("payloads", f"{dist_id}.f32")
        save_payload(os.path.join(out_dir, rel), pair.distorted)
        ref = manifest.entry(pair.pair_id)
        entries.append(ImageEntry(dist_id, rel, ref.height, ref.width,
                                  ref.channels, ref.range))
        pair_entries.append(PairEntry(
            pair_id=pair.pair_id, reference=pair.pair_id, distorted=dist_id,
            epsilon=pair.epsilon, rmse=pair.rmse,
        ))

    def score_rel(path):
        return os.path.relpath(manifest.resolve(path), out_dir)

    scores = ScoreFiles(
        logprobs=score_rel(manifest.scores.logprobs)
        if manifest.scores.logprobs else None,
        distances={k: score_rel(v)
                   for k, v in manifest.scores.distances.items()},
        gradients={k: score_rel(v)
                   for k, v in manifest.scores.gradients.items()},
    )
    extended = DatasetManifest(
        schema_version=manifest.schema_version,
        images=tuple(entries),
        pairs=tuple(pair_entries),
        scores=scores,
        provenance={
            **manifest.provenance,
            "epsilon": cfg.epsilon,
            "distortion_seed": cfg.seed,
            "rmse_min": cfg.rmse_min,
            "rmse_max": cfg.rmse_max,
            "pairs_total": len(pairs),
            "pairs_kept": len(kept),
        },
        base_dir=out_dir,
    )
    save_manifest(os.path.join(out_dir, "manifest.json"), extended)
    return extended, kept


def metrics_stage(manifest, specs, out_path, pairs=None, threads=1):
    """Evaluate every metric spec over the manifest's pairs; write the CSV.

    Builtin metrics are pure per pair, so evaluation parallelizes over pairs
    without affecting row order or values.
    """
    if not manifest.pairs:
        raise ValidationError("manifest has no pairs; run distort first")
    if pairs is None:
        pairs = [load_pair(manifest, p) for p in manifest.pairs]
    table = SensitivityTable()
    for spec in specs:
        if spec.kind in BUILTIN_KINDS:
            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    rows = list(pool.map(
                        lambda pair: evaluate_builtin(spec, pair), pairs))
            else:
                rows = [evaluate_builtin(spec, pair) for pair in pairs]
            table.extend(rows)
        else:
            part = ingest_external_distances(spec.params["path"], spec.name,
                                             pair_geometry(pairs))
            table.extend(part.rows)
    write_sensitivities(out_path, table)
    return table


def build_density_model(config: RunConfig, manifest):
    if config.density_kind == "gaussian":
        X = np.stack([load_image(manifest, e.id).data
                      for e in manifest.images
                      if not e.id.endswith(DIST_SUFFIX)])
        return fit_gaussian(X, alpha=config.density_alpha)
    logprobs = config.density_logprobs
    if logprobs is None:
        if not manifest.scores.logprobs:
            raise ValidationError(
                "external density needs density.logprobs in the config or a "
                "scores.logprobs entry in the manifest")
        logprobs = manifest.resolve(manifest.scores.logprobs)
    gradients = {}
    for image_id, path in manifest.scores.gradients.items():
        entry = manifest.entry(image_id)
        expected = entry.height * entry.width * entry.channels
        gradients[image_id] = load_vector_payload(manifest.resolve(path),
                                                  expected)
    return ExternalLogProbTable.from_csv(logprobs, gradients)


def surrogates_stage(manifest, model, n_steps, out_path, pairs=None):
    if not manifest.pairs:
        raise ValidationError("manifest has no pairs; run distort first")
    if pairs is None:
        pairs = [load_pair(manifest, p) for p in manifest.pairs]
    records = descriptor_records(model, pairs, n_steps)
    write_descriptors(out_path, records)
    return records


def mi_stage(joined, metric, cfg, max_factors, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    candidates = joined.complete_columns(joined.descriptor_columns())
    max_factors = min(max_factors, len(candidates))
    sweep = factor_sweep(joined, metric, max_factors, cfg, candidates)
    write_csv(
        os.path.join(out_dir, f"sweep_{metric}.csv"),
        ["size", "candidate", "factors", "mi_nats", "mi_bits", "icc"],
        [[s.size, s.candidate, "+".join(s.factors), s.mi_nats,
          s.mi_nats / LN2, s.icc] for s in sweep.steps],
    )
    write_csv(
        os.path.join(out_dir, f"table3_{metric}.csv"),
        ["size", "factors", "mi_nats", "mi_bits", "icc", "tie_with"],
        [[s.size, "+".join(s.factors), s.mi_nats, s.mi_nats / LN2, s.icc,
          "+".join(s.tie_with)] for s in sweep.selections],
    )
    singles = {st.candidate: (st.mi_nats, st.icc)
               for st in sweep.steps if st.size == 1}
    write_csv(
        os.path.join(out_dir, f"singles_{metric}.csv"),
        ["factor", "mi_nats", "mi_bits", "icc"],
        [[c, mi, mi / LN2, i] for c, (mi, i) in singles.items()],
    )
    pairs = pairwise_icc(joined, metric, cfg, candidates)
    write_csv(
        os.path.join(out_dir, f"pairs_{metric}.csv"),
        ["factor_i", "factor_j", "icc"],
        [[a, b, v] for (a, b), v in pairs.items()],
    )
    return sweep


def hist_stage(joined, descriptor, metric, bins, out_path):
    hist = conditional_histogram(joined.column(descriptor),
                                 joined.column(f"S_{metric}"), bins)
    header = ["s_bin"] + [f"x_bin_{j}" for j in range(bins)]
    rows = [[i] + list(hist.matrix[i]) for i in range(bins)]
    write_csv(out_path, header, rows)
    sidecar = {
        "descriptor": descriptor,
        "metric": metric,
        "bins": bins,
        "pearson": hist.pearson,
        "spearman": hist.spearman,
        "x_edges": list(hist.x_edges),
        "s_edges": list(hist.s_edges),
        "empty_columns": list(hist.empty_columns),
    }
    with open(out_path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return hist


def fit_stage(joined, metric, models, forest_params, seed, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    y = joined.column(f"S_{metric}")
    columns = joined.complete_columns(joined.descriptor_columns())
    results = {}
    if "rf" in models:
        spec = polynomial_feature_spec(columns)
        X = expand_features(joined, FeatureSpec(terms=tuple(
            t for t in spec.terms if t.kind != "bias")))
        names = [t.name for t in spec.terms if t.kind != "bias"]
        model, metrics = fit_random_forest(X, y, forest_params, seed)
        order = np.argsort(model.importances)[::-1]
        write_csv(
            os.path.join(out_dir, f"rf_{metric}_importances.csv"),
            ["feature", "importance"],
            [[names[i], float(model.importances[i])] for i in order],
        )
        write_csv(
            os.path.join(out_dir, f"rf_{metric}_metrics.csv"),
            ["pearson_test", "spearman_test", "n_trees", "seed"],
            [[metrics["pearson"], metrics["spearman"],
              forest_params.n_trees, seed]],
        )
        results["rf"] = (model, metrics)
    if "ols" in models and {"logp_xt", "sigma_x"} <= set(columns):
        spec = FeatureSpec(terms=(
            FeatureTerm("b", "bias"),
            FeatureTerm("p", "identity", ("logp_xt",)),
            FeatureTerm("p2", "power", ("logp_xt",), 2),
            FeatureTerm("s", "identity", ("sigma_x",)),
        ))
        X = expand_features(joined, spec)
        report = fit_ols_holdout(X, y, forest_params.test_fraction, seed,
                                 allow_rank_deficient=True)
        write_csv(
            os.path.join(out_dir, f"ols_{metric}_coefficients.csv"),
            ["term", "coefficient"],
            [[name, float(c)] for name, c in zip(spec.names(), report.coef)],
        )
        write_csv(
            os.path.join(out_dir, f"ols_{metric}_metrics.csv"),
            ["pearson_test", "spearman_test"],
            [[report.pearson_test, report.spearman_test]],
        )
        results["ols"] = report
    return results


def ablation_stage(joined, out_path, seed):
    rows = ablation_study(joined, mode="sequential", seed=seed)
    lasso_rows = ablation_study(joined, mode="lasso-path", seed=seed)
    metrics = [c[2:] for c in joined.metric_columns()]
    header = list(ABLATION_TERMS) + metrics + ["mean", "n_terms", "lasso"]
    all_rows = sorted(rows + lasso_rows, key=lambda r: -r.n_terms)
    write_csv(out_path, header, [
        list(r.mask) + [r.per_metric[m] for m in metrics]
        + [r.mean_correlation, r.n_terms, int(r.from_lasso)]
        for r in all_rows
    ])
    return all_rows


def run_pipeline(config: RunConfig, out_dir, threads=None):
    """Run every stage; on failure raise StageError naming the stage while
    keeping the partial outputs already written."""
    threads = threads or config.threads
    os.makedirs(out_dir, exist_ok=True)

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PercsenseError:
            raise
        except Exception as exc:  # noqa: BLE001 - stage boundary
            raise StageError(name, str(exc)) from exc

    manifest = load_manifest(config.manifest_path)

    extended, pairs = stage("distort", distort_stage, manifest,
                            config.distortion, out_dir, threads)
    if not pairs:
        raise StageError("distort", "no pairs survive the RMSE filter")

    # Manifest-carried external distance files join the configured metrics.
    specs = list(config.metric_specs)
    configured = {s.name for s in specs}
    for name, path in extended.scores.distances.items():
        if name not in configured:
            specs.append(MetricSpec(name, "external-file",
                                    {"path": extended.resolve(path)}))
    table = stage("metrics", metrics_stage, extended, specs,
                  os.path.join(out_dir, "distances.csv"), pairs, threads)

    model = stage("surrogates", build_density_model, config, extended)
    records = stage("surrogates", surrogates_stage, extended, model,
                    config.n_steps, os.path.join(out_dir, "descriptors.csv"),
                    pairs)

    joined = stage("join", join_tables, records, table)
    if not joined.pair_ids:
        raise StageError("join", "no pairs shared by descriptors and distances")
    write_joined(os.path.join(out_dir, "joined.csv"), joined)

    metric_names = [c[2:] for c in joined.metric_columns()]
    sweeps = {}
    for metric in metric_names:
        sweeps[metric] = stage("mi", mi_stage, joined, metric, config.rbig,
                               config.max_factors, os.path.join(out_dir, "mi"))

    os.makedirs(os.path.join(out_dir, "hist"), exist_ok=True)
    for metric in metric_names:
        for descriptor in config.hist_descriptors:
            if descriptor not in joined.descriptor_columns():
                continue
            stage("hist", hist_stage, joined, descriptor, metric,
                  config.hist_bins,
                  os.path.join(out_dir, "hist", f"{descriptor}_{metric}.csv"))

    fit_seed = derive_pair_seed(config.seed, "stage:fit")
    for metric in metric_names:
        stage("fit", fit_stage, joined, metric, config.fit_models,
              config.forest_params, fit_seed, os.path.join(out_dir, "fit"))

    if config.run_ablation and {"logp_xt", "sigma_x"} <= set(
            joined.complete_columns(joined.descriptor_columns())):
        stage("ablate", ablation_stage, joined,
              os.path.join(out_dir, "ablation.csv"), fit_seed)

    metadata = {
        "schema_version": 1,
        "package_version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": config.seed,
        "config": config.raw,
        "conventions": CONVENTIONS,
        "resolved": {
            "distortion": {
                "epsilon": config.distortion.epsilon,
                "seed": config.distortion.seed,
                "rmse_min": config.distortion.rmse_min,
                "rmse_max": config.distortion.rmse_max,
            },
            "metrics": [
                {"name": s.name, "kind": s.kind, "params": s.resolved_params()}
                for s in config.metric_specs
            ],
            "density": {
                "kind": config.density_kind,
                "alpha": config.density_alpha,
                "n_steps": config.n_steps,
            },
            "rbig": {
                "n_layers": config.rbig.n_layers,
                "marginal_bins": config.rbig.marginal_bins,
                "rotation_seed": config.rbig.rotation_seed,
                "tc_tolerance": config.rbig.tc_tolerance,
                "min_samples": config.rbig.min_samples,
                "null_replicates": config.rbig.null_replicates,
                "stop_window": config.rbig.stop_window,
            },
            "regression": {
                "models": config.fit_models,
                "forest": vars(config.forest_params).copy(),
                "fit_seed": fit_seed,
            },
            "analysis": {
                "max_factors": config.max_factors,
                "hist_bins": config.hist_bins,
                "hist_descriptors": config.hist_descriptors,
            },
        },
        "counts": {
            "images": len(manifest.images),
            "pairs_kept": len(pairs),
        },
    }
    with open(os.path.join(out_dir, "run_metadata.json"), "w",
              encoding="utf-8") as fh:
        json.dump(metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir


# ---------------------------------------------------------------------------
# Plot-ready reshapes
# ---------------------------------------------------------------------------

PLOT_FIGURES = ("cond-hist", "icc-bars", "icc-pairs", "importances")


def emit_plot_data(bundle_dir, figure, out_path, metric=None, descriptor=None,
                   top_k=6):
    """Reshape bundle tables into long-form plot CSVs; no rendering."""
    if figure not in PLOT_FIGURES:
        raise ValidationError(f"unknown figure {figure!r}; "
                              f"expected one of {PLOT_FIGURES}")
    if figure == "cond-hist":
        if not (metric and descriptor):
            raise ValidationError("cond-hist needs --metric and --descriptor")
        path = os.path.join(bundle_dir, "hist", f"{descriptor}_{metric}.csv")
        if not os.path.exists(path):
            raise ValidationError(f"missing histogram table: {path}")
        header, rows = read_csv(path)
        out_rows = []
        for row in rows:
            s_bin = int(row[0])
            for j, cell in enumerate(row[1:]):
                out_rows.append([j, s_bin, float(cell)])
        write_csv(out_path, ["x_bin", "s_bin", "mass"], out_rows)
    elif figure == "icc-bars":
        mi_dir = os.path.join(bundle_dir, "mi")
        if not os.path.isdir(mi_dir):
            raise ValidationError(f"missing mi tables under {mi_dir}")
        out_rows = []
        for name in sorted(os.listdir(mi_dir)):
            if not name.startswith("singles_"):
                continue
            metric_name = name[len("singles_"):-len(".csv")]
            _, rows = read_csv(os.path.join(mi_dir, name))
            for row in rows:
                out_rows.append([metric_name, row[0], float(row[3])])
        if not out_rows:
            raise ValidationError("no single-factor ICC tables in bundle")
        write_csv(out_path, ["metric", "factor", "icc"], out_rows)
    elif figure == "icc-pairs":
        if not metric:
            raise ValidationError("icc-pairs needs --metric")
        path = os.path.join(bundle_dir, "mi", f"pairs_{metric}.csv")
        if not os.path.exists(path):
            raise ValidationError(f"missing pairwise ICC table: {path}")
        _, rows = read_csv(path)
        write_csv(out_path, ["factor_i", "factor_j", "icc"],
                  [[r[0], r[1], float(r[2])] for r in rows])
    else:  # importances
        if not metric:
            raise ValidationError("importances needs --metric")
        path = os.path.join(bundle_dir, "fit", f"rf_{metric}_importances.csv")
        if not os.path.exists(path):
            raise ValidationError(f"missing importance table: {path}")
        _, rows = read_csv(path)
        out_rows = [[i + 1, r[0], float(r[1])] for i, r in enumerate(rows[:top_k])]
        write_csv(out_path, ["rank", "feature", "importance"], out_rows)
    return out_path
