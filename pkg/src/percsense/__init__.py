"""Probability surrogates and perceptual-metric sensitivity analysis."""

from .data import (DatasetManifest, DescriptorRecord, ImagePair, ImageTensor,
                   JoinedTable, SensitivityRow, SensitivityTable,
                   convert_range, join_tables, load_manifest, save_manifest)
from .density import (ExternalLogProbTable, GaussianDensity, descriptor_record,
                      fit_gaussian, path_integral_logp)
from .distortion import (DistortionConfig, derive_pair_seed, distort,
                         distort_images, filter_pairs, sample_sphere_noise)
from .errors import (CapabilityError, ConvergenceError, DegenerateColumnError,
                     PercsenseError, RankDeficiencyError, SchemaError,
                     StageError, UndefinedSensitivityError, ValidationError)
from .infotheory import (MiResult, RbigConfig, conditional_histogram,
                         correlations, factor_sweep, icc, marginal_gaussianize,
                         mutual_information, rbig_total_correlation)
from .metrics import (MetricSpec, euclidean_rmse, ingest_external_distances,
                      ms_ssim, nlpd, sensitivity)
from .regression import (ABLATION_TERMS, FeatureSpec, FeatureTerm, ForestParams,
                         FunctionalFormModel, ablation_study, expand_features,
                         fit_lasso, fit_ols, fit_random_forest,
                         functional_form_registry, predict_sensitivity)

__version__ = "0.1.0"
