"""launderkit: forensic detection of autoencoder-laundered images.

Classifies images as real, fully synthetic, or laundered (real content pushed
through a generative autoencoder round trip) using noise-residual spectral
features, random patch sampling and a two-stage patch-score classifier.
"""

from .degradations import (
    FixtureConfig,
    PostProcOp,
    apply_postproc,
    gen_fully_synthetic,
    gen_laundered,
    gen_pristine,
    launder_proxy,
    parse_postproc,
    write_fixture_tree,
)
from .errors import (
    DataError,
    LaunderKitError,
    ScorerHandshakeError,
    ScorerLaunchError,
    ScorerProtocolError,
    ScorerResponseError,
    ScorerTimeoutError,
)
from .image import (
    ClassLabel,
    DatasetManifest,
    ImageBuffer,
    ManifestEntry,
    load_image,
    load_manifest,
    save_image,
    to_luminance,
    write_manifest,
)
from .metrics import (
    Histogram,
    MetricRow,
    ScoredItem,
    ba_max,
    confusion_at,
    histogram,
    metric_row,
    residual_retention,
    roc_auc,
    score_histogram,
)
from .patches import (
    Patch,
    SamplerConfig,
    aggregate_top_fraction,
    sample_patches,
    top_m,
)
from .pipeline import (
    ClassificationResult,
    EvalReport,
    TwoStageDetector,
    calibrate_pipeline,
    derive_seed,
    load_models,
    run_eval,
    save_models,
)
from .scorers import (
    ExternalPatchScorer,
    ExternalScorerConfig,
    LinearPatchScorer,
    calibrate,
    external_score,
)
from .spectral import (
    PeakReport,
    Residual,
    SpectralFeatures,
    Spectrum,
    average_spectrum,
    detect_peaks,
    extract_residual,
    feature_matrix,
    magnitude_spectrum,
    render_spectrum,
    spectral_features,
)

__version__ = "0.1.0"

__all__ = [
    "ClassLabel",
    "ClassificationResult",
    "DataError",
    "DatasetManifest",
    "EvalReport",
    "ExternalPatchScorer",
    "ExternalScorerConfig",
    "FixtureConfig",
    "Histogram",
    "ImageBuffer",
    "LaunderKitError",
    "LinearPatchScorer",
    "ManifestEntry",
    "MetricRow",
    "Patch",
    "PeakReport",
    "PostProcOp",
    "Residual",
    "SamplerConfig",
    "ScoredItem",
    "ScorerHandshakeError",
    "ScorerLaunchError",
    "ScorerProtocolError",
    "ScorerResponseError",
    "ScorerTimeoutError",
    "SpectralFeatures",
    "Spectrum",
    "TwoStageDetector",
    "aggregate_top_fraction",
    "apply_postproc",
    "average_spectrum",
    "ba_max",
    "calibrate",
    "calibrate_pipeline",
    "confusion_at",
    "derive_seed",
    "detect_peaks",
    "external_score",
    "extract_residual",
    "feature_matrix",
    "gen_fully_synthetic",
    "gen_laundered",
    "gen_pristine",
    "histogram",
    "launder_proxy",
    "load_image",
    "load_manifest",
    "load_models",
    "magnitude_spectrum",
    "metric_row",
    "parse_postproc",
    "render_spectrum",
    "residual_retention",
    "roc_auc",
    "run_eval",
    "sample_patches",
    "save_image",
    "save_models",
    "score_histogram",
    "spectral_features",
    "to_luminance",
    "top_m",
    "write_fixture_tree",
    "write_manifest",
]
