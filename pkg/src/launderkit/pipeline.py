"""Two-stage classification, batch evaluation and model persistence.

Stage 1 separates real images from synthetic ones of any kind; images passing
stage 1 go to stage 2, which separates laundered from fully synthetic.  Both
stages share one random patch sample per image unless resampling is requested,
so their image scores differ only by scorer.

Evaluation notes:
  * stage-2 metrics are computed over ground-truth synthetic items only,
    independently of stage-1 decisions (pristine items are assumed filtered
    out when judging stage 2);
  * per-image randomness derives from (seed, manifest index), so reports are
    byte-identical across runs and worker counts;
  * wall-clock timing never enters the report for the same reason.
"""

import concurrent.futures
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._base import ParamsMixin, check_fitted
from .degradations import apply_postproc
from .errors import DataError
from .image import (
    ClassLabel,
    SYNTHETIC_LABELS,
    load_image,
)
from .metrics import ScoredItem, metric_row, score_histogram
from .patches import (
    DEFAULT_N_PATCHES,
    DEFAULT_PATCH_SIZE,
    DEFAULT_TOP_FRACTION,
    SamplerConfig,
    aggregate_top_fraction,
    sample_patches,
)
from .scorers import ExternalPatchScorer, LinearPatchScorer
from .spectral import DEFAULT_FACTOR

MODELS_FORMAT = "launderkit-models-v1"
LABEL_ORDER = (ClassLabel.REAL, ClassLabel.FULLY_SYNTHETIC, ClassLabel.LAUNDERED)
STAGE1_POSITIVE = "synthetic"  # either synthetic class
DEFAULT_HISTOGRAM_BINS = 20


def derive_seed(*parts):
    """Fold integers into one 64-bit stream seed, order sensitive."""
    ss = np.random.SeedSequence([int(p) & (2**63 - 1) for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class ClassificationResult:
    """Outcome for one image; s2 is None exactly when the label is REAL."""

    label: ClassLabel
    s1: float
    s2: float = None

    def to_dict(self):
        d = {"label": self.label.value, "s1": self.s1}
        if self.s2 is not None:
            d["s2"] = self.s2
        return d


class TwoStageDetector(ParamsMixin):
    """Patch-based real / fully-synthetic / laundered classifier.

    Parameters
    ----------
    n_patches, patch_size, top_fraction : patch sampling and aggregation.
    stage1_threshold, stage2_threshold : decision points (score >= threshold
        is positive); 0 matches the calibration midpoint convention.
    denoiser, sigma, factor : feature extraction for calibrated scorers.
    seed : base seed; per-image sampling derives from (seed, image index).
    resample_stage2 : draw a fresh patch sample for stage 2 instead of
        reusing stage 1's.
    stage1, stage2 : optional prefit scorer objects (e.g. external scorers);
        fit keeps them as-is instead of calibrating.
    stage1_exclude_laundered : calibrate stage 1 on real vs fully-synthetic
        only, emulating a detector that never saw laundered data.

    Fitted attributes: stage1_, stage2_ (scorers), classes_, train_paths_.
    """

    def __init__(self, n_patches=DEFAULT_N_PATCHES, patch_size=DEFAULT_PATCH_SIZE,
                 top_fraction=DEFAULT_TOP_FRACTION, stage1_threshold=0.0,
                 stage2_threshold=0.0, denoiser="median3", sigma=1.0,
                 factor=DEFAULT_FACTOR, seed=0, resample_stage2=False,
                 stage1=None, stage2=None, stage1_exclude_laundered=False):
        self.n_patches = n_patches
        self.patch_size = patch_size
        self.top_fraction = top_fraction
        self.stage1_threshold = stage1_threshold
        self.stage2_threshold = stage2_threshold
        self.denoiser = denoiser
        self.sigma = sigma
        self.factor = factor
        self.seed = seed
        self.resample_stage2 = resample_stage2
        self.stage1 = stage1
        self.stage2 = stage2
        self.stage1_exclude_laundered = stage1_exclude_laundered
        self.stage1_ = stage1
        self.stage2_ = stage2
        self.classes_ = None
        self.train_paths_ = ()
        self.reset_invocation_counts()

    # -- calibration --------------------------------------------------------

    def fit(self, X, y):
        """Calibrate both stages from images X and their ClassLabel targets.

        X may be any iterable of ImageBuffer (consumed once); y accepts
        ClassLabel values or their serialized strings.  All three classes
        must be present.
        """
        labels = [v if isinstance(v, ClassLabel) else ClassLabel.parse(str(v))
                  for v in y]
        missing = [l.value for l in LABEL_ORDER if l not in set(labels)]
        if missing:
            raise ValueError(f"missing class in training data: {missing}")

        probe = LinearPatchScorer(self.denoiser, self.sigma, self.factor)
        pools = {label: [] for label in LABEL_ORDER}
        count = 0
        for index, img in enumerate(X):
            if index >= len(labels):
                raise ValueError("X and y length mismatch")
            patches = sample_patches(img, self._sampler(derive_seed(self.seed, index)))
            pools[labels[index]].append(probe.features(patches))
            count += 1
        if count != len(labels):
            raise ValueError("X and y length mismatch")
        feats = {label: np.concatenate(rows) for label, rows in pools.items()}

        if self.stage1 is None:
            stage1 = LinearPatchScorer(self.denoiser, self.sigma, self.factor)
            if self.stage1_exclude_laundered:
                pos = feats[ClassLabel.FULLY_SYNTHETIC]
            else:
                pos = np.concatenate(
                    [feats[ClassLabel.FULLY_SYNTHETIC], feats[ClassLabel.LAUNDERED]]
                )
            stage1._fit_features(pos, feats[ClassLabel.REAL])
            if not self.stage1_exclude_laundered:
                # The pooled positive mean sits far from its nearest mode when
                # one synthetic class carries much stronger artifacts, which
                # would push the other mode below the fixed threshold 0.
                # Center the bias between the real mean and the nearest
                # positive class mean instead.
                w = stage1.weights_
                m_real = float(w @ feats[ClassLabel.REAL].mean(axis=0))
                m_pos = min(
                    float(w @ feats[ClassLabel.FULLY_SYNTHETIC].mean(axis=0)),
                    float(w @ feats[ClassLabel.LAUNDERED].mean(axis=0)),
                )
                stage1.bias_ = -0.5 * (m_real + m_pos)
            stage1.positive_class_ = None
            self.stage1_ = stage1
        else:
            self.stage1_ = self.stage1

        if self.stage2 is None:
            stage2 = LinearPatchScorer(self.denoiser, self.sigma, self.factor)
            stage2._fit_features(
                feats[ClassLabel.LAUNDERED], feats[ClassLabel.FULLY_SYNTHETIC]
            )
            stage2.positive_class_ = ClassLabel.LAUNDERED
            self.stage2_ = stage2
        else:
            self.stage2_ = self.stage2

        self.classes_ = tuple(l.value for l in LABEL_ORDER)
        self.reset_invocation_counts()
        return self

    # -- inference ----------------------------------------------------------

    def _sampler(self, seed):
        return SamplerConfig(self.n_patches, self.patch_size, seed)

    def _shared_features(self):
        s1, s2 = self.stage1_, self.stage2_
        return (
            isinstance(s1, LinearPatchScorer)
            and isinstance(s2, LinearPatchScorer)
            and s1.feature_params == s2.feature_params
            and not self.resample_stage2
        )

    def reset_invocation_counts(self):
        self.invocation_counts_ = {"stage1": 0, "stage2": 0}

    def _stage2_image_score(self, img, seed):
        """Stage-2 image score on a fresh patch sample (postproc re-scoring)."""
        patches = sample_patches(img, self._sampler(seed))
        self.invocation_counts_["stage2"] += 1
        return float(
            aggregate_top_fraction(self.stage2_.score_patches(patches),
                                   self.top_fraction)
        )

    def _scores(self, img, seed, need_s2):
        """(s1, s2) image scores; s2 is None unless needed."""
        check_fitted(self, ["stage1_", "stage2_"])
        patches = sample_patches(img, self._sampler(seed))
        shared = self._shared_features()
        features = self.stage1_.features(patches) if shared else None

        self.invocation_counts_["stage1"] += 1
        if shared:
            s1_scores = self.stage1_.score_features(features)
        else:
            s1_scores = self.stage1_.score_patches(patches)
        s1 = float(aggregate_top_fraction(s1_scores, self.top_fraction))

        s2 = None
        if need_s2(s1):
            self.invocation_counts_["stage2"] += 1
            if shared:
                s2_scores = self.stage2_.score_features(features)
            else:
                if self.resample_stage2:
                    patches = sample_patches(img, self._sampler(derive_seed(seed, 1)))
                s2_scores = self.stage2_.score_patches(patches)
            s2 = float(aggregate_top_fraction(s2_scores, self.top_fraction))
        return s1, s2

    def _label_for(self, s1, s2):
        if s1 < self.stage1_threshold:
            return ClassLabel.REAL
        if s2 >= self.stage2_threshold:
            return ClassLabel.LAUNDERED
        return ClassLabel.FULLY_SYNTHETIC

    def classify(self, img, seed=None):
        """Classify one image, stopping after stage 1 when it scores real."""
        seed = self.seed if seed is None else seed
        s1, s2 = self._scores(img, seed, lambda s1: s1 >= self.stage1_threshold)
        return ClassificationResult(self._label_for(s1, s2), s1, s2)

    def predict(self, X):
        return [
            self.classify(img, seed=derive_seed(self.seed, i)).label
            for i, img in enumerate(X)
        ]

    def score(self, X, y):
        """Three-class balanced accuracy of predict(X) against y."""
        truth = [v if isinstance(v, ClassLabel) else ClassLabel.parse(str(v))
                 for v in y]
        pred = self.predict(X)
        recalls = []
        for label in LABEL_ORDER:
            idx = [i for i, t in enumerate(truth) if t == label]
            if idx:
                recalls.append(
                    sum(pred[i] == label for i in idx) / len(idx)
                )
        return float(np.mean(recalls))


# ---------------------------------------------------------------------------
# Model persistence


def _scorer_to_dict(scorer):
    if isinstance(scorer, LinearPatchScorer):
        return scorer.to_dict()
    if isinstance(scorer, ExternalPatchScorer):
        return {
            "kind": "external",
            "command": list(scorer.config.command),
            "timeout_ms": scorer.config.timeout_ms,
        }
    raise ValueError(f"cannot serialize scorer of type {type(scorer).__name__}")


def _scorer_from_dict(d):
    kind = d.get("kind")
    if kind == "linear":
        return LinearPatchScorer.from_dict(d)
    if kind == "external":
        return ExternalPatchScorer(d["command"], d.get("timeout_ms", 10000))
    raise DataError(f"unknown scorer kind {kind!r} in model file")


def _write_json(path, payload):
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def save_models(detector, model_dir):
    """Persist a fitted detector as stage1.json/stage2.json/pipeline.json."""
    check_fitted(detector, ["stage1_", "stage2_"])
    out = Path(model_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "stage1.json", _scorer_to_dict(detector.stage1_))
    _write_json(out / "stage2.json", _scorer_to_dict(detector.stage2_))
    _write_json(
        out / "pipeline.json",
        {
            "format": MODELS_FORMAT,
            "n_patches": detector.n_patches,
            "patch_size": detector.patch_size,
            "top_fraction": detector.top_fraction,
            "stage1_threshold": detector.stage1_threshold,
            "stage2_threshold": detector.stage2_threshold,
            "seed": detector.seed,
            "resample_stage2": detector.resample_stage2,
            "train_paths": sorted(str(p) for p in detector.train_paths_),
        },
    )


def _read_json(path):
    if not path.is_file():
        raise DataError(f"model file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed model file {path}: {exc}") from exc


def load_models(model_dir):
    """Rebuild a fitted TwoStageDetector from a model directory."""
    root = Path(model_dir)
    pipe = _read_json(root / "pipeline.json")
    if pipe.get("format") != MODELS_FORMAT:
        raise DataError(
            f"unsupported model format {pipe.get('format')!r} in {root}"
        )
    stage1 = _scorer_from_dict(_read_json(root / "stage1.json"))
    stage2 = _scorer_from_dict(_read_json(root / "stage2.json"))
    det = TwoStageDetector(
        n_patches=int(pipe["n_patches"]),
        patch_size=int(pipe["patch_size"]),
        top_fraction=float(pipe["top_fraction"]),
        stage1_threshold=float(pipe["stage1_threshold"]),
        stage2_threshold=float(pipe["stage2_threshold"]),
        seed=int(pipe["seed"]),
        resample_stage2=bool(pipe.get("resample_stage2", False)),
    )
    det.stage1_ = stage1
    det.stage2_ = stage2
    det.classes_ = tuple(l.value for l in LABEL_ORDER)
    det.train_paths_ = tuple(pipe.get("train_paths", ()))
    return det


def calibrate_pipeline(manifest, detector, test_manifest=None):
    """Fit the detector on a manifest, streaming images from disk.

    Records resolved training paths on the detector so later evaluations can
    warn about train/test overlap.  When test_manifest is given, overlapping
    paths raise a warning entry immediately (returned alongside the detector
    by run_eval; here they only populate train_paths_).
    """
    labels = [e.label for e in manifest.entries]
    missing = [l.value for l in LABEL_ORDER if l not in set(labels)]
    if missing:
        raise DataError(f"missing class in training manifest: {missing}")
    images = (load_image(manifest.resolve(e)) for e in manifest.entries)
    detector.fit(images, labels)
    detector.train_paths_ = tuple(
        str(manifest.resolve(e)) for e in manifest.entries
    )
    if test_manifest is not None:
        overlap = set(detector.train_paths_) & {
            str(test_manifest.resolve(e)) for e in test_manifest.entries
        }
        if overlap:
            import warnings

            warnings.warn(
                f"{len(overlap)} path(s) shared between train and test manifests"
            )
    return detector


# ---------------------------------------------------------------------------
# Batch evaluation


@dataclass(frozen=True)
class EvalReport:
    data: dict

    def to_json(self):
        """Canonical serialization: stable key order, trailing newline."""
        return json.dumps(self.data, sort_keys=True, indent=2) + "\n"

    def __getitem__(self, key):
        return self.data[key]


_EVAL_CTX = None


def _init_eval_worker(ctx):
    global _EVAL_CTX
    _EVAL_CTX = ctx


def _eval_single(ctx, index):
    detector, entries, root, ops = ctx
    entry = entries[index]
    path = Path(entry.path)
    resolved = path if path.is_absolute() else root / path
    out = {"index": index, "error": None, "s1": None, "s2": None,
           "label": None, "postproc": {}}
    try:
        img = load_image(resolved)
    except DataError as exc:
        out["error"] = str(exc)
        return out
    seed = derive_seed(detector.seed, index)
    is_synth = entry.label in SYNTHETIC_LABELS
    try:
        s1, s2 = detector._scores(
            img, seed,
            lambda s1: s1 >= detector.stage1_threshold or is_synth,
        )
        label = detector._label_for(s1, s2 if s1 >= detector.stage1_threshold else None)
        out["s1"], out["label"] = s1, label.value
        out["s2"] = s2
        if is_synth:
            for op in ops:
                try:
                    processed = apply_postproc(img, op)
                    out["postproc"][op.token] = detector._stage2_image_score(
                        processed, seed
                    )
                except ValueError as exc:
                    out["postproc"][op.token] = None
                    out.setdefault("postproc_warnings", []).append(
                        f"{op.token}: {entry.path}: {exc}"
                    )
    except ValueError as exc:
        out["error"] = f"{entry.path}: {exc}"
    return out


def _eval_worker(index):
    return _eval_single(_EVAL_CTX, index)


def _metric_or_warn(items, name, warnings):
    try:
        return metric_row(items).to_dict()
    except ValueError as exc:
        warnings.append(f"{name}: {exc}")
        return None


def run_eval(manifest, detector, postproc_ops=(), skip_errors=False, workers=1,
             n_bins=DEFAULT_HISTOGRAM_BINS, config_extra=None):
    """Evaluate a fitted detector over a manifest.

    Returns an EvalReport whose JSON form is byte-identical across runs and
    worker counts for fixed inputs.
    """
    check_fitted(detector, ["stage1_", "stage2_"])
    entries = manifest.entries
    ops = tuple(postproc_ops)
    ctx = (detector, entries, manifest.root, ops)

    if workers <= 1:
        results = [_eval_single(ctx, i) for i in range(len(entries))]
    else:
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=workers, initializer=_init_eval_worker, initargs=(ctx,)
        ) as pool:
            results = list(pool.map(_eval_worker, range(len(entries))))

    warnings = []
    skipped = []
    kept = []
    for res in results:
        if res["error"] is not None:
            if not skip_errors:
                raise DataError(res["error"])
            skipped.append(entries[res["index"]].path)
            warnings.append(f"skipped: {res['error']}")
        else:
            kept.append(res)
        for w in res.get("postproc_warnings", ()):
            warnings.append(f"postproc skipped: {w}")

    if not kept:
        raise DataError("no evaluable items in manifest")

    def truth(res):
        return entries[res["index"]].label

    def group(res):
        return entries[res["index"]].group

    def item_id(res):
        return entries[res["index"]].path

    stage1_items = [
        ScoredItem(res["s1"], truth(res) in SYNTHETIC_LABELS, item_id(res))
        for res in kept
    ]
    synth = [res for res in kept if truth(res) in SYNTHETIC_LABELS]
    stage2_items = [
        ScoredItem(res["s2"], truth(res) == ClassLabel.LAUNDERED, item_id(res))
        for res in synth
    ]

    report_warnings = []
    stage1_row = _metric_or_warn(stage1_items, "stage1 metrics", report_warnings)
    stage2_row = (
        _metric_or_warn(stage2_items, "stage2 metrics", report_warnings)
        if stage2_items
        else None
    )
    if not stage2_items:
        report_warnings.append("stage2 metrics: no ground-truth synthetic items")

    per_group = {}
    for g in sorted({group(res) for res in kept}):
        g_stage1 = [
            ScoredItem(res["s1"], truth(res) in SYNTHETIC_LABELS, item_id(res))
            for res in kept
            if group(res) == g
        ]
        g_stage2 = [
            ScoredItem(res["s2"], truth(res) == ClassLabel.LAUNDERED, item_id(res))
            for res in synth
            if group(res) == g
        ]
        per_group[g] = {
            "stage1": _metric_or_warn(
                g_stage1, f"group {g} stage1", report_warnings
            ),
            "stage2": (
                _metric_or_warn(g_stage2, f"group {g} stage2", report_warnings)
                if g_stage2
                else None
            ),
        }

    per_postproc = {}
    for op in ops:
        op_items = [
            ScoredItem(
                res["postproc"][op.token], truth(res) == ClassLabel.LAUNDERED,
                item_id(res)
            )
            for res in synth
            if res["postproc"].get(op.token) is not None
        ]
        per_postproc[op.token] = (
            _metric_or_warn(op_items, f"postproc {op.token}", report_warnings)
            if op_items
            else None
        )

    label_values = [l.value for l in LABEL_ORDER]
    matrix = [[0] * len(LABEL_ORDER) for _ in LABEL_ORDER]
    for res in kept:
        matrix[label_values.index(truth(res).value)][
            label_values.index(res["label"])
        ] += 1

    histograms = {
        "stage1": score_histogram(
            [res["s1"] for res in kept],
            [truth(res).value for res in kept],
            n_bins,
        ).to_dict()
    }
    histograms["stage2"] = (
        score_histogram(
            [res["s2"] for res in synth],
            [truth(res).value for res in synth],
            n_bins,
        ).to_dict()
        if synth
        else None
    )

    overlap = set(detector.train_paths_) & {
        str(manifest.resolve(e)) for e in entries
    }
    if overlap:
        report_warnings.append(
            f"train/test overlap: {len(overlap)} path(s) also used for calibration"
        )

    warnings.extend(report_warnings)

    config = {
        "n_patches": detector.n_patches,
        "patch_size": detector.patch_size,
        "top_fraction": detector.top_fraction,
        "stage1_threshold": detector.stage1_threshold,
        "stage2_threshold": detector.stage2_threshold,
        "seed": detector.seed,
        "resample_stage2": detector.resample_stage2,
        "postproc": [op.token for op in ops],
        "skip_errors": bool(skip_errors),
    }
    if isinstance(detector.stage1_, LinearPatchScorer):
        config["feature"] = {
            "denoiser": detector.stage1_.denoiser,
            "sigma": detector.stage1_.sigma,
            "factor": detector.stage1_.factor,
        }
    if config_extra:
        config.update(config_extra)

    counts = {l.value: 0 for l in LABEL_ORDER}
    for res in kept:
        counts[truth(res).value] += 1
    counts["skipped"] = len(skipped)

    return EvalReport(
        {
            "config": config,
            "counts": counts,
            "stage1": stage1_row,
            "stage2": stage2_row,
            "per_group": per_group,
            "per_postproc": per_postproc,
            "confusion": {"labels": label_values, "matrix": matrix},
            "histograms": histograms,
            "skipped": skipped,
            "warnings": sorted(warnings),
        }
    )
