"""Patch scorers: built-in spectral linear discriminants and the external
subprocess adapter.

Scores follow one sign convention everywhere: greater than 0 means the patch
is detected as the positive class.  The built-in scorer is a ridge-stabilized
Fisher discriminant over the three spectral features, with its bias placed at
the midpoint of the projected class means so the fixed threshold 0 is a
meaningful operating point without per-dataset tuning.

External scorers speak the launder-scorer v1 protocol over stdio:

    scorer -> host   HELLO launder-scorer v1\\n
    host  -> scorer  PATCH <w> <h> <c>\\n  followed by w*h*c raw bytes
                     (row-major, channel-interleaved, 8-bit)
    scorer -> host   one ASCII float per request, LF-terminated

The host closes the scorer's stdin to end the session; the scorer must exit
within one second.
"""

import os
import select
import subprocess
import time
from dataclasses import dataclass

import numpy as np

from ._base import ParamsMixin, check_fitted
from .errors import (
    ScorerHandshakeError,
    ScorerLaunchError,
    ScorerResponseError,
    ScorerTimeoutError,
)
from .image import ClassLabel
from .spectral import DEFAULT_FACTOR, feature_matrix

HELLO_LINE = "HELLO launder-scorer v1"
RIDGE_SCALE = 1e-6
MIN_PATCHES_PER_CLASS = 10
SHUTDOWN_GRACE_S = 1.0


class LinearPatchScorer(ParamsMixin):
    """Linear discriminant over (peak_strength, low_freq_ratio, flatness).

    Parameters
    ----------
    denoiser, sigma, factor : residual/feature extraction configuration.

    Fitted attributes
    -----------------
    weights_ : (3,) discriminant direction.
    bias_ : scalar; score = weights_ . features + bias_.
    positive_class_ : optional ClassLabel the positive side stands for.
    """

    def __init__(self, denoiser="median3", sigma=1.0, factor=DEFAULT_FACTOR):
        self.denoiser = denoiser
        self.sigma = sigma
        self.factor = factor
        self.weights_ = None
        self.bias_ = None
        self.positive_class_ = None

    @property
    def feature_params(self):
        return (self.denoiser, self.sigma, self.factor)

    def features(self, patches):
        return feature_matrix(
            patches, denoiser=self.denoiser, sigma=self.sigma, factor=self.factor
        )

    def fit(self, X, y):
        """Fisher discriminant fit on patches X with binary targets y.

        y entries are truthy for the positive class.  Requires at least
        10 patches per class.
        """
        y = np.asarray([bool(v) for v in y])
        if len(X) != y.size:
            raise ValueError("X and y length mismatch")
        n_pos = int(y.sum())
        n_neg = int(y.size - n_pos)
        if n_pos < MIN_PATCHES_PER_CLASS or n_neg < MIN_PATCHES_PER_CLASS:
            raise ValueError(
                f"at least {MIN_PATCHES_PER_CLASS} patches per class required "
                f"(got {n_pos} positive, {n_neg} negative)"
            )
        f = self.features(list(X))
        self._fit_features(f[y], f[~y])
        return self

    def _fit_features(self, pos, neg):
        mu_pos = pos.mean(axis=0)
        mu_neg = neg.mean(axis=0)
        cov_pos = np.cov(pos, rowvar=False, ddof=1)
        cov_neg = np.cov(neg, rowvar=False, ddof=1)
        n_pos, n_neg = pos.shape[0], neg.shape[0]
        pooled = ((n_pos - 1) * cov_pos + (n_neg - 1) * cov_neg) / (
            n_pos + n_neg - 2
        )
        dim = pooled.shape[0]
        ridge = RIDGE_SCALE * np.trace(pooled) / dim
        if not np.isfinite(pooled).all() or np.trace(pooled) <= 0.0:
            raise ValueError("degenerate calibration set")
        try:
            weights = np.linalg.solve(
                pooled + ridge * np.eye(dim), mu_pos - mu_neg
            )
        except np.linalg.LinAlgError:
            raise ValueError("degenerate calibration set") from None
        self.weights_ = weights
        self.bias_ = float(-weights @ (mu_pos + mu_neg) / 2.0)
        return self

    def score_features(self, f):
        check_fitted(self, ["weights_", "bias_"])
        return np.asarray(f, dtype=np.float64) @ self.weights_ + self.bias_

    def decision_function(self, X):
        return self.score_features(self.features(list(X)))

    def score_patch(self, patch):
        return float(self.decision_function([patch])[0])

    def score_patches(self, patches):
        return self.decision_function(patches)

    def predict(self, X):
        return self.decision_function(X) >= 0.0

    def to_dict(self):
        check_fitted(self, ["weights_", "bias_"])
        return {
            "kind": "linear",
            "weights": [float(v) for v in self.weights_],
            "bias": self.bias_,
            "positive_class": (
                self.positive_class_.value if self.positive_class_ else None
            ),
            "feature": {
                "denoiser": self.denoiser,
                "sigma": self.sigma,
                "factor": self.factor,
            },
        }

    @classmethod
    def from_dict(cls, d):
        feature = d.get("feature", {})
        scorer = cls(
            denoiser=feature.get("denoiser", "median3"),
            sigma=feature.get("sigma", 1.0),
            factor=feature.get("factor", DEFAULT_FACTOR),
        )
        weights = np.asarray(d["weights"], dtype=np.float64)
        if weights.shape != (3,) or not np.isfinite(weights).all():
            raise ValueError("model weights must be 3 finite values")
        scorer.weights_ = weights
        scorer.bias_ = float(d["bias"])
        if d.get("positive_class"):
            scorer.positive_class_ = ClassLabel.parse(d["positive_class"])
        return scorer


def calibrate(positives, negatives, denoiser="median3", sigma=1.0,
              factor=DEFAULT_FACTOR, positive_class=None):
    """Fit a LinearPatchScorer from explicit positive/negative patch sets."""
    scorer = LinearPatchScorer(denoiser=denoiser, sigma=sigma, factor=factor)
    y = [True] * len(positives) + [False] * len(negatives)
    scorer.fit(list(positives) + list(negatives), y)
    scorer.positive_class_ = positive_class
    return scorer


# ---------------------------------------------------------------------------
# External scorer adapter


@dataclass(frozen=True)
class ExternalScorerConfig:
    command: tuple
    timeout_ms: int = 10000

    def __post_init__(self):
        if not self.command:
            raise ValueError("external scorer command must be non-empty")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")


class _LineReader:
    """Deadline-based line reads from a subprocess pipe."""

    def __init__(self, fileobj):
        self._fd = fileobj.fileno()
        os.set_blocking(self._fd, False)
        self._buf = bytearray()
        self._eof = False

    def read_line(self, deadline, phase):
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl]
                del self._buf[: nl + 1]
                return bytes(line)
            if self._eof:
                raise ScorerResponseError(
                    f"{phase}: scorer closed its output stream"
                )
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ScorerTimeoutError(f"{phase}: no response before timeout")
            ready, _, _ = select.select([self._fd], [], [], remaining)
            if not ready:
                raise ScorerTimeoutError(f"{phase}: no response before timeout")
            chunk = os.read(self._fd, 65536)
            if chunk:
                self._buf.extend(chunk)
            else:
                self._eof = True


class ExternalPatchScorer:
    """Adapter running one scorer subprocess, strictly request/response.

    Use one instance per worker; a pool of instances provides parallelism.
    """

    def __init__(self, command, timeout_ms=10000):
        self.config = ExternalScorerConfig(tuple(command), timeout_ms)
        self._proc = None
        self._reader = None

    def _ensure_started(self):
        if self._proc is not None:
            return
        try:
            self._proc = subprocess.Popen(
                list(self.config.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as exc:
            raise ScorerLaunchError(
                f"launch: cannot start {self.config.command[0]!r}: {exc}"
            ) from exc
        self._reader = _LineReader(self._proc.stdout)
        deadline = time.monotonic() + self.config.timeout_ms / 1000.0
        try:
            line = self._reader.read_line(deadline, "handshake")
        except ScorerResponseError as exc:
            self.close()
            raise ScorerHandshakeError(str(exc)) from None
        except ScorerTimeoutError:
            self.close()
            raise
        text = line.decode("ascii", errors="replace").strip()
        if text != HELLO_LINE:
            self.close()
            raise ScorerHandshakeError(
                f"handshake: expected {HELLO_LINE!r}, got {text!r}"
            )

    def score_patch(self, patch):
        self._ensure_started()
        buf = patch.pixels
        header = f"PATCH {buf.width} {buf.height} {buf.channels}\n".encode("ascii")
        payload = buf.to_bytes().tobytes()
        try:
            self._proc.stdin.write(header + payload)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ScorerResponseError(f"request: scorer pipe closed: {exc}") from exc
        deadline = time.monotonic() + self.config.timeout_ms / 1000.0
        line = self._reader.read_line(deadline, "response")
        text = line.decode("ascii", errors="replace").strip()
        try:
            score = float(text)
        except ValueError:
            raise ScorerResponseError(
                f"response: malformed score line {text!r}"
            ) from None
        if not np.isfinite(score):
            raise ScorerResponseError(f"response: non-finite score {text!r}")
        return score

    def score_patches(self, patches):
        return np.array([self.score_patch(p) for p in patches], dtype=np.float64)

    decision_function = score_patches

    def close(self):
        proc, self._proc = self._proc, None
        self._reader = None
        if proc is None:
            return
        try:
            if proc.stdin:
                proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=SHUTDOWN_GRACE_S)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self):
        self._ensure_started()
        return self

    def __exit__(self, *exc_info):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    # worker processes each launch their own subprocess
    def __getstate__(self):
        return {"config": self.config}

    def __setstate__(self, state):
        self.config = state["config"]
        self._proc = None
        self._reader = None


def external_score(cfg, patch):
    """Score one patch through a freshly launched external scorer."""
    with ExternalPatchScorer(cfg.command, cfg.timeout_ms) as scorer:
        return scorer.score_patch(patch)
